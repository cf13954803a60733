//! Confusion counts, ROC curves and AUC for raw-score binary predictions.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ingestion::Label;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("no scored samples")]
    Empty,
    #[error("ROC/AUC needs both classes, only {0} samples present")]
    SingleClass(Label),
    #[error("non-finite score {0}")]
    NonFiniteScore(f64),
    #[error("malformed ROC CSV: {0}")]
    Csv(#[from] csv::Error),
    #[error("malformed ROC CSV: {0}")]
    BadCurve(String),
    #[error("cannot access {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoredLabel {
    pub score: f64,
    pub label: Label,
}

impl ScoredLabel {
    pub fn new(score: f64, label: Label) -> Self {
        Self { score, label }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    pub fn_: u64,
}

impl ConfusionCounts {
    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.tn + self.fn_
    }

    /// `TP / (TP + FN)`, 0 when there are no positives.
    pub fn tpr(&self) -> f64 {
        ratio(self.tp, self.tp + self.fn_)
    }

    /// `FP / (FP + TN)`, 0 when there are no negatives.
    pub fn fpr(&self) -> f64 {
        ratio(self.fp, self.fp + self.tn)
    }
}

fn ratio(a: u64, b: u64) -> f64 {
    if b == 0 {
        0.0
    } else {
        a as f64 / b as f64
    }
}

/// Counts with "attack" predicted iff `score >= threshold`.
pub fn confusion(scored: &[ScoredLabel], threshold: f64) -> ConfusionCounts {
    let mut c = ConfusionCounts::default();
    for s in scored {
        match (s.score >= threshold, s.label) {
            (true, Label::Attack) => c.tp += 1,
            (true, Label::Normal) => c.fp += 1,
            (false, Label::Normal) => c.tn += 1,
            (false, Label::Attack) => c.fn_ += 1,
        }
    }
    c
}

/// `(fpr, tpr)` points from `(0, 0)` to `(1, 1)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RocCurve {
    pub points: Vec<(f64, f64)>,
}

impl RocCurve {
    /// Trapezoidal area under the curve.
    pub fn area(&self) -> f64 {
        self.points
            .windows(2)
            .map(|w| (w[1].0 - w[0].0) * (w[1].1 + w[0].1) * 0.5)
            .sum()
    }

    pub fn write_csv<W: std::io::Write>(&self, out: W) -> Result<(), EvalError> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["fpr", "tpr"])?;
        for (fpr, tpr) in &self.points {
            w.serialize((fpr, tpr))?;
        }
        w.flush().map_err(csv::Error::from)?;
        Ok(())
    }

    pub fn read_csv<R: std::io::Read>(input: R) -> Result<Self, EvalError> {
        let mut r = csv::Reader::from_reader(input);
        let header = r.headers()?.clone();
        if header.iter().collect::<Vec<_>>() != ["fpr", "tpr"] {
            return Err(EvalError::BadCurve(format!("expected header fpr,tpr, got {}", header.iter().collect::<Vec<_>>().join(","))));
        }
        let points = r.deserialize().collect::<Result<Vec<(f64, f64)>, _>>()?;
        if points.is_empty() {
            return Err(EvalError::BadCurve("no points".into()));
        }
        Ok(Self { points })
    }

    pub fn save(&self, path: &Path) -> Result<(), EvalError> {
        let f = std::fs::File::create(path).map_err(|source| EvalError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        self.write_csv(std::io::BufWriter::new(f))
    }

    pub fn load(path: &Path) -> Result<Self, EvalError> {
        let f = std::fs::File::open(path).map_err(|source| EvalError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::read_csv(std::io::BufReader::new(f))
    }
}

fn class_totals(scored: &[ScoredLabel]) -> Result<(u64, u64), EvalError> {
    let first = scored.first().ok_or(EvalError::Empty)?;
    if let Some(bad) = scored.iter().find(|s| !s.score.is_finite()) {
        return Err(EvalError::NonFiniteScore(bad.score));
    }
    let pos = scored.iter().filter(|s| s.label == Label::Attack).count() as u64;
    let neg = scored.len() as u64 - pos;
    if pos == 0 || neg == 0 {
        return Err(EvalError::SingleClass(first.label));
    }
    Ok((pos, neg))
}

/// One point per distinct score (descending), so tied scores move both
/// rates at once.
pub fn roc_curve(scored: &[ScoredLabel]) -> Result<RocCurve, EvalError> {
    let (pos, neg) = class_totals(scored)?;
    let mut sorted = scored.to_vec();
    sorted.sort_by(|a, b| b.score.total_cmp(&a.score));
    let mut points = vec![(0.0, 0.0)];
    let (mut tp, mut fp) = (0u64, 0u64);
    let mut i = 0;
    while i < sorted.len() {
        let score = sorted[i].score;
        while i < sorted.len() && sorted[i].score == score {
            match sorted[i].label {
                Label::Attack => tp += 1,
                Label::Normal => fp += 1,
            }
            i += 1;
        }
        points.push((fp as f64 / neg as f64, tp as f64 / pos as f64));
    }
    if points.last() != Some(&(1.0, 1.0)) {
        points.push((1.0, 1.0));
    }
    Ok(RocCurve { points })
}

/// Area under the ROC curve.
pub fn auc(scored: &[ScoredLabel]) -> Result<f64, EvalError> {
    Ok(roc_curve(scored)?.area())
}
