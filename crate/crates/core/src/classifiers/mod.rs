//! Linear binary classifiers over sparse features.
//!
//! Both trainers minimize `lambda * 0.5 * |w|^2 + mean(loss)`:
//! logistic loss with L-BFGS ([`train_lr_lbfgs`]) and hinge loss with
//! decaying-step full-batch subgradient descent ([`train_svm`]). Models are
//! returned in raw-score mode: logistic models score with the sigmoid of
//! `w.x`, SVMs with the margin `w.x`.

mod lbfgs;
mod objective;
mod sgd;

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataflow::{Engine, EngineError, PDataset};
use crate::featurization::SparseVector;
use crate::ingestion::Label;

pub use lbfgs::{lbfgs_minimize, LbfgsConfig, LbfgsResult};
pub use objective::{objective, Loss, Objective};
pub use sgd::{sgd_minimize, SgdResult};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid training configuration: {0}")]
    InvalidConfig(String),
    #[error("training set is empty")]
    EmptyTraining,
    #[error("training set only contains {0} examples; both classes are required")]
    SingleClass(Label),
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimMismatch { expected: usize, found: usize },
    #[error("non-finite value in {0}")]
    NonFinite(String),
    #[error("subgradient descent diverged at epoch {epoch}")]
    Diverged { epoch: usize },
    #[error("malformed model file: {0}")]
    Json(#[from] serde_json::Error),
    #[error("cannot access {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Engine(#[from] EngineError),
}

/// A feature vector with its class (attack = 1, normal = 0).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledPoint {
    pub features: SparseVector,
    pub label: Label,
}

impl LabeledPoint {
    pub fn new(features: SparseVector, label: Label) -> Self {
        Self { features, label }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    #[serde(rename = "lr", alias = "logistic")]
    Logistic,
    Svm,
}

impl ModelKind {
    pub fn loss(self) -> Loss {
        match self {
            ModelKind::Logistic => Loss::Logistic,
            ModelKind::Svm => Loss::Hinge,
        }
    }

    /// Decision threshold used when a model has none set.
    pub fn default_threshold(self) -> f64 {
        match self {
            ModelKind::Logistic => 0.5,
            ModelKind::Svm => 0.0,
        }
    }
}

impl std::str::FromStr for ModelKind {
    type Err = TrainError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "lr" | "logistic" | "lr-lbfgs" => Ok(ModelKind::Logistic),
            "svm" => Ok(ModelKind::Svm),
            other => Err(TrainError::InvalidConfig(format!("unknown classifier `{other}`"))),
        }
    }
}

impl std::fmt::Display for ModelKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            ModelKind::Logistic => "lr",
            ModelKind::Svm => "svm",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub reg_lambda: f64,
    /// L-BFGS iterations or subgradient epochs.
    pub max_iters: usize,
    pub lbfgs_memory: usize,
    pub lbfgs_tol: f64,
    pub sgd_step: f64,
    pub seed: u64,
    pub intercept: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self::logistic()
    }
}

impl TrainConfig {
    pub fn logistic() -> Self {
        Self {
            reg_lambda: 0.0,
            max_iters: 100,
            lbfgs_memory: 10,
            lbfgs_tol: 1e-6,
            sgd_step: 1.0,
            seed: 0,
            intercept: false,
        }
    }

    pub fn svm() -> Self {
        Self {
            reg_lambda: 0.01,
            ..Self::logistic()
        }
    }

    pub fn for_kind(kind: ModelKind) -> Self {
        match kind {
            ModelKind::Logistic => Self::logistic(),
            ModelKind::Svm => Self::svm(),
        }
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: String| Err(TrainError::InvalidConfig(m));
        if !(self.reg_lambda >= 0.0 && self.reg_lambda.is_finite()) {
            return bad(format!("reg_lambda must be finite and >= 0, got {}", self.reg_lambda));
        }
        if self.lbfgs_memory == 0 {
            return bad("lbfgs_memory must be at least 1".into());
        }
        if self.lbfgs_tol.is_nan() || self.lbfgs_tol <= 0.0 {
            return bad("lbfgs_tol must be positive".into());
        }
        if !(self.sgd_step >= 0.0 && self.sgd_step.is_finite()) {
            return bad("sgd_step must be finite and >= 0".into());
        }
        Ok(())
    }
}

/// Weights plus an optional decision threshold (`None` = raw-score mode).
#[derive(Debug, Clone, PartialEq)]
pub struct LinearModel {
    pub kind: ModelKind,
    pub weights: Vec<f64>,
    pub intercept: f64,
    pub threshold: Option<f64>,
}

impl LinearModel {
    pub fn zeros(kind: ModelKind, dim: usize) -> Self {
        Self {
            kind,
            weights: vec![0.0; dim],
            intercept: 0.0,
            threshold: None,
        }
    }

    pub fn dim(&self) -> usize {
        self.weights.len()
    }

    pub fn margin(&self, x: &SparseVector) -> Result<f64, TrainError> {
        if x.dim() != self.dim() {
            return Err(TrainError::DimMismatch {
                expected: self.dim(),
                found: x.dim(),
            });
        }
        Ok(x.dot(&self.weights) + self.intercept)
    }

    /// Sigmoid of the margin for logistic models, the margin itself for SVMs.
    pub fn predict_score(&self, x: &SparseVector) -> Result<f64, TrainError> {
        let m = self.margin(x)?;
        Ok(match self.kind {
            ModelKind::Logistic => 1.0 / (1.0 + (-m).exp()),
            ModelKind::Svm => m,
        })
    }

    pub fn effective_threshold(&self) -> f64 {
        self.threshold.unwrap_or_else(|| self.kind.default_threshold())
    }

    /// Positive (attack) iff the score reaches the threshold.
    pub fn predict(&self, x: &SparseVector) -> Result<Label, TrainError> {
        Ok(if self.predict_score(x)? >= self.effective_threshold() {
            Label::Attack
        } else {
            Label::Normal
        })
    }

    pub fn clear_threshold(&mut self) {
        self.threshold = None;
    }

    pub fn to_file(&self, config: serde_json::Value) -> ModelFile {
        ModelFile {
            kind: self.kind,
            dim: self.dim(),
            weights: self.weights.clone(),
            intercept: self.intercept,
            threshold: self.threshold,
            config,
        }
    }
}

/// On-disk model: `{kind, dim, weights, intercept, threshold, config}`,
/// where `config` echoes whatever produced the model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelFile {
    pub kind: ModelKind,
    pub dim: usize,
    pub weights: Vec<f64>,
    #[serde(default)]
    pub intercept: f64,
    #[serde(default)]
    pub threshold: Option<f64>,
    #[serde(default)]
    pub config: serde_json::Value,
}

impl ModelFile {
    pub fn model(&self) -> Result<LinearModel, TrainError> {
        if self.weights.len() != self.dim {
            return Err(TrainError::DimMismatch {
                expected: self.dim,
                found: self.weights.len(),
            });
        }
        if self.weights.iter().any(|w| !w.is_finite()) || !self.intercept.is_finite() {
            return Err(TrainError::NonFinite("stored weights".into()));
        }
        Ok(LinearModel {
            kind: self.kind,
            weights: self.weights.clone(),
            intercept: self.intercept,
            threshold: self.threshold,
        })
    }

    pub fn to_json(&self) -> Result<String, TrainError> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self, TrainError> {
        Ok(serde_json::from_str(s)?)
    }

    pub fn save(&self, path: &Path) -> Result<(), TrainError> {
        std::fs::write(path, self.to_json()?).map_err(|source| TrainError::Io {
            path: path.to_path_buf(),
            source,
        })
    }

    pub fn load(path: &Path) -> Result<Self, TrainError> {
        let s = std::fs::read_to_string(path).map_err(|source| TrainError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_json(&s)
    }
}

/// Materializes training data and checks it is usable: non-empty, one
/// dimension, both classes present.
fn prepare(engine: &Engine, training: &PDataset<LabeledPoint>) -> Result<(Vec<Vec<LabeledPoint>>, usize), TrainError> {
    let parts: Vec<Vec<LabeledPoint>> = engine
        .collect_partitions(training)?
        .into_iter()
        .map(|p| p.elements)
        .collect();
    let mut points = parts.iter().flatten();
    let first = points.next().ok_or(TrainError::EmptyTraining)?;
    let dim = first.features.dim();
    let mut seen_other = false;
    for p in points {
        if p.features.dim() != dim {
            return Err(TrainError::DimMismatch {
                expected: dim,
                found: p.features.dim(),
            });
        }
        seen_other |= p.label != first.label;
    }
    if !seen_other {
        return Err(TrainError::SingleClass(first.label));
    }
    Ok((parts, dim))
}

fn split_params(kind: ModelKind, mut params: Vec<f64>, dim: usize, intercept: bool) -> LinearModel {
    let bias = if intercept { params[dim] } else { 0.0 };
    params.truncate(dim);
    LinearModel {
        kind,
        weights: params,
        intercept: bias,
        threshold: None,
    }
}

/// Logistic regression by L-BFGS from zero weights; raw-score model.
pub fn train_lr_lbfgs(
    engine: &Engine,
    training: &PDataset<LabeledPoint>,
    cfg: &TrainConfig,
) -> Result<LinearModel, TrainError> {
    cfg.validate()?;
    let (parts, dim) = prepare(engine, training)?;
    let obj = Objective::new(Loss::Logistic, cfg.reg_lambda, dim, cfg.intercept, &parts)?;
    let lcfg = LbfgsConfig {
        memory: cfg.lbfgs_memory,
        max_iters: cfg.max_iters,
        tol: cfg.lbfgs_tol,
    };
    let result = lbfgs_minimize(|w| obj.evaluate_on(engine, w), vec![0.0; obj.param_len()], &lcfg)?;
    log::debug!(
        "L-BFGS: {} iterations, objective {:.6}, converged {}",
        result.iterations,
        result.value,
        result.converged
    );
    Ok(split_params(ModelKind::Logistic, result.x, dim, cfg.intercept))
}

/// Linear SVM (hinge + L2) by decaying-step subgradient descent from zero
/// weights, `cfg.max_iters` full-batch epochs; raw-margin model.
pub fn train_svm(
    engine: &Engine,
    training: &PDataset<LabeledPoint>,
    cfg: &TrainConfig,
) -> Result<LinearModel, TrainError> {
    cfg.validate()?;
    let (parts, dim) = prepare(engine, training)?;
    let obj = Objective::new(Loss::Hinge, cfg.reg_lambda, dim, cfg.intercept, &parts)?;
    let result = sgd_minimize(|w| obj.evaluate_on(engine, w), vec![0.0; obj.param_len()], cfg.sgd_step, cfg.max_iters)?;
    Ok(split_params(ModelKind::Svm, result.x, dim, cfg.intercept))
}

pub fn train(
    engine: &Engine,
    kind: ModelKind,
    training: &PDataset<LabeledPoint>,
    cfg: &TrainConfig,
) -> Result<LinearModel, TrainError> {
    match kind {
        ModelKind::Logistic => train_lr_lbfgs(engine, training, cfg),
        ModelKind::Svm => train_svm(engine, training, cfg),
    }
}

#[cfg(test)]
mod tests;
