//! The end-to-end train/test pipeline and the experiment grids built on it.
//!
//! One run:
//!
//! 1. load both classes, drop duplicate traces, split each class
//!    train/test with the run seed;
//! 2. hashing dimension = distinct words of the (deduplicated) union of the
//!    training traces;
//! 3. TF-IDF training features, labeled and unioned;
//! 4. train the classifier;
//! 5. score every test trace on its own (TF, then the training IDF unless
//!    `features = tf`) and compute the AUC.

use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::classifiers::{self, LabeledPoint, LinearModel, ModelKind, TrainConfig, TrainError};
use crate::dataflow::{DagExport, Engine, EngineConfig, PDataset, StageSummary, TaskMetrics};
use crate::error::{Error, StageContext};
use crate::evaluation::{auc, roc_curve, RocCurve, ScoredLabel};
use crate::featurization::{
    num_distinct_words, tf_gen, tfidf_gen, term_frequencies, vects_gen, Document, IdfModel, NGramConfig,
};
use crate::ingestion::{self, gen_synthetic, read_adfa, Label, SyntheticSpec, Trace, TraceCorpus};

/// Where the traces come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum DataSource {
    Adfa { path: PathBuf },
    Synthetic(SyntheticSpec),
}

impl Default for DataSource {
    fn default() -> Self {
        DataSource::Synthetic(SyntheticSpec::default())
    }
}

impl DataSource {
    pub fn load(&self) -> Result<TraceCorpus, Error> {
        Ok(match self {
            DataSource::Adfa { path } => read_adfa(path)?,
            DataSource::Synthetic(spec) => gen_synthetic(spec)?,
        })
    }
}

/// Features used for the test traces.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FeatureMode {
    /// Raw term frequencies.
    Tf,
    /// Term frequencies weighted by the training IDF.
    #[default]
    Tfidf,
}

impl std::str::FromStr for FeatureMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "tf" | "tf_only" | "tf-only" => Ok(FeatureMode::Tf),
            "tfidf" | "tf-idf" => Ok(FeatureMode::Tfidf),
            other => Err(Error::Config(format!("unknown feature mode `{other}`"))),
        }
    }
}

impl std::fmt::Display for FeatureMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            FeatureMode::Tf => "tf",
            FeatureMode::Tfidf => "tfidf",
        })
    }
}

/// Corpus the training-feature IDF is fitted on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrainIdfScope {
    /// Each class's training documents get their own IDF.
    #[default]
    PerClass,
    /// One IDF over all training documents, the same one applied to tests.
    Combined,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub data: DataSource,
    pub ngram: NGramConfig,
    pub classifier: ModelKind,
    /// Classifier defaults for `classifier` when absent.
    pub train: Option<TrainConfig>,
    pub split_ratio: f64,
    /// Run `i` uses `seed + i` for the split and the trainer.
    pub seed: u64,
    pub workers: usize,
    /// Partition count of the document datasets; the worker count if absent.
    pub partitions: Option<usize>,
    pub repeats: usize,
    pub features: FeatureMode,
    pub train_idf: TrainIdfScope,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            data: DataSource::default(),
            ngram: NGramConfig::multiple(6),
            classifier: ModelKind::Logistic,
            train: None,
            split_ratio: 0.6,
            seed: 0,
            workers: 1,
            partitions: None,
            repeats: 1,
            features: FeatureMode::Tfidf,
            train_idf: TrainIdfScope::PerClass,
        }
    }
}

impl ExperimentConfig {
    pub fn train_config(&self) -> TrainConfig {
        self.train.clone().unwrap_or_else(|| TrainConfig::for_kind(self.classifier))
    }

    pub fn partition_count(&self) -> usize {
        self.partitions.unwrap_or(self.workers).max(1)
    }

    pub fn engine_config(&self) -> EngineConfig {
        EngineConfig::new(self.workers, self.seed)
    }

    pub fn validate(&self) -> Result<(), Error> {
        if self.repeats == 0 {
            return Err(Error::Config("repeats must be at least 1".into()));
        }
        if self.workers == 0 {
            return Err(Error::Config("workers must be at least 1".into()));
        }
        if self.partitions == Some(0) {
            return Err(Error::Config("partitions must be at least 1".into()));
        }
        if !(self.split_ratio > 0.0 && self.split_ratio < 1.0) {
            return Err(Error::Config(format!(
                "split_ratio must lie strictly between 0 and 1, got {}",
                self.split_ratio
            )));
        }
        self.ngram.validate()?;
        self.train_config().validate()?;
        if let DataSource::Synthetic(spec) = &self.data {
            spec.validate()?;
        }
        Ok(())
    }

    pub fn from_json(s: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(s)
    }

    pub fn load(path: &Path) -> Result<Self, Error> {
        let s = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&s).map_err(|source| Error::Json {
            path: path.to_path_buf(),
            source,
        })
    }

    pub fn to_json_value(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("config serializes")
    }
}

/// Scores one trace at a time: n-gram words, TF at the model dimension,
/// optional IDF weighting, model score.
#[derive(Debug, Clone, PartialEq)]
pub struct Detector {
    pub ngram: NGramConfig,
    pub model: LinearModel,
    pub idf: Option<IdfModel>,
}

impl Detector {
    pub fn new(ngram: NGramConfig, model: LinearModel, idf: Option<IdfModel>) -> Result<Self, Error> {
        ngram.validate()?;
        if let Some(idf) = &idf {
            if idf.dim != model.dim() {
                return Err(TrainError::DimMismatch {
                    expected: model.dim(),
                    found: idf.dim,
                }
                .into());
            }
        }
        Ok(Self { ngram, model, idf })
    }

    pub fn score(&self, trace: &Trace) -> Result<f64, Error> {
        let tokens: Vec<String> = trace.syscalls.iter().map(u32::to_string).collect();
        let words = self.ngram.words(&tokens);
        let mut x = term_frequencies(&words, self.model.dim());
        if let Some(idf) = &self.idf {
            x = idf.transform(&x)?;
        }
        Ok(self.model.predict_score(&x)?)
    }

    pub fn classify(&self, trace: &Trace) -> Result<(Label, f64), Error> {
        let score = self.score(trace)?;
        let label = if score >= self.model.effective_threshold() {
            Label::Attack
        } else {
            Label::Normal
        };
        Ok((label, score))
    }
}

/// Everything one pipeline run produced.
#[derive(Debug, Clone)]
pub struct PipelineRun {
    pub run: usize,
    pub seed: u64,
    pub dim: usize,
    /// Documents of the deduplicated training union, in key order.
    pub train_documents: Vec<Document>,
    /// IDF of the training union, applied to test TF vectors.
    pub idf: IdfModel,
    pub model: LinearModel,
    /// Test traces (attack, then normal) aligned with `scores`.
    pub test_traces: Vec<Trace>,
    pub scores: Vec<ScoredLabel>,
    pub auc: f64,
    pub metrics: TaskMetrics,
    pub wall_clock_ms: f64,
    /// DOT of the lineage behind the training set and test scores.
    pub dag: String,
}

impl PipelineRun {
    pub fn roc(&self) -> Result<RocCurve, Error> {
        Ok(roc_curve(&self.scores)?)
    }

    pub fn detector(&self, cfg: &ExperimentConfig) -> Detector {
        Detector {
            ngram: cfg.ngram,
            model: self.model.clone(),
            idf: (cfg.features == FeatureMode::Tfidf).then(|| self.idf.clone()),
        }
    }
}

fn documents(engine: &Engine, traces: Vec<Trace>, cfg: &ExperimentConfig) -> Result<PDataset<Document>, Error> {
    let parts = cfg.partition_count();
    let docs = vects_gen(engine, &PDataset::from_vec(traces, parts), cfg.ngram, parts)?;
    Ok(docs.cache())
}

fn labeled(features: &PDataset<crate::featurization::SparseVector>, label: Label) -> PDataset<LabeledPoint> {
    features.map(move |x| LabeledPoint::new(x, label))
}

/// Executes one run of the pipeline with seed `cfg.seed + run`.
pub fn run_once(engine: &Engine, corpus: &TraceCorpus, cfg: &ExperimentConfig, run: usize) -> Result<PipelineRun, Error> {
    cfg.validate()?;
    let started = Instant::now();
    let mark = engine.metrics_mark();
    let seed = cfg.seed.wrapping_add(run as u64);
    let parts = cfg.partition_count();

    let mut splits = Vec::with_capacity(2);
    for label in [Label::Attack, Label::Normal] {
        let ds = PDataset::from_vec(corpus.class(label).to_vec(), parts);
        let unique = ingestion::deduplicate(&ds);
        let split = ingestion::split(engine, &unique, label, cfg.split_ratio, seed).stage("split")?;
        splits.push(split);
    }
    let (attack, normal) = (&splits[0], &splits[1]);

    let union = PDataset::from_vec(attack.train.clone(), parts)
        .union(&PDataset::from_vec(normal.train.clone(), parts))
        .distinct();
    let union_traces = engine.collect(&union).stage("dimension")?;
    let union_docs = documents(engine, union_traces, cfg).stage("dimension")?;
    let dim = num_distinct_words(engine, &union_docs).stage("dimension")?;
    let train_tf = tf_gen(&union_docs, dim).stage("idf")?.cache();
    let idf = IdfModel::fit(engine, &train_tf).stage("idf")?;

    let mut training: Option<PDataset<LabeledPoint>> = None;
    for (split, label) in [(attack, Label::Attack), (normal, Label::Normal)] {
        let docs = documents(engine, split.train.clone(), cfg).stage("train-features")?;
        let features = match cfg.train_idf {
            TrainIdfScope::PerClass => tfidf_gen(engine, &docs, dim).stage("train-features")?.0,
            TrainIdfScope::Combined => idf.transform_dataset(&tf_gen(&docs, dim).stage("train-features")?),
        };
        let points = labeled(&features, label);
        training = Some(match training {
            None => points,
            Some(t) => t.union(&points),
        });
    }
    let training = training.expect("two classes").cache();
    let train_cfg = TrainConfig {
        seed,
        ..cfg.train_config()
    };
    let model = classifiers::train(engine, cfg.classifier, &training, &train_cfg).stage("train")?;

    let detector = Detector {
        ngram: cfg.ngram,
        model: model.clone(),
        idf: (cfg.features == FeatureMode::Tfidf).then(|| idf.clone()),
    };
    let test_traces: Vec<Trace> = attack.test.iter().chain(&normal.test).cloned().collect();
    let scored = PDataset::from_vec(test_traces.clone(), parts).try_map_partitions(move |it| {
        it.map(|t| detector.score(&t).map(|s| ScoredLabel::new(s, t.label)))
            .collect::<Result<Vec<_>, _>>()
    });
    let scores = engine.collect(&scored).stage("test")?;
    let auc = auc(&scores).stage("evaluate")?;
    let train_documents = engine.collect(&union_docs)?;

    let mut dag = DagExport::new();
    dag.add(&training).add(&scored);

    Ok(PipelineRun {
        run,
        seed,
        dim,
        train_documents,
        idf,
        model,
        test_traces,
        scores,
        auc,
        metrics: engine.metrics_since(mark),
        wall_clock_ms: started.elapsed().as_secs_f64() * 1e3,
        dag: dag.to_dot(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunSummary {
    pub run: usize,
    pub seed: u64,
    pub dim: usize,
    pub auc: f64,
    pub tasks: usize,
    pub average_task_ms: f64,
    pub wall_clock_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExperimentReport {
    pub config: ExperimentConfig,
    pub runs: Vec<RunSummary>,
    pub aucs: Vec<f64>,
    pub mean_auc: f64,
    /// Mean duration over every partition-task of every run.
    pub average_task_ms: f64,
    pub per_stage: Vec<StageSummary>,
    pub wall_clock_ms: f64,
}

impl ExperimentReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// `cfg.repeats` runs on one engine, plus the last run's details.
pub fn run_pipeline_on(
    engine: &Engine,
    corpus: &TraceCorpus,
    cfg: &ExperimentConfig,
) -> Result<(ExperimentReport, PipelineRun), Error> {
    cfg.validate()?;
    let started = Instant::now();
    let mut runs = Vec::with_capacity(cfg.repeats);
    let mut all = TaskMetrics::default();
    let mut last = None;
    for run in 0..cfg.repeats {
        let r = run_once(engine, corpus, cfg, run)?;
        log::info!("run {run}: seed {}, D = {}, AUC = {:.6}", r.seed, r.dim, r.auc);
        all.extend(&r.metrics);
        runs.push(RunSummary {
            run,
            seed: r.seed,
            dim: r.dim,
            auc: r.auc,
            tasks: r.metrics.task_count(),
            average_task_ms: r.metrics.average_task_ms().unwrap_or(0.0),
            wall_clock_ms: r.wall_clock_ms,
        });
        last = Some(r);
    }
    let aucs: Vec<f64> = runs.iter().map(|r| r.auc).collect();
    let report = ExperimentReport {
        config: cfg.clone(),
        mean_auc: mean(&aucs),
        aucs,
        runs,
        average_task_ms: all.average_task_ms().unwrap_or(0.0),
        per_stage: all.per_stage(),
        wall_clock_ms: started.elapsed().as_secs_f64() * 1e3,
    };
    Ok((report, last.expect("repeats >= 1")))
}

/// Loads the data and runs the experiment on a fresh engine.
pub fn run_pipeline(cfg: &ExperimentConfig) -> Result<ExperimentReport, Error> {
    cfg.validate()?;
    let engine = Engine::new(cfg.engine_config())?;
    let corpus = cfg.data.load().stage("load")?;
    Ok(run_pipeline_on(&engine, &corpus, cfg)?.0)
}

/// Mean AUC per n, one column per run (rows `n`, columns `E.1..E.k`, `Avg`).
#[derive(Debug, Clone, PartialEq)]
pub struct AccuracyTable {
    pub rows: Vec<(usize, Vec<f64>)>,
}

impl AccuracyTable {
    pub fn write_csv<W: std::io::Write>(&self, out: W) -> Result<(), csv::Error> {
        let k = self.rows.iter().map(|(_, a)| a.len()).max().unwrap_or(0);
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["n".to_string()];
        header.extend((1..=k).map(|i| format!("E.{i}")));
        header.push("Avg".into());
        w.write_record(&header)?;
        for (n, aucs) in &self.rows {
            let mut rec = vec![n.to_string()];
            rec.extend(aucs.iter().map(f64::to_string));
            rec.push(mean(aucs).to_string());
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// One experiment per n (n-gram size or maximum size, per `base.ngram.mode`).
pub fn bench_accuracy(
    engine: &Engine,
    corpus: &TraceCorpus,
    base: &ExperimentConfig,
    ns: &[usize],
) -> Result<AccuracyTable, Error> {
    let mut rows = Vec::with_capacity(ns.len());
    for &n in ns {
        let cfg = ExperimentConfig {
            ngram: NGramConfig { n, ..base.ngram },
            ..base.clone()
        };
        let (report, _) = run_pipeline_on(engine, corpus, &cfg)?;
        log::info!("n = {n}: mean AUC {:.4}", report.mean_auc);
        rows.push((n, report.aucs));
    }
    Ok(AccuracyTable { rows })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScalabilityCell {
    pub classifier: ModelKind,
    pub max_n: usize,
    pub workers: usize,
    pub runs: usize,
    /// Mean over runs of each run's average task time.
    pub mean_task_ms: f64,
    pub mean_auc: f64,
}

/// Grid of `classifiers x max_ns x workers`, each cell on a fresh engine
/// with `base.repeats` runs. Cells run one after another.
pub fn bench_scalability(
    corpus: &TraceCorpus,
    base: &ExperimentConfig,
    workers: &[usize],
    max_ns: &[usize],
    classifiers: &[ModelKind],
) -> Result<Vec<ScalabilityCell>, Error> {
    let mut cells = Vec::new();
    for &classifier in classifiers {
        for &max_n in max_ns {
            for &w in workers {
                let cfg = ExperimentConfig {
                    classifier,
                    ngram: NGramConfig { n: max_n, ..base.ngram },
                    workers: w,
                    train: base.train.clone().filter(|_| classifier == base.classifier),
                    ..base.clone()
                };
                let engine = Engine::new(cfg.engine_config())?;
                let (report, _) = run_pipeline_on(&engine, corpus, &cfg)?;
                let task_ms: Vec<f64> = report.runs.iter().map(|r| r.average_task_ms).collect();
                let cell = ScalabilityCell {
                    classifier,
                    max_n,
                    workers: w,
                    runs: report.runs.len(),
                    mean_task_ms: mean(&task_ms),
                    mean_auc: report.mean_auc,
                };
                log::info!("{classifier} max_n={max_n} workers={w}: {:.4} ms/task", cell.mean_task_ms);
                cells.push(cell);
            }
        }
    }
    Ok(cells)
}

pub fn write_scalability_csv<W: std::io::Write>(cells: &[ScalabilityCell], out: W) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(out);
    for c in cells {
        w.serialize(c)?;
    }
    w.flush()?;
    Ok(())
}

/// Whitespace-separated `workers mean_task_ms` blocks, one per
/// classifier and max_n, separated by blank lines.
pub fn write_scalability_gnuplot<W: std::io::Write>(cells: &[ScalabilityCell], mut out: W) -> std::io::Result<()> {
    let mut prev: Option<(ModelKind, usize)> = None;
    for c in cells {
        if prev != Some((c.classifier, c.max_n)) {
            if prev.is_some() {
                writeln!(out, "\n")?;
            }
            writeln!(out, "# {} max_n={}", c.classifier, c.max_n)?;
            prev = Some((c.classifier, c.max_n));
        }
        writeln!(out, "{} {}", c.workers, c.mean_task_ms)?;
    }
    Ok(())
}
