//! `scads`: command-line driver for the system-call intrusion detection
//! pipeline.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};

use scads_core::classifiers::{ModelFile, ModelKind};
use scads_core::dataflow::{Engine, TaskMetrics};
use scads_core::experiment::{
    bench_accuracy, bench_scalability, run_once, run_pipeline_on, write_scalability_csv, write_scalability_gnuplot,
    DataSource, Detector, ExperimentConfig, FeatureMode,
};
use scads_core::featurization::{IdfModel, NGramConfig, NGramMode};
use scads_core::ingestion::{read_trace_file, Label, SyntheticSpec, Trace};
use scads_core::Error;

#[derive(Parser)]
#[command(name = "scads", version, about = "Data-parallel system-call intrusion detection")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Validate a dataset and print per-class statistics.
    Ingest(IngestArgs),
    /// Write a synthetic corpus in the ADFA-LD directory layout.
    GenSynthetic(GenArgs),
    /// Train on one split and save the model and IDF model.
    Train(ExpArgs),
    /// Classify trace files with a saved model.
    Detect(DetectArgs),
    /// Run the pipeline `repeats` times and write the report and ROC curve.
    Eval(ExpArgs),
    /// AUC table over a range of n (rows n, columns E.1..E.k, Avg).
    BenchAccuracy(AccuracyArgs),
    /// Average task time over a grid of worker counts and max_n.
    BenchScalability(ScalabilityArgs),
    /// Run the pipeline once and write its lineage as DOT.
    ExportDag(ExpArgs),
}

#[derive(Args, Clone)]
struct ExpArgs {
    /// JSON experiment config; flags override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    /// ADFA-LD root directory (synthetic data when absent).
    #[arg(long)]
    dataset: Option<PathBuf>,
    #[arg(long, value_parser = parse_mode)]
    mode: Option<NGramMode>,
    /// n-gram size (single) or maximum size (multiple).
    #[arg(long)]
    n: Option<usize>,
    #[arg(long, value_parser = parse_kind)]
    classifier: Option<ModelKind>,
    #[arg(long, value_parser = parse_features)]
    features: Option<FeatureMode>,
    #[arg(long, env = "SCADS_WORKERS")]
    workers: Option<usize>,
    #[arg(long)]
    partitions: Option<usize>,
    #[arg(long)]
    repeats: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output file or directory, depending on the command.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct IngestArgs {
    #[arg(long)]
    dataset: PathBuf,
}

#[derive(Args)]
struct GenArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = SyntheticSpec::default().alphabet_size)]
    alphabet: u32,
    #[arg(long, default_value_t = SyntheticSpec::default().traces_per_class)]
    traces_per_class: usize,
    #[arg(long, default_value_t = SyntheticSpec::default().min_len)]
    min_len: usize,
    #[arg(long, default_value_t = SyntheticSpec::default().max_len)]
    max_len: usize,
    #[arg(long, default_value_t = SyntheticSpec::default().perturbation_rate)]
    perturbation: f64,
    #[arg(long, default_value_t = SyntheticSpec::default().seed)]
    seed: u64,
}

#[derive(Args)]
struct DetectArgs {
    #[arg(long)]
    model: PathBuf,
    /// IDF model; without it raw TF features are scored.
    #[arg(long)]
    idf: Option<PathBuf>,
    /// n-gram mode; defaults to the one recorded in the model file.
    #[arg(long, value_parser = parse_mode)]
    mode: Option<NGramMode>,
    #[arg(long)]
    n: Option<usize>,
    /// Decision threshold (default 0.5 for lr, 0.0 for svm).
    #[arg(long)]
    threshold: Option<f64>,
    /// Trace files to classify.
    #[arg(required = true)]
    traces: Vec<PathBuf>,
}

#[derive(Args)]
struct AccuracyArgs {
    #[command(flatten)]
    exp: ExpArgs,
    /// Values of n, comma separated.
    #[arg(long, value_delimiter = ',', default_value = "1,2,3,4,5,6,7,8,9,10")]
    ns: Vec<usize>,
}

#[derive(Args)]
struct ScalabilityArgs {
    #[command(flatten)]
    exp: ExpArgs,
    #[arg(long, value_delimiter = ',', default_value = "1,2,3,4,5,6")]
    worker_grid: Vec<usize>,
    #[arg(long, value_delimiter = ',', default_value = "1,6,10")]
    max_n_grid: Vec<usize>,
    #[arg(long, value_delimiter = ',', value_parser = parse_kind, default_value = "lr,svm")]
    classifiers: Vec<ModelKind>,
    /// Also write a gnuplot-ready data file.
    #[arg(long)]
    gnuplot: Option<PathBuf>,
}

fn parse_mode(s: &str) -> Result<NGramMode, String> {
    s.parse().map_err(|e: scads_core::featurization::FeatureError| e.to_string())
}

fn parse_kind(s: &str) -> Result<ModelKind, String> {
    s.parse().map_err(|e: scads_core::classifiers::TrainError| e.to_string())
}

fn parse_features(s: &str) -> Result<FeatureMode, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

impl ExpArgs {
    fn config(&self) -> Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(p) => ExperimentConfig::load(p)?,
            None => ExperimentConfig::default(),
        };
        if let Some(path) = &self.dataset {
            cfg.data = DataSource::Adfa { path: path.clone() };
        }
        if let Some(mode) = self.mode {
            cfg.ngram.mode = mode;
        }
        if let Some(n) = self.n {
            cfg.ngram.n = n;
        }
        if let Some(kind) = self.classifier {
            if kind != cfg.classifier {
                cfg.train = None;
            }
            cfg.classifier = kind;
        }
        if let Some(f) = self.features {
            cfg.features = f;
        }
        if let Some(w) = self.workers {
            cfg.workers = w;
        }
        if self.partitions.is_some() {
            cfg.partitions = self.partitions;
        }
        if let Some(r) = self.repeats {
            cfg.repeats = r;
        }
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn out_dir(&self, default: &str) -> Result<PathBuf> {
        let dir = self.out.clone().unwrap_or_else(|| PathBuf::from(default));
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        Ok(dir)
    }
}

fn setup(cfg: &ExperimentConfig) -> Result<(Engine, scads_core::ingestion::TraceCorpus)> {
    let engine = Engine::new(cfg.engine_config()).map_err(Error::from)?;
    let corpus = cfg.data.load()?;
    Ok((engine, corpus))
}

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, contents).map_err(|e| Error::io(path, e))?;
    Ok(())
}

fn create(path: &Path) -> Result<fs::File> {
    Ok(fs::File::create(path).map_err(|e| Error::io(path, e))?)
}

fn write_metrics(path: &Path, metrics: &TaskMetrics) -> Result<()> {
    metrics
        .write_csv(create(path)?)
        .with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

fn ingest(args: IngestArgs) -> Result<()> {
    let corpus = DataSource::Adfa { path: args.dataset }.load()?;
    println!("class,traces,distinct,min_len,mean_len,max_len");
    for label in [Label::Normal, Label::Attack] {
        let traces = corpus.class(label);
        let mut distinct: Vec<&Trace> = traces.iter().collect();
        distinct.sort();
        distinct.dedup();
        let lens: Vec<usize> = traces.iter().map(Trace::len).collect();
        let mean = lens.iter().sum::<usize>() as f64 / lens.len().max(1) as f64;
        println!(
            "{label},{},{},{},{mean:.1},{}",
            traces.len(),
            distinct.len(),
            lens.iter().min().copied().unwrap_or(0),
            lens.iter().max().copied().unwrap_or(0)
        );
    }
    Ok(())
}

fn gen_synthetic(args: GenArgs) -> Result<()> {
    let spec = SyntheticSpec {
        alphabet_size: args.alphabet,
        traces_per_class: args.traces_per_class,
        min_len: args.min_len,
        max_len: args.max_len,
        perturbation_rate: args.perturbation,
        seed: args.seed,
    };
    let corpus = scads_core::ingestion::gen_synthetic(&spec).map_err(Error::from)?;
    corpus.write_layout(&args.out).map_err(Error::from)?;
    println!(
        "wrote {} normal and {} attack traces to {}",
        corpus.normal.len(),
        corpus.attack.len(),
        args.out.display()
    );
    Ok(())
}

fn train(args: ExpArgs) -> Result<()> {
    let cfg = args.config()?;
    let (engine, corpus) = setup(&cfg)?;
    let run = run_once(&engine, &corpus, &cfg, 0)?;
    let dir = args.out_dir("scads-model")?;
    let file = run.model.to_file(cfg.to_json_value());
    file.save(&dir.join("model.json")).map_err(Error::from)?;
    run.idf.save(&dir.join("idf.json")).map_err(Error::from)?;
    let mut scores = csv::Writer::from_path(dir.join("test_scores.csv")).context("writing test scores")?;
    scores.write_record(["label", "score"])?;
    for s in &run.scores {
        scores.write_record([s.label.to_string(), s.score.to_string()])?;
    }
    scores.flush()?;
    println!("D = {}, test AUC = {:.6}", run.dim, run.auc);
    println!("model written to {}", dir.display());
    Ok(())
}

fn detect(args: DetectArgs) -> Result<()> {
    let file = ModelFile::load(&args.model).map_err(Error::from)?;
    let mut model = file.model().map_err(Error::from)?;
    if args.threshold.is_some() {
        model.threshold = args.threshold;
    }
    let recorded: Option<NGramConfig> = file
        .config
        .get("ngram")
        .and_then(|v| serde_json::from_value(v.clone()).ok());
    let base = recorded.unwrap_or(NGramConfig::multiple(6));
    let ngram = NGramConfig {
        mode: args.mode.unwrap_or(base.mode),
        n: args.n.unwrap_or(base.n),
    };
    let idf = match &args.idf {
        Some(p) => Some(IdfModel::load(p).map_err(Error::from)?),
        None => None,
    };
    let detector = Detector::new(ngram, model, idf)?;
    let stdout = std::io::stdout();
    let mut out = stdout.lock();
    writeln!(out, "trace,prediction,score")?;
    for path in &args.traces {
        let trace = read_trace_file(path, Label::Normal).map_err(Error::from)?;
        let (label, score) = detector.classify(&trace)?;
        writeln!(out, "{},{label},{score}", path.display())?;
    }
    Ok(())
}

fn eval(args: ExpArgs) -> Result<()> {
    let cfg = args.config()?;
    let (engine, corpus) = setup(&cfg)?;
    let (report, last) = run_pipeline_on(&engine, &corpus, &cfg)?;
    let dir = args.out_dir("scads-eval")?;
    write_file(&dir.join("report.json"), report.to_json())?;
    last.roc()?.save(&dir.join("roc.csv")).map_err(Error::from)?;
    write_metrics(&dir.join("tasks.csv"), &engine.metrics())?;
    let mut runs = csv::Writer::from_path(dir.join("runs.csv")).context("writing runs")?;
    for r in &report.runs {
        runs.serialize(r)?;
    }
    runs.flush()?;
    for (i, a) in report.aucs.iter().enumerate() {
        println!("E.{}: {a:.6}", i + 1);
    }
    println!("mean AUC = {:.6}, average task time = {:.4} ms", report.mean_auc, report.average_task_ms);
    Ok(())
}

fn bench_accuracy_cmd(args: AccuracyArgs) -> Result<()> {
    let cfg = args.exp.config()?;
    let (engine, corpus) = setup(&cfg)?;
    let table = bench_accuracy(&engine, &corpus, &cfg, &args.ns)?;
    match &args.exp.out {
        Some(p) => table.write_csv(create(p)?)?,
        None => table.write_csv(std::io::stdout())?,
    }
    Ok(())
}

fn bench_scalability_cmd(args: ScalabilityArgs) -> Result<()> {
    let cfg = args.exp.config()?;
    if args.worker_grid.contains(&0) {
        return Err(Error::Config("worker counts must be at least 1".into()).into());
    }
    let corpus = cfg.data.load()?;
    let cells = bench_scalability(&corpus, &cfg, &args.worker_grid, &args.max_n_grid, &args.classifiers)?;
    match &args.exp.out {
        Some(p) => write_scalability_csv(&cells, create(p)?)?,
        None => write_scalability_csv(&cells, std::io::stdout())?,
    }
    if let Some(p) = &args.gnuplot {
        write_scalability_gnuplot(&cells, create(p)?)?;
    }
    Ok(())
}

fn export_dag(args: ExpArgs) -> Result<()> {
    let cfg = args.config()?;
    let (engine, corpus) = setup(&cfg)?;
    let run = run_once(&engine, &corpus, &cfg, 0)?;
    match &args.out {
        Some(p) => write_file(p, &run.dag)?,
        None => print!("{}", run.dag),
    }
    Ok(())
}

fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<Error>() {
            return e.exit_code() as u8;
        }
    }
    2
}

/// The cause chain, skipping causes already spelled out by their parent.
fn describe(err: &anyhow::Error) -> String {
    let mut msg = String::new();
    for cause in err.chain() {
        let s = cause.to_string();
        if !msg.contains(&s) {
            if !msg.is_empty() {
                msg.push_str(": ");
            }
            msg.push_str(&s);
        }
    }
    msg
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let result = match cli.command {
        Command::Ingest(a) => ingest(a),
        Command::GenSynthetic(a) => gen_synthetic(a),
        Command::Train(a) => train(a),
        Command::Detect(a) => detect(a),
        Command::Eval(a) => eval(a),
        Command::BenchAccuracy(a) => bench_accuracy_cmd(a),
        Command::BenchScalability(a) => bench_scalability_cmd(a),
        Command::ExportDag(a) => export_dag(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", describe(&e));
            ExitCode::from(exit_code(&e))
        }
    }
}
