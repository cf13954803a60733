//! Trace loading, deduplication, train/test splitting and synthetic corpora.
//!
//! On-disk layout (ADFA-LD):
//!
//! ```text
//! <root>/Training_Data_Master/*.txt              normal traces
//! <root>/Attack_Data_Master/<attack>_<i>/*.txt   attack traces
//! ```
//!
//! Each file holds one trace of whitespace-separated syscall ids. Any other
//! directory (e.g. `Validation_Data_Master`) is ignored.

use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use rand::distributions::{Distribution, WeightedIndex};
use rand::seq::{index, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataflow::{Engine, EngineError, PDataset};

pub const NORMAL_DIR: &str = "Training_Data_Master";
pub const ATTACK_DIR: &str = "Attack_Data_Master";

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("{path}: byte offset {offset}: `{token}` is not a syscall id")]
    BadToken {
        path: PathBuf,
        offset: usize,
        token: String,
    },
    #[error("{path}: trace is empty")]
    EmptyTrace { path: PathBuf },
    #[error("{0} class has no traces")]
    EmptyClass(Label),
    #[error("invalid split ratio {0}, expected a value in [0, 1]")]
    BadRatio(f64),
    #[error("invalid synthetic spec: {0}")]
    BadSpec(String),
    #[error(transparent)]
    Engine(#[from] EngineError),
}

/// Class of a trace; `Attack` is the positive class (label 1).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Normal,
    Attack,
}

impl Label {
    /// 0 for normal, 1 for attack.
    pub fn as_f64(self) -> f64 {
        match self {
            Label::Normal => 0.0,
            Label::Attack => 1.0,
        }
    }

    /// -1 for normal, +1 for attack.
    pub fn sign(self) -> f64 {
        match self {
            Label::Normal => -1.0,
            Label::Attack => 1.0,
        }
    }

    pub fn flipped(self) -> Label {
        match self {
            Label::Normal => Label::Attack,
            Label::Attack => Label::Normal,
        }
    }
}

impl std::fmt::Display for Label {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Label::Normal => "normal",
            Label::Attack => "attack",
        })
    }
}

/// One system-call sequence. Equality is on the token sequence and label,
/// so whitespace differences in the source file do not matter.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Trace {
    pub syscalls: Vec<u32>,
    pub label: Label,
}

impl Trace {
    pub fn new(syscalls: Vec<u32>, label: Label) -> Self {
        Self { syscalls, label }
    }

    pub fn len(&self) -> usize {
        self.syscalls.len()
    }

    pub fn is_empty(&self) -> bool {
        self.syscalls.is_empty()
    }

    /// Single-space separated text form.
    pub fn text(&self) -> String {
        let mut s = String::with_capacity(self.syscalls.len() * 4);
        for (i, id) in self.syscalls.iter().enumerate() {
            if i > 0 {
                s.push(' ');
            }
            s.push_str(&id.to_string());
        }
        s
    }
}

/// Parses whitespace-separated syscall ids. `path` only labels errors.
pub fn parse_trace(text: &str, label: Label, path: &Path) -> Result<Trace, IngestError> {
    let mut syscalls = Vec::new();
    for token in text.split_whitespace() {
        let id = token.parse::<u32>().map_err(|_| IngestError::BadToken {
            path: path.to_path_buf(),
            offset: token.as_ptr() as usize - text.as_ptr() as usize,
            token: token.to_string(),
        })?;
        syscalls.push(id);
    }
    if syscalls.is_empty() {
        return Err(IngestError::EmptyTrace {
            path: path.to_path_buf(),
        });
    }
    Ok(Trace { syscalls, label })
}

pub fn read_trace_file(path: &Path, label: Label) -> Result<Trace, IngestError> {
    let text = fs::read_to_string(path).map_err(|source| IngestError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_trace(&text, label, path)
}

/// Normal and attack traces held in memory.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct TraceCorpus {
    pub normal: Vec<Trace>,
    pub attack: Vec<Trace>,
}

impl TraceCorpus {
    pub fn class(&self, label: Label) -> &[Trace] {
        match label {
            Label::Normal => &self.normal,
            Label::Attack => &self.attack,
        }
    }

    /// Both classes as datasets with `partitions` partitions each.
    pub fn into_datasets(self, partitions: usize) -> (PDataset<Trace>, PDataset<Trace>) {
        (
            PDataset::from_vec(self.normal, partitions),
            PDataset::from_vec(self.attack, partitions),
        )
    }

    /// Writes the corpus in the ADFA-LD directory layout, ten attack traces
    /// per attack directory.
    pub fn write_layout(&self, root: &Path) -> Result<(), IngestError> {
        let io_err = |path: &Path| {
            let path = path.to_path_buf();
            move |source| IngestError::Io { path, source }
        };
        let normal_dir = root.join(NORMAL_DIR);
        fs::create_dir_all(&normal_dir).map_err(io_err(&normal_dir))?;
        for (i, t) in self.normal.iter().enumerate() {
            let p = normal_dir.join(format!("UTD-{:06}.txt", i + 1));
            fs::write(&p, format!("{}\n", t.text())).map_err(io_err(&p))?;
        }
        for (i, t) in self.attack.iter().enumerate() {
            let group = i / 10 + 1;
            let dir = root.join(ATTACK_DIR).join(format!("Synthetic_{group:03}"));
            fs::create_dir_all(&dir).map_err(io_err(&dir))?;
            let p = dir.join(format!("UAD-Synthetic-{group:03}-{:02}.txt", i % 10 + 1));
            fs::write(&p, format!("{}\n", t.text())).map_err(io_err(&p))?;
        }
        Ok(())
    }
}

fn txt_files(dir: &Path) -> Result<Vec<PathBuf>, IngestError> {
    let entries = fs::read_dir(dir).map_err(|source| IngestError::Io {
        path: dir.to_path_buf(),
        source,
    })?;
    let mut files = Vec::new();
    for entry in entries {
        let entry = entry.map_err(|source| IngestError::Io {
            path: dir.to_path_buf(),
            source,
        })?;
        let path = entry.path();
        if path.is_file() && path.extension().is_some_and(|e| e == "txt") {
            files.push(path);
        }
    }
    files.sort();
    Ok(files)
}

/// Reads every normal and attack trace under `root`, in path order.
pub fn read_adfa(root: &Path) -> Result<TraceCorpus, IngestError> {
    let normal = txt_files(&root.join(NORMAL_DIR))?
        .iter()
        .map(|p| read_trace_file(p, Label::Normal))
        .collect::<Result<Vec<_>, _>>()?;

    let attack_root = root.join(ATTACK_DIR);
    let entries = fs::read_dir(&attack_root).map_err(|source| IngestError::Io {
        path: attack_root.clone(),
        source,
    })?;
    let mut attack_dirs: Vec<PathBuf> = entries
        .filter_map(Result::ok)
        .map(|e| e.path())
        .filter(|p| p.is_dir())
        .collect();
    attack_dirs.sort();
    let mut attack = Vec::new();
    for dir in attack_dirs {
        for p in txt_files(&dir)? {
            attack.push(read_trace_file(&p, Label::Attack)?);
        }
    }
    Ok(TraceCorpus { normal, attack })
}

/// Loads `root` as `(normal, attack)` datasets.
pub fn load_adfa(root: &Path, partitions: usize) -> Result<(PDataset<Trace>, PDataset<Trace>), IngestError> {
    Ok(read_adfa(root)?.into_datasets(partitions))
}

/// Exact-duplicate removal through the engine's `distinct`.
pub fn deduplicate(ds: &PDataset<Trace>) -> PDataset<Trace> {
    ds.distinct()
}

/// Disjoint train/test halves of one class.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetSplit {
    pub train: Vec<Trace>,
    pub test: Vec<Trace>,
    pub ratio: f64,
    pub seed: u64,
}

/// Seeded exact-count split: the traces are put in canonical order,
/// shuffled, and the first `round(ratio * N)` go to `train`.
pub fn split_traces(mut traces: Vec<Trace>, ratio: f64, seed: u64) -> Result<DatasetSplit, IngestError> {
    if !(0.0..=1.0).contains(&ratio) {
        return Err(IngestError::BadRatio(ratio));
    }
    let Some(first) = traces.first() else {
        return Err(IngestError::EmptyClass(Label::Normal));
    };
    if traces.iter().any(|t| t.label != first.label) {
        log::warn!("splitting a mixed-label trace list as one class");
    }
    traces.sort();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    traces.shuffle(&mut rng);
    let n_train = (ratio * traces.len() as f64).round() as usize;
    let test = traces.split_off(n_train);
    Ok(DatasetSplit {
        train: traces,
        test,
        ratio,
        seed,
    })
}

/// Materializes `ds` and splits it; `label` names the class in errors.
pub fn split(
    engine: &Engine,
    ds: &PDataset<Trace>,
    label: Label,
    ratio: f64,
    seed: u64,
) -> Result<DatasetSplit, IngestError> {
    let traces = engine.collect(ds)?;
    if traces.is_empty() {
        return Err(IngestError::EmptyClass(label));
    }
    split_traces(traces, ratio, seed)
}

/// Parameters of the synthetic Markov-chain corpus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub alphabet_size: u32,
    pub traces_per_class: usize,
    pub min_len: usize,
    pub max_len: usize,
    /// Fraction of attack transitions replaced by a uniform draw.
    pub perturbation_rate: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            alphabet_size: 300,
            traces_per_class: 400,
            min_len: 100,
            max_len: 400,
            perturbation_rate: 0.3,
            seed: 7,
        }
    }
}

/// Out-degree of each state in the normal-behaviour chain.
const SUCCESSORS_PER_STATE: usize = 6;
const START_STATES: usize = 8;

impl SyntheticSpec {
    pub fn validate(&self) -> Result<(), IngestError> {
        let bad = |m: &str| Err(IngestError::BadSpec(m.to_string()));
        if self.alphabet_size == 0 {
            return bad("alphabet_size must be at least 1");
        }
        if self.traces_per_class == 0 {
            return bad("traces_per_class must be at least 1");
        }
        if self.min_len == 0 || self.min_len > self.max_len {
            return bad("length range must satisfy 1 <= min_len <= max_len");
        }
        if !(0.0..=1.0).contains(&self.perturbation_rate) {
            return bad("perturbation_rate must lie in [0, 1]");
        }
        Ok(())
    }
}

struct MarkovChain {
    starts: Vec<u32>,
    successors: Vec<Vec<u32>>,
    weights: Vec<WeightedIndex<f64>>,
}

impl MarkovChain {
    fn derive(alphabet: u32, rng: &mut ChaCha8Rng) -> Self {
        let n = alphabet as usize;
        let fanout = SUCCESSORS_PER_STATE.min(n);
        let starts = index::sample(rng, n, START_STATES.min(n))
            .into_iter()
            .map(|i| i as u32)
            .collect();
        let mut successors = Vec::with_capacity(n);
        let mut weights = Vec::with_capacity(n);
        for _ in 0..n {
            successors.push(index::sample(rng, n, fanout).into_iter().map(|i| i as u32).collect());
            let w: Vec<f64> = (0..fanout).map(|_| rng.gen_range(0.1..1.0)).collect();
            weights.push(WeightedIndex::new(w).expect("positive weights"));
        }
        Self {
            starts,
            successors,
            weights,
        }
    }

    fn sample(&self, len: usize, perturbation: f64, alphabet: u32, rng: &mut ChaCha8Rng) -> Vec<u32> {
        let mut out = Vec::with_capacity(len);
        let mut state = *self.starts.choose(rng).expect("non-empty start set");
        out.push(state);
        while out.len() < len {
            state = if perturbation > 0.0 && rng.gen_bool(perturbation) {
                rng.gen_range(0..alphabet)
            } else {
                let s = state as usize;
                self.successors[s][self.weights[s].sample(rng)]
            };
            out.push(state);
        }
        out
    }
}

/// Samples normal traces from a seed-derived first-order Markov chain and
/// attack traces from the same chain with a fraction of transitions replaced
/// by uniform draws over the alphabet.
pub fn gen_synthetic(spec: &SyntheticSpec) -> Result<TraceCorpus, IngestError> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let chain = MarkovChain::derive(spec.alphabet_size, &mut rng);
    let mut class = |label: Label, rate: f64| -> Vec<Trace> {
        (0..spec.traces_per_class)
            .map(|_| {
                let len = rng.gen_range(spec.min_len..=spec.max_len);
                Trace::new(chain.sample(len, rate, spec.alphabet_size, &mut rng), label)
            })
            .collect()
    };
    let normal = class(Label::Normal, 0.0);
    let attack = class(Label::Attack, spec.perturbation_rate);
    Ok(TraceCorpus { normal, attack })
}
