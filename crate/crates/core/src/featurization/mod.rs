//! From raw traces to sparse feature vectors.
//!
//! [`vects_gen`] turns a dataset of traces into one [`Document`] of n-gram
//! words per trace. The hashing dimension is the number of distinct training
//! words ([`num_distinct_words`]); [`tf_gen`] buckets words into raw counts
//! with FNV-1a, and [`IdfModel`] reweights those counts by
//! `ln((n + 1) / (df + 1))`.

mod ngram;
mod sparse;
mod tfidf;

use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataflow::{Engine, EngineError, PDataset};
use crate::hash::fnv1a64;
use crate::ingestion::Trace;

pub use ngram::{words_gen_multiple, words_gen_single, NGramConfig, NGramMode};
pub use sparse::SparseVector;
pub use tfidf::{hash_index, term_frequencies, tf_gen, tfidf_gen, IdfModel};

#[derive(Debug, Error)]
pub enum FeatureError {
    #[error("invalid n-gram configuration: {0}")]
    InvalidConfig(String),
    #[error("corpus is empty")]
    EmptyCorpus,
    #[error("corpus contains no words; the hashing dimension must be at least 1")]
    NoWords,
    #[error("feature dimension must be at least 1")]
    ZeroDimension,
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimMismatch { expected: usize, found: usize },
    #[error("invalid sparse vector: {0}")]
    InvalidVector(String),
    #[error("malformed JSON: {0}")]
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

/// The words extracted from one trace.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Document {
    pub words: Vec<String>,
}

/// One document per trace, `out_partitions` partitions.
///
/// Traces are keyed by `(FNV-1a 64 of the text, position)` and
/// range-partitioned into one partition per trace, so a sliding window can
/// never span two traces. Each partition is split into tokens, turned into
/// words, collected into a document, and the per-trace partitions are
/// coalesced without a shuffle. Documents come out in key order, which does
/// not depend on how the input was partitioned.
pub fn vects_gen(
    engine: &Engine,
    traces: &PDataset<Trace>,
    cfg: NGramConfig,
    out_partitions: usize,
) -> Result<PDataset<Document>, FeatureError> {
    cfg.validate()?;
    let count = engine.count(traces)?;
    if count == 0 {
        return Err(FeatureError::EmptyCorpus);
    }
    let hashed = traces.zip_with_index().map(|(t, pos): (Trace, u64)| {
        let text = t.text();
        ((fnv1a64(text.as_bytes()), pos), text)
    });
    let per_trace = hashed.partition_by_range(count)?;
    let tokens = per_trace
        .values()
        .flat_map(|s: String| s.split_whitespace().map(str::to_string).collect::<Vec<_>>());
    let words = tokens.map_partitions(move |it| {
        let toks: Vec<String> = it.collect();
        let words = cfg.words(&toks);
        if words.is_empty() && !toks.is_empty() {
            log::warn!(
                "trace of length {} is shorter than the {} window of {}; empty document",
                toks.len(),
                cfg.mode,
                cfg.n
            );
        }
        words
    });
    let docs = words.map_partitions(|it| std::iter::once(Document { words: it.collect() }));
    Ok(docs.coalesce(out_partitions.max(1), false)?)
}

/// Number of distinct words across the corpus (word count via
/// `reduce_by_key`), used as the hashing dimension.
pub fn num_distinct_words(engine: &Engine, docs: &PDataset<Document>) -> Result<usize, FeatureError> {
    let counts = docs
        .flat_map(|d: Document| d.words)
        .map(|w| (w, 1u64))
        .reduce_by_key(|a, b| a + b);
    match engine.count(&counts)? {
        0 => Err(FeatureError::NoWords),
        n => Ok(n),
    }
}

#[cfg(test)]
mod tests {
    use std::collections::{BTreeMap, BTreeSet};

    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::ingestion::Label;

    fn trace(ids: &[u32]) -> Trace {
        Trace::new(ids.to_vec(), Label::Normal)
    }

    fn tokens(t: &Trace) -> Vec<String> {
        t.syscalls.iter().map(u32::to_string).collect()
    }

    #[test]
    fn vects_gen_matches_per_trace_oracle() {
        let e = Engine::with_workers(2).unwrap();
        let traces = vec![trace(&[6, 6, 63]), trace(&[1, 2, 3, 4]), trace(&[9, 9])];
        let ds = PDataset::from_partitions(vec![traces.clone()]);
        let cfg = NGramConfig::single(2);
        let docs = e.collect(&vects_gen(&e, &ds, cfg, 2).unwrap()).unwrap();
        assert_eq!(docs.len(), 3);
        let mut got: Vec<Vec<String>> = docs.into_iter().map(|d| d.words).collect();
        let mut want: Vec<Vec<String>> = traces.iter().map(|t| words_gen_single(&tokens(t), 2)).collect();
        got.sort();
        want.sort();
        assert_eq!(got, want);
    }

    #[test]
    fn vects_gen_one_document_per_trace_even_with_duplicates() {
        let e = Engine::with_workers(3).unwrap();
        let traces: Vec<Trace> = (0..833u32).map(|i| trace(&[i % 50, i % 7, 3])).collect();
        let ds = PDataset::from_vec(traces, 4);
        let docs = vects_gen(&e, &ds, NGramConfig::multiple(2), 8).unwrap();
        let parts = e.collect_partitions(&docs).unwrap();
        assert_eq!(parts.len(), 8);
        assert_eq!(parts.iter().map(|p| p.elements.len()).sum::<usize>(), 833);
        for p in &parts {
            for d in &p.elements {
                assert_eq!(d.words.len(), 3 + 2);
            }
        }

        let one = PDataset::from_vec(vec![trace(&[1, 2])], 1);
        assert_eq!(e.count(&vects_gen(&e, &one, NGramConfig::single(1), 8).unwrap()).unwrap(), 1);
        assert!(vects_gen(&e, &PDataset::empty(), NGramConfig::single(1), 8).is_err());
    }

    #[test]
    fn vects_gen_independent_of_partitioning_and_workers() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let traces: Vec<Trace> = (0..40)
            .map(|_| {
                let len = rng.gen_range(1..25);
                trace(&(0..len).map(|_| rng.gen_range(0..20)).collect::<Vec<_>>())
            })
            .collect();
        let cfg = NGramConfig::multiple(3);
        let base = {
            let e = Engine::with_workers(1).unwrap();
            e.collect(&vects_gen(&e, &PDataset::from_vec(traces.clone(), 1), cfg, 1).unwrap()).unwrap()
        };
        for (workers, parts) in [(2, 3), (4, 7), (3, 40)] {
            let e = Engine::with_workers(workers).unwrap();
            let ds = PDataset::from_vec(traces.clone(), parts);
            let docs = e.collect(&vects_gen(&e, &ds, cfg, workers).unwrap()).unwrap();
            assert_eq!(docs, base);
        }
    }

    #[test]
    fn distinct_word_examples() {
        let e = Engine::with_workers(2).unwrap();
        let doc = |w: &[&str]| Document {
            words: w.iter().map(|s| s.to_string()).collect(),
        };
        let ds = PDataset::from_vec(vec![doc(&["a", "b"]), doc(&["b", "c"])], 2);
        assert_eq!(num_distinct_words(&e, &ds).unwrap(), 3);
        let ds = PDataset::from_vec(vec![doc(&["a", "a"])], 1);
        assert_eq!(num_distinct_words(&e, &ds).unwrap(), 1);
        let ds = PDataset::from_vec(vec![doc(&[])], 1);
        assert!(matches!(num_distinct_words(&e, &ds), Err(FeatureError::NoWords)));
    }

    #[test]
    fn distinct_words_matches_set_oracle() {
        let e = Engine::with_workers(2).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let traces: Vec<Trace> = (0..30)
            .map(|_| trace(&(0..rng.gen_range(5..40)).map(|_| rng.gen_range(0..9)).collect::<Vec<_>>()))
            .collect();
        let cfg = NGramConfig::multiple(4);
        let oracle: BTreeSet<String> = traces.iter().flat_map(|t| words_gen_multiple(&tokens(t), 4)).collect();
        let docs = vects_gen(&e, &PDataset::from_vec(traces, 3), cfg, 2).unwrap();
        assert_eq!(num_distinct_words(&e, &docs).unwrap(), oracle.len());
    }

    // Sequential TF-IDF: per-document dense counts over hashed buckets,
    // document frequency by scanning, weights from the closed form.
    fn sequential_tfidf(docs: &[Vec<String>], dim: usize) -> Vec<Vec<f64>> {
        let tf: Vec<Vec<f64>> = docs
            .iter()
            .map(|d| {
                let mut v = vec![0.0; dim];
                for w in d {
                    v[(crate::hash::fnv1a32(w.as_bytes()) as usize) % dim] += 1.0;
                }
                v
            })
            .collect();
        let n = docs.len() as f64;
        let idf: Vec<f64> = (0..dim)
            .map(|j| {
                let df = tf.iter().filter(|v| v[j] != 0.0).count() as f64;
                ((n + 1.0) / (df + 1.0)).ln()
            })
            .collect();
        tf.iter().map(|v| v.iter().zip(&idf).map(|(a, b)| a * b).collect()).collect()
    }

    #[test]
    fn tfidf_joint_and_per_vector_paths_agree_with_oracle() {
        let e = Engine::with_workers(2).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..5 {
            let ndocs = rng.gen_range(1..=50);
            let docs: Vec<Vec<String>> = (0..ndocs)
                .map(|_| (0..rng.gen_range(0..30)).map(|_| format!("w{}", rng.gen_range(0..40))).collect())
                .collect();
            let dim = rng.gen_range(1..60);
            let ds = PDataset::from_vec(docs.iter().map(|w| Document { words: w.clone() }).collect(), 3);
            let (joint, model) = tfidf_gen(&e, &ds, dim).unwrap();
            let joint = e.collect(&joint).unwrap();
            let tf = e.collect(&tf_gen(&ds, dim).unwrap()).unwrap();
            let oracle = sequential_tfidf(&docs, dim);
            for ((j, t), o) in joint.iter().zip(&tf).zip(&oracle) {
                assert_eq!(j, &model.transform(t).unwrap());
                for (a, b) in j.to_dense().iter().zip(o) {
                    assert!((a - b).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn tf_matches_counting_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(50);
        let words: Vec<String> = (0..50).map(|_| format!("{} {}", rng.gen_range(0..10), rng.gen_range(0..10))).collect();
        let dim = 17;
        let mut oracle: BTreeMap<usize, f64> = BTreeMap::new();
        for w in &words {
            *oracle.entry(hash_index(w, dim)).or_default() += 1.0;
        }
        let v = term_frequencies(&words, dim);
        assert_eq!(v.iter().collect::<BTreeMap<_, _>>(), oracle);
    }

    proptest! {
        #[test]
        fn tf_mass_equals_word_count(words in prop::collection::vec("[a-c ]{1,5}", 0..60), dim in 1usize..100) {
            let v = term_frequencies(&words, dim);
            prop_assert_eq!(v.l1_norm(), words.len() as f64);
            prop_assert!(v.indices().iter().all(|&i| (i as usize) < dim));
        }

        #[test]
        fn idf_non_negative_and_non_increasing(n in 1usize..500, a in 0u64..500, b in 0u64..500) {
            let (lo, hi) = (a.min(b).min(n as u64), a.max(b).min(n as u64));
            let m = IdfModel::from_document_frequencies(n, &[lo, hi]).unwrap();
            prop_assert!(m.idf[0] >= 0.0 && m.idf[1] >= 0.0);
            prop_assert!(m.idf[0] >= m.idf[1]);
        }
    }
}
