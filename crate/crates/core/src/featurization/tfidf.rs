use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Document, FeatureError, SparseVector};
use crate::dataflow::{Engine, PDataset};
use crate::hash::fnv1a32;

/// Bucket of `word` in a `dim`-dimensional hashed feature space.
///
/// Panics if `dim` is zero.
pub fn hash_index(word: &str, dim: usize) -> usize {
    assert!(dim > 0, "hash dimension must be at least 1");
    (fnv1a32(word.as_bytes()) as u64 % dim as u64) as usize
}

/// Raw term counts per hashed bucket. The L1 mass equals the word count.
pub fn term_frequencies<S: AsRef<str>>(words: &[S], dim: usize) -> SparseVector {
    let mut counts: BTreeMap<u32, f64> = BTreeMap::new();
    for w in words {
        *counts.entry(hash_index(w.as_ref(), dim) as u32).or_insert(0.0) += 1.0;
    }
    SparseVector::from_sorted_pairs(dim, counts)
}

/// Hashed TF vector for every document.
pub fn tf_gen(docs: &PDataset<Document>, dim: usize) -> Result<PDataset<SparseVector>, FeatureError> {
    if dim == 0 {
        return Err(FeatureError::ZeroDimension);
    }
    Ok(docs.map(move |d: Document| term_frequencies(&d.words, dim)))
}

/// Inverse document frequencies over hashed buckets,
/// `idf[j] = ln((n + 1) / (df[j] + 1))`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IdfModel {
    pub dim: usize,
    pub corpus_size: usize,
    pub idf: Vec<f64>,
}

fn idf_weight(corpus_size: usize, df: u64) -> f64 {
    ((corpus_size as f64 + 1.0) / (df as f64 + 1.0)).ln()
}

/// Per-partition document-frequency partial.
#[derive(Clone)]
struct DfPartial {
    docs: usize,
    dim: Option<usize>,
    df: Vec<u64>,
    mismatch: Option<(usize, usize)>,
}

impl IdfModel {
    /// Builds the model from document frequencies.
    pub fn from_document_frequencies(corpus_size: usize, df: &[u64]) -> Result<Self, FeatureError> {
        if df.is_empty() {
            return Err(FeatureError::ZeroDimension);
        }
        if corpus_size == 0 {
            return Err(FeatureError::EmptyCorpus);
        }
        Ok(Self {
            dim: df.len(),
            corpus_size,
            idf: df.iter().map(|&d| idf_weight(corpus_size, d)).collect(),
        })
    }

    /// Fits on a TF corpus. Each partition counts document frequencies in
    /// parallel; partials are summed in partition order.
    pub fn fit(engine: &Engine, tf: &PDataset<SparseVector>) -> Result<Self, FeatureError> {
        let partials = tf.map_partitions(|it| {
            let mut p = DfPartial {
                docs: 0,
                dim: None,
                df: Vec::new(),
                mismatch: None,
            };
            for v in it {
                match p.dim {
                    None => {
                        p.dim = Some(v.dim());
                        p.df = vec![0; v.dim()];
                    }
                    Some(d) if d != v.dim() => {
                        p.mismatch.get_or_insert((d, v.dim()));
                        continue;
                    }
                    Some(_) => {}
                }
                p.docs += 1;
                for &j in v.indices() {
                    p.df[j as usize] += 1;
                }
            }
            std::iter::once(p)
        });
        let mut dim = None;
        let mut docs = 0;
        let mut df: Vec<u64> = Vec::new();
        for p in engine.collect(&partials)? {
            if let Some((expected, found)) = p.mismatch {
                return Err(FeatureError::DimMismatch { expected, found });
            }
            let Some(d) = p.dim else { continue };
            match dim {
                None => {
                    dim = Some(d);
                    df = vec![0; d];
                }
                Some(expected) if expected != d => {
                    return Err(FeatureError::DimMismatch { expected, found: d });
                }
                Some(_) => {}
            }
            docs += p.docs;
            for (acc, x) in df.iter_mut().zip(&p.df) {
                *acc += x;
            }
        }
        if dim.is_none() {
            return Err(FeatureError::EmptyCorpus);
        }
        Self::from_document_frequencies(docs, &df)
    }

    /// Entry-wise `tf * idf`; buckets with zero weight are dropped.
    pub fn transform(&self, tf: &SparseVector) -> Result<SparseVector, FeatureError> {
        if tf.dim() != self.dim {
            return Err(FeatureError::DimMismatch {
                expected: self.dim,
                found: tf.dim(),
            });
        }
        Ok(SparseVector::from_sorted_pairs(
            self.dim,
            tf.iter().map(|(j, v)| (j as u32, v * self.idf[j])),
        ))
    }

    /// Applies [`IdfModel::transform`] to every vector, one at a time.
    pub fn transform_dataset(&self, tf: &PDataset<SparseVector>) -> PDataset<SparseVector> {
        let model = self.clone();
        tf.try_map_partitions(move |it| it.map(|v| model.transform(&v)).collect::<Result<Vec<_>, _>>())
    }

    pub fn to_json(&self) -> Result<String, FeatureError> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self, FeatureError> {
        let m: Self = serde_json::from_str(s)?;
        if m.idf.len() != m.dim {
            return Err(FeatureError::DimMismatch {
                expected: m.dim,
                found: m.idf.len(),
            });
        }
        Ok(m)
    }

    pub fn save(&self, path: &Path) -> Result<(), FeatureError> {
        std::fs::write(path, self.to_json()?).map_err(|source| FeatureError::Io {
            path: path.to_path_buf(),
            source,
        })
    }

    pub fn load(path: &Path) -> Result<Self, FeatureError> {
        let s = std::fs::read_to_string(path).map_err(|source| FeatureError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_json(&s)
    }
}

/// Joint path: hashed TF, IDF fitted on the same corpus, then weighted.
pub fn tfidf_gen(
    engine: &Engine,
    docs: &PDataset<Document>,
    dim: usize,
) -> Result<(PDataset<SparseVector>, IdfModel), FeatureError> {
    let tf = tf_gen(docs, dim)?.cache();
    let model = IdfModel::fit(engine, &tf)?;
    let tfidf = model.transform_dataset(&tf);
    Ok((tfidf, model))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn approx(a: f64, b: f64) -> bool {
        (a - b).abs() < 1e-6
    }

    #[test]
    fn hash_index_examples() {
        assert_eq!(hash_index("anything", 1), 0);
        assert_eq!(hash_index("6 63", 977), hash_index("6 63", 977));
        // FNV-1a("6") = 856466825 from a reference implementation
        assert_eq!(hash_index("6", 1000), 825);
    }

    #[test]
    fn tf_examples() {
        let v = term_frequencies(&["a", "a", "b"], 1 << 20);
        assert_eq!(v.nnz(), 2);
        let mut vals = v.values().to_vec();
        vals.sort_by(f64::total_cmp);
        assert_eq!(vals, vec![1.0, 2.0]);
        assert_eq!(v.l1_norm(), 3.0);
        assert_eq!(term_frequencies::<&str>(&[], 10).nnz(), 0);
    }

    #[test]
    fn idf_examples() {
        let m = IdfModel::from_document_frequencies(3, &[1, 3, 0]).unwrap();
        assert!(approx(m.idf[0], 2f64.ln()));
        assert_eq!(m.idf[1], 0.0);
        assert!(approx(m.idf[2], 1.386294));

        let tf = SparseVector::new(3, vec![0, 1], vec![2.0, 5.0]).unwrap();
        let out = m.transform(&tf).unwrap();
        assert_eq!(out.indices(), &[0]);
        assert!(approx(out.values()[0], 1.386294));

        let wrong = SparseVector::zeros(4);
        assert!(matches!(m.transform(&wrong), Err(FeatureError::DimMismatch { expected: 3, found: 4 })));
    }

    #[test]
    fn fit_counts_documents_per_bucket() {
        let e = Engine::with_workers(2).unwrap();
        let vs = vec![
            SparseVector::new(3, vec![0], vec![2.0]).unwrap(),
            SparseVector::new(3, vec![0, 2], vec![1.0, 1.0]).unwrap(),
            SparseVector::zeros(3),
        ];
        let m = IdfModel::fit(&e, &PDataset::from_vec(vs, 2)).unwrap();
        assert_eq!(m.corpus_size, 3);
        assert!(approx(m.idf[0], (4.0f64 / 3.0).ln()));
        assert!(approx(m.idf[1], 4.0f64.ln()));
        assert!(approx(m.idf[2], 2.0f64.ln()));

        let mixed = PDataset::from_vec(vec![SparseVector::zeros(3), SparseVector::zeros(5)], 2);
        assert!(matches!(IdfModel::fit(&e, &mixed), Err(FeatureError::DimMismatch { .. })));
        assert!(matches!(
            IdfModel::fit(&e, &PDataset::<SparseVector>::empty()),
            Err(FeatureError::EmptyCorpus)
        ));
    }

    #[test]
    fn idf_json_round_trip_is_bit_exact() {
        let m = IdfModel::from_document_frequencies(7, &[0, 1, 2, 3, 6, 7]).unwrap();
        let back = IdfModel::from_json(&m.to_json().unwrap()).unwrap();
        assert_eq!(back.dim, m.dim);
        for (a, b) in m.idf.iter().zip(&back.idf) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
        assert!(IdfModel::from_json(r#"{"dim":3,"corpus_size":1,"idf":[0.0]}"#).is_err());
    }
}
