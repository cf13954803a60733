//! System-call trace intrusion detection on a small data-parallel engine.
//!
//! The crate is organised as a pipeline:
//!
//! * [`dataflow`]: partitioned datasets with narrow and wide transformations,
//!   executed on a worker pool with per-task timing.
//! * [`ingestion`]: loading ADFA-LD style trace directories, deduplication,
//!   seeded train/test splits and a synthetic corpus generator.
//! * [`featurization`]: n-gram word extraction, distinct-word counting,
//!   feature-hashed term frequencies and IDF weighting.
//! * [`classifiers`]: logistic regression (L-BFGS) and linear SVM
//!   (subgradient descent) over sparse vectors.
//! * [`evaluation`]: confusion counts, ROC curves and AUC.
//! * [`experiment`]: the end-to-end train/detect pipeline, repeated-run
//!   accuracy grids and the scalability benchmark.

pub mod classifiers;
pub mod dataflow;
mod error;
pub mod evaluation;
pub mod experiment;
pub mod featurization;
pub mod hash;
pub mod ingestion;

pub use error::Error;
