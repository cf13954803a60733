use std::path::PathBuf;

use thiserror::Error;

use crate::classifiers::TrainError;
use crate::dataflow::EngineError;
use crate::evaluation::EvalError;
use crate::featurization::FeatureError;
use crate::ingestion::IngestError;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("cannot access {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed JSON in {path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
    #[error("stage `{stage}` failed: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },
    #[error(transparent)]
    Ingest(#[from] IngestError),
    #[error(transparent)]
    Feature(#[from] FeatureError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Engine(#[from] EngineError),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code: 1 usage error, 2 data error, 3 numeric failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) => 1,
            Error::Stage { source, .. } => source.exit_code(),
            Error::Ingest(IngestError::BadRatio(_) | IngestError::BadSpec(_)) => 1,
            Error::Feature(FeatureError::InvalidConfig(_)) => 1,
            Error::Train(TrainError::InvalidConfig(_)) => 1,
            Error::Engine(EngineError::InvalidArgument(_)) => 1,
            Error::Train(TrainError::NonFinite(_) | TrainError::Diverged { .. }) => 3,
            Error::Eval(EvalError::NonFiniteScore(_)) => 3,
            _ => 2,
        }
    }
}

pub(crate) trait StageContext<T> {
    fn stage(self, stage: &'static str) -> Result<T, Error>;
}

impl<T, E: Into<Error>> StageContext<T> for Result<T, E> {
    fn stage(self, stage: &'static str) -> Result<T, Error> {
        self.map_err(|e| Error::Stage {
            stage,
            source: Box::new(e.into()),
        })
    }
}
