use std::path::PathBuf;

use sgground_core::audit::AuditError;
use sgground_core::relmodel::ModelError;
use sgground_core::retrieval::RetrievalError;
use sgground_core::{DatasetError, Error as CoreError, InferenceError, QueryError};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{0}")]
    Config(String),
    #[error("{0}")]
    Domain(String),
    #[error(transparent)]
    Core(#[from] CoreError),
}

macro_rules! from_core {
    ($($t:ty),*) => {
        $(impl From<$t> for CliError {
            fn from(e: $t) -> Self {
                CliError::Core(e.into())
            }
        })*
    };
}
from_core!(QueryError, DatasetError, ModelError, InferenceError, RetrievalError, AuditError);

impl CliError {
    /// 1 for I/O and configuration problems, 2 for invalid data or domain
    /// failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Io { .. } | CliError::Config(_) => 1,
            CliError::Core(e) if is_io(e) => 1,
            _ => 2,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Io { .. } => "io",
            CliError::Config(_) => "config",
            CliError::Domain(_) => "domain",
            CliError::Core(e) if is_io(e) => "io",
            CliError::Core(CoreError::Query(_)) => "query",
            CliError::Core(CoreError::Dataset(_)) => "dataset",
            CliError::Core(CoreError::Model(_)) => "model",
            CliError::Core(CoreError::Inference(InferenceError::MissingModel(_))) => "missing_model",
            CliError::Core(CoreError::Inference(_)) => "inference",
            CliError::Core(CoreError::Retrieval(_)) => "retrieval",
            CliError::Core(CoreError::Audit(_)) => "audit",
        }
    }
}

fn is_io(e: &CoreError) -> bool {
    matches!(
        e,
        CoreError::Dataset(DatasetError::Io { .. })
            | CoreError::Model(ModelError::Io { .. })
            | CoreError::Retrieval(RetrievalError::Dataset(DatasetError::Io { .. }))
            | CoreError::Audit(AuditError::Dataset(DatasetError::Io { .. }))
    )
}
