use stdr_core::genmodel::ModelError;
use stdr_core::merging::MergeError;
use stdr_core::partition::PartitionError;
use stdr_core::recovery::RecoveryError;
use stdr_core::similarity::SimilarityError;
use stdr_core::theory::TheoryError;
use stdr_core::trees::TreeError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("usage: {0}")]
    Usage(String),
    #[error("input format: {0}")]
    Input(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("external subroutine: {0}")]
    External(String),
    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Input(_) | CliError::Io { .. } => 3,
            CliError::Numerical(_) => 4,
            CliError::External(_) => 5,
        }
    }

    pub fn io(context: impl Into<String>) -> impl FnOnce(std::io::Error) -> CliError {
        let context = context.into();
        move |source| CliError::Io { context, source }
    }
}

pub type Result<T> = std::result::Result<T, CliError>;

impl From<RecoveryError> for CliError {
    fn from(e: RecoveryError) -> Self {
        let msg = e.to_string();
        match e {
            RecoveryError::Config(_) | RecoveryError::MissingAlignment => CliError::Usage(msg),
            RecoveryError::TooFewLeaves { .. }
            | RecoveryError::Distance(_)
            | RecoveryError::Model(_) => CliError::Input(msg),
            RecoveryError::Spawn(_)
            | RecoveryError::ExitStatus { .. }
            | RecoveryError::Timeout(_)
            | RecoveryError::ExternalOutput(_) => CliError::External(msg),
            RecoveryError::DepthExceeded(_)
            | RecoveryError::Partition(_)
            | RecoveryError::Merge(_)
            | RecoveryError::Tree(_)
            | RecoveryError::Similarity(_) => CliError::Numerical(msg),
        }
    }
}

impl From<ModelError> for CliError {
    fn from(e: ModelError) -> Self {
        match e {
            ModelError::InvalidParameter(msg) => CliError::Usage(msg),
            other => CliError::Input(other.to_string()),
        }
    }
}

impl From<TreeError> for CliError {
    fn from(e: TreeError) -> Self {
        CliError::Input(e.to_string())
    }
}

impl From<SimilarityError> for CliError {
    fn from(e: SimilarityError) -> Self {
        CliError::Numerical(e.to_string())
    }
}

impl From<TheoryError> for CliError {
    fn from(e: TheoryError) -> Self {
        CliError::Numerical(e.to_string())
    }
}

impl From<PartitionError> for CliError {
    fn from(e: PartitionError) -> Self {
        CliError::Numerical(e.to_string())
    }
}

impl From<MergeError> for CliError {
    fn from(e: MergeError) -> Self {
        CliError::Numerical(e.to_string())
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        CliError::Io {
            context: "csv output".into(),
            source: std::io::Error::other(e),
        }
    }
}
