use subspacenet::dataio::DataError;
use subspacenet::geometry::GeometryError;
use subspacenet::inference::InferenceError;
use subspacenet::metrics::MetricsError;
use subspacenet::network::NetworkError;
use subspacenet::training::TrainError;

/// Exit code 1: bad input or configuration. Exit code 2: failure while running.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Validation(String),
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Validation(_) => 1,
            CliError::Runtime(_) => 2,
        }
    }

    pub fn io(path: &std::path::Path, e: std::io::Error) -> Self {
        CliError::Runtime(format!("{}: {e}", path.display()))
    }
}

impl From<DataError> for CliError {
    fn from(e: DataError) -> Self {
        match e {
            DataError::Io { .. } => CliError::Runtime(e.to_string()),
            _ => CliError::Validation(e.to_string()),
        }
    }
}

impl From<NetworkError> for CliError {
    fn from(e: NetworkError) -> Self {
        match e {
            NetworkError::Config(_) | NetworkError::Shape(_) | NetworkError::TooFewPoints(_) | NetworkError::Checkpoint(_) => {
                CliError::Validation(e.to_string())
            }
        }
    }
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::Config(_) | TrainError::ClusterTooSmall { .. } | TrainError::EmptyDataset | TrainError::Resume(_) => {
                CliError::Validation(e.to_string())
            }
            TrainError::Network(n) => n.into(),
            _ => CliError::Runtime(e.to_string()),
        }
    }
}

impl From<InferenceError> for CliError {
    fn from(e: InferenceError) -> Self {
        match e {
            InferenceError::NonFinite => CliError::Runtime(e.to_string()),
            _ => CliError::Validation(e.to_string()),
        }
    }
}

impl From<MetricsError> for CliError {
    fn from(e: MetricsError) -> Self {
        CliError::Validation(e.to_string())
    }
}

impl From<GeometryError> for CliError {
    fn from(e: GeometryError) -> Self {
        match e {
            GeometryError::InvalidSpec(_) | GeometryError::TooFewPoints { .. } => CliError::Validation(e.to_string()),
            _ => CliError::Runtime(e.to_string()),
        }
    }
}
