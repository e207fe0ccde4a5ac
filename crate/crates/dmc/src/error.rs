use thiserror::Error;

/// Errors raised across the toolkit.
#[derive(Debug, Error)]
pub enum DmcError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("degenerate vector: {0}")]
    DegenerateVector(String),

    #[error("degenerate center: cluster {cluster} has norm {norm:e}")]
    DegenerateCenter { cluster: usize, norm: f64 },

    #[error("shape error: {0}")]
    Shape(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("training diverged at iteration {iteration}: {detail}")]
    TrainingDiverged { iteration: usize, detail: String },

    #[error("resample required: {0}")]
    ResampleRequired(String),

    #[error("format error: {0}")]
    Format(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

impl DmcError {
    /// True for errors caused by numerical breakdown rather than bad input.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            DmcError::DegenerateVector(_) | DmcError::DegenerateCenter { .. } | DmcError::TrainingDiverged { .. }
        )
    }
}

pub type Result<T> = std::result::Result<T, DmcError>;
