use thiserror::Error;

#[derive(Debug, Error)]
pub enum QpmaError {
    #[error("constant covariate cannot be the nonparametric component")]
    DegenerateDomain,
    #[error("invalid spline specification: {0}")]
    InvalidSpline(String),
    #[error("quantile level outside open unit interval: {0}")]
    TauOutOfRange(f64),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("nonparametric component must be continuous (column {0})")]
    NotContinuous(usize),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("collinear design (did you add an intercept?)")]
    CollinearDesign,
    #[error("leave-one-out fit failed for candidate {candidate}, observation {index}: {source}")]
    LooFit {
        candidate: usize,
        index: usize,
        #[source]
        source: Box<QpmaError>,
    },
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("model file error: {0}")]
    ModelFile(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl QpmaError {
    /// Process exit code: 1 usage/config, 2 data, 3 numerical.
    pub fn exit_code(&self) -> i32 {
        match self {
            QpmaError::Config(_) | QpmaError::InvalidArgument(_) | QpmaError::TauOutOfRange(_) => 1,
            QpmaError::CollinearDesign | QpmaError::Numerical(_) => 3,
            QpmaError::LooFit { source, .. } => source.exit_code(),
            _ => 2,
        }
    }
}

pub type Result<T> = std::result::Result<T, QpmaError>;
