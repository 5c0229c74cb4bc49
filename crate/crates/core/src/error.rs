use thiserror::Error;

/// Library-wide error type.
///
/// Variants split into two families: input/configuration problems
/// (`Syntax`, `UnknownIdentifier`, `Precondition`, `UnsupportedSampling`)
/// and runtime evaluation problems (`Domain`, `Dimension`, `NotPsd`).
/// The CLI maps the first family to exit code 2 and the second to 3.
#[derive(Debug, Error)]
pub enum Error {
    #[error("syntax error at byte {offset}: {message}")]
    Syntax { offset: usize, message: String },

    #[error("unknown identifier `{name}` at byte {offset}")]
    UnknownIdentifier { name: String, offset: usize },

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("domain error in {op}: {message}")]
    Domain { op: &'static str, message: String },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },

    #[error("covariance field is not positive semidefinite: minimum eigenvalue {min_eigenvalue:e}")]
    NotPsd { min_eigenvalue: f64 },

    #[error("base law does not support sampling (grid law); use the quadrature path")]
    UnsupportedSampling,

    #[error("at sample {index}: {source}")]
    AtSample {
        index: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("at stage {stage}, point {point:?}: {source}")]
    AtStage {
        stage: usize,
        point: Vec<f64>,
        #[source]
        source: Box<Error>,
    },

    #[error("at point {point:?}: {source}")]
    AtPoint {
        point: Vec<f64>,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub fn domain(op: &'static str, message: impl Into<String>) -> Self {
        Error::Domain {
            op,
            message: message.into(),
        }
    }

    /// True for errors caused by bad input or configuration rather than
    /// by evaluation at runtime.
    pub fn is_usage(&self) -> bool {
        match self {
            Error::Syntax { .. }
            | Error::UnknownIdentifier { .. }
            | Error::Precondition(_)
            | Error::UnsupportedSampling => true,
            Error::AtSample { source, .. }
            | Error::AtStage { source, .. }
            | Error::AtPoint { source, .. } => source.is_usage(),
            _ => false,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
