use thiserror::Error;

/// Errors raised anywhere in the estimation stack.
#[derive(Debug, Error)]
pub enum Error {
    #[error("degenerate classroom: size {size} (need at least 2)")]
    DegenerateClassroom { size: usize },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },

    #[error("singular classroom block (p = {p}, q = {q})")]
    SingularBlock { p: f64, q: f64 },

    #[error("parameter out of range: {0}")]
    OutOfRange(String),

    #[error("classroom {classroom}: every value of `{column}` is missing")]
    UnusableClassroom { classroom: String, column: String },

    #[error("missing value in `{column}` for classroom {classroom} under the strict missing-data policy")]
    MissingValue { classroom: String, column: String },

    #[error("collinear design: {0}")]
    Collinear(String),

    #[error("weak instrument: |z'Q_X y2|/n = {stat:.3e} below threshold {threshold:.3e}")]
    WeakInstrument { stat: f64, threshold: f64 },

    #[error("variance group {group} has {count} students, need more than {needed}")]
    InsufficientTypeCount { group: usize, count: usize, needed: usize },

    #[error("degenerate variance estimate for group {group}: gamma = {value}")]
    DegenerateVariance { group: usize, value: f64 },

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("information matrix is not invertible")]
    NonInvertible,

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("{stage}: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },

    #[error("line {line}: {message}")]
    Input { line: usize, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn in_stage(self, stage: &'static str) -> Error {
        Error::Stage {
            stage,
            source: Box::new(self),
        }
    }

    /// Innermost error, with stage labels peeled off.
    pub fn root(&self) -> &Error {
        match self {
            Error::Stage { source, .. } => source.root(),
            other => other,
        }
    }

    /// Broad failure class; the CLI maps these onto exit codes.
    pub fn kind(&self) -> ErrorKind {
        match self.root() {
            Error::WeakInstrument { .. } | Error::Collinear(_) | Error::NonInvertible => {
                ErrorKind::Identification
            }
            Error::Io(_) | Error::Json(_) => ErrorKind::Io,
            _ => ErrorKind::Validation,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Validation,
    Identification,
    Io,
}

pub type Result<T> = std::result::Result<T, Error>;
