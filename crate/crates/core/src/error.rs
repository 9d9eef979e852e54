use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Broad failure class, used by the CLI to pick an exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Config,
    Numerical,
    Io,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("degenerate demand/supply system: |beta1 - alpha1| = {gap:e} is below tolerance")]
    DegenerateSystem { gap: f64 },

    #[error("empty input: {0}")]
    EmptyInput(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("rank deficient {context}: smallest eigenvalue {eigenvalue:e} (largest {largest:e})")]
    RankDeficient {
        context: String,
        eigenvalue: f64,
        largest: f64,
    },

    #[error("singular matrix: {0}")]
    Singular(String),

    #[error("lasso did not converge after {sweeps} sweeps (last change {last_change:e})")]
    NonConvergence {
        sweeps: usize,
        last_change: f64,
        last_iterate: Vec<f64>,
    },

    #[error("simulation failed: {0}")]
    Simulation(String),

    #[error("unknown node `{0}`")]
    UnknownNode(String),

    #[error("graph error: {0}")]
    Graph(String),

    #[error("parse error on line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("schema error{}: {message}", line.map(|l| format!(" on line {l}")).unwrap_or_default())]
    Schema { line: Option<usize>, message: String },

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub fn class(&self) -> ErrorClass {
        match self {
            Error::DegenerateSystem { .. }
            | Error::RankDeficient { .. }
            | Error::Singular(_)
            | Error::NonConvergence { .. }
            | Error::Simulation(_) => ErrorClass::Numerical,
            Error::Io(_) => ErrorClass::Io,
            Error::Csv(e) if matches!(e.kind(), csv::ErrorKind::Io(_)) => ErrorClass::Io,
            _ => ErrorClass::Config,
        }
    }

    pub(crate) fn dims(msg: impl Into<String>) -> Self {
        Error::DimensionMismatch(msg.into())
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}
