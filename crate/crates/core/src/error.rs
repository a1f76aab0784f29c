use std::path::PathBuf;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("malformed geometry config: {0}")]
    Config(String),

    #[error("geometry is not admissible: {0}")]
    Inadmissible(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("degenerate triangle {index} (signed area {area:e})")]
    DegenerateTriangle { index: usize, area: f64 },

    #[error("inconsistent periodic pairing: {0}")]
    Pairing(String),

    #[error("solver did not converge after {iterations} iterations (relative residual {residual:e})")]
    NotConverged { iterations: usize, residual: f64 },

    #[error("cell solve failed at station {station} (x = {x}): {source}")]
    Station {
        station: usize,
        x: f64,
        #[source]
        source: Box<Error>,
    },

    #[error("I/O error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    /// True when the failure comes from a linear solve rather than from bad
    /// input.
    pub fn is_solver_failure(&self) -> bool {
        match self {
            Error::NotConverged { .. } | Error::DegenerateTriangle { .. } => true,
            Error::Station { source, .. } => source.is_solver_failure(),
            _ => false,
        }
    }
}
