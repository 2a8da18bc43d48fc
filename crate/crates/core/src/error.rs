use std::fmt;
use std::path::PathBuf;

use thiserror::Error;

/// Offending pair of eigenvalues found when checking the separation between a
/// selected subspace and its complement. Indices are zero-based positions in
/// the ordered eigensystem.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GapViolation {
    pub selected: usize,
    pub complement: usize,
    pub gap: f64,
    pub tolerance: f64,
}

impl fmt::Display for GapViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "eigenvalue {} (selected) and {} (complement) are separated by {:e} <= {:e}",
            self.selected + 1,
            self.complement + 1,
            self.gap,
            self.tolerance
        )
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("symmetric eigensolver did not converge")]
    NoConvergence,

    #[error("invalid subspace selection: {0}")]
    InvalidSelection(String),

    #[error("frame columns are not orthonormal (max deviation {0:e})")]
    NotOrthonormal(f64),

    #[error("eigenvalue separation violated: {0}")]
    Condition(GapViolation),

    #[error("eigenvalue separation violated when observation {observation} is deleted: {violation}")]
    ConditionAtDeletion {
        observation: usize,
        violation: GapViolation,
    },

    #[error("matrix is not positive definite: {0}")]
    NotPositiveDefinite(String),

    #[error("non-positive variance for variable {0}")]
    NonPositiveVariance(usize),

    #[error("zero variance in {0}")]
    ZeroVariance(String),

    #[error("response value required for the principal Hessian estimator")]
    MissingResponse,

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("{path}: row {row}, column {column}: {message}")]
    Parse {
        path: PathBuf,
        row: usize,
        column: usize,
        message: String,
    },

    #[error("{path}: {message}")]
    Format { path: PathBuf, message: String },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Stable machine-readable code, one per variant.
    pub fn code(&self) -> &'static str {
        match self {
            Error::DimensionMismatch(_) => "E_DIMENSION",
            Error::NonFinite(_) => "E_NON_FINITE",
            Error::NoConvergence => "E_NO_CONVERGENCE",
            Error::InvalidSelection(_) => "E_SELECTION",
            Error::NotOrthonormal(_) => "E_NOT_ORTHONORMAL",
            Error::Condition(_) | Error::ConditionAtDeletion { .. } => "E_EIGEN_GAP",
            Error::NotPositiveDefinite(_) => "E_NOT_PD",
            Error::NonPositiveVariance(_) | Error::ZeroVariance(_) => "E_ZERO_VARIANCE",
            Error::MissingResponse => "E_MISSING_RESPONSE",
            Error::InvalidArgument(_) => "E_ARGUMENT",
            Error::Parse { .. } => "E_PARSE",
            Error::Format { .. } => "E_FORMAT",
            Error::Io { .. } => "E_IO",
            Error::Json(_) => "E_JSON",
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
