use thiserror::Error;

use crate::projection::DirectionSet;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("matrix is not Hermitian (max asymmetry {asymmetry:e})")]
    NotHermitian { asymmetry: f64 },

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("covariance at pixel ({row}, {col}) is indefinite (smallest eigenvalue {min_eigenvalue:e})")]
    Indefinite {
        row: usize,
        col: usize,
        min_eigenvalue: f64,
    },

    #[error("nonpositive reflectivity {value:e} at pixel ({row}, {col}), channel {channel}")]
    NonPositiveReflectivity {
        row: usize,
        col: usize,
        channel: usize,
        value: f64,
    },

    #[error("rank-deficient projection operator: {0}")]
    RankDeficient(String),

    #[error("direction optimization failed: {diagnostic}")]
    OptimizationFailed {
        diagnostic: String,
        best: Option<Box<DirectionSet>>,
    },

    #[error("external despeckler: {0}")]
    External(String),

    #[error("format error: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("{stage}: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },

    #[error("internal invariant violated: {0}")]
    Invariant(String),
}

impl Error {
    pub(crate) fn at_stage(self, stage: &'static str) -> Error {
        Error::Stage {
            stage,
            source: Box::new(self),
        }
    }

    /// True when the error signals a broken internal invariant rather than bad
    /// input. The CLI maps this to exit status 2.
    pub fn is_internal(&self) -> bool {
        match self {
            Error::Invariant(_) => true,
            Error::Stage { source, .. } => source.is_internal(),
            _ => false,
        }
    }
}
