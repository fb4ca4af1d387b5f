//! Error type shared across the crate.

/// Errors produced by series construction, model fitting, clustering and
/// diagnostics.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    /// A series was constructed with no observations.
    #[error("series '{id}' has no observations")]
    EmptySeries { id: String },

    /// A series contains a NaN or infinite value.
    #[error("series '{id}' has a non-finite value at index {index}")]
    NonFinite { id: String, index: usize },

    /// Two series in one dataset share an id.
    #[error("duplicate series id '{id}' in dataset")]
    DuplicateId { id: String },

    /// A dataset was constructed with no series.
    #[error("dataset contains no series")]
    EmptyDataset,

    /// A transform hit a value outside its domain (e.g. log of a
    /// non-positive value).
    #[error("series '{id}': value {value} at index {index} is outside the domain of {op}")]
    Domain {
        id: String,
        index: usize,
        value: f64,
        op: &'static str,
    },

    /// A series is too short for the requested operation.
    #[error("series '{id}' has {len} observations but {needed} are required for {op}")]
    TooShort {
        id: String,
        len: usize,
        needed: usize,
        op: &'static str,
    },

    /// Model coefficients describe a non-stationary (or non-invertible)
    /// process where a stationary one is required.
    #[error("coefficients {coeffs:?} give a characteristic root of modulus {modulus:.6} >= 1")]
    NonStationary { coeffs: Vec<f64>, modulus: f64 },

    /// The fitting problem is singular: the design does not determine a
    /// unique coefficient vector.
    #[error("degenerate fit: design rank {rank} < {cols} coefficients")]
    DegenerateFit { rank: usize, cols: usize },

    /// A residual recursion left the range of reliable arithmetic.
    #[error("residual recursion diverged for series '{id}' at index {index}")]
    Divergence { id: String, index: usize },

    /// An autocorrelation is undefined because the residuals are all zero.
    #[error("autocorrelation undefined: residual sum of squares is zero")]
    UndefinedAcf,

    /// The Durbin-Levinson recursion hit a numerically singular pivot.
    #[error("partial autocorrelation undefined at lag {lag}: pivot {pivot:e} too small")]
    DegeneratePacf { lag: usize, pivot: f64 },

    /// No model could score a series during the assignment step.
    #[error("series '{id}' has no finite loss under any live model")]
    Unassignable { id: String },

    /// Clustering cannot continue (for example, every cluster vanished).
    #[error("clustering failed: {reason}")]
    ClusteringFailure { reason: String },

    /// A caller violated an argument precondition.
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}
