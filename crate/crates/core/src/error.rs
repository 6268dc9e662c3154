use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// A parameter lies outside its mathematical domain.
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    /// Input data for which the statistic is undefined (zero variance, zero norm, ...).
    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("singular covariance: pivot {pivot} of {dim} vanished, rank deficient by at least {deficiency}")]
    SingularCovariance {
        pivot: usize,
        dim: usize,
        deficiency: usize,
    },

    #[error(
        "insufficient resolution: far level {far_level} needs at least {required} impostor scores, got {available}"
    )]
    Resolution {
        far_level: f64,
        required: u64,
        available: u64,
    },

    #[error("target {target} not reachable within {n_features} features; best mean metric {best_metric} at N = {best_n}")]
    NotReachable {
        target: f64,
        n_features: usize,
        best_metric: f64,
        best_n: usize,
    },

    #[error("malformed input: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}
