use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("band overlaps itself: W = {w} must satisfy 2W < N = {n}")]
    Overlap { n: usize, w: usize },

    #[error("profile has a negative eigenvalue {min:.3e}; use the fejer shape for a square root")]
    NegativeSpectrum { min: f64 },

    #[error("no entrywise nonnegative square root (min entry {min:.3e})")]
    NoNonnegativeRoot { min: f64 },

    #[error("singular profile: spectral map has a pole (denominator {denom:.3e})")]
    SingularProfile { denom: f64 },

    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("malformed diagram: {0}")]
    Structural(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("N = {n} exceeds the desk-scale limit {limit}; pass --force to override")]
    TooLarge { n: usize, limit: usize },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
