use thiserror::Error;

/// Errors raised by the model, sampler and assessment routines.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum QarError {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("invalid parameter `{name}` = {value}: {reason}")]
    InvalidParameter {
        name: &'static str,
        value: f64,
        reason: &'static str,
    },

    #[error("series is constant (value {0}); bounds cannot be selected")]
    ConstantSeries(f64),

    #[error("value {value} at index {index} lies outside the support bounds ({lower}, {upper})")]
    OutOfBounds {
        index: usize,
        value: f64,
        lower: f64,
        upper: f64,
    },

    #[error("root not bracketed: f({lo}) = {f_lo}, f({hi}) = {f_hi}")]
    NoSignChange { lo: f64, hi: f64, f_lo: f64, f_hi: f64 },

    #[error("root finder hit {iterations} iterations; best bracket [{lo}, {hi}]")]
    MaxIterations { iterations: usize, lo: f64, hi: f64 },

    #[error("numeric failure at t = {t}{}: {reason}", site.map(|s| format!(", site {s}")).unwrap_or_default())]
    Numeric {
        t: usize,
        site: Option<usize>,
        reason: String,
    },

    #[error("matrix is not positive definite (pivot {pivot} = {value})")]
    NotPositiveDefinite { pivot: usize, value: f64 },

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid configuration: {0}")]
    Config(String),
}

pub type Result<T> = std::result::Result<T, QarError>;
