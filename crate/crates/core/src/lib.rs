//! Bayesian joint quantile autoregression.
//!
//! The crate provides non-crossing QAR(p) models built from Kumaraswamy
//! mixtures, a bivariate copula extension, a spatial copula extension with
//! kriging, an adaptive Metropolis sampler, quantile-fit metrics and a
//! simulation harness.

pub mod assess;
pub mod dist;
pub mod error;
pub mod linalg;
pub mod mcmc;
pub mod mqar;
pub mod qar;
pub mod rootfind;
pub mod simkit;
pub mod spatial;
pub mod support;

pub use error::{QarError, Result};
