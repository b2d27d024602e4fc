//! Affine maps between a raw series and the open unit interval.

use serde::{Deserialize, Serialize};

use crate::dist::MonotoneCurve;
use crate::error::{QarError, Result};

/// Lower and upper bounds `(m, M)` used to map raw data onto `(0, 1)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SupportBounds {
    pub lower: f64,
    pub upper: f64,
}

impl SupportBounds {
    pub fn new(lower: f64, upper: f64) -> Result<Self> {
        if !(lower.is_finite() && upper.is_finite() && upper > lower) {
            return Err(QarError::Domain(format!(
                "support bounds require finite m < M, got ({lower}, {upper})"
            )));
        }
        Ok(Self { lower, upper })
    }

    /// The trivial bounds `(0, 1)`.
    pub fn unit() -> Self {
        Self {
            lower: 0.0,
            upper: 1.0,
        }
    }

    #[inline]
    pub fn width(&self) -> f64 {
        self.upper - self.lower
    }

    #[inline]
    pub fn to_unit_value(&self, raw: f64) -> f64 {
        (raw - self.lower) / self.width()
    }

    #[inline]
    pub fn from_unit_value(&self, unit: f64) -> f64 {
        self.lower + self.width() * unit
    }
}

/// Automatic bounds from the order-statistic heuristic: the sample minimum
/// and maximum are treated as the expected extremes of `T` uniform draws on
/// `(m, M)`, which places them at `1/(T+1)` and `T/(T+1)` after mapping.
pub fn select_bounds(raw: &[f64]) -> Result<SupportBounds> {
    if raw.len() < 2 {
        return Err(QarError::Domain(format!(
            "bound selection needs at least two observations, got {}",
            raw.len()
        )));
    }
    if let Some(v) = raw.iter().find(|v| !v.is_finite()) {
        return Err(QarError::Domain(format!("non-finite observation {v}")));
    }
    let lo = raw.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = raw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if lo == hi {
        return Err(QarError::ConstantSeries(lo));
    }
    let t = raw.len() as f64;
    let m = (t * lo - hi) / (t - 1.0);
    let big_m = (t * hi - lo) / (t - 1.0);
    SupportBounds::new(m, big_m)
}

/// Map a raw series into `(0, 1)`. Every value must lie strictly inside the bounds.
pub fn to_unit(raw: &[f64], bounds: &SupportBounds) -> Result<Vec<f64>> {
    raw.iter()
        .enumerate()
        .map(|(index, &value)| {
            let y = bounds.to_unit_value(value);
            if y > 0.0 && y < 1.0 {
                Ok(y)
            } else {
                Err(QarError::OutOfBounds {
                    index,
                    value,
                    lower: bounds.lower,
                    upper: bounds.upper,
                })
            }
        })
        .collect()
}

pub fn from_unit(unit: &[f64], bounds: &SupportBounds) -> Vec<f64> {
    unit.iter().map(|&u| bounds.from_unit_value(u)).collect()
}

/// Intercept of a QAR(1) model on the original data scale,
/// `m (1 - eta1) + M eta2`. The slope `eta1 - eta2` needs no conversion.
pub fn original_scale_intercept(
    eta1: &MonotoneCurve,
    eta2: &MonotoneCurve,
    bounds: &SupportBounds,
    tau_grid: &[f64],
) -> Vec<f64> {
    tau_grid
        .iter()
        .map(|&tau| bounds.lower * (1.0 - eta1.eval(tau)) + bounds.upper * eta2.eval(tau))
        .collect()
}
