//! Joint QAR(p) models built from monotone curves, and the KX2006 baseline.
//!
//! For lags `y_{t-1}, ..., y_{t-p}` in `[0, 1]` the conditional quantile is
//!
//! ```text
//! Q(tau | lags) = sum_j pi_j y_{t-j} eta_j(tau) + (1 - sum_j pi_j y_{t-j}) eta_{p+1}(tau)
//! ```
//!
//! which is a convex combination of increasing curves and therefore never
//! crosses itself in `tau`. The conditional density follows from the
//! inverse-function rule `f(y) = 1 / Q'(tau_y)` with `tau_y` found by root
//! finding.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dist::{normal_pdf, normal_quantile, MonotoneCurve};
use crate::error::{QarError, Result};
use crate::rootfind::{brent, RootConfig};

/// Quantile levels are clamped to `[U_CLAMP, 1 - U_CLAMP]` before any
/// derivative or normal-quantile evaluation.
pub const U_CLAMP: f64 = 1e-12;

/// Derivatives of the quantile function below this are treated as a
/// numeric failure rather than an infinite log-density.
pub const MIN_QUANTILE_SLOPE: f64 = 1e-300;

/// Series longer than this have their per-step root solves spread over the
/// rayon pool. The reduction is always sequential, so results are identical.
const PAR_LIKELIHOOD_MIN_LEN: usize = 4096;

#[inline]
pub fn clamp_level(u: f64) -> f64 {
    u.clamp(U_CLAMP, 1.0 - U_CLAMP)
}

/// Common surface of every conditional quantile model in the crate.
///
/// `lags[0]` is `y_{t-1}`, `lags[1]` is `y_{t-2}` and so on.
pub trait QuantileProcess: Send + Sync {
    /// Autoregressive order.
    fn order(&self) -> usize;

    fn quantile(&self, tau: f64, lags: &[f64]) -> Result<f64>;

    /// Quantile level of `y`, i.e. the conditional cdf at `y`.
    fn level(&self, y: f64, lags: &[f64]) -> Result<f64>;

    fn density(&self, y: f64, lags: &[f64]) -> Result<f64>;

    /// `(theta_0(tau), theta_1(tau), ..., theta_p(tau))`.
    fn theta(&self, tau: f64) -> Result<Vec<f64>>;

    /// Conditional log-likelihood given the first `order()` observations.
    fn log_likelihood(&self, y: &[f64]) -> Result<f64>;
}

/// Quantile levels `u_t = F(y_t | lags)` for `t = p+1..T`.
pub type QuantileLevelPath = Vec<f64>;

/// The joint QAR(p) model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QarModel {
    curves: Vec<MonotoneCurve>,
    lag_weights: Vec<f64>,
    #[serde(default)]
    root: RootConfig,
}

impl QarModel {
    /// `curves` holds `eta_1, ..., eta_{p+1}`; `lag_weights` holds `pi_1, ..., pi_p`.
    pub fn new(curves: Vec<MonotoneCurve>, lag_weights: Vec<f64>) -> Result<Self> {
        let p = lag_weights.len();
        if p == 0 {
            return Err(QarError::Domain("QAR order must be at least 1".into()));
        }
        if curves.len() != p + 1 {
            return Err(QarError::Dimension(format!(
                "QAR({p}) needs {} curves, got {}",
                p + 1,
                curves.len()
            )));
        }
        if let Some(&w) = lag_weights.iter().find(|w| !(w.is_finite() && **w >= 0.0)) {
            return Err(QarError::InvalidParameter {
                name: "pi",
                value: w,
                reason: "lag weights must be nonnegative",
            });
        }
        let total: f64 = lag_weights.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(QarError::InvalidParameter {
                name: "pi",
                value: total,
                reason: "lag weights must sum to one",
            });
        }
        Ok(Self {
            curves,
            lag_weights,
            root: RootConfig::default(),
        })
    }

    /// QAR(1) from `eta_1` (the quantile at `y_{t-1} = 1`) and `eta_2` (at `y_{t-1} = 0`).
    pub fn qar1(eta1: MonotoneCurve, eta2: MonotoneCurve) -> Self {
        Self {
            curves: vec![eta1, eta2],
            lag_weights: vec![1.0],
            root: RootConfig::default(),
        }
    }

    pub fn with_root_config(mut self, root: RootConfig) -> Self {
        self.root = root;
        self
    }

    pub fn order(&self) -> usize {
        self.lag_weights.len()
    }

    pub fn curves(&self) -> &[MonotoneCurve] {
        &self.curves
    }

    pub fn lag_weights(&self) -> &[f64] {
        &self.lag_weights
    }

    fn check_lags(&self, lags: &[f64]) -> Result<()> {
        if lags.len() != self.order() {
            return Err(QarError::Dimension(format!(
                "QAR({}) needs {} lags, got {}",
                self.order(),
                self.order(),
                lags.len()
            )));
        }
        if let Some(v) = lags.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(QarError::Domain(format!("lag value {v} is outside [0, 1]")));
        }
        Ok(())
    }

    /// Weight on the last curve, `1 - sum_j pi_j y_{t-j}`.
    #[inline]
    fn base_weight(&self, lags: &[f64]) -> f64 {
        1.0 - self
            .lag_weights
            .iter()
            .zip(lags)
            .map(|(w, y)| w * y)
            .sum::<f64>()
    }

    #[inline]
    pub(crate) fn quantile_unchecked(&self, tau: f64, lags: &[f64]) -> f64 {
        let p = self.order();
        let mut q = self.base_weight(lags) * self.curves[p].eval(tau);
        for j in 0..p {
            let w = self.lag_weights[j] * lags[j];
            if w != 0.0 {
                q += w * self.curves[j].eval(tau);
            }
        }
        q
    }

    #[inline]
    pub(crate) fn slope_unchecked(&self, tau: f64, lags: &[f64]) -> f64 {
        let p = self.order();
        let base = self.base_weight(lags);
        let mut d = if base != 0.0 {
            base * self.curves[p].deriv(tau)
        } else {
            0.0
        };
        for j in 0..p {
            let w = self.lag_weights[j] * lags[j];
            if w != 0.0 {
                d += w * self.curves[j].deriv(tau);
            }
        }
        d
    }

    #[inline]
    pub(crate) fn level_unchecked(&self, y: f64, lags: &[f64]) -> Result<f64> {
        let root = brent(
            |tau| self.quantile_unchecked(tau, lags) - y,
            0.0,
            1.0,
            &self.root,
        )?;
        Ok(clamp_level(root.x))
    }

    /// Quantile level and log-density of one observation.
    #[inline]
    pub(crate) fn step(&self, y: f64, lags: &[f64], t: usize) -> Result<(f64, f64)> {
        if !(y > 0.0 && y < 1.0) {
            return Err(QarError::Numeric {
                t,
                site: None,
                reason: format!("observation {y} is not strictly inside (0, 1)"),
            });
        }
        let u = self.level_unchecked(y, lags).map_err(|e| QarError::Numeric {
            t,
            site: None,
            reason: e.to_string(),
        })?;
        let slope = self.slope_unchecked(u, lags);
        if !(slope.is_finite() && slope >= MIN_QUANTILE_SLOPE) {
            return Err(QarError::Numeric {
                t,
                site: None,
                reason: format!("quantile slope {slope} at level {u}"),
            });
        }
        Ok((u, -slope.ln()))
    }

    /// Conditional quantile `Q(tau | lags)`.
    pub fn conditional_quantile(&self, tau: f64, lags: &[f64]) -> Result<f64> {
        if !(0.0..=1.0).contains(&tau) {
            return Err(QarError::Domain(format!("tau = {tau} is outside [0, 1]")));
        }
        self.check_lags(lags)?;
        Ok(self.quantile_unchecked(tau, lags))
    }

    /// `d Q / d tau` from the analytic curve derivatives.
    pub fn quantile_slope(&self, tau: f64, lags: &[f64]) -> Result<f64> {
        if !(0.0..=1.0).contains(&tau) {
            return Err(QarError::Domain(format!("tau = {tau} is outside [0, 1]")));
        }
        self.check_lags(lags)?;
        Ok(self.slope_unchecked(tau, lags))
    }

    /// Intercept and slopes: `theta_0 = eta_{p+1}`, `theta_j = pi_j (eta_j - eta_{p+1})`.
    pub fn theta_curves(&self, tau_grid: &[f64]) -> Vec<Vec<f64>> {
        let p = self.order();
        let mut out = vec![Vec::with_capacity(tau_grid.len()); p + 1];
        for &tau in tau_grid {
            let base = self.curves[p].eval(tau);
            out[0].push(base);
            for j in 0..p {
                out[j + 1].push(self.lag_weights[j] * (self.curves[j].eval(tau) - base));
            }
        }
        out
    }

    /// Quantile level `tau` solving `Q(tau | lags) = y`, clamped to
    /// `[U_CLAMP, 1 - U_CLAMP]`.
    pub fn inverse_tau(&self, y: f64, lags: &[f64]) -> Result<f64> {
        if !(y > 0.0 && y < 1.0) {
            return Err(QarError::Domain(format!("y = {y} is not strictly inside (0, 1)")));
        }
        self.check_lags(lags)?;
        self.level_unchecked(y, lags)
    }

    /// Conditional density `1 / Q'(tau_y)`.
    pub fn conditional_density(&self, y: f64, lags: &[f64]) -> Result<f64> {
        let u = self.inverse_tau(y, lags)?;
        let slope = self.slope_unchecked(u, lags);
        if !(slope.is_finite() && slope >= MIN_QUANTILE_SLOPE) {
            return Err(QarError::Numeric {
                t: 0,
                site: None,
                reason: format!("quantile slope {slope} at level {u}"),
            });
        }
        Ok(1.0 / slope)
    }

    /// Log-likelihood conditional on the first `p` observations, together
    /// with the quantile levels `u_t` for `t = p+1..T`.
    pub fn log_likelihood_with_levels(&self, y: &[f64]) -> Result<(f64, QuantileLevelPath)> {
        let p = self.order();
        if y.len() < p + 1 {
            return Err(QarError::Dimension(format!(
                "QAR({p}) likelihood needs at least {} observations, got {}",
                p + 1,
                y.len()
            )));
        }
        let step_at = |t: usize| -> Result<(f64, f64)> {
            let lags: Vec<f64> = (0..p).map(|j| y[t - 1 - j]).collect();
            self.check_lag_values(&lags, t)?;
            self.step(y[t], &lags, t)
        };
        let terms: Vec<(f64, f64)> = if y.len() >= PAR_LIKELIHOOD_MIN_LEN {
            (p..y.len())
                .into_par_iter()
                .map(step_at)
                .collect::<Result<Vec<_>>>()?
        } else {
            (p..y.len()).map(step_at).collect::<Result<Vec<_>>>()?
        };
        let mut total = 0.0;
        let mut levels = Vec::with_capacity(terms.len());
        for (u, ll) in terms {
            total += ll;
            levels.push(u);
        }
        Ok((total, levels))
    }

    fn check_lag_values(&self, lags: &[f64], t: usize) -> Result<()> {
        if let Some(v) = lags.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(QarError::Numeric {
                t,
                site: None,
                reason: format!("lag value {v} is outside [0, 1]"),
            });
        }
        Ok(())
    }

    pub fn log_likelihood(&self, y: &[f64]) -> Result<f64> {
        if y.len() < PAR_LIKELIHOOD_MIN_LEN && self.order() == 1 {
            // allocation-free path for the common QAR(1) case
            if y.len() < 2 {
                return Err(QarError::Dimension(format!(
                    "QAR(1) likelihood needs at least 2 observations, got {}",
                    y.len()
                )));
            }
            let mut total = 0.0;
            for t in 1..y.len() {
                let lag = [y[t - 1]];
                self.check_lag_values(&lag, t)?;
                total += self.step(y[t], &lag, t)?.1;
            }
            return Ok(total);
        }
        self.log_likelihood_with_levels(y).map(|(ll, _)| ll)
    }
}

impl QuantileProcess for QarModel {
    fn order(&self) -> usize {
        QarModel::order(self)
    }
    fn quantile(&self, tau: f64, lags: &[f64]) -> Result<f64> {
        self.conditional_quantile(tau, lags)
    }
    fn level(&self, y: f64, lags: &[f64]) -> Result<f64> {
        self.inverse_tau(y, lags)
    }
    fn density(&self, y: f64, lags: &[f64]) -> Result<f64> {
        self.conditional_density(y, lags)
    }
    fn theta(&self, tau: f64) -> Result<Vec<f64>> {
        if !(0.0..=1.0).contains(&tau) {
            return Err(QarError::Domain(format!("tau = {tau} is outside [0, 1]")));
        }
        Ok(self.theta_curves(&[tau]).into_iter().map(|v| v[0]).collect())
    }
    fn log_likelihood(&self, y: &[f64]) -> Result<f64> {
        QarModel::log_likelihood(self, y)
    }
}

/// The comonotone baseline `Q(tau | y) = mu + sigma Phi^{-1}(tau) + min(gamma0 + gamma1 tau, 1) y`
/// on the original (nonnegative) data scale.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Kx2006Model {
    mu: f64,
    sigma: f64,
    gamma0: f64,
    gamma1: f64,
}

impl Kx2006Model {
    pub fn new(mu: f64, sigma: f64, gamma0: f64, gamma1: f64) -> Result<Self> {
        if !mu.is_finite() {
            return Err(QarError::InvalidParameter {
                name: "mu",
                value: mu,
                reason: "must be finite",
            });
        }
        if !(sigma.is_finite() && sigma > 0.0) {
            return Err(QarError::InvalidParameter {
                name: "sigma",
                value: sigma,
                reason: "must be positive",
            });
        }
        if !(gamma0 > 0.0 && gamma0 < 1.0) {
            return Err(QarError::InvalidParameter {
                name: "gamma0",
                value: gamma0,
                reason: "must lie in (0, 1)",
            });
        }
        if !(gamma1.is_finite() && gamma1 > 0.0) {
            return Err(QarError::InvalidParameter {
                name: "gamma1",
                value: gamma1,
                reason: "must be positive",
            });
        }
        Ok(Self {
            mu,
            sigma,
            gamma0,
            gamma1,
        })
    }

    pub fn mu(&self) -> f64 {
        self.mu
    }
    pub fn sigma(&self) -> f64 {
        self.sigma
    }
    pub fn gamma0(&self) -> f64 {
        self.gamma0
    }
    pub fn gamma1(&self) -> f64 {
        self.gamma1
    }

    /// Autoregressive coefficient `min(gamma0 + gamma1 tau, 1)`.
    #[inline]
    pub fn slope_coefficient(&self, tau: f64) -> f64 {
        (self.gamma0 + self.gamma1 * tau).min(1.0)
    }

    fn check(tau: f64, y_prev: f64) -> Result<()> {
        if !(tau > 0.0 && tau < 1.0) {
            return Err(QarError::Domain(format!("tau = {tau} is not inside (0, 1)")));
        }
        if !(y_prev >= 0.0 && y_prev.is_finite()) {
            return Err(QarError::Domain(format!(
                "KX2006 requires a nonnegative previous value, got {y_prev}"
            )));
        }
        Ok(())
    }

    #[inline]
    fn quantile_unchecked(&self, tau: f64, y_prev: f64) -> f64 {
        // normal_quantile cannot fail on the open interval used here
        let z = normal_quantile(tau).unwrap_or(0.0);
        self.mu + self.sigma * z + self.slope_coefficient(tau) * y_prev
    }

    #[inline]
    fn slope_unchecked(&self, tau: f64, y_prev: f64) -> f64 {
        let z = normal_quantile(tau).unwrap_or(0.0);
        let mut d = self.sigma / normal_pdf(z);
        if self.gamma0 + self.gamma1 * tau < 1.0 {
            d += self.gamma1 * y_prev;
        }
        d
    }

    pub fn kx2006_quantile(&self, tau: f64, y_prev: f64) -> Result<f64> {
        Self::check(tau, y_prev)?;
        Ok(self.quantile_unchecked(tau, y_prev))
    }

    pub fn quantile_slope(&self, tau: f64, y_prev: f64) -> Result<f64> {
        Self::check(tau, y_prev)?;
        Ok(self.slope_unchecked(tau, y_prev))
    }

    fn level_at(&self, y: f64, y_prev: f64, t: usize) -> Result<f64> {
        let lo = U_CLAMP;
        let hi = 1.0 - U_CLAMP;
        let root = brent(
            |tau| self.quantile_unchecked(tau, y_prev) - y,
            lo,
            hi,
            &RootConfig::default(),
        )
        .map_err(|e| QarError::Numeric {
            t,
            site: None,
            reason: format!("value {y} outside the model's quantile range ({e})"),
        })?;
        Ok(root.x)
    }

    fn step(&self, y: f64, y_prev: f64, t: usize) -> Result<f64> {
        let u = self.level_at(y, y_prev, t)?;
        let slope = self.slope_unchecked(u, y_prev);
        if !(slope.is_finite() && slope >= MIN_QUANTILE_SLOPE) {
            return Err(QarError::Numeric {
                t,
                site: None,
                reason: format!("quantile slope {slope} at level {u}"),
            });
        }
        Ok(-slope.ln())
    }

    /// Log-likelihood of a raw nonnegative series, conditional on its first value.
    pub fn kx2006_log_likelihood(&self, raw: &[f64]) -> Result<f64> {
        if raw.len() < 2 {
            return Err(QarError::Dimension(format!(
                "KX2006 likelihood needs at least 2 observations, got {}",
                raw.len()
            )));
        }
        if let Some((i, v)) = raw.iter().enumerate().find(|(_, v)| !(**v >= 0.0)) {
            return Err(QarError::Domain(format!(
                "KX2006 works on the original scale and needs nonnegative data; \
                 observation {i} is {v}"
            )));
        }
        let mut total = 0.0;
        for t in 1..raw.len() {
            total += self.step(raw[t], raw[t - 1], t)?;
        }
        Ok(total)
    }
}

impl QuantileProcess for Kx2006Model {
    fn order(&self) -> usize {
        1
    }
    fn quantile(&self, tau: f64, lags: &[f64]) -> Result<f64> {
        let y_prev = single_lag(lags)?;
        self.kx2006_quantile(tau, y_prev)
    }
    fn level(&self, y: f64, lags: &[f64]) -> Result<f64> {
        let y_prev = single_lag(lags)?;
        Self::check(0.5, y_prev)?;
        self.level_at(y, y_prev, 0)
    }
    fn density(&self, y: f64, lags: &[f64]) -> Result<f64> {
        let y_prev = single_lag(lags)?;
        Self::check(0.5, y_prev)?;
        if !y.is_finite() {
            return Err(QarError::Domain(format!("density requested at {y}")));
        }
        // beyond the clamped level range the model places no mass
        if y < self.quantile_unchecked(U_CLAMP, y_prev) || y > self.quantile_unchecked(1.0 - U_CLAMP, y_prev) {
            return Ok(0.0);
        }
        Ok(self.step(y, y_prev, 0)?.exp())
    }
    fn theta(&self, tau: f64) -> Result<Vec<f64>> {
        Self::check(tau, 0.0)?;
        let z = normal_quantile(tau)?;
        Ok(vec![self.mu + self.sigma * z, self.slope_coefficient(tau)])
    }
    fn log_likelihood(&self, y: &[f64]) -> Result<f64> {
        self.kx2006_log_likelihood(y)
    }
}

fn single_lag(lags: &[f64]) -> Result<f64> {
    match lags {
        [y] => Ok(*y),
        _ => Err(QarError::Dimension(format!(
            "KX2006 needs one lag, got {}",
            lags.len()
        ))),
    }
}
