//! Adaptive block-Metropolis sampling over unconstrained parameterizations.
//!
//! A [`ModelFamily`] owns its data, declares a [`ParamSpec`] and evaluates the
//! likelihood at a constrained parameter vector. The sampler works on the
//! unconstrained vector `z`; [`ParamSpec::to_constrained`] maps it back and
//! supplies the log-Jacobian.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::assess::quantile_sorted;
use crate::dist::{basis_curve_params_with_shape, KumaraswamyParams, MonotoneCurve, LN_SQRT_2PI};
use crate::error::{QarError, Result};
use crate::linalg::Cholesky;
use crate::qar::{Kx2006Model, QarModel, QuantileProcess};

const ADAPT_SCALE: f64 = 2.38 * 2.38;
const ACCEPT_WINDOW: usize = 1000;
const LOW_ACCEPTANCE: f64 = 0.01;

// ---------------------------------------------------------------------------
// transforms and priors

/// Bijection from a constrained scalar onto the real line.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Transform {
    Identity,
    /// `x = exp(z)` on `(0, inf)`.
    Log,
    /// `x = lo + (hi - lo) / (1 + exp(-z))` on `(lo, hi)`.
    Logit { lo: f64, hi: f64 },
}

#[inline]
fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

#[inline]
fn logistic(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

impl Transform {
    /// Constrained value and `log |dx/dz|`.
    #[inline]
    pub fn inverse(&self, z: f64) -> (f64, f64) {
        match *self {
            Transform::Identity => (z, 0.0),
            Transform::Log => (z.exp(), z),
            Transform::Logit { lo, hi } => {
                let w = hi - lo;
                let x = lo + w * logistic(z);
                (x, w.ln() - softplus(-z) - softplus(z))
            }
        }
    }

    pub fn forward(&self, x: f64) -> Result<f64> {
        match *self {
            Transform::Identity => Ok(x),
            Transform::Log if x > 0.0 => Ok(x.ln()),
            Transform::Logit { lo, hi } if x > lo && x < hi => {
                let s = (x - lo) / (hi - lo);
                Ok(s.ln() - (-s).ln_1p())
            }
            _ => Err(QarError::Domain(format!(
                "value {x} is outside the support of transform {self:?}"
            ))),
        }
    }
}

/// Prior density on the constrained scale.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Prior {
    Normal { mean: f64, sd: f64 },
    /// `log x ~ N(mu, sigma^2)`.
    LogNormal { mu: f64, sigma: f64 },
    Uniform { lo: f64, hi: f64 },
    Flat,
    /// Supplied jointly by [`ModelFamily::structured_log_prior`].
    Structured,
}

impl Prior {
    pub fn ln_density(&self, x: f64) -> f64 {
        match *self {
            Prior::Normal { mean, sd } => {
                let r = (x - mean) / sd;
                -0.5 * r * r - sd.ln() - LN_SQRT_2PI
            }
            Prior::LogNormal { mu, sigma } => {
                if x <= 0.0 {
                    return f64::NEG_INFINITY;
                }
                let lx = x.ln();
                let r = (lx - mu) / sigma;
                -0.5 * r * r - sigma.ln() - LN_SQRT_2PI - lx
            }
            Prior::Uniform { lo, hi } => {
                if x > lo && x < hi {
                    -(hi - lo).ln()
                } else {
                    f64::NEG_INFINITY
                }
            }
            Prior::Flat | Prior::Structured => 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub enum ParamEntry {
    Scalar {
        name: String,
        transform: Transform,
        prior: Prior,
    },
    /// A probability vector of length `K` with a flat (Dirichlet(1)) prior,
    /// mapped to `K - 1` unconstrained coordinates by the additive log-ratio.
    Simplex { names: Vec<String> },
}

/// Ordered parameter list with transforms and priors.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct ParamSpec {
    entries: Vec<ParamEntry>,
}

impl ParamSpec {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn scalar(&mut self, name: impl Into<String>, transform: Transform, prior: Prior) -> &mut Self {
        self.entries.push(ParamEntry::Scalar {
            name: name.into(),
            transform,
            prior,
        });
        self
    }

    pub fn simplex(&mut self, names: Vec<String>) -> &mut Self {
        assert!(names.len() >= 2, "a simplex needs at least two components");
        self.entries.push(ParamEntry::Simplex { names });
        self
    }

    pub fn entries(&self) -> &[ParamEntry] {
        &self.entries
    }

    pub fn names(&self) -> Vec<String> {
        let mut out = Vec::new();
        for e in &self.entries {
            match e {
                ParamEntry::Scalar { name, .. } => out.push(name.clone()),
                ParamEntry::Simplex { names } => out.extend(names.iter().cloned()),
            }
        }
        out
    }

    pub fn constrained_dim(&self) -> usize {
        self.entries
            .iter()
            .map(|e| match e {
                ParamEntry::Scalar { .. } => 1,
                ParamEntry::Simplex { names } => names.len(),
            })
            .sum()
    }

    pub fn unconstrained_dim(&self) -> usize {
        self.entries
            .iter()
            .map(|e| match e {
                ParamEntry::Scalar { .. } => 1,
                ParamEntry::Simplex { names } => names.len() - 1,
            })
            .sum()
    }

    /// Back-transform `z`, returning the constrained vector and the total log-Jacobian.
    pub fn to_constrained(&self, z: &[f64]) -> (Vec<f64>, f64) {
        debug_assert_eq!(z.len(), self.unconstrained_dim());
        let mut theta = Vec::with_capacity(self.constrained_dim());
        let mut log_jac = 0.0;
        let mut i = 0;
        for e in &self.entries {
            match e {
                ParamEntry::Scalar { transform, .. } => {
                    let (x, j) = transform.inverse(z[i]);
                    theta.push(x);
                    log_jac += j;
                    i += 1;
                }
                ParamEntry::Simplex { names } => {
                    let k = names.len();
                    let zs = &z[i..i + k - 1];
                    let m = zs.iter().copied().fold(0.0, f64::max);
                    let denom: f64 = (-m).exp() + zs.iter().map(|v| (v - m).exp()).sum::<f64>();
                    let lse = m + denom.ln();
                    for &v in zs {
                        theta.push((v - lse).exp());
                        log_jac += v - lse;
                    }
                    theta.push((-lse).exp());
                    log_jac -= lse;
                    i += k - 1;
                }
            }
        }
        (theta, log_jac)
    }

    pub fn to_unconstrained(&self, theta: &[f64]) -> Result<Vec<f64>> {
        if theta.len() != self.constrained_dim() {
            return Err(QarError::Dimension(format!(
                "expected {} parameters, got {}",
                self.constrained_dim(),
                theta.len()
            )));
        }
        let mut z = Vec::with_capacity(self.unconstrained_dim());
        let mut i = 0;
        for e in &self.entries {
            match e {
                ParamEntry::Scalar { transform, .. } => {
                    z.push(transform.forward(theta[i])?);
                    i += 1;
                }
                ParamEntry::Simplex { names } => {
                    let k = names.len();
                    let w = &theta[i..i + k];
                    if w.iter().any(|v| !(*v > 0.0)) || (w.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
                        return Err(QarError::Domain(format!(
                            "simplex {} is not a strictly positive probability vector",
                            names[0]
                        )));
                    }
                    let last = w[k - 1].ln();
                    z.extend(w[..k - 1].iter().map(|v| v.ln() - last));
                    i += k;
                }
            }
        }
        Ok(z)
    }

    /// Sum of the per-parameter prior log-densities (structured priors excluded).
    pub fn log_prior(&self, theta: &[f64]) -> f64 {
        let mut lp = 0.0;
        let mut i = 0;
        for e in &self.entries {
            match e {
                ParamEntry::Scalar { prior, .. } => {
                    lp += prior.ln_density(theta[i]);
                    i += 1;
                }
                ParamEntry::Simplex { names } => {
                    // Dirichlet(1, ..., 1) density is (K - 1)!
                    lp += (1..names.len()).map(|v| (v as f64).ln()).sum::<f64>();
                    i += names.len();
                }
            }
        }
        lp
    }

    /// Whether `theta` lies in the support of every transform.
    pub fn in_support(&self, theta: &[f64]) -> bool {
        let mut i = 0;
        for e in &self.entries {
            match e {
                ParamEntry::Scalar { transform, .. } => {
                    let x = theta[i];
                    let ok = match *transform {
                        Transform::Identity => x.is_finite(),
                        Transform::Log => x > 0.0 && x.is_finite(),
                        Transform::Logit { lo, hi } => x > lo && x < hi,
                    };
                    if !ok {
                        return false;
                    }
                    i += 1;
                }
                ParamEntry::Simplex { names } => {
                    let w = &theta[i..i + names.len()];
                    if w.iter().any(|v| !(*v > 0.0)) || (w.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
                        return false;
                    }
                    i += names.len();
                }
            }
        }
        true
    }
}

// ---------------------------------------------------------------------------
// targets

/// An unnormalized log-density on `R^d`. Non-finite values are rejections.
pub trait LogDensity: Sync {
    fn dim(&self) -> usize;
    fn log_density(&self, z: &[f64]) -> f64;
}

/// A statistical model with its data attached.
pub trait ModelFamily: Send + Sync {
    fn param_spec(&self) -> &ParamSpec;

    fn log_likelihood(&self, theta: &[f64]) -> Result<f64>;

    /// Joint prior terms for parameters tagged [`Prior::Structured`].
    fn structured_log_prior(&self, _theta: &[f64]) -> f64 {
        0.0
    }

    /// Unconstrained starting point.
    fn initial_point(&self) -> Vec<f64> {
        vec![0.0; self.param_spec().unconstrained_dim()]
    }

    /// Optional partition of the unconstrained coordinates into update blocks.
    fn blocks(&self) -> Option<Vec<Vec<usize>>> {
        None
    }
}

/// A family whose parameters decode to a conditional quantile process.
pub trait ProcessFamily: ModelFamily {
    type Process: QuantileProcess;
    fn decode(&self, theta: &[f64]) -> Result<Self::Process>;
}

/// `loglik + log prior + log |J|` at unconstrained `z`; `-inf` on any failure.
pub fn log_posterior<F: ModelFamily + ?Sized>(family: &F, z: &[f64]) -> f64 {
    let spec = family.param_spec();
    if z.len() != spec.unconstrained_dim() || z.iter().any(|v| !v.is_finite()) {
        return f64::NEG_INFINITY;
    }
    let (theta, log_jac) = spec.to_constrained(z);
    let lp = spec.log_prior(&theta) + family.structured_log_prior(&theta);
    if !lp.is_finite() {
        return f64::NEG_INFINITY;
    }
    match family.log_likelihood(&theta) {
        Ok(ll) if ll.is_finite() => ll + lp + log_jac,
        _ => f64::NEG_INFINITY,
    }
}

struct Posterior<'a, F: ?Sized>(&'a F);

impl<F: ModelFamily + ?Sized> LogDensity for Posterior<'_, F> {
    fn dim(&self) -> usize {
        self.0.param_spec().unconstrained_dim()
    }
    fn log_density(&self, z: &[f64]) -> f64 {
        log_posterior(self.0, z)
    }
}

// ---------------------------------------------------------------------------
// sampler

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ChainConfig {
    pub iterations: usize,
    pub burn_in: usize,
    pub thin: usize,
    pub seed: u64,
    pub adapt_start: usize,
    pub adapt_eps: f64,
    pub init_step: f64,
}

impl Default for ChainConfig {
    fn default() -> Self {
        Self {
            iterations: 20_000,
            burn_in: 10_000,
            thin: 5,
            seed: 0,
            adapt_start: 500,
            adapt_eps: 1e-6,
            init_step: 0.1,
        }
    }
}

impl ChainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.burn_in >= self.iterations {
            return Err(QarError::Config(format!(
                "burn_in ({}) must be smaller than iterations ({})",
                self.burn_in, self.iterations
            )));
        }
        if self.thin == 0 {
            return Err(QarError::Config("thin must be at least 1".into()));
        }
        if !(self.adapt_eps > 0.0 && self.adapt_eps.is_finite()) {
            return Err(QarError::Config("adapt_eps must be positive".into()));
        }
        if !(self.init_step > 0.0 && self.init_step.is_finite()) {
            return Err(QarError::Config("init_step must be positive".into()));
        }
        Ok(())
    }

    /// Number of retained draws, `floor((iterations - burn_in) / thin)`.
    pub fn retained(&self) -> usize {
        (self.iterations - self.burn_in) / self.thin
    }
}

/// Gaussian random-walk proposal with Haario-style covariance adaptation.
#[derive(Debug, Clone)]
pub struct AdaptiveProposal {
    d: usize,
    n: usize,
    mean: Vec<f64>,
    m2: Vec<f64>,
    adapt_start: usize,
    adapt_eps: f64,
    init_step: f64,
}

impl AdaptiveProposal {
    pub fn new(d: usize, cfg: &ChainConfig) -> Self {
        Self {
            d,
            n: 0,
            mean: vec![0.0; d],
            m2: vec![0.0; d * d],
            adapt_start: cfg.adapt_start,
            adapt_eps: cfg.adapt_eps,
            init_step: cfg.init_step,
        }
    }

    /// Fold the current chain state into the running mean and covariance.
    pub fn observe(&mut self, x: &[f64]) {
        let d = self.d;
        self.n += 1;
        let n = self.n as f64;
        let delta: Vec<f64> = x.iter().zip(&self.mean).map(|(a, m)| a - m).collect();
        for i in 0..d {
            self.mean[i] += delta[i] / n;
        }
        for i in 0..d {
            let after_i = x[i] - self.mean[i];
            for j in 0..d {
                self.m2[i * d + j] += delta[j] * after_i;
            }
        }
    }

    pub fn is_adapted(&self) -> bool {
        self.n >= self.adapt_start.max(2)
    }

    /// Current proposal covariance (row-major).
    pub fn covariance(&self) -> Vec<f64> {
        let d = self.d;
        let mut c = vec![0.0; d * d];
        if self.is_adapted() {
            let s = ADAPT_SCALE / d as f64;
            let denom = (self.n - 1) as f64;
            for i in 0..d {
                for j in 0..d {
                    // symmetrize against rounding in the rank-one updates
                    let emp = 0.5 * (self.m2[i * d + j] + self.m2[j * d + i]) / denom;
                    c[i * d + j] = s * (emp + if i == j { self.adapt_eps } else { 0.0 });
                }
            }
        } else {
            let v = self.init_step * self.init_step / d as f64;
            for i in 0..d {
                c[i * d + i] = v;
            }
        }
        c
    }

    /// Draw a proposal increment.
    pub fn step<R: Rng>(&self, rng: &mut R) -> Vec<f64> {
        let z: Vec<f64> = (0..self.d).map(|_| rng.sample(StandardNormal)).collect();
        if self.is_adapted() {
            if let Ok(ch) = Cholesky::new(&self.covariance(), self.d) {
                return ch.mul_lower(&z);
            }
            log::debug!("adapted proposal covariance not positive definite; using initial step");
        }
        let s = self.init_step / (self.d as f64).sqrt();
        z.into_iter().map(|v| v * s).collect()
    }
}

/// Raw output of [`sample_target`] on the unconstrained scale.
#[derive(Debug, Clone, PartialEq)]
pub struct ChainRun {
    pub samples: Vec<Vec<f64>>,
    pub log_density: Vec<f64>,
    pub acceptance_rate: f64,
    /// Acceptance over iterations at or after `adapt_start`.
    pub adapted_acceptance_rate: f64,
    pub warnings: Vec<String>,
}

/// Adaptive Metropolis on an arbitrary target. With `blocks`, each block is
/// updated in turn with its own adaptive proposal.
pub fn sample_target<T: LogDensity + ?Sized>(
    target: &T,
    init: &[f64],
    cfg: &ChainConfig,
    blocks: Option<&[Vec<usize>]>,
) -> Result<ChainRun> {
    cfg.validate()?;
    let d = target.dim();
    if d == 0 {
        return Err(QarError::Config("target has no parameters".into()));
    }
    if init.len() != d {
        return Err(QarError::Dimension(format!(
            "initial point has {} coordinates, target has {d}",
            init.len()
        )));
    }
    let blocks: Vec<Vec<usize>> = match blocks {
        Some(b) => {
            let mut seen = vec![false; d];
            for &i in b.iter().flatten() {
                if i >= d || seen[i] {
                    return Err(QarError::Config(format!("invalid block index {i}")));
                }
                seen[i] = true;
            }
            if seen.iter().any(|s| !s) || b.iter().any(|blk| blk.is_empty()) {
                return Err(QarError::Config("blocks must partition the parameters".into()));
            }
            b.to_vec()
        }
        None => vec![(0..d).collect()],
    };

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut x = init.to_vec();
    let mut lp = target.log_density(&x);
    if !lp.is_finite() {
        return Err(QarError::Config(format!(
            "log-posterior is not finite at the initial point ({lp})"
        )));
    }
    let mut proposals: Vec<AdaptiveProposal> = blocks
        .iter()
        .map(|b| AdaptiveProposal::new(b.len(), cfg))
        .collect();

    let mut samples = Vec::with_capacity(cfg.retained());
    let mut trace = Vec::with_capacity(cfg.retained());
    let mut accepted = 0usize;
    let mut adapted_accepted = 0usize;
    let mut adapted_total = 0usize;
    let mut window_accepted = 0usize;
    let mut window_total = 0usize;
    let mut warnings = Vec::new();

    for iter in 0..cfg.iterations {
        for (b, block) in blocks.iter().enumerate() {
            let prop = &mut proposals[b];
            let adapted = iter >= cfg.adapt_start;
            let inc = prop.step(&mut rng);
            let mut cand = x.clone();
            for (k, &i) in block.iter().enumerate() {
                cand[i] += inc[k];
            }
            let lp_cand = target.log_density(&cand);
            let u: f64 = rng.random();
            let ok = lp_cand.is_finite() && u.ln() < lp_cand - lp;
            if ok {
                x = cand;
                lp = lp_cand;
                accepted += 1;
                window_accepted += 1;
            }
            if adapted {
                adapted_total += 1;
                adapted_accepted += ok as usize;
            }
            window_total += 1;
            let sub: Vec<f64> = block.iter().map(|&i| x[i]).collect();
            prop.observe(&sub);
        }
        if (iter + 1) % ACCEPT_WINDOW == 0 {
            let rate = window_accepted as f64 / window_total as f64;
            if rate < LOW_ACCEPTANCE {
                let msg = format!(
                    "acceptance rate {rate:.4} over iterations {}..{}",
                    iter + 1 - ACCEPT_WINDOW,
                    iter + 1
                );
                log::warn!("{msg}");
                warnings.push(msg);
            }
            window_accepted = 0;
            window_total = 0;
        }
        if iter >= cfg.burn_in && (iter + 1 - cfg.burn_in) % cfg.thin == 0 {
            samples.push(x.clone());
            trace.push(lp);
        }
    }

    let total = cfg.iterations * blocks.len();
    Ok(ChainRun {
        samples,
        log_density: trace,
        acceptance_rate: accepted as f64 / total as f64,
        adapted_acceptance_rate: if adapted_total > 0 {
            adapted_accepted as f64 / adapted_total as f64
        } else {
            f64::NAN
        },
        warnings,
    })
}

/// Retained posterior draws on the constrained scale.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PosteriorDraws {
    pub names: Vec<String>,
    pub samples: Vec<Vec<f64>>,
    pub acceptance_rate: f64,
    pub adapted_acceptance_rate: f64,
    pub log_posterior: Vec<f64>,
    pub warnings: Vec<String>,
}

impl PosteriorDraws {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        self.samples.iter().map(|r| r[j]).collect()
    }

    pub fn means(&self) -> Vec<f64> {
        let b = self.samples.len() as f64;
        (0..self.names.len())
            .map(|j| self.samples.iter().map(|r| r[j]).sum::<f64>() / b)
            .collect()
    }
}

/// Run one chain for `family` from its default starting point.
pub fn run_chain<F: ModelFamily + ?Sized>(family: &F, cfg: &ChainConfig) -> Result<PosteriorDraws> {
    let init = family.initial_point();
    run_chain_from(family, cfg, &init)
}

pub fn run_chain_from<F: ModelFamily + ?Sized>(
    family: &F,
    cfg: &ChainConfig,
    init: &[f64],
) -> Result<PosteriorDraws> {
    let spec = family.param_spec();
    let blocks = family.blocks();
    let run = sample_target(&Posterior(family), init, cfg, blocks.as_deref())?;
    let samples = run
        .samples
        .iter()
        .map(|z| spec.to_constrained(z).0)
        .collect();
    Ok(PosteriorDraws {
        names: spec.names(),
        samples,
        acceptance_rate: run.acceptance_rate,
        adapted_acceptance_rate: run.adapted_acceptance_rate,
        log_posterior: run.log_density,
        warnings: run.warnings,
    })
}

// ---------------------------------------------------------------------------
// curve parameterizations and the univariate families

/// How each monotone curve is parameterized.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CurveSpec {
    /// `k` Kumaraswamy components with unknown shapes and weights.
    Free { k: usize },
    /// `k` fixed components with medians `i/(k+1)`; only the weights are unknown.
    Basis {
        k: usize,
        #[serde(default = "default_basis_shape")]
        shape: f64,
    },
}

fn default_basis_shape() -> f64 {
    2.0
}

impl CurveSpec {
    pub fn components(&self) -> usize {
        match *self {
            CurveSpec::Free { k } | CurveSpec::Basis { k, .. } => k,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            CurveSpec::Free { k } if k >= 1 => Ok(()),
            CurveSpec::Basis { k, shape } if k >= 2 && shape > 0.0 => Ok(()),
            _ => Err(QarError::Config(format!("invalid curve specification {self:?}"))),
        }
    }

    /// Number of constrained parameters per curve.
    pub fn width(&self) -> usize {
        match *self {
            CurveSpec::Free { k: 1 } => 2,
            CurveSpec::Free { k } => 3 * k - if k == 2 { 1 } else { 0 },
            CurveSpec::Basis { k, .. } => k,
        }
    }

    /// Append this curve's parameters, labelled `label.*`.
    pub fn push_params(&self, spec: &mut ParamSpec, label: &str, sigma_ab: f64) {
        let ab = Prior::LogNormal {
            mu: 0.0,
            sigma: sigma_ab,
        };
        match *self {
            CurveSpec::Free { k: 1 } => {
                spec.scalar(format!("{label}.a"), Transform::Log, ab);
                spec.scalar(format!("{label}.b"), Transform::Log, ab);
            }
            CurveSpec::Free { k } => {
                for i in 1..=k {
                    spec.scalar(format!("{label}.a{i}"), Transform::Log, ab);
                    spec.scalar(format!("{label}.b{i}"), Transform::Log, ab);
                }
                if k == 2 {
                    spec.scalar(
                        format!("{label}.lambda1"),
                        Transform::Logit { lo: 0.0, hi: 0.5 },
                        Prior::Uniform { lo: 0.0, hi: 0.5 },
                    );
                } else {
                    spec.simplex((1..=k).map(|i| format!("{label}.w{i}")).collect());
                }
            }
            CurveSpec::Basis { k, .. } => {
                spec.simplex((1..=k).map(|i| format!("{label}.w{i}")).collect());
            }
        }
    }

    /// Build the curve from its `width()` constrained parameters.
    pub fn decode(&self, theta: &[f64]) -> Result<MonotoneCurve> {
        match *self {
            CurveSpec::Free { k: 1 } => Ok(MonotoneCurve::single(KumaraswamyParams::new(
                theta[0], theta[1],
            )?)),
            CurveSpec::Free { k } => {
                let comps = (0..k)
                    .map(|i| KumaraswamyParams::new(theta[2 * i], theta[2 * i + 1]))
                    .collect::<Result<Vec<_>>>()?;
                let weights = if k == 2 {
                    vec![theta[4], 1.0 - theta[4]]
                } else {
                    theta[2 * k..3 * k].to_vec()
                };
                MonotoneCurve::new(comps, renormalize(weights))
            }
            CurveSpec::Basis { k, shape } => {
                let comps = (1..=k)
                    .map(|i| basis_curve_params_with_shape(k, i, shape))
                    .collect::<Result<Vec<_>>>()?;
                MonotoneCurve::new(comps, renormalize(theta[..k].to_vec()))
            }
        }
    }
}

/// Remove rounding drift so curve validation sees an exact unit sum.
fn renormalize(mut w: Vec<f64>) -> Vec<f64> {
    let s: f64 = w.iter().sum();
    if s > 0.0 && (s - 1.0).abs() <= 1e-9 {
        for v in &mut w {
            *v /= s;
        }
    }
    w
}

/// Prior scale of the log-shapes when the caller does not set one.
pub fn default_sigma_ab(curve: &CurveSpec, p: usize) -> f64 {
    match curve {
        CurveSpec::Free { k: 1 } if p == 1 => 3.0,
        _ => 1.5,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QarPriors {
    pub sigma_ab: f64,
}

/// QAR(p) posterior for a unit-interval series.
#[derive(Debug, Clone)]
pub struct QarFamily {
    y: Vec<f64>,
    p: usize,
    curve: CurveSpec,
    priors: QarPriors,
    spec: ParamSpec,
}

impl QarFamily {
    pub fn new(y: Vec<f64>, p: usize, curve: CurveSpec, priors: Option<QarPriors>) -> Result<Self> {
        curve.validate()?;
        if p == 0 {
            return Err(QarError::Config("QAR order must be at least 1".into()));
        }
        if y.len() < p + 1 {
            return Err(QarError::Dimension(format!(
                "QAR({p}) needs at least {} observations, got {}",
                p + 1,
                y.len()
            )));
        }
        if let Some((i, v)) = y.iter().enumerate().find(|(_, v)| !(**v > 0.0 && **v < 1.0)) {
            return Err(QarError::OutOfBounds {
                index: i,
                value: *v,
                lower: 0.0,
                upper: 1.0,
            });
        }
        let priors = priors.unwrap_or(QarPriors {
            sigma_ab: default_sigma_ab(&curve, p),
        });
        let mut spec = ParamSpec::new();
        for j in 1..=p + 1 {
            curve.push_params(&mut spec, &format!("eta{j}"), priors.sigma_ab);
        }
        if p >= 2 {
            spec.simplex((1..=p).map(|j| format!("pi{j}")).collect());
        }
        Ok(Self {
            y,
            p,
            curve,
            priors,
            spec,
        })
    }

    pub fn order(&self) -> usize {
        self.p
    }

    pub fn curve_spec(&self) -> CurveSpec {
        self.curve
    }

    pub fn priors(&self) -> QarPriors {
        self.priors
    }

    pub fn data(&self) -> &[f64] {
        &self.y
    }
}

/// Decode a QAR(p) parameter vector laid out as curves `eta_1..eta_{p+1}`
/// followed by the lag weights when `p >= 2`.
pub fn decode_qar(curve: &CurveSpec, p: usize, theta: &[f64]) -> Result<QarModel> {
    let w = curve.width();
    let curves = (0..=p)
        .map(|j| curve.decode(&theta[j * w..(j + 1) * w]))
        .collect::<Result<Vec<_>>>()?;
    let pi = if p == 1 {
        vec![1.0]
    } else {
        renormalize(theta[(p + 1) * w..(p + 1) * w + p].to_vec())
    };
    QarModel::new(curves, pi)
}

impl ModelFamily for QarFamily {
    fn param_spec(&self) -> &ParamSpec {
        &self.spec
    }
    fn log_likelihood(&self, theta: &[f64]) -> Result<f64> {
        self.decode(theta)?.log_likelihood(&self.y)
    }
}

impl ProcessFamily for QarFamily {
    type Process = QarModel;
    fn decode(&self, theta: &[f64]) -> Result<QarModel> {
        decode_qar(&self.curve, self.p, theta)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Kx2006Priors {
    pub mu_sd: f64,
    pub log_sigma_sd: f64,
    pub log_gamma1_sd: f64,
}

impl Default for Kx2006Priors {
    fn default() -> Self {
        Self {
            mu_sd: 10.0,
            log_sigma_sd: 3.0,
            log_gamma1_sd: 3.0,
        }
    }
}

/// KX2006 posterior for a raw nonnegative series.
#[derive(Debug, Clone)]
pub struct Kx2006Family {
    raw: Vec<f64>,
    spec: ParamSpec,
}

impl Kx2006Family {
    pub fn new(raw: Vec<f64>, priors: Kx2006Priors) -> Result<Self> {
        if raw.len() < 3 {
            return Err(QarError::Dimension(format!(
                "KX2006 needs at least 3 observations, got {}",
                raw.len()
            )));
        }
        if let Some((i, v)) = raw.iter().enumerate().find(|(_, v)| !(**v >= 0.0)) {
            return Err(QarError::Domain(format!(
                "KX2006 works on the original scale and needs all positive data; \
                 observation {i} is {v}"
            )));
        }
        let mut spec = ParamSpec::new();
        spec.scalar(
            "mu",
            Transform::Identity,
            Prior::Normal {
                mean: 0.0,
                sd: priors.mu_sd,
            },
        )
        .scalar(
            "sigma",
            Transform::Log,
            Prior::LogNormal {
                mu: 0.0,
                sigma: priors.log_sigma_sd,
            },
        )
        .scalar(
            "gamma0",
            Transform::Logit { lo: 0.0, hi: 1.0 },
            Prior::Uniform { lo: 0.0, hi: 1.0 },
        )
        .scalar(
            "gamma1",
            Transform::Log,
            Prior::LogNormal {
                mu: 0.0,
                sigma: priors.log_gamma1_sd,
            },
        );
        Ok(Self { raw, spec })
    }
}

impl ModelFamily for Kx2006Family {
    fn param_spec(&self) -> &ParamSpec {
        &self.spec
    }
    fn log_likelihood(&self, theta: &[f64]) -> Result<f64> {
        self.decode(theta)?.kx2006_log_likelihood(&self.raw)
    }
    /// `gamma0 = 0.5` and `gamma1 = 1` give a unit median slope, so `mu` and
    /// `sigma` start at the mean and spread of the first differences.
    fn initial_point(&self) -> Vec<f64> {
        let diffs: Vec<f64> = self.raw.windows(2).map(|w| w[1] - w[0]).collect();
        let n = diffs.len() as f64;
        let mean = diffs.iter().sum::<f64>() / n;
        let var = diffs.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (n - 1.0);
        let sd = if var > 0.0 { var.sqrt() } else { 1.0 };
        vec![mean, sd.ln(), 0.0, 0.0]
    }
}

impl ProcessFamily for Kx2006Family {
    type Process = Kx2006Model;
    fn decode(&self, theta: &[f64]) -> Result<Kx2006Model> {
        Kx2006Model::new(theta[0], theta[1], theta[2], theta[3])
    }
}

// ---------------------------------------------------------------------------
// summaries

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Interval {
    pub level: f64,
    pub lower: f64,
    pub upper: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ParamSummary {
    pub name: String,
    pub mean: f64,
    pub sd: f64,
    pub median: f64,
    pub intervals: Vec<Interval>,
}

fn interval_of(sorted: &[f64], level: f64) -> Interval {
    Interval {
        level,
        lower: quantile_sorted(sorted, 0.5 * (1.0 - level)),
        upper: quantile_sorted(sorted, 0.5 * (1.0 + level)),
    }
}

/// Posterior means and equal-tailed type-7 credible intervals.
pub fn summarize(draws: &PosteriorDraws, levels: &[f64]) -> Result<Vec<ParamSummary>> {
    if draws.len() < 2 {
        return Err(QarError::Dimension(format!(
            "summaries need at least 2 draws, got {}",
            draws.len()
        )));
    }
    if let Some(l) = levels.iter().find(|l| !(**l > 0.0 && **l < 1.0)) {
        return Err(QarError::Domain(format!("credible level {l} is not in (0, 1)")));
    }
    let b = draws.len() as f64;
    Ok(draws
        .names
        .iter()
        .enumerate()
        .map(|(j, name)| {
            let mut col = draws.column(j);
            let mean = col.iter().sum::<f64>() / b;
            let sd = (col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (b - 1.0)).sqrt();
            col.sort_by(f64::total_cmp);
            ParamSummary {
                name: name.clone(),
                mean,
                sd,
                median: quantile_sorted(&col, 0.5),
                intervals: levels.iter().map(|&l| interval_of(&col, l)).collect(),
            }
        })
        .collect())
}

/// Pointwise posterior mean and equal-tailed band of a functional.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Band {
    pub mean: Vec<f64>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl Band {
    fn from_rows(rows: &[Vec<f64>], len: usize, level: f64) -> Self {
        let b = rows.len() as f64;
        let mut band = Band {
            mean: Vec::with_capacity(len),
            lower: Vec::with_capacity(len),
            upper: Vec::with_capacity(len),
        };
        let mut col = Vec::with_capacity(rows.len());
        for i in 0..len {
            col.clear();
            col.extend(rows.iter().map(|r| r[i]));
            band.mean.push(col.iter().sum::<f64>() / b);
            col.sort_by(f64::total_cmp);
            let iv = interval_of(&col, level);
            band.lower.push(iv.lower);
            band.upper.push(iv.upper);
        }
        band
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PosteriorFunctionals {
    pub tau: Vec<f64>,
    pub y_grid: Vec<f64>,
    pub level: f64,
    /// `theta[j]` is the band for `theta_j(tau)`.
    pub theta: Vec<Band>,
    pub quantile: Band,
    pub density: Band,
    pub used: usize,
    pub skipped: usize,
}

/// Map every retained draw through the model's `theta_j(tau)`,
/// `Q(tau | lags)` and `f(y | lags)`. Draws that fail numerically are
/// skipped and counted.
pub fn posterior_functionals<F: ProcessFamily + ?Sized>(
    draws: &PosteriorDraws,
    family: &F,
    tau_grid: &[f64],
    lags: &[f64],
    y_grid: &[f64],
    level: f64,
) -> Result<PosteriorFunctionals> {
    functionals_with(draws, |theta: &[f64]| family.decode(theta), tau_grid, lags, y_grid, level)
}

/// As [`posterior_functionals`] with an arbitrary draw decoder, e.g. one
/// marginal of a multivariate model.
pub fn functionals_with<P, D>(
    draws: &PosteriorDraws,
    decode: D,
    tau_grid: &[f64],
    lags: &[f64],
    y_grid: &[f64],
    level: f64,
) -> Result<PosteriorFunctionals>
where
    P: QuantileProcess,
    D: Fn(&[f64]) -> Result<P> + Sync,
{
    if !(level > 0.0 && level < 1.0) {
        return Err(QarError::Domain(format!("credible level {level} is not in (0, 1)")));
    }
    type Row = (Vec<Vec<f64>>, Vec<f64>, Vec<f64>);
    let per_draw: Vec<Option<Row>> = draws
        .samples
        .par_iter()
        .map(|theta| {
            let model = decode(theta).ok()?;
            let mut th: Vec<Vec<f64>> = Vec::new();
            let mut q = Vec::with_capacity(tau_grid.len());
            for &tau in tau_grid {
                let t = model.theta(tau).ok()?;
                if th.is_empty() {
                    th = vec![Vec::with_capacity(tau_grid.len()); t.len()];
                }
                for (j, v) in t.into_iter().enumerate() {
                    th[j].push(v);
                }
                q.push(model.quantile(tau, lags).ok()?);
            }
            let f = y_grid
                .iter()
                .map(|&y| model.density(y, lags).ok())
                .collect::<Option<Vec<_>>>()?;
            Some((th, q, f))
        })
        .collect();
    let skipped = per_draw.iter().filter(|r| r.is_none()).count();
    let rows: Vec<Row> = per_draw.into_iter().flatten().collect();
    if rows.is_empty() {
        return Err(QarError::Numeric {
            t: 0,
            site: None,
            reason: format!("all {skipped} draws failed to evaluate"),
        });
    }
    let n_theta = rows[0].0.len();
    let theta = (0..n_theta)
        .map(|j| {
            let r: Vec<Vec<f64>> = rows.iter().map(|row| row.0[j].clone()).collect();
            Band::from_rows(&r, tau_grid.len(), level)
        })
        .collect();
    let q_rows: Vec<Vec<f64>> = rows.iter().map(|r| r.1.clone()).collect();
    let f_rows: Vec<Vec<f64>> = rows.iter().map(|r| r.2.clone()).collect();
    Ok(PosteriorFunctionals {
        tau: tau_grid.to_vec(),
        y_grid: y_grid.to_vec(),
        level,
        theta,
        quantile: Band::from_rows(&q_rows, tau_grid.len(), level),
        density: Band::from_rows(&f_rows, y_grid.len(), level),
        used: rows.len(),
        skipped,
    })
}

// ---------------------------------------------------------------------------
// diagnostics

/// Monte Carlo standard error of the mean by non-overlapping batch means.
pub fn batch_means_mcse(x: &[f64], n_batches: usize) -> Result<f64> {
    if n_batches < 2 || x.len() < 2 * n_batches {
        return Err(QarError::Dimension(format!(
            "{} values cannot form {n_batches} batches of at least 2",
            x.len()
        )));
    }
    let m = x.len() / n_batches;
    let means: Vec<f64> = (0..n_batches)
        .map(|b| x[b * m..(b + 1) * m].iter().sum::<f64>() / m as f64)
        .collect();
    let grand = means.iter().sum::<f64>() / n_batches as f64;
    let var = means.iter().map(|v| (v - grand).powi(2)).sum::<f64>() / (n_batches - 1) as f64;
    Ok((var / n_batches as f64).sqrt())
}

/// Split-chain potential scale reduction factor.
pub fn split_rhat(chains: &[Vec<f64>]) -> Result<f64> {
    let n = chains.iter().map(Vec::len).min().unwrap_or(0) / 2;
    if chains.is_empty() || n < 2 {
        return Err(QarError::Dimension("split R-hat needs chains of length >= 4".into()));
    }
    let halves: Vec<&[f64]> = chains
        .iter()
        .flat_map(|c| [&c[..n], &c[n..2 * n]])
        .collect();
    let m = halves.len() as f64;
    let nf = n as f64;
    let means: Vec<f64> = halves.iter().map(|h| h.iter().sum::<f64>() / nf).collect();
    let grand = means.iter().sum::<f64>() / m;
    let between = nf / (m - 1.0) * means.iter().map(|v| (v - grand).powi(2)).sum::<f64>();
    let within = halves
        .iter()
        .zip(&means)
        .map(|(h, mu)| h.iter().map(|v| (v - mu).powi(2)).sum::<f64>() / (nf - 1.0))
        .sum::<f64>()
        / m;
    if within == 0.0 {
        return Ok(if between == 0.0 { 1.0 } else { f64::INFINITY });
    }
    let var_plus = (nf - 1.0) / nf * within + between / nf;
    Ok((var_plus / within).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;

    struct StdNormal(usize);

    impl LogDensity for StdNormal {
        fn dim(&self) -> usize {
            self.0
        }
        fn log_density(&self, z: &[f64]) -> f64 {
            -0.5 * z.iter().map(|v| v * v).sum::<f64>()
        }
    }

    fn series() -> Vec<f64> {
        vec![0.31, 0.52, 0.44, 0.61, 0.58, 0.37, 0.49, 0.66, 0.41, 0.55]
    }

    #[test]
    fn qar1k1_log_posterior_at_origin() {
        let fam = QarFamily::new(series(), 1, CurveSpec::Free { k: 1 }, None).unwrap();
        // a = b = 1 in an identity curve, so only the two normal log-densities remain
        let lp = log_posterior(&fam, &[0.0; 4]);
        let expect = 4.0 * -(3.0f64.ln() + LN_SQRT_2PI);
        assert!((lp - expect).abs() < 1e-12);
        // per curve, 2 ln(3 sqrt(2 pi)) = 4.035102
        assert!((expect / 2.0 + 4.035_102).abs() < 1e-6);
    }

    #[test]
    fn midpoint_transforms() {
        let lam = Transform::Logit { lo: 0.0, hi: 0.5 };
        assert_eq!(lam.inverse(0.0).0, 0.25);
        let rho = Transform::Logit { lo: -1.0, hi: 1.0 };
        assert_eq!(rho.inverse(0.0).0, 0.0);
        for &x in &[-0.9, -0.2, 0.0, 0.3, 0.95] {
            let z = rho.forward(x).unwrap();
            assert!((rho.inverse(z).0 - x).abs() < 1e-14);
        }
        assert!(rho.forward(1.0).is_err());
    }

    #[test]
    fn logit_jacobian_matches_finite_difference() {
        let t = Transform::Logit { lo: -1.0, hi: 1.0 };
        for &z in &[-3.0, -0.5, 0.0, 1.2, 4.0] {
            let h = 1e-6;
            let fd = (t.inverse(z + h).0 - t.inverse(z - h).0) / (2.0 * h);
            assert!((t.inverse(z).1 - fd.ln()).abs() < 1e-7);
        }
    }

    #[test]
    fn simplex_round_trip_and_jacobian() {
        let mut spec = ParamSpec::new();
        spec.simplex(vec!["w1".into(), "w2".into(), "w3".into()]);
        let w = [0.2, 0.5, 0.3];
        let z = spec.to_unconstrained(&w).unwrap();
        let (back, lj) = spec.to_constrained(&z);
        for (a, b) in w.iter().zip(&back) {
            assert!((a - b).abs() < 1e-14);
        }
        assert!((lj - w.iter().map(|v| v.ln()).sum::<f64>()).abs() < 1e-12);
        assert!((spec.log_prior(&w) - 2f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn two_point_simplex_equals_uniform_logit() {
        let mut s = ParamSpec::new();
        s.simplex(vec!["pi1".into(), "pi2".into()]);
        let t = Transform::Logit { lo: 0.0, hi: 1.0 };
        for &z in &[-2.0, 0.0, 0.7] {
            let (theta, lj) = s.to_constrained(&[z]);
            let (x, lj2) = t.inverse(z);
            assert!((theta[0] - x).abs() < 1e-15);
            assert!((lj - lj2).abs() < 1e-12);
        }
    }

    #[test]
    fn chain_config_validation() {
        let mut c = ChainConfig::default();
        assert!(c.validate().is_ok());
        assert_eq!(c.retained(), 2000);
        c.burn_in = c.iterations;
        assert!(c.validate().is_err());
        let c = ChainConfig {
            thin: 0,
            ..Default::default()
        };
        assert!(c.validate().is_err());
    }

    #[test]
    fn deterministic_given_seed() {
        let cfg = ChainConfig {
            iterations: 3000,
            burn_in: 1000,
            thin: 2,
            seed: 42,
            ..Default::default()
        };
        let a = sample_target(&StdNormal(2), &[0.0, 0.0], &cfg, None).unwrap();
        let b = sample_target(&StdNormal(2), &[0.0, 0.0], &cfg, None).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.samples.len(), 1000);
        let c = sample_target(
            &StdNormal(2),
            &[0.0, 0.0],
            &ChainConfig { seed: 43, ..cfg },
            None,
        )
        .unwrap();
        assert_ne!(a.samples, c.samples);
    }

    #[test]
    fn proposal_covariance_stays_nondegenerate() {
        let cfg = ChainConfig {
            adapt_start: 10,
            ..Default::default()
        };
        let mut p = AdaptiveProposal::new(3, &cfg);
        for _ in 0..50 {
            p.observe(&[1.0, 2.0, 3.0]);
        }
        let c = p.covariance();
        let floor = cfg.adapt_eps * ADAPT_SCALE / 3.0;
        for i in 0..3 {
            assert!((c[i * 3 + i] - floor).abs() < 1e-18);
        }
    }

    #[test]
    fn blocks_must_partition() {
        let cfg = ChainConfig {
            iterations: 10,
            burn_in: 0,
            ..Default::default()
        };
        let t = StdNormal(3);
        assert!(sample_target(&t, &[0.0; 3], &cfg, Some(&[vec![0, 1]])).is_err());
        assert!(sample_target(&t, &[0.0; 3], &cfg, Some(&[vec![0, 1], vec![1, 2]])).is_err());
        assert!(sample_target(&t, &[0.0; 3], &cfg, Some(&[vec![0, 2], vec![1]])).is_ok());
    }

    #[test]
    fn low_acceptance_warns() {
        struct Spike;
        impl LogDensity for Spike {
            fn dim(&self) -> usize {
                1
            }
            fn log_density(&self, z: &[f64]) -> f64 {
                if z[0] == 0.0 {
                    0.0
                } else {
                    f64::NEG_INFINITY
                }
            }
        }
        let cfg = ChainConfig {
            iterations: 2000,
            burn_in: 0,
            thin: 1,
            ..Default::default()
        };
        let run = sample_target(&Spike, &[0.0], &cfg, None).unwrap();
        assert_eq!(run.acceptance_rate, 0.0);
        assert_eq!(run.warnings.len(), 2);
    }

    #[test]
    fn summarize_examples() {
        let draws = PosteriorDraws {
            names: vec!["x".into(), "c".into()],
            samples: (1..=100).map(|i| vec![i as f64, 2.5]).collect(),
            acceptance_rate: 0.3,
            adapted_acceptance_rate: 0.3,
            log_posterior: vec![0.0; 100],
            warnings: vec![],
        };
        let s = summarize(&draws, &[0.9]).unwrap();
        assert!((s[0].intervals[0].lower - 5.95).abs() < 1e-12);
        assert!((s[0].intervals[0].upper - 95.05).abs() < 1e-12);
        assert!((s[0].mean - 50.5).abs() < 1e-12);
        assert_eq!(s[1].mean, 2.5);
        assert_eq!((s[1].intervals[0].lower, s[1].intervals[0].upper), (2.5, 2.5));
        let mut one = draws.clone();
        one.samples.truncate(1);
        assert!(summarize(&one, &[0.9]).is_err());
    }

    #[test]
    fn functionals_of_identity_draws() {
        let fam = QarFamily::new(series(), 1, CurveSpec::Free { k: 1 }, None).unwrap();
        let draws = PosteriorDraws {
            names: fam.param_spec().names(),
            samples: vec![vec![1.0; 4]; 3],
            acceptance_rate: 0.0,
            adapted_acceptance_rate: 0.0,
            log_posterior: vec![0.0; 3],
            warnings: vec![],
        };
        let tau = [0.1, 0.5, 0.9];
        let f = posterior_functionals(&draws, &fam, &tau, &[0.4], &[0.2, 0.7], 0.9).unwrap();
        for (a, b) in f.quantile.mean.iter().zip(&tau) {
            assert!((a - b).abs() < 1e-15);
        }
        assert!(f.theta[1].mean.iter().all(|v| *v == 0.0));
        assert!(f.density.mean.iter().all(|v| (v - 1.0).abs() < 1e-12));
        assert_eq!((f.used, f.skipped), (3, 0));
    }

    #[test]
    fn functionals_symmetric_slopes_cancel() {
        let fam = QarFamily::new(series(), 1, CurveSpec::Free { k: 1 }, None).unwrap();
        // swapping eta1 and eta2 negates theta_1
        let d1 = vec![2.0, 3.0, 0.7, 1.4];
        let d2 = vec![0.7, 1.4, 2.0, 3.0];
        let draws = PosteriorDraws {
            names: fam.param_spec().names(),
            samples: vec![d1.clone(), d2],
            acceptance_rate: 0.0,
            adapted_acceptance_rate: 0.0,
            log_posterior: vec![0.0; 2],
            warnings: vec![],
        };
        let tau = [0.2, 0.5, 0.8];
        let f = posterior_functionals(&draws, &fam, &tau, &[0.5], &[], 0.9).unwrap();
        assert!(f.theta[1].mean.iter().all(|v| v.abs() < 1e-15));

        let single = PosteriorDraws {
            samples: vec![d1.clone()],
            ..draws
        };
        let f = posterior_functionals(&single, &fam, &tau, &[0.5], &[], 0.9).unwrap();
        let m = fam.decode(&d1).unwrap();
        let th = m.theta_curves(&tau);
        assert_eq!(f.theta[1].mean, th[1]);
    }

    #[test]
    fn layout_widths() {
        assert_eq!(CurveSpec::Free { k: 1 }.width(), 2);
        assert_eq!(CurveSpec::Free { k: 2 }.width(), 5);
        assert_eq!(CurveSpec::Free { k: 3 }.width(), 9);
        assert_eq!(CurveSpec::Basis { k: 6, shape: 2.0 }.width(), 6);
        for c in [
            CurveSpec::Free { k: 1 },
            CurveSpec::Free { k: 2 },
            CurveSpec::Free { k: 3 },
            CurveSpec::Basis { k: 4, shape: 2.0 },
        ] {
            let mut s = ParamSpec::new();
            c.push_params(&mut s, "eta", 1.5);
            assert_eq!(s.constrained_dim(), c.width());
            let (theta, _) = s.to_constrained(&vec![0.3; s.unconstrained_dim()]);
            assert!(c.decode(&theta).is_ok());
        }
        let f = QarFamily::new(series(), 3, CurveSpec::Free { k: 2 }, None).unwrap();
        assert_eq!(f.param_spec().constrained_dim(), 4 * 5 + 3);
        assert_eq!(f.priors().sigma_ab, 1.5);
    }

    #[test]
    fn kx2006_family_starts_finite() {
        let raw = vec![20.0, 22.5, 21.0, 25.0, 24.1, 23.3, 26.0, 22.2];
        let fam = Kx2006Family::new(raw.clone(), Kx2006Priors::default()).unwrap();
        assert!(log_posterior(&fam, &fam.initial_point()).is_finite());
        let mut neg = raw;
        neg[2] = -1.0;
        assert!(Kx2006Family::new(neg, Kx2006Priors::default()).is_err());
    }

    #[test]
    fn mcse_and_rhat() {
        let x: Vec<f64> = (0..1000).map(|i| if i % 2 == 0 { 1.0 } else { -1.0 }).collect();
        assert!(batch_means_mcse(&x, 20).unwrap() < 1e-12);
        let same = vec![x.clone(), x.clone()];
        assert!((split_rhat(&same).unwrap() - 1.0).abs() < 0.01);
        let shifted = vec![x.clone(), x.iter().map(|v| v + 10.0).collect()];
        assert!(split_rhat(&shifted).unwrap() > 2.0);
    }
}
