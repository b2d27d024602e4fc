//! Forward simulation and the coverage-study harness.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Open01, StandardNormal};
use rayon::prelude::*;
use serde::Serialize;

use crate::assess::TauGrid;
use crate::dist::{normal_cdf, KumaraswamyParams, MonotoneCurve};
use crate::error::{QarError, Result};
use crate::linalg::Cholesky;
use crate::mcmc::{posterior_functionals, run_chain, Band, ChainConfig, CurveSpec, ProcessFamily, QarFamily};
use crate::mqar::BivariateQarModel;
use crate::qar::QarModel;
use crate::spatial::{copula_correlation, exp_corr_matrix, GpHyper, SpatialQarModel, StationSet};

pub const DEFAULT_WARMUP: usize = 100;
pub const INITIAL_LAG: f64 = 0.5;
pub const SCENARIO_NAMES: [&str; 7] = ["SC1", "SC2", "SC3", "SC4", "SC5", "SC6", "SC7"];

/// Largest double below one.
const ONE_BELOW: f64 = 1.0 - f64::EPSILON / 2.0;

/// Keep simulated values inside the open unit interval after rounding.
#[inline]
fn interior(y: f64) -> f64 {
    y.clamp(f64::MIN_POSITIVE, ONE_BELOW)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Scenario {
    pub name: String,
    /// Components per curve.
    pub k: usize,
    pub eta1: MonotoneCurve,
    pub eta2: MonotoneCurve,
}

impl Scenario {
    pub fn model(&self) -> QarModel {
        QarModel::qar1(self.eta1.clone(), self.eta2.clone())
    }

    pub fn curve_spec(&self) -> CurveSpec {
        CurveSpec::Free { k: self.k }
    }

    /// True `(theta_0, theta_1)` on a grid.
    pub fn theta(&self, tau: &[f64]) -> [Vec<f64>; 2] {
        let mut th = self.model().theta_curves(tau);
        let t1 = th.pop().expect("theta_1");
        let t0 = th.pop().expect("theta_0");
        [t0, t1]
    }
}

fn k1(a: f64, b: f64) -> MonotoneCurve {
    MonotoneCurve::single(KumaraswamyParams::new(a, b).expect("catalog parameters"))
}

fn k2(a1: f64, b1: f64, a2: f64, b2: f64, lambda: f64) -> MonotoneCurve {
    MonotoneCurve::new(
        vec![
            KumaraswamyParams::new(a1, b1).expect("catalog parameters"),
            KumaraswamyParams::new(a2, b2).expect("catalog parameters"),
        ],
        vec![lambda, 1.0 - lambda],
    )
    .expect("catalog weights")
}

/// The simulation scenarios. K = 1 entries list `(a1, b1, a2, b2)`; K = 2
/// entries list both components of `eta_1`, both of `eta_2`, then the
/// first-component weights `lambda_1`, `lambda_2`.
pub fn scenario_catalog(name: &str) -> Result<Scenario> {
    let (k, eta1, eta2) = match name.to_ascii_uppercase().as_str() {
        "SC1" => (1, k1(0.5, 2.0), k1(0.5, 2.0)),
        "SC2" => (1, k1(4.0, 4.0), k1(1.0, 2.0)),
        "SC3" => (1, k1(0.5, 2.0), k1(2.0, 1.0)),
        "SC4" => (1, k1(0.3, 6.0), k1(12.0, 8.0)),
        "SC5" => (2, k2(0.5, 2.0, 4.0, 8.0, 0.3), k2(0.5, 2.0, 4.0, 8.0, 0.3)),
        "SC6" => (2, k2(0.5, 2.0, 0.3, 6.0, 0.4), k2(1.0, 1.0, 12.0, 8.0, 0.1)),
        "SC7" => (2, k2(3.0, 0.5, 2.0, 1.0, 0.2), k2(1.0, 2.0, 0.5, 1.0, 0.4)),
        _ => {
            return Err(QarError::Config(format!(
                "unknown scenario `{name}`; expected one of {}",
                SCENARIO_NAMES.join(", ")
            )))
        }
    };
    Ok(Scenario {
        name: name.to_ascii_uppercase(),
        k,
        eta1,
        eta2,
    })
}

/// `y_t = Q(u_t | y_{t-1}, ..., y_{t-p})` with `u_t ~ U(0, 1)`, starting from
/// lags of 0.5 and discarding `warmup` steps.
pub fn simulate_qar(model: &QarModel, t: usize, warmup: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let p = model.order();
    let mut lags = vec![INITIAL_LAG; p];
    let mut out = Vec::with_capacity(t);
    for step in 0..warmup + t {
        let u: f64 = rng.sample(Open01);
        let y = interior(model.quantile_unchecked(u, &lags));
        lags.rotate_right(1);
        lags[0] = y;
        if step >= warmup {
            out.push(y);
        }
    }
    out
}

/// Two QAR(1) series whose quantile levels follow a Gaussian copula with correlation `rho`.
pub fn simulate_bivariate(m: &BivariateQarModel, t: usize, warmup: usize, seed: u64) -> (Vec<f64>, Vec<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rho = m.rho();
    let s = (1.0 - rho * rho).sqrt();
    let (mut prev_max, mut prev_min) = (INITIAL_LAG, INITIAL_LAG);
    let mut y_max = Vec::with_capacity(t);
    let mut y_min = Vec::with_capacity(t);
    for step in 0..warmup + t {
        let z1: f64 = rng.sample(StandardNormal);
        let z2: f64 = rng.sample(StandardNormal);
        let u1 = interior(normal_cdf(z1));
        let u2 = interior(normal_cdf(rho * z1 + s * z2));
        prev_max = interior(m.model_max().quantile_unchecked(u1, &[prev_max]));
        prev_min = interior(m.model_min().quantile_unchecked(u2, &[prev_min]));
        if step >= warmup {
            y_max.push(prev_max);
            y_min.push(prev_min);
        }
    }
    (y_max, y_min)
}

/// Spatial panel `data[t][i]` at the model's `gamma`.
pub fn simulate_spatial(
    m: &SpatialQarModel,
    stations: &StationSet,
    t: usize,
    warmup: usize,
    seed: u64,
) -> Result<Vec<Vec<f64>>> {
    simulate_spatial_with_gamma(m, stations, m.gamma(), t, warmup, seed)
}

/// As [`simulate_spatial`] with any `gamma` in `[0, 1]`, including the
/// independent (`0`) and purely spatial (`1`) limits.
pub fn simulate_spatial_with_gamma(
    m: &SpatialQarModel,
    stations: &StationSet,
    gamma: f64,
    t: usize,
    warmup: usize,
    seed: u64,
) -> Result<Vec<Vec<f64>>> {
    let n = stations.len();
    if m.sites() != n {
        return Err(QarError::Dimension(format!(
            "model has {} sites, station set has {n}",
            m.sites()
        )));
    }
    if !(0.0..=1.0).contains(&gamma) {
        return Err(QarError::Domain(format!("gamma = {gamma} is outside [0, 1]")));
    }
    let r = copula_correlation(stations, gamma, m.copula_decay());
    let chol = Cholesky::new_semidefinite(&r, n, 1e-14)?;
    let models = (0..n).map(|i| m.site_model(i)).collect::<Result<Vec<_>>>()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut prev = vec![INITIAL_LAG; n];
    let mut out = Vec::with_capacity(t);
    for step in 0..warmup + t {
        let e: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
        let z = chol.mul_lower(&e);
        for i in 0..n {
            let u = interior(normal_cdf(z[i]));
            prev[i] = interior(models[i].quantile_unchecked(u, &[prev[i]]));
        }
        if step >= warmup {
            out.push(prev.clone());
        }
    }
    Ok(out)
}

/// Draw the four latent log-shape fields from their GP priors.
pub fn sample_spatial_fields(stations: &StationSet, hypers: &[GpHyper; 4], seed: u64) -> Result<[Vec<f64>; 4]> {
    let n = stations.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out: [Vec<f64>; 4] = Default::default();
    for (f, h) in hypers.iter().enumerate() {
        let chol = Cholesky::new(&exp_corr_matrix(stations, h.decay), n)?;
        let e: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
        let sd = h.var.sqrt();
        out[f] = chol.mul_lower(&e).into_iter().map(|z| h.mean + sd * z).collect();
    }
    Ok(out)
}

/// Seed of the chain fitted to replicate `b`, kept apart from the data seed.
pub fn chain_seed(data_seed: u64) -> u64 {
    // splitmix64 finalizer
    let mut z = data_seed.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReplicateOutcome {
    pub index: usize,
    pub seed: u64,
    pub acceptance_rate: f64,
    /// Posterior means of `theta_0` and `theta_1` on the grid.
    pub theta_mean: [Vec<f64>; 2],
    /// Per-tau coverage indicators for `theta_0` and `theta_1`.
    pub covered: [Vec<bool>; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CoverageResult {
    pub scenario: String,
    pub b: usize,
    pub t: usize,
    pub level: f64,
    pub tau: Vec<f64>,
    pub cvg_theta0: Vec<f64>,
    pub cvg_theta1: Vec<f64>,
    pub mean_cvg_theta0: f64,
    pub mean_cvg_theta1: f64,
    pub failures: usize,
    pub failure_messages: Vec<String>,
    pub replicates: Vec<ReplicateOutcome>,
}

/// Pointwise indicator `lower <= truth <= upper`.
pub fn band_covers(band: &Band, truth: &[f64]) -> Vec<bool> {
    band.lower
        .iter()
        .zip(&band.upper)
        .zip(truth)
        .map(|((lo, hi), v)| lo <= v && v <= hi)
        .collect()
}

/// Fraction of replicates covering the truth at each grid point.
pub fn coverage_fraction(indicators: &[&[bool]]) -> Vec<f64> {
    if indicators.is_empty() {
        return Vec::new();
    }
    let n = indicators.len() as f64;
    (0..indicators[0].len())
        .map(|k| indicators.iter().filter(|c| c[k]).count() as f64 / n)
        .collect()
}

fn mean(v: &[f64]) -> f64 {
    if v.is_empty() {
        f64::NAN
    } else {
        v.iter().sum::<f64>() / v.len() as f64
    }
}

#[derive(Debug, Clone)]
pub struct CoverageConfig {
    pub b: usize,
    pub t: usize,
    pub level: f64,
    pub grid: TauGrid,
    pub chain: ChainConfig,
    pub warmup: usize,
    /// Replicate `b` simulates with seed `base_seed + b`.
    pub base_seed: u64,
}

fn run_replicate(sc: &Scenario, cfg: &CoverageConfig, index: usize) -> Result<ReplicateOutcome> {
    let seed = cfg.base_seed.wrapping_add(index as u64);
    let y = simulate_qar(&sc.model(), cfg.t, cfg.warmup, seed);
    let fam = QarFamily::new(y, 1, sc.curve_spec(), None)?;
    let chain = ChainConfig {
        seed: chain_seed(seed),
        ..cfg.chain
    };
    let draws = run_chain(&fam, &chain)?;
    let tau = cfg.grid.values();
    let f = posterior_functionals(&draws, &fam, tau, &[INITIAL_LAG], &[], cfg.level)?;
    let truth = sc.theta(tau);
    Ok(ReplicateOutcome {
        index,
        seed,
        acceptance_rate: draws.acceptance_rate,
        theta_mean: [f.theta[0].mean.clone(), f.theta[1].mean.clone()],
        covered: [band_covers(&f.theta[0], &truth[0]), band_covers(&f.theta[1], &truth[1])],
    })
}

/// Simulate, refit with the matching model and record credible-interval
/// coverage of the true `theta_0(tau)` and `theta_1(tau)`.
pub fn coverage_study(sc: &Scenario, cfg: &CoverageConfig) -> Result<CoverageResult> {
    if cfg.b == 0 {
        return Err(QarError::Config("coverage study needs at least one replicate".into()));
    }
    if !(cfg.level > 0.0 && cfg.level < 1.0) {
        return Err(QarError::Config(format!("level {} is not in (0, 1)", cfg.level)));
    }
    cfg.chain.validate()?;
    let results: Vec<Result<ReplicateOutcome>> = (0..cfg.b)
        .into_par_iter()
        .map(|i| run_replicate(sc, cfg, i))
        .collect();
    let mut replicates = Vec::new();
    let mut failure_messages = Vec::new();
    for (i, r) in results.into_iter().enumerate() {
        match r {
            Ok(o) => replicates.push(o),
            Err(e) => {
                log::warn!("replicate {i} failed: {e}");
                failure_messages.push(format!("replicate {i}: {e}"));
            }
        }
    }
    let c0: Vec<&[bool]> = replicates.iter().map(|r| r.covered[0].as_slice()).collect();
    let c1: Vec<&[bool]> = replicates.iter().map(|r| r.covered[1].as_slice()).collect();
    let cvg_theta0 = coverage_fraction(&c0);
    let cvg_theta1 = coverage_fraction(&c1);
    Ok(CoverageResult {
        scenario: sc.name.clone(),
        b: cfg.b,
        t: cfg.t,
        level: cfg.level,
        tau: cfg.grid.values().to_vec(),
        mean_cvg_theta0: mean(&cvg_theta0),
        mean_cvg_theta1: mean(&cvg_theta1),
        cvg_theta0,
        cvg_theta1,
        failures: failure_messages.len(),
        failure_messages,
        replicates,
    })
}

/// Posterior `theta_j(tau)` bands of one fit, conditioned on `lags`.
pub fn theta_bands<F: ProcessFamily>(
    draws: &crate::mcmc::PosteriorDraws,
    family: &F,
    grid: &TauGrid,
    lags: &[f64],
    level: f64,
) -> Result<Vec<Band>> {
    Ok(posterior_functionals(draws, family, grid.values(), lags, &[], level)?.theta)
}
