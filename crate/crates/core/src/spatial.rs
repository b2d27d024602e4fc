//! Spatial QAR(1): site-wise Kumaraswamy curves driven by latent Gaussian
//! process fields, quantile levels coupled across sites by a Gaussian copula,
//! and kriging of the fields to unobserved locations.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dist::{normal_quantile, KumaraswamyParams, MonotoneCurve, LN_SQRT_2PI};
use crate::error::{QarError, Result};
use crate::linalg::Cholesky;
use crate::mcmc::{ModelFamily, ParamSpec, PosteriorDraws, Prior, Transform};
use crate::mqar::GaussianCopula;
use crate::qar::QarModel;

/// Field order: `log a_1, log b_1, log a_2, log b_2`.
pub const FIELD_NAMES: [&str; 4] = ["log_a1", "log_b1", "log_a2", "log_b2"];

/// Pivot tolerance (correlation units) for conditional kriging covariances.
const KRIGE_PIVOT_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StationSet {
    ids: Vec<String>,
    coords: Vec<(f64, f64)>,
    dist: Vec<f64>,
}

#[inline]
fn euclid(a: (f64, f64), b: (f64, f64)) -> f64 {
    (a.0 - b.0).hypot(a.1 - b.1)
}

impl StationSet {
    pub fn new(ids: Vec<String>, coords: Vec<(f64, f64)>) -> Result<Self> {
        let n = coords.len();
        if n == 0 {
            return Err(QarError::Domain("station set is empty".into()));
        }
        if ids.len() != n {
            return Err(QarError::Dimension(format!("{} ids for {n} coordinates", ids.len())));
        }
        if let Some(c) = coords.iter().find(|c| !(c.0.is_finite() && c.1.is_finite())) {
            return Err(QarError::Domain(format!("non-finite coordinate {c:?}")));
        }
        let mut dist = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..i {
                let d = euclid(coords[i], coords[j]);
                if d == 0.0 {
                    return Err(QarError::Domain(format!(
                        "stations {} and {} share coordinates {:?}",
                        ids[j], ids[i], coords[i]
                    )));
                }
                dist[i * n + j] = d;
                dist[j * n + i] = d;
            }
        }
        Ok(Self { ids, coords, dist })
    }

    /// Stations named `s1..sn`.
    pub fn from_coords(coords: Vec<(f64, f64)>) -> Result<Self> {
        let ids = (1..=coords.len()).map(|i| format!("s{i}")).collect();
        Self::new(ids, coords)
    }

    pub fn len(&self) -> usize {
        self.coords.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn coords(&self) -> &[(f64, f64)] {
        &self.coords
    }

    pub fn distance(&self, i: usize, j: usize) -> f64 {
        self.dist[i * self.len() + j]
    }

    pub fn max_distance(&self) -> f64 {
        self.dist.iter().copied().fold(0.0, f64::max)
    }

    /// Reorder stations; `order[k]` is the old index of new station `k`.
    pub fn permuted(&self, order: &[usize]) -> Result<Self> {
        Self::new(
            order.iter().map(|&i| self.ids[i].clone()).collect(),
            order.iter().map(|&i| self.coords[i]).collect(),
        )
    }
}

/// `R_ij = exp(-phi d_ij)`.
pub fn exp_corr_matrix(stations: &StationSet, phi: f64) -> Vec<f64> {
    let n = stations.len();
    let mut r = vec![0.0; n * n];
    for i in 0..n {
        r[i * n + i] = 1.0;
        for j in 0..i {
            let v = (-phi * stations.distance(i, j)).exp();
            r[i * n + j] = v;
            r[j * n + i] = v;
        }
    }
    r
}

/// The decay `3 / d_max`, at which correlation falls to `e^-3` over the network diameter.
pub fn phi_from_dmax(stations: &StationSet) -> Result<f64> {
    if stations.len() < 2 {
        return Err(QarError::Domain("decay from d_max needs at least two stations".into()));
    }
    Ok(3.0 / stations.max_distance())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GpHyper {
    pub mean: f64,
    pub var: f64,
    pub decay: f64,
}

impl GpHyper {
    pub fn new(mean: f64, var: f64, decay: f64) -> Result<Self> {
        if !mean.is_finite() {
            return Err(QarError::InvalidParameter {
                name: "mean",
                value: mean,
                reason: "must be finite",
            });
        }
        if !(var > 0.0 && var.is_finite()) {
            return Err(QarError::InvalidParameter {
                name: "var",
                value: var,
                reason: "must be positive",
            });
        }
        if !(decay > 0.0 && decay.is_finite()) {
            return Err(QarError::InvalidParameter {
                name: "decay",
                value: decay,
                reason: "must be positive",
            });
        }
        Ok(Self { mean, var, decay })
    }
}

/// `N(mean 1, var R)` log-density of `field` given a factored `R`.
pub fn gp_field_logprior_factored(field: &[f64], h: &GpHyper, chol: &Cholesky) -> Result<f64> {
    let n = field.len();
    if chol.dim() != n {
        return Err(QarError::Dimension(format!(
            "field of length {n} with a {}x{} correlation",
            chol.dim(),
            chol.dim()
        )));
    }
    let resid: Vec<f64> = field.iter().map(|v| v - h.mean).collect();
    let quad = chol.quad_form(&resid) / h.var;
    let nf = n as f64;
    Ok(-nf * LN_SQRT_2PI - 0.5 * nf * h.var.ln() - 0.5 * chol.ln_det() - 0.5 * quad)
}

pub fn gp_field_logprior(field: &[f64], h: &GpHyper, r: &[f64]) -> Result<f64> {
    let chol = Cholesky::new(r, field.len())?;
    gp_field_logprior_factored(field, h, &chol)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpatialQarModel {
    /// `fields[f][i]` is field `f` (see [`FIELD_NAMES`]) at site `i`.
    fields: [Vec<f64>; 4],
    hypers: [GpHyper; 4],
    gamma: f64,
    copula_decay: f64,
}

impl SpatialQarModel {
    pub fn new(fields: [Vec<f64>; 4], hypers: [GpHyper; 4], gamma: f64, copula_decay: f64) -> Result<Self> {
        let n = fields[0].len();
        if n == 0 || fields.iter().any(|f| f.len() != n) {
            return Err(QarError::Dimension("latent fields must share a nonzero length".into()));
        }
        if fields.iter().flatten().any(|v| !v.is_finite()) {
            return Err(QarError::Domain("latent fields must be finite".into()));
        }
        if !(gamma > 0.0 && gamma < 1.0) {
            return Err(QarError::InvalidParameter {
                name: "gamma",
                value: gamma,
                reason: "must lie in (0, 1)",
            });
        }
        if !(copula_decay > 0.0 && copula_decay.is_finite()) {
            return Err(QarError::InvalidParameter {
                name: "copula_decay",
                value: copula_decay,
                reason: "must be positive",
            });
        }
        Ok(Self {
            fields,
            hypers,
            gamma,
            copula_decay,
        })
    }

    pub fn sites(&self) -> usize {
        self.fields[0].len()
    }

    pub fn fields(&self) -> &[Vec<f64>; 4] {
        &self.fields
    }

    pub fn hypers(&self) -> &[GpHyper; 4] {
        &self.hypers
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn copula_decay(&self) -> f64 {
        self.copula_decay
    }

    /// The QAR(1) model at site `i`.
    pub fn site_model(&self, i: usize) -> Result<QarModel> {
        site_model_from(
            self.fields[0][i],
            self.fields[1][i],
            self.fields[2][i],
            self.fields[3][i],
        )
    }

    /// Copula correlation `gamma R(phi) + (1 - gamma) I`, with an exact unit diagonal.
    pub fn copula_correlation(&self, stations: &StationSet) -> Vec<f64> {
        copula_correlation(stations, self.gamma, self.copula_decay)
    }
}

pub fn copula_correlation(stations: &StationSet, gamma: f64, decay: f64) -> Vec<f64> {
    let n = stations.len();
    let mut r = exp_corr_matrix(stations, decay);
    for i in 0..n {
        for j in 0..n {
            r[i * n + j] = if i == j { 1.0 } else { gamma * r[i * n + j] };
        }
    }
    r
}

fn site_model_from(la1: f64, lb1: f64, la2: f64, lb2: f64) -> Result<QarModel> {
    let c1 = MonotoneCurve::single(KumaraswamyParams::new(la1.exp(), lb1.exp())?);
    let c2 = MonotoneCurve::single(KumaraswamyParams::new(la2.exp(), lb2.exp())?);
    Ok(QarModel::qar1(c1, c2))
}

fn check_panel(data: &[Vec<f64>], n: usize) -> Result<()> {
    if data.len() < 2 {
        return Err(QarError::Dimension(format!(
            "spatial likelihood needs T >= 2, got {}",
            data.len()
        )));
    }
    if let Some(t) = data.iter().position(|row| row.len() != n) {
        return Err(QarError::Dimension(format!(
            "row {t} has {} values for {n} stations",
            data[t].len()
        )));
    }
    Ok(())
}

fn site_error(e: QarError, t: usize, i: usize) -> QarError {
    match e {
        QarError::Numeric { reason, .. } => QarError::Numeric {
            t,
            site: Some(i),
            reason,
        },
        other => QarError::Numeric {
            t,
            site: Some(i),
            reason: other.to_string(),
        },
    }
}

fn panel_log_likelihood(
    models: &[QarModel],
    copula: Option<&GaussianCopula>,
    data: &[Vec<f64>],
) -> Result<f64> {
    let n = models.len();
    let term = |t: usize| -> Result<f64> {
        let mut marginal = 0.0;
        let mut q = Vec::with_capacity(if copula.is_some() { n } else { 0 });
        for (i, m) in models.iter().enumerate() {
            let prev = data[t - 1][i];
            if !(0.0..=1.0).contains(&prev) {
                return Err(QarError::Numeric {
                    t,
                    site: Some(i),
                    reason: format!("lag value {prev} is outside [0, 1]"),
                });
            }
            let (u, ll) = m.step(data[t][i], &[prev], t).map_err(|e| site_error(e, t, i))?;
            marginal += ll;
            if copula.is_some() {
                q.push(normal_quantile(u).map_err(|e| site_error(e, t, i))?);
            }
        }
        match copula {
            Some(c) => {
                let lc = c.log_density_scores(&q);
                if !lc.is_finite() {
                    return Err(QarError::Numeric {
                        t,
                        site: None,
                        reason: format!("copula term {lc}"),
                    });
                }
                Ok(marginal + lc)
            }
            None => Ok(marginal),
        }
    };
    let terms: Vec<f64> = (1..data.len())
        .into_par_iter()
        .map(term)
        .collect::<Result<Vec<_>>>()?;
    let mut total = 0.0;
    for v in terms {
        total += v;
    }
    Ok(total)
}

/// Joint log-likelihood of a `T x n` unit-interval panel (`data[t][i]`), conditional on the first row.
pub fn spatial_log_likelihood(m: &SpatialQarModel, data: &[Vec<f64>], stations: &StationSet) -> Result<f64> {
    let n = stations.len();
    if m.sites() != n {
        return Err(QarError::Dimension(format!(
            "model has {} sites, station set has {n}",
            m.sites()
        )));
    }
    check_panel(data, n)?;
    let models = (0..n).map(|i| m.site_model(i)).collect::<Result<Vec<_>>>()?;
    if n == 1 {
        return panel_log_likelihood(&models, None, data);
    }
    let copula = GaussianCopula::new(&m.copula_correlation(stations), n)?;
    panel_log_likelihood(&models, Some(&copula), data)
}

/// Sum of independent site-wise QAR(1) log-likelihoods.
pub fn independent_sites_log_likelihood(m: &SpatialQarModel, data: &[Vec<f64>]) -> Result<f64> {
    let n = m.sites();
    check_panel(data, n)?;
    let mut total = 0.0;
    for i in 0..n {
        let col: Vec<f64> = data.iter().map(|r| r[i]).collect();
        total += m.site_model(i)?.log_likelihood(&col)?;
    }
    Ok(total)
}

/// Conditional normal of one field at new sites.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct KrigedField {
    pub mean: Vec<f64>,
    /// Row-major `m x m` covariance.
    pub cov: Vec<f64>,
    pub sample: Vec<f64>,
}

fn corr_value(d: f64, phi: f64) -> f64 {
    (-phi * d).exp()
}

/// Conditional mean and covariance of a GP at `new_sites` given its values at `stations`.
pub fn krige_field_moments(
    field: &[f64],
    h: &GpHyper,
    stations: &StationSet,
    new_sites: &[(f64, f64)],
) -> Result<(Vec<f64>, Vec<f64>)> {
    let n = stations.len();
    if field.len() != n {
        return Err(QarError::Dimension(format!("field of length {} for {n} stations", field.len())));
    }
    if let Some(c) = new_sites.iter().find(|c| !(c.0.is_finite() && c.1.is_finite())) {
        return Err(QarError::Domain(format!("non-finite prediction site {c:?}")));
    }
    let m = new_sites.len();
    let chol = Cholesky::new(&exp_corr_matrix(stations, h.decay), n)?;
    let resid: Vec<f64> = field.iter().map(|v| v - h.mean).collect();
    let w = chol.forward_solve(&resid);
    // v[k] = L^{-1} r_*(k)
    let v: Vec<Vec<f64>> = new_sites
        .iter()
        .map(|&s| {
            let r_star: Vec<f64> = stations
                .coords()
                .iter()
                .map(|&c| corr_value(euclid(c, s), h.decay))
                .collect();
            chol.forward_solve(&r_star)
        })
        .collect();
    let mean = v
        .iter()
        .map(|vk| h.mean + vk.iter().zip(&w).map(|(a, b)| a * b).sum::<f64>())
        .collect();
    let mut cov = vec![0.0; m * m];
    for a in 0..m {
        for b in 0..=a {
            let r = corr_value(euclid(new_sites[a], new_sites[b]), h.decay);
            let dot: f64 = v[a].iter().zip(&v[b]).map(|(x, y)| x * y).sum();
            let c = h.var * (r - dot);
            cov[a * m + b] = c;
            cov[b * m + a] = c;
        }
    }
    Ok((mean, cov))
}

fn sample_conditional<R: Rng>(mean: &[f64], cov: &[f64], var: f64, rng: &mut R) -> Result<Vec<f64>> {
    let m = mean.len();
    let chol = Cholesky::new_semidefinite(cov, m, KRIGE_PIVOT_TOL * var)?;
    let z: Vec<f64> = (0..m).map(|_| rng.sample(StandardNormal)).collect();
    Ok(chol
        .mul_lower(&z)
        .into_iter()
        .zip(mean)
        .map(|(e, mu)| mu + e)
        .collect())
}

/// Krige all four latent fields of one draw to `new_sites`.
pub fn krige_fields<R: Rng>(
    m: &SpatialQarModel,
    stations: &StationSet,
    new_sites: &[(f64, f64)],
    rng: &mut R,
) -> Result<[KrigedField; 4]> {
    let mut out = Vec::with_capacity(4);
    for f in 0..4 {
        let h = &m.hypers[f];
        let (mean, cov) = krige_field_moments(&m.fields[f], h, stations, new_sites)?;
        let sample = sample_conditional(&mean, &cov, h.var, rng)?;
        out.push(KrigedField { mean, cov, sample });
    }
    Ok(out.try_into().expect("four fields"))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct QuantileSurface {
    pub sites: Vec<(f64, f64)>,
    pub tau: Vec<f64>,
    pub cond_y: f64,
    /// `q_mean[s][k]` is the posterior mean of `Q(tau_k | cond_y)` at site `s`.
    pub q_mean: Vec<Vec<f64>>,
    pub used: usize,
    pub skipped: usize,
}

/// Posterior mean conditional quantile surface at new sites. Each draw is
/// kriged with its own random stream derived from `seed`, so the result does
/// not depend on the thread count.
pub fn predict_quantile_surface(
    draws: &PosteriorDraws,
    family: &SqarFamily,
    new_sites: &[(f64, f64)],
    tau_list: &[f64],
    cond_y: f64,
    seed: u64,
) -> Result<QuantileSurface> {
    if !(0.0..=1.0).contains(&cond_y) {
        return Err(QarError::Domain(format!("cond_y = {cond_y} is outside [0, 1]")));
    }
    if let Some(t) = tau_list.iter().find(|t| !(0.0..=1.0).contains(*t)) {
        return Err(QarError::Domain(format!("tau = {t} is outside [0, 1]")));
    }
    let per_draw: Vec<Option<Vec<Vec<f64>>>> = draws
        .samples
        .par_iter()
        .enumerate()
        .map(|(b, theta)| {
            let model = family.decode(theta).ok()?;
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(b as u64);
            let k = krige_fields(&model, &family.stations, new_sites, &mut rng).ok()?;
            (0..new_sites.len())
                .map(|s| {
                    let qm = site_model_from(k[0].sample[s], k[1].sample[s], k[2].sample[s], k[3].sample[s])
                        .ok()?;
                    tau_list
                        .iter()
                        .map(|&tau| qm.conditional_quantile(tau, &[cond_y]).ok())
                        .collect::<Option<Vec<_>>>()
                })
                .collect::<Option<Vec<_>>>()
        })
        .collect();
    let skipped = per_draw.iter().filter(|d| d.is_none()).count();
    let ok: Vec<Vec<Vec<f64>>> = per_draw.into_iter().flatten().collect();
    if ok.is_empty() {
        return Err(QarError::Numeric {
            t: 0,
            site: None,
            reason: format!("all {skipped} draws failed during kriging"),
        });
    }
    let b = ok.len() as f64;
    let q_mean = (0..new_sites.len())
        .map(|s| {
            (0..tau_list.len())
                .map(|k| ok.iter().map(|d| d[s][k]).sum::<f64>() / b)
                .collect()
        })
        .collect();
    Ok(QuantileSurface {
        sites: new_sites.to_vec(),
        tau: tau_list.to_vec(),
        cond_y,
        q_mean,
        used: ok.len(),
        skipped,
    })
}

// ---------------------------------------------------------------------------
// posterior family

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SqarPriors {
    pub mean_sd: f64,
    pub log_var_sd: f64,
}

impl Default for SqarPriors {
    fn default() -> Self {
        Self {
            mean_sd: 3.0,
            log_var_sd: 3.0,
        }
    }
}

/// Decay settings; `None` means `3 / d_max`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SqarDecay {
    pub field: Option<f64>,
    pub copula: Option<f64>,
}

/// Posterior over latent fields, GP hyperparameters and `gamma ~ U(0, 1)`.
///
/// Unconstrained layout: the four fields (`n` values each), then
/// `(mean, log var)` for each field, then `logit gamma`.
#[derive(Debug, Clone)]
pub struct SqarFamily {
    data: Vec<Vec<f64>>,
    stations: StationSet,
    field_decay: f64,
    copula_decay: f64,
    field_chol: Cholesky,
    spec: ParamSpec,
    blocked: bool,
}

impl SqarFamily {
    pub fn new(
        data: Vec<Vec<f64>>,
        stations: StationSet,
        priors: SqarPriors,
        decay: SqarDecay,
        blocked: bool,
    ) -> Result<Self> {
        let n = stations.len();
        check_panel(&data, n)?;
        for (t, row) in data.iter().enumerate() {
            if let Some((i, v)) = row.iter().enumerate().find(|(_, v)| !(**v > 0.0 && **v < 1.0)) {
                return Err(QarError::Numeric {
                    t,
                    site: Some(i),
                    reason: format!("observation {v} is not strictly inside (0, 1)"),
                });
            }
        }
        let default_phi = if n >= 2 { Some(phi_from_dmax(&stations)?) } else { None };
        let pick = |v: Option<f64>| -> Result<f64> {
            match v.or(default_phi) {
                Some(p) if p > 0.0 && p.is_finite() => Ok(p),
                Some(p) => Err(QarError::Config(format!("decay {p} must be positive"))),
                None => Ok(1.0),
            }
        };
        let field_decay = pick(decay.field)?;
        let copula_decay = pick(decay.copula)?;
        let field_chol = Cholesky::new(&exp_corr_matrix(&stations, field_decay), n)?;

        let mut spec = ParamSpec::new();
        for f in FIELD_NAMES {
            for id in stations.ids() {
                spec.scalar(format!("{f}.{id}"), Transform::Identity, Prior::Structured);
            }
        }
        for f in FIELD_NAMES {
            spec.scalar(
                format!("mean.{f}"),
                Transform::Identity,
                Prior::Normal {
                    mean: 0.0,
                    sd: priors.mean_sd,
                },
            );
            spec.scalar(
                format!("var.{f}"),
                Transform::Log,
                Prior::LogNormal {
                    mu: 0.0,
                    sigma: priors.log_var_sd,
                },
            );
        }
        spec.scalar(
            "gamma",
            Transform::Logit { lo: 0.0, hi: 1.0 },
            Prior::Uniform { lo: 0.0, hi: 1.0 },
        );
        Ok(Self {
            data,
            stations,
            field_decay,
            copula_decay,
            field_chol,
            spec,
            blocked,
        })
    }

    pub fn stations(&self) -> &StationSet {
        &self.stations
    }

    pub fn field_decay(&self) -> f64 {
        self.field_decay
    }

    pub fn copula_decay(&self) -> f64 {
        self.copula_decay
    }

    pub fn data(&self) -> &[Vec<f64>] {
        &self.data
    }

    pub fn decode(&self, theta: &[f64]) -> Result<SpatialQarModel> {
        let n = self.stations.len();
        let fields: [Vec<f64>; 4] =
            std::array::from_fn(|f| theta[f * n..(f + 1) * n].to_vec());
        let base = 4 * n;
        let mut hypers = Vec::with_capacity(4);
        for f in 0..4 {
            hypers.push(GpHyper::new(theta[base + 2 * f], theta[base + 2 * f + 1], self.field_decay)?);
        }
        SpatialQarModel::new(
            fields,
            hypers.try_into().expect("four hypers"),
            theta[base + 8],
            self.copula_decay,
        )
    }
}

impl ModelFamily for SqarFamily {
    fn param_spec(&self) -> &ParamSpec {
        &self.spec
    }

    fn log_likelihood(&self, theta: &[f64]) -> Result<f64> {
        spatial_log_likelihood(&self.decode(theta)?, &self.data, &self.stations)
    }

    fn structured_log_prior(&self, theta: &[f64]) -> f64 {
        let n = self.stations.len();
        let base = 4 * n;
        let mut lp = 0.0;
        for f in 0..4 {
            let h = GpHyper {
                mean: theta[base + 2 * f],
                var: theta[base + 2 * f + 1],
                decay: self.field_decay,
            };
            if !(h.var > 0.0 && h.var.is_finite()) {
                return f64::NEG_INFINITY;
            }
            match gp_field_logprior_factored(&theta[f * n..(f + 1) * n], &h, &self.field_chol) {
                Ok(v) => lp += v,
                Err(_) => return f64::NEG_INFINITY,
            }
        }
        lp
    }

    fn blocks(&self) -> Option<Vec<Vec<usize>>> {
        if !self.blocked {
            return None;
        }
        let n = self.stations.len();
        Some(vec![(0..4 * n).collect(), (4 * n..4 * n + 9).collect()])
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn line(n: usize) -> StationSet {
        StationSet::from_coords((0..n).map(|i| (i as f64, 0.0)).collect()).unwrap()
    }

    fn hyper(decay: f64) -> GpHyper {
        GpHyper::new(0.0, 1.0, decay).unwrap()
    }

    fn model(fields: [Vec<f64>; 4], gamma: f64, decay: f64) -> SpatialQarModel {
        SpatialQarModel::new(fields, [hyper(decay); 4], gamma, decay).unwrap()
    }

    #[test]
    fn correlation_examples() {
        let s = StationSet::from_coords(vec![(0.0, 0.0), (6.0, 8.0)]).unwrap();
        let phi = phi_from_dmax(&s).unwrap();
        assert!((phi - 0.3).abs() < 1e-15);
        let r = exp_corr_matrix(&s, phi);
        assert_eq!(r[0], 1.0);
        assert!((r[1] - (-3.0f64).exp()).abs() < 1e-15);
        assert_eq!(exp_corr_matrix(&line(1), 2.0), vec![1.0]);
        assert!((phi_from_dmax(&line(3)).unwrap() - 1.5).abs() < 1e-15);
        assert!(phi_from_dmax(&line(1)).is_err());
        assert!(StationSet::from_coords(vec![(1.0, 2.0), (1.0, 2.0)]).is_err());
    }

    #[test]
    fn gp_prior_examples() {
        let h = GpHyper::new(0.7, 2.0, 1.0).unwrap();
        let v = gp_field_logprior(&[0.7], &h, &[1.0]).unwrap();
        assert!((v + 0.5 * (2.0 * std::f64::consts::PI * 2.0).ln()).abs() < 1e-14);

        let eye = [1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0];
        let x = [0.1, 1.5, -0.4];
        let sum: f64 = x
            .iter()
            .map(|v| -0.5 * (2.0 * std::f64::consts::PI * 2.0).ln() - (v - 0.7) * (v - 0.7) / 4.0)
            .sum();
        assert!((gp_field_logprior(&x, &h, &eye).unwrap() - sum).abs() < 1e-12);

        // var 1, corr 0.5, residuals (1, 1): quadratic form 2 / 1.5
        let h = GpHyper::new(0.0, 1.0, 1.0).unwrap();
        let v = gp_field_logprior(&[1.0, 1.0], &h, &[1.0, 0.5, 0.5, 1.0]).unwrap();
        let expect = -(2.0 * std::f64::consts::PI).ln() - 0.5 * 0.75f64.ln() - 1.0 / 1.5;
        assert!((v - expect).abs() < 1e-12);
        assert!((v + 2.360_702_9).abs() < 1e-6);
    }

    #[test]
    fn single_site_matches_univariate_exactly() {
        let f = [vec![0.3], vec![-0.2], vec![0.6], vec![0.4]];
        let m = model(f, 0.7, 1.0);
        let data: Vec<Vec<f64>> = [0.3, 0.55, 0.42, 0.8, 0.61, 0.2].iter().map(|v| vec![*v]).collect();
        let col: Vec<f64> = data.iter().map(|r| r[0]).collect();
        let uni = m.site_model(0).unwrap().log_likelihood(&col).unwrap();
        let sp = spatial_log_likelihood(&m, &data, &line(1)).unwrap();
        assert_eq!(sp.to_bits(), uni.to_bits());
    }

    #[test]
    fn identity_curves_leave_only_copula() {
        let s = line(3);
        let m = model([vec![0.0; 3], vec![0.0; 3], vec![0.0; 3], vec![0.0; 3]], 0.6, 0.8);
        let data = vec![vec![0.2, 0.5, 0.7], vec![0.3, 0.4, 0.9], vec![0.6, 0.55, 0.8]];
        let r = m.copula_correlation(&s);
        let direct: f64 = data[1..]
            .iter()
            .map(|row| crate::mqar::gaussian_copula_logdensity(row, &r).unwrap())
            .sum();
        assert!((spatial_log_likelihood(&m, &data, &s).unwrap() - direct).abs() < 1e-10);
    }

    #[test]
    fn permutation_invariance() {
        let s = StationSet::from_coords(vec![(0.0, 0.0), (1.0, 2.0), (3.0, 0.5)]).unwrap();
        let f = [vec![0.1, -0.3, 0.4], vec![0.2, 0.0, -0.1], vec![-0.5, 0.3, 0.2], vec![0.1, 0.6, -0.2]];
        let m = model(f.clone(), 0.8, 0.9);
        let data = vec![vec![0.2, 0.5, 0.7], vec![0.3, 0.4, 0.9], vec![0.6, 0.55, 0.8], vec![0.1, 0.3, 0.5]];
        let order = [2, 0, 1];
        let sp = s.permuted(&order).unwrap();
        let fp: [Vec<f64>; 4] = std::array::from_fn(|k| order.iter().map(|&i| f[k][i]).collect());
        let dp: Vec<Vec<f64>> = data.iter().map(|r| order.iter().map(|&i| r[i]).collect()).collect();
        let a = spatial_log_likelihood(&m, &data, &s).unwrap();
        let b = spatial_log_likelihood(&model(fp, 0.8, 0.9), &dp, &sp).unwrap();
        assert!((a - b).abs() < 1e-10);
    }

    #[test]
    fn errors_identify_site() {
        let s = line(2);
        let m = model([vec![0.0; 2], vec![0.0; 2], vec![0.0; 2], vec![0.0; 2]], 0.5, 1.0);
        let data = vec![vec![0.2, 0.5], vec![0.3, 1.0]];
        assert!(matches!(
            spatial_log_likelihood(&m, &data, &s),
            Err(QarError::Numeric { t: 1, site: Some(1), .. })
        ));
    }

    #[test]
    fn kriging_examples() {
        let s = StationSet::from_coords(vec![(0.0, 0.0), (2.0, 1.0), (-1.0, 3.0)]).unwrap();
        let h = GpHyper::new(0.4, 1.7, 0.6).unwrap();
        let field = [1.2, -0.3, 0.8];
        let (mean, cov) = krige_field_moments(&field, &h, &s, &[(2.0, 1.0)]).unwrap();
        assert!((mean[0] + 0.3).abs() < 1e-10);
        assert!(cov[0].abs() < 1e-10);

        let (mean, cov) = krige_field_moments(&field, &h, &s, &[(1e6, 1e6)]).unwrap();
        assert!((mean[0] - 0.4).abs() < 1e-12);
        assert!((cov[0] - 1.7).abs() < 1e-12);

        let one = StationSet::from_coords(vec![(0.0, 0.0)]).unwrap();
        let d = 1.3;
        let (mean, cov) = krige_field_moments(&[2.0], &h, &one, &[(d, 0.0)]).unwrap();
        let r = (-0.6 * d).exp();
        assert!((mean[0] - (0.4 + r * (2.0 - 0.4))).abs() < 1e-12);
        assert!((cov[0] - 1.7 * (1.0 - r * r)).abs() < 1e-12);
    }

    #[test]
    fn kriged_sample_at_observed_site_is_exact() {
        let s = StationSet::from_coords(vec![(0.0, 0.0), (2.0, 1.0)]).unwrap();
        let m = SpatialQarModel::new(
            [vec![0.1, 0.5], vec![-0.2, 0.3], vec![0.4, 0.0], vec![0.2, -0.6]],
            [GpHyper::new(0.0, 1.0, 0.5).unwrap(); 4],
            0.5,
            0.5,
        )
        .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let k = krige_fields(&m, &s, &[(2.0, 1.0), (0.0, 0.0)], &mut rng).unwrap();
        for f in 0..4 {
            assert!((k[f].sample[0] - m.fields()[f][1]).abs() < 1e-10);
            assert!((k[f].sample[1] - m.fields()[f][0]).abs() < 1e-10);
        }
    }
}
