//! Bivariate QAR(1) with quantile levels linked by a Gaussian copula.

use serde::Serialize;

use crate::dist::normal_quantile;
use crate::error::{QarError, Result};
use crate::linalg::Cholesky;
use crate::mcmc::{decode_qar, default_sigma_ab, CurveSpec, ModelFamily, ParamSpec, Prior, QarPriors, Transform};
use crate::qar::{clamp_level, QarModel};

/// Default lattice size for joint density grids.
pub const DEFAULT_GRID: usize = 101;

fn check_correlation(r: &[f64], n: usize) -> Result<()> {
    if r.len() != n * n {
        return Err(QarError::Dimension(format!(
            "correlation matrix needs {} entries, got {}",
            n * n,
            r.len()
        )));
    }
    for i in 0..n {
        if (r[i * n + i] - 1.0).abs() > 1e-12 {
            return Err(QarError::Domain(format!(
                "correlation diagonal entry {i} is {}",
                r[i * n + i]
            )));
        }
        for j in 0..i {
            if (r[i * n + j] - r[j * n + i]).abs() > 1e-12 {
                return Err(QarError::Domain(format!("correlation matrix is not symmetric at ({i}, {j})")));
            }
        }
    }
    Ok(())
}

/// Factored correlation matrix for repeated copula evaluations.
#[derive(Debug, Clone)]
pub struct GaussianCopula {
    chol: Cholesky,
    half_ln_det: f64,
}

impl GaussianCopula {
    pub fn new(r: &[f64], n: usize) -> Result<Self> {
        check_correlation(r, n)?;
        let chol = Cholesky::new(r, n)?;
        let half_ln_det = 0.5 * chol.ln_det();
        Ok(Self { chol, half_ln_det })
    }

    pub fn dim(&self) -> usize {
        self.chol.dim()
    }

    /// Log-density at normal scores `q_i = Phi^{-1}(u_i)`.
    #[inline]
    pub fn log_density_scores(&self, q: &[f64]) -> f64 {
        let w = self.chol.forward_solve(q);
        let ww: f64 = w.iter().map(|v| v * v).sum();
        let qq: f64 = q.iter().map(|v| v * v).sum();
        -self.half_ln_det - 0.5 * ww + 0.5 * qq
    }

    pub fn log_density(&self, u: &[f64]) -> Result<f64> {
        if u.len() != self.dim() {
            return Err(QarError::Dimension(format!(
                "copula of dimension {} evaluated at {} levels",
                self.dim(),
                u.len()
            )));
        }
        if let Some(v) = u.iter().find(|v| !(**v > 0.0 && **v < 1.0)) {
            return Err(QarError::Domain(format!("copula argument {v} is not inside (0, 1)")));
        }
        let q = u.iter().map(|&v| normal_quantile(v)).collect::<Result<Vec<_>>>()?;
        Ok(self.log_density_scores(&q))
    }
}

/// `log c(u | R) = -1/2 log|R| + 1/2 q^T (I - R^{-1}) q` with `q = Phi^{-1}(u)`.
pub fn gaussian_copula_logdensity(u: &[f64], r: &[f64]) -> Result<f64> {
    GaussianCopula::new(r, u.len())?.log_density(u)
}

fn bivariate_corr(rho: f64) -> [f64; 4] {
    [1.0, rho, rho, 1.0]
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BivariateQarModel {
    model_max: QarModel,
    model_min: QarModel,
    rho: f64,
}

impl BivariateQarModel {
    pub fn new(model_max: QarModel, model_min: QarModel, rho: f64) -> Result<Self> {
        if !(rho > -1.0 && rho < 1.0) {
            return Err(QarError::InvalidParameter {
                name: "rho",
                value: rho,
                reason: "must lie in (-1, 1)",
            });
        }
        if model_max.order() != 1 || model_min.order() != 1 {
            return Err(QarError::Dimension("bivariate model needs two QAR(1) marginals".into()));
        }
        Ok(Self {
            model_max,
            model_min,
            rho,
        })
    }

    pub fn model_max(&self) -> &QarModel {
        &self.model_max
    }

    pub fn model_min(&self) -> &QarModel {
        &self.model_min
    }

    pub fn rho(&self) -> f64 {
        self.rho
    }

    fn copula(&self) -> GaussianCopula {
        // |rho| < 1 guarantees a positive definite 2x2 matrix
        GaussianCopula::new(&bivariate_corr(self.rho), 2).expect("valid 2x2 correlation")
    }
}

fn tag_series(e: QarError, series: &str) -> QarError {
    match e {
        QarError::Numeric { t, site, reason } => QarError::Numeric {
            t,
            site,
            reason: format!("series {series}: {reason}"),
        },
        other => other,
    }
}

fn marginal_terms(m: &QarModel, y: &[f64], series: &str) -> Result<(f64, Vec<f64>)> {
    m.log_likelihood_with_levels(y).map_err(|e| tag_series(e, series))
}

/// Joint log-likelihood conditional on the first pair.
pub fn mqar_log_likelihood(m: &BivariateQarModel, y_max: &[f64], y_min: &[f64]) -> Result<f64> {
    if y_max.len() != y_min.len() {
        return Err(QarError::Dimension(format!(
            "series lengths differ: {} and {}",
            y_max.len(),
            y_min.len()
        )));
    }
    if y_max.len() < 2 {
        return Err(QarError::Dimension("bivariate likelihood needs T >= 2".into()));
    }
    let (ll_max, u_max) = marginal_terms(&m.model_max, y_max, "max")?;
    let (ll_min, u_min) = marginal_terms(&m.model_min, y_min, "min")?;
    if m.rho == 0.0 {
        return Ok(ll_max + ll_min);
    }
    let cop = m.copula();
    let mut copula = 0.0;
    for (i, (&a, &b)) in u_max.iter().zip(&u_min).enumerate() {
        let q = [normal_quantile(clamp_level(a))?, normal_quantile(clamp_level(b))?];
        let c = cop.log_density_scores(&q);
        if !c.is_finite() {
            return Err(QarError::Numeric {
                t: i + 1,
                site: None,
                reason: format!("copula term {c}"),
            });
        }
        copula += c;
    }
    Ok(ll_max + ll_min + copula)
}

/// Analytic derivative of the joint log-likelihood in `rho`.
pub fn mqar_log_likelihood_drho(m: &BivariateQarModel, y_max: &[f64], y_min: &[f64]) -> Result<f64> {
    if y_max.len() != y_min.len() {
        return Err(QarError::Dimension("series lengths differ".into()));
    }
    let (_, u_max) = marginal_terms(&m.model_max, y_max, "max")?;
    let (_, u_min) = marginal_terms(&m.model_min, y_min, "min")?;
    let r = m.rho;
    let s = 1.0 - r * r;
    let mut d = 0.0;
    for (&a, &b) in u_max.iter().zip(&u_min) {
        let q1 = normal_quantile(clamp_level(a))?;
        let q2 = normal_quantile(clamp_level(b))?;
        d += r / s + (q1 * q2 * (1.0 + r * r) - r * (q1 * q1 + q2 * q2)) / (s * s);
    }
    Ok(d)
}

/// Interior lattice `(i + 1/2) / G`, `i = 0..G`.
pub fn unit_lattice(g: usize) -> Vec<f64> {
    (0..g).map(|i| (i as f64 + 0.5) / g as f64).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct JointDensityGrid {
    /// Lattice for `y_max` (rows) and `y_min` (columns).
    pub axis: Vec<f64>,
    /// Row-major `G x G` values.
    pub values: Vec<f64>,
    pub marginal_max: Vec<f64>,
    pub marginal_min: Vec<f64>,
}

impl JointDensityGrid {
    pub fn size(&self) -> usize {
        self.axis.len()
    }

    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.axis.len() + j]
    }

    /// Midpoint-rule mass over the unit square.
    pub fn mass(&self) -> f64 {
        let h = 1.0 / self.axis.len() as f64;
        self.values.iter().sum::<f64>() * h * h
    }

    /// Midpoint-rule integral over `y_min` for each `y_max` (row sums).
    pub fn row_marginal(&self) -> Vec<f64> {
        let g = self.axis.len();
        let h = 1.0 / g as f64;
        (0..g)
            .map(|i| self.values[i * g..(i + 1) * g].iter().sum::<f64>() * h)
            .collect()
    }

    /// Integral over `y_max` for each `y_min` (column sums).
    pub fn column_marginal(&self) -> Vec<f64> {
        let g = self.axis.len();
        let h = 1.0 / g as f64;
        (0..g)
            .map(|j| (0..g).map(|i| self.values[i * g + j]).sum::<f64>() * h)
            .collect()
    }
}

fn levels_and_densities(m: &QarModel, axis: &[f64], lag: f64) -> Result<(Vec<f64>, Vec<f64>)> {
    let mut u = Vec::with_capacity(axis.len());
    let mut f = Vec::with_capacity(axis.len());
    for &y in axis {
        u.push(m.inverse_tau(y, &[lag])?);
        f.push(m.conditional_density(y, &[lag])?);
    }
    Ok((u, f))
}

/// Joint conditional density `f_max f_min c(u_max, u_min | rho)` on an interior `G x G` lattice.
pub fn joint_conditional_density_grid(
    m: &BivariateQarModel,
    cond: (f64, f64),
    g: usize,
) -> Result<JointDensityGrid> {
    if g == 0 {
        return Err(QarError::Config("grid size must be at least 1".into()));
    }
    for v in [cond.0, cond.1] {
        if !(0.0..=1.0).contains(&v) {
            return Err(QarError::Domain(format!("conditioning value {v} is outside [0, 1]")));
        }
    }
    let axis = unit_lattice(g);
    let (u_max, f_max) = levels_and_densities(&m.model_max, &axis, cond.0)?;
    let (u_min, f_min) = levels_and_densities(&m.model_min, &axis, cond.1)?;
    let q_max = u_max.iter().map(|&u| normal_quantile(u)).collect::<Result<Vec<_>>>()?;
    let q_min = u_min.iter().map(|&u| normal_quantile(u)).collect::<Result<Vec<_>>>()?;
    let cop = m.copula();
    let mut values = Vec::with_capacity(g * g);
    for i in 0..g {
        for j in 0..g {
            let c = if m.rho == 0.0 {
                1.0
            } else {
                cop.log_density_scores(&[q_max[i], q_min[j]]).exp()
            };
            values.push(f_max[i] * f_min[j] * c);
        }
    }
    Ok(JointDensityGrid {
        axis,
        values,
        marginal_max: f_max,
        marginal_min: f_min,
    })
}

/// Posterior for the bivariate model: two independent QAR(1) curve sets and `rho ~ U(-1, 1)`.
#[derive(Debug, Clone)]
pub struct MqarFamily {
    y_max: Vec<f64>,
    y_min: Vec<f64>,
    curve: CurveSpec,
    spec: ParamSpec,
}

impl MqarFamily {
    pub fn new(y_max: Vec<f64>, y_min: Vec<f64>, curve: CurveSpec, priors: Option<QarPriors>) -> Result<Self> {
        curve.validate()?;
        if y_max.len() != y_min.len() || y_max.len() < 2 {
            return Err(QarError::Dimension(format!(
                "bivariate data needs two series of equal length >= 2, got {} and {}",
                y_max.len(),
                y_min.len()
            )));
        }
        for y in [&y_max, &y_min] {
            if let Some((i, v)) = y.iter().enumerate().find(|(_, v)| !(**v > 0.0 && **v < 1.0)) {
                return Err(QarError::OutOfBounds {
                    index: i,
                    value: *v,
                    lower: 0.0,
                    upper: 1.0,
                });
            }
        }
        let sigma_ab = priors.map_or(default_sigma_ab(&curve, 1), |p| p.sigma_ab);
        let mut spec = ParamSpec::new();
        for s in ["max", "min"] {
            for j in 1..=2 {
                curve.push_params(&mut spec, &format!("{s}.eta{j}"), sigma_ab);
            }
        }
        spec.scalar(
            "rho",
            Transform::Logit { lo: -1.0, hi: 1.0 },
            Prior::Uniform { lo: -1.0, hi: 1.0 },
        );
        Ok(Self {
            y_max,
            y_min,
            curve,
            spec,
        })
    }

    pub fn decode(&self, theta: &[f64]) -> Result<BivariateQarModel> {
        let w = 2 * self.curve.width();
        let mx = decode_qar(&self.curve, 1, &theta[..w])?;
        let mn = decode_qar(&self.curve, 1, &theta[w..2 * w])?;
        BivariateQarModel::new(mx, mn, theta[2 * w])
    }

    pub fn curve_spec(&self) -> CurveSpec {
        self.curve
    }
}

impl ModelFamily for MqarFamily {
    fn param_spec(&self) -> &ParamSpec {
        &self.spec
    }
    fn log_likelihood(&self, theta: &[f64]) -> Result<f64> {
        mqar_log_likelihood(&self.decode(theta)?, &self.y_max, &self.y_min)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dist::{KumaraswamyParams, MonotoneCurve};

    fn kc(a: f64, b: f64) -> MonotoneCurve {
        MonotoneCurve::single(KumaraswamyParams::new(a, b).unwrap())
    }

    fn ident() -> QarModel {
        QarModel::qar1(MonotoneCurve::identity(), MonotoneCurve::identity())
    }

    #[test]
    fn copula_examples() {
        let eye = [1.0, 0.0, 0.0, 1.0];
        assert!(gaussian_copula_logdensity(&[0.2, 0.9], &eye).unwrap().abs() < 1e-15);
        let v = gaussian_copula_logdensity(&[0.5, 0.5], &bivariate_corr(0.5)).unwrap();
        assert!((v + 0.5 * 0.75f64.ln()).abs() < 1e-15);
        assert!((v - 0.143_841_036_225_890_3).abs() < 1e-12);
        assert!(gaussian_copula_logdensity(&[0.5, 0.5], &[1.0, 1.2, 1.2, 1.0]).is_err());
        assert!(gaussian_copula_logdensity(&[0.5, 0.5], &[1.0, 0.2, 0.3, 1.0]).is_err());
        assert!(gaussian_copula_logdensity(&[0.0, 0.5], &eye).is_err());
    }

    #[test]
    fn copula_closed_form_bivariate() {
        for &(r, a, b) in &[(0.3f64, 0.2, 0.7), (-0.8, 0.05, 0.5), (0.95, 0.9, 0.99)] {
            let q1: f64 = normal_quantile(a).unwrap();
            let q2: f64 = normal_quantile(b).unwrap();
            let s = 1.0 - r * r;
            let expect = -0.5 * s.ln() - (r * r * (q1 * q1 + q2 * q2) - 2.0 * r * q1 * q2) / (2.0 * s);
            let got = gaussian_copula_logdensity(&[a, b], &bivariate_corr(r)).unwrap();
            assert!((got - expect).abs() < 1e-12, "{got} vs {expect}");
        }
    }

    #[test]
    fn likelihood_reductions() {
        let ymax = [0.3, 0.6, 0.55, 0.8, 0.4, 0.7];
        let ymin = [0.2, 0.35, 0.5, 0.45, 0.15, 0.6];
        let mx = QarModel::qar1(kc(1.4, 0.8), kc(0.9, 2.0));
        let mn = QarModel::qar1(kc(2.2, 1.3), kc(0.6, 0.9));
        let m0 = BivariateQarModel::new(mx.clone(), mn.clone(), 0.0).unwrap();
        let sum = mx.log_likelihood(&ymax).unwrap() + mn.log_likelihood(&ymin).unwrap();
        assert!((mqar_log_likelihood(&m0, &ymax, &ymin).unwrap() - sum).abs() < 1e-12);

        let mi = BivariateQarModel::new(ident(), ident(), 0.5).unwrap();
        let direct: f64 = (1..ymax.len())
            .map(|t| gaussian_copula_logdensity(&[ymax[t], ymin[t]], &bivariate_corr(0.5)).unwrap())
            .sum();
        assert!((mqar_log_likelihood(&mi, &ymax, &ymin).unwrap() - direct).abs() < 1e-10);

        let a = BivariateQarModel::new(mx.clone(), mn.clone(), 0.4).unwrap();
        let b = BivariateQarModel::new(mn, mx, 0.4).unwrap();
        let la = mqar_log_likelihood(&a, &ymax, &ymin).unwrap();
        let lb = mqar_log_likelihood(&b, &ymin, &ymax).unwrap();
        assert!((la - lb).abs() < 1e-12);
    }

    #[test]
    fn drho_matches_finite_difference() {
        let ymax = [0.3, 0.6, 0.55, 0.8, 0.4, 0.7];
        let ymin = [0.2, 0.35, 0.5, 0.45, 0.15, 0.6];
        let mx = QarModel::qar1(kc(1.4, 0.8), kc(0.9, 2.0));
        let mn = QarModel::qar1(kc(2.2, 1.3), kc(0.6, 0.9));
        for &r in &[-0.05, 0.0, 0.03] {
            let at = |rho: f64| {
                let m = BivariateQarModel::new(mx.clone(), mn.clone(), rho).unwrap();
                mqar_log_likelihood(&m, &ymax, &ymin).unwrap()
            };
            let h = 1e-6;
            let fd = (at(r + h) - at(r - h)) / (2.0 * h);
            let m = BivariateQarModel::new(mx.clone(), mn.clone(), r).unwrap();
            let an = mqar_log_likelihood_drho(&m, &ymax, &ymin).unwrap();
            assert!((fd - an).abs() <= 1e-3 * an.abs().max(1e-3), "{fd} vs {an}");
        }
    }

    #[test]
    fn error_names_series() {
        let m = BivariateQarModel::new(ident(), ident(), 0.2).unwrap();
        match mqar_log_likelihood(&m, &[0.3, 0.5], &[0.3, 1.0]) {
            Err(QarError::Numeric { t: 1, reason, .. }) => assert!(reason.contains("min")),
            other => panic!("{other:?}"),
        }
        assert!(BivariateQarModel::new(ident(), ident(), 1.0).is_err());
    }

    #[test]
    fn grid_examples() {
        let m = BivariateQarModel::new(ident(), ident(), 0.0).unwrap();
        let g = joint_conditional_density_grid(&m, (0.3, 0.6), 11).unwrap();
        assert!(g.values.iter().all(|v| (v - 1.0).abs() < 1e-12));

        let mx = QarModel::qar1(kc(1.4, 0.8), kc(0.9, 2.0));
        let mn = QarModel::qar1(kc(2.2, 1.3), kc(0.6, 0.9));
        let m = BivariateQarModel::new(mx, mn, 0.0).unwrap();
        let g = joint_conditional_density_grid(&m, (0.3, 0.6), 15).unwrap();
        for i in 0..15 {
            for j in 0..15 {
                assert_eq!(g.at(i, j), g.marginal_max[i] * g.marginal_min[j]);
            }
        }
        assert!(joint_conditional_density_grid(&m, (1.3, 0.6), 15).is_err());
    }

    #[test]
    fn family_layout() {
        let y = vec![0.3, 0.5, 0.6, 0.4];
        let f = MqarFamily::new(y.clone(), y, CurveSpec::Free { k: 1 }, None).unwrap();
        assert_eq!(f.param_spec().names().len(), 9);
        assert_eq!(f.param_spec().names()[8], "rho");
        let (theta, _) = f.param_spec().to_constrained(&[0.0; 9]);
        let m = f.decode(&theta).unwrap();
        assert_eq!(m.rho(), 0.0);
    }
}
