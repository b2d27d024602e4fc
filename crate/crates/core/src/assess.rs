//! Quantile-fit adequacy and comparison metrics.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{QarError, Result};
use crate::qar::QuantileProcess;

/// Draws per parallel work unit. Fixed so partial sums combine in the same
/// order for any thread count.
const DRAW_CHUNK: usize = 32;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TauGrid(Vec<f64>);

impl Default for TauGrid {
    /// `0.01, 0.02, ..., 0.99`.
    fn default() -> Self {
        Self((1..=99).map(|i| i as f64 / 100.0).collect())
    }
}

impl TauGrid {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(QarError::Config("tau grid is empty".into()));
        }
        if values.iter().any(|t| !(*t > 0.0 && *t < 1.0)) {
            return Err(QarError::Config("tau grid values must lie in (0, 1)".into()));
        }
        if values.windows(2).any(|w| w[0] >= w[1]) {
            return Err(QarError::Config("tau grid must be strictly increasing".into()));
        }
        Ok(Self(values))
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Pinball loss `u (tau - 1{u < 0})`.
#[inline]
pub fn check_loss(u: f64, tau: f64) -> f64 {
    if u < 0.0 {
        u * (tau - 1.0)
    } else {
        u * tau
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QuantileMethod {
    /// Linear interpolation between order statistics at `(n - 1) p`.
    #[default]
    Type7,
    /// Inverse of the empirical cdf.
    Type1,
}

/// Type-7 quantile of an ascending sample.
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let h = (n - 1) as f64 * p;
    let lo = h.floor() as usize;
    if lo + 1 >= n {
        return sorted[n - 1];
    }
    let frac = h - lo as f64;
    if frac == 0.0 {
        sorted[lo]
    } else {
        sorted[lo] + frac * (sorted[lo + 1] - sorted[lo])
    }
}

fn quantile_sorted_with(sorted: &[f64], p: f64, method: QuantileMethod) -> f64 {
    match method {
        QuantileMethod::Type7 => quantile_sorted(sorted, p),
        QuantileMethod::Type1 => {
            let n = sorted.len();
            let k = (n as f64 * p).ceil() as usize;
            sorted[k.clamp(1, n) - 1]
        }
    }
}

pub fn empirical_quantile(y: &[f64], tau: f64) -> Result<f64> {
    empirical_quantile_with(y, tau, QuantileMethod::Type7)
}

pub fn empirical_quantile_with(y: &[f64], tau: f64, method: QuantileMethod) -> Result<f64> {
    if y.is_empty() {
        return Err(QarError::Dimension("empirical quantile of an empty series".into()));
    }
    if !(0.0..=1.0).contains(&tau) {
        return Err(QarError::Domain(format!("tau = {tau} is outside [0, 1]")));
    }
    let mut s = y.to_vec();
    s.sort_by(f64::total_cmp);
    Ok(quantile_sorted_with(&s, tau, method))
}

/// `p~_v` from a coverage profile `p(tau)` over `n_terms` conditional observations.
pub fn p_tilde_from_profile(p_profile: &[f64], grid: &TauGrid, n_terms: usize, v: f64) -> Result<f64> {
    if p_profile.len() != grid.len() {
        return Err(QarError::Dimension(format!(
            "profile has {} points, grid has {}",
            p_profile.len(),
            grid.len()
        )));
    }
    if !(v >= 1.0 && v.is_finite()) {
        return Err(QarError::Domain(format!("exponent v = {v} must be at least 1")));
    }
    if n_terms == 0 {
        return Err(QarError::Dimension("no conditional observations".into()));
    }
    let n = n_terms as f64;
    let mean = p_profile
        .iter()
        .zip(grid.values())
        .map(|(p, &tau)| ((p - tau) / (tau * (1.0 - tau) / n).sqrt()).abs().powf(v))
        .sum::<f64>()
        / grid.len() as f64;
    Ok(mean.powf(1.0 / v))
}

/// Number of leading observations that only serve as lags.
fn lag_count(data_len: usize, n_terms: usize) -> Result<usize> {
    if n_terms == 0 || n_terms >= data_len {
        return Err(QarError::Dimension(format!(
            "{n_terms} evaluation rows do not fit a series of length {data_len}"
        )));
    }
    Ok(data_len - n_terms)
}

/// `p~_v` from quantile evaluations `draw_quantiles[b][i][k] = Q(tau_k | lags_t; draw b)`,
/// where row `i` belongs to `data[p + i]` and `p = data.len() - rows`.
pub fn p_tilde(draw_quantiles: &[Vec<Vec<f64>>], data: &[f64], grid: &TauGrid, v: f64) -> Result<f64> {
    let profile = coverage_profile(draw_quantiles, data, grid)?;
    let n_terms = draw_quantiles[0].len();
    p_tilde_from_profile(&profile, grid, n_terms, v)
}

/// `p(tau) = mean_t mean_b 1{y_t < Q_b(tau | lags_t)}`.
pub fn coverage_profile(draw_quantiles: &[Vec<Vec<f64>>], data: &[f64], grid: &TauGrid) -> Result<Vec<f64>> {
    if draw_quantiles.is_empty() {
        return Err(QarError::Dimension("no posterior draws".into()));
    }
    let n_terms = draw_quantiles[0].len();
    let p = lag_count(data.len(), n_terms)?;
    let nk = grid.len();
    let mut counts = vec![0usize; nk];
    for draw in draw_quantiles {
        if draw.len() != n_terms || draw.iter().any(|r| r.len() != nk) {
            return Err(QarError::Dimension("ragged quantile evaluations".into()));
        }
        for (i, row) in draw.iter().enumerate() {
            let y = data[p + i];
            for (k, q) in row.iter().enumerate() {
                counts[k] += (y < *q) as usize;
            }
        }
    }
    let denom = (draw_quantiles.len() * n_terms) as f64;
    Ok(counts.into_iter().map(|c| c as f64 / denom).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FitLoss {
    pub delta_profile: Vec<f64>,
    pub omega: Vec<f64>,
    pub delta_tilde: f64,
    pub r1_bar: f64,
}

/// Weighted check-loss summary from posterior-mean quantiles `mean_q[i][k]`,
/// where row `i` belongs to `data[p + i]`. The empirical quantiles use the
/// same `y_{p+1..T}` observations as the loss sums.
pub fn r1_bar(mean_q: &[Vec<f64>], data: &[f64], grid: &TauGrid) -> Result<FitLoss> {
    r1_bar_with(mean_q, data, grid, QuantileMethod::Type7)
}

pub fn r1_bar_with(
    mean_q: &[Vec<f64>],
    data: &[f64],
    grid: &TauGrid,
    method: QuantileMethod,
) -> Result<FitLoss> {
    let n_terms = mean_q.len();
    let p = lag_count(data.len(), n_terms)?;
    if mean_q.iter().any(|r| r.len() != grid.len()) {
        return Err(QarError::Dimension("ragged quantile evaluations".into()));
    }
    let ys = &data[p..];
    let mut sorted = ys.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = n_terms as f64;
    let mut delta_profile = Vec::with_capacity(grid.len());
    let mut omega = Vec::with_capacity(grid.len());
    for (k, &tau) in grid.values().iter().enumerate() {
        let q_emp = quantile_sorted_with(&sorted, tau, method);
        let base = ys.iter().map(|y| check_loss(y - q_emp, tau)).sum::<f64>() / n;
        if !(base > 0.0) {
            return Err(QarError::Domain(format!(
                "empirical check loss is zero at tau = {tau}; the weight is undefined"
            )));
        }
        let d = ys
            .iter()
            .zip(mean_q)
            .map(|(y, row)| check_loss(y - row[k], tau))
            .sum::<f64>()
            / n;
        delta_profile.push(d);
        omega.push(1.0 / base);
    }
    let delta_tilde = omega
        .iter()
        .zip(&delta_profile)
        .map(|(w, d)| w * d)
        .sum::<f64>()
        / grid.len() as f64;
    Ok(FitLoss {
        delta_profile,
        omega,
        delta_tilde,
        r1_bar: 1.0 - delta_tilde,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricsReport {
    pub tau: Vec<f64>,
    pub p_profile: Vec<f64>,
    /// `(v, p~_v)` pairs.
    pub p_tilde: Vec<(f64, f64)>,
    pub delta_profile: Vec<f64>,
    pub omega: Vec<f64>,
    pub delta_tilde: f64,
    pub r1_bar: f64,
    pub n_terms: usize,
    pub n_draws: usize,
}

/// Evaluate all metrics for posterior draws of a conditional quantile model
/// without materializing the draw x time x tau array.
pub fn assess_models<P: QuantileProcess>(
    models: &[P],
    data: &[f64],
    grid: &TauGrid,
    vs: &[f64],
) -> Result<MetricsReport> {
    if models.is_empty() {
        return Err(QarError::Dimension("no posterior draws".into()));
    }
    let p = models[0].order();
    if models.iter().any(|m| m.order() != p) {
        return Err(QarError::Dimension("draws disagree on the model order".into()));
    }
    let n_terms = data.len().saturating_sub(p);
    lag_count(data.len(), n_terms)?;
    let nk = grid.len();
    let cells = n_terms * nk;
    let taus = grid.values();

    let partials: Vec<(Vec<u32>, Vec<f64>)> = models
        .par_chunks(DRAW_CHUNK)
        .map(|chunk| -> Result<(Vec<u32>, Vec<f64>)> {
            let mut counts = vec![0u32; cells];
            let mut sums = vec![0.0; cells];
            let mut lags = vec![0.0; p];
            for m in chunk {
                for i in 0..n_terms {
                    let t = p + i;
                    for (j, lag) in lags.iter_mut().enumerate() {
                        *lag = data[t - 1 - j];
                    }
                    for (k, &tau) in taus.iter().enumerate() {
                        let q = m.quantile(tau, &lags)?;
                        counts[i * nk + k] += (data[t] < q) as u32;
                        sums[i * nk + k] += q;
                    }
                }
            }
            Ok((counts, sums))
        })
        .collect::<Result<Vec<_>>>()?;

    let mut counts = vec![0u64; cells];
    let mut sums = vec![0.0; cells];
    for (c, s) in partials {
        for idx in 0..cells {
            counts[idx] += c[idx] as u64;
            sums[idx] += s[idx];
        }
    }
    let b = models.len() as f64;
    let p_profile: Vec<f64> = (0..nk)
        .map(|k| (0..n_terms).map(|i| counts[i * nk + k]).sum::<u64>() as f64 / (b * n_terms as f64))
        .collect();
    let mean_q: Vec<Vec<f64>> = (0..n_terms)
        .map(|i| (0..nk).map(|k| sums[i * nk + k] / b).collect())
        .collect();
    let loss = r1_bar(&mean_q, data, grid)?;
    let p_tilde = vs
        .iter()
        .map(|&v| Ok((v, p_tilde_from_profile(&p_profile, grid, n_terms, v)?)))
        .collect::<Result<Vec<_>>>()?;
    Ok(MetricsReport {
        tau: taus.to_vec(),
        p_profile,
        p_tilde,
        delta_profile: loss.delta_profile,
        omega: loss.omega,
        delta_tilde: loss.delta_tilde,
        r1_bar: loss.r1_bar,
        n_terms,
        n_draws: models.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn check_loss_examples() {
        assert_eq!(check_loss(2.0, 0.5), 1.0);
        assert!((check_loss(-1.0, 0.9) - 0.1).abs() < 1e-15);
        assert_eq!(check_loss(0.0, 0.3), 0.0);
    }

    #[test]
    fn empirical_quantile_examples() {
        assert_eq!(empirical_quantile(&[3.0, 1.0, 2.0], 0.5).unwrap(), 2.0);
        assert_eq!(empirical_quantile(&[4.0, 2.0, 3.0, 1.0], 0.5).unwrap(), 2.5);
        assert_eq!(empirical_quantile(&[4.0, 2.0, 3.0, 1.0], 0.0).unwrap(), 1.0);
        assert_eq!(empirical_quantile(&[4.0, 2.0, 3.0, 1.0], 1.0).unwrap(), 4.0);
        assert_eq!(
            empirical_quantile_with(&[4.0, 2.0, 3.0, 1.0], 0.5, QuantileMethod::Type1).unwrap(),
            2.0
        );
        assert!(empirical_quantile(&[], 0.5).is_err());
    }

    #[test]
    fn tau_grid_default_and_validation() {
        let g = TauGrid::default();
        assert_eq!(g.len(), 99);
        assert_eq!(g.values()[0], 0.01);
        assert_eq!(g.values()[98], 0.99);
        assert!(TauGrid::new(vec![0.2, 0.1]).is_err());
        assert!(TauGrid::new(vec![0.0, 0.5]).is_err());
    }

    #[test]
    fn p_tilde_of_exact_profile_is_zero() {
        let g = TauGrid::default();
        let prof = g.values().to_vec();
        for &v in &[1.0, 2.0, 3.5] {
            assert_eq!(p_tilde_from_profile(&prof, &g, 50, v).unwrap(), 0.0);
        }
    }

    #[test]
    fn p_tilde_standardized_shift() {
        let g = TauGrid::default();
        let n = 80usize;
        let c = -1.7;
        let prof: Vec<f64> = g
            .values()
            .iter()
            .map(|t| t + c * (t * (1.0 - t) / n as f64).sqrt())
            .collect();
        for &v in &[1.0, 2.0, 4.0] {
            assert!((p_tilde_from_profile(&prof, &g, n, v).unwrap() - c.abs()).abs() < 1e-10);
        }
    }

    #[test]
    fn null_and_perfect_models() {
        let data = [0.3, 0.1, 0.7, 0.4, 0.9, 0.2, 0.6];
        let g = TauGrid::new(vec![0.1, 0.25, 0.5, 0.75, 0.9]).unwrap();
        let ys = &data[1..];
        let null: Vec<Vec<f64>> = ys
            .iter()
            .map(|_| g.values().iter().map(|&t| empirical_quantile(ys, t).unwrap()).collect())
            .collect();
        let r = r1_bar(&null, &data, &g).unwrap();
        assert!((r.delta_tilde - 1.0).abs() < 1e-12);
        assert!(r.r1_bar.abs() < 1e-12);

        let perfect: Vec<Vec<f64>> = ys.iter().map(|&y| vec![y; g.len()]).collect();
        let r = r1_bar(&perfect, &data, &g).unwrap();
        assert_eq!(r.r1_bar, 1.0);
        assert_eq!(r.r1_bar, 1.0 - r.delta_tilde);
    }

    #[test]
    fn constant_data_has_undefined_weight() {
        let data = [0.5; 6];
        let g = TauGrid::new(vec![0.5]).unwrap();
        let q = vec![vec![0.5]; 5];
        assert!(matches!(r1_bar(&q, &data, &g), Err(QarError::Domain(_))));
    }

    #[test]
    fn quantile_grid_coverage_counts() {
        let data = [0.5, 0.2, 0.8];
        let g = TauGrid::new(vec![0.5]).unwrap();
        let draws = vec![vec![vec![0.3], vec![0.9]], vec![vec![0.1], vec![0.7]]];
        // rows: y=0.2 vs {0.3, 0.1} -> 1 of 2; y=0.8 vs {0.9, 0.7} -> 1 of 2
        assert_eq!(coverage_profile(&draws, &data, &g).unwrap(), vec![0.5]);
        assert!(p_tilde(&draws, &data, &g, 1.0).unwrap().abs() < 1e-15);
    }
}
