use std::path::{Path, PathBuf};

use qarlab::assess::empirical_quantile;
use qarlab::mcmc::{functionals_with, summarize, ParamSummary, PosteriorDraws};
use qarlab::mqar::{joint_conditional_density_grid, unit_lattice, MqarFamily};
use qarlab::qar::QuantileProcess;
use qarlab::spatial::StationSet;
use qarlab::support::SupportBounds;
use qarlab::QarError;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{Family, RunConfig};
use crate::error::{CliError, CliResult};
use crate::io::{ensure_dir, fmt, read_sites, read_table, write_draws, write_json, CsvOut};
use crate::model::{prepare, Fitted, Marginal, Prepared, StationRecord};

pub const SUMMARY_FILE: &str = "summary.json";
pub const DRAWS_FILE: &str = "draws.csv";

#[derive(Serialize)]
struct FitSummary<'a> {
    tool: String,
    family: Family,
    config: &'a RunConfig,
    series: &'a [String],
    bounds: &'a [Option<SupportBounds>],
    stations: Option<StationRecord>,
    names: &'a [String],
    n_draws: usize,
    acceptance_rate: f64,
    adapted_acceptance_rate: f64,
    mean_log_posterior: f64,
    warnings: &'a [String],
    params: &'a [ParamSummary],
}

/// The parts of `summary.json` that later commands read back.
#[derive(Debug, Clone, Deserialize)]
pub struct FitRecord {
    pub family: Family,
    pub config: RunConfig,
    pub series: Vec<String>,
    pub bounds: Vec<Option<SupportBounds>>,
    pub stations: Option<StationRecord>,
    pub names: Vec<String>,
}

impl FitRecord {
    pub fn load(dir: &Path) -> CliResult<Self> {
        let rec: FitRecord = crate::io::read_json(&dir.join(SUMMARY_FILE))?;
        if rec.family != rec.config.family {
            return Err(CliError::input(dir.join(SUMMARY_FILE), "family disagrees with its config"));
        }
        Ok(rec)
    }

    /// Rebuild the fitted family from data, reusing the recorded bounds.
    pub fn prepare(&self, data: Option<&Path>) -> CliResult<(Prepared, PathBuf)> {
        let path = data
            .map(Path::to_path_buf)
            .or_else(|| self.config.data.clone())
            .ok_or_else(|| CliError::Config("no data file given and none recorded in the fit".into()))?;
        let table = read_table(&path)?;
        let stations = self.stations.as_ref().map(StationRecord::to_set).transpose()?;
        let mut cfg = self.config.clone();
        cfg.series = self.series.clone();
        let prepared = prepare(&cfg, &table, stations.as_ref(), Some(&self.bounds))?;
        Ok((prepared, path))
    }
}

fn load_stations(cfg: &RunConfig) -> CliResult<Option<StationSet>> {
    match (&cfg.stations, cfg.family) {
        (Some(p), Family::Sqar) => {
            let (ids, coords) = read_sites(p)?;
            Ok(Some(StationSet::new(ids, coords)?))
        }
        _ => Ok(None),
    }
}

fn quartiles(v: &[f64]) -> CliResult<Vec<f64>> {
    [0.25, 0.5, 0.75]
        .iter()
        .map(|&q| empirical_quantile(v, q).map_err(CliError::from))
        .collect()
}

fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect()
}

/// Evaluation points on the model scale.
fn density_axis(m: &Marginal<'_>, n: usize) -> Vec<f64> {
    match m.bounds {
        Some(_) => unit_lattice(n),
        None => {
            let lo = m.raw.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = m.raw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let pad = 0.1 * (hi - lo);
            linspace(lo - pad, hi + pad, n)
        }
    }
}

fn conditioning(m: &Marginal<'_>, values: &[f64], order: usize) -> CliResult<Vec<(f64, Vec<f64>)>> {
    let values = if values.is_empty() { quartiles(m.raw)? } else { values.to_vec() };
    values
        .into_iter()
        .map(|c| {
            let u = m.to_model(c);
            if m.bounds.is_some() && !(0.0..=1.0).contains(&u) {
                return Err(QarError::Domain(format!(
                    "conditioning value {c} for `{}` lies outside the support bounds",
                    m.name
                ))
                .into());
            }
            Ok((c, vec![u; order]))
        })
        .collect()
}

fn write_grids(
    dir: &Path,
    prepared: &Prepared,
    draws: &PosteriorDraws,
    cfg: &RunConfig,
) -> CliResult<()> {
    let grid = cfg.grid()?;
    let tau = grid.values();
    let mut theta_out = CsvOut::create(&dir.join("theta_grid.csv"), &["series", "tau", "j", "mean", "lower", "upper"])?;
    let mut dens_out = CsvOut::create(
        &dir.join("density_grid.csv"),
        &["series", "cond", "y", "mean", "lower", "upper"],
    )?;
    for (idx, m) in prepared.marginals().iter().enumerate() {
        let order = m.decode(&draws.samples[0])?.order();
        let cond_values = if cfg.family == Family::Mqar && idx == 1 { &cfg.cond_min } else { &cfg.cond };
        let conds = conditioning(m, cond_values, order)?;
        let axis = density_axis(m, cfg.density_points);
        for (ci, (c, lags)) in conds.iter().enumerate() {
            let f = functionals_with(draws, |t: &[f64]| m.decode(t), tau, lags, &axis, cfg.level)?;
            if f.skipped > 0 {
                log::warn!("{}: {} draws failed to evaluate and were skipped", m.name, f.skipped);
            }
            if ci == 0 {
                for (j, band) in f.theta.iter().enumerate() {
                    for k in 0..tau.len() {
                        theta_out.record([
                            m.name.clone(),
                            fmt(tau[k]),
                            j.to_string(),
                            fmt(band.mean[k]),
                            fmt(band.lower[k]),
                            fmt(band.upper[k]),
                        ])?;
                    }
                }
            }
            let s = m.scale();
            for (k, &y) in axis.iter().enumerate() {
                dens_out.record([
                    m.name.clone(),
                    fmt(*c),
                    fmt(m.to_data(y)),
                    fmt(f.density.mean[k] / s),
                    fmt(f.density.lower[k] / s),
                    fmt(f.density.upper[k] / s),
                ])?;
            }
        }
    }
    theta_out.finish()?;
    dens_out.finish()
}

const JOINT_CHUNK: usize = 32;

fn write_joint(dir: &Path, prepared: &Prepared, f: &MqarFamily, draws: &PosteriorDraws, cfg: &RunConfig) -> CliResult<()> {
    let cmax = if cfg.cond.is_empty() { quartiles(&prepared.raw[0])? } else { cfg.cond.clone() };
    let cmin = if cfg.cond_min.is_empty() { quartiles(&prepared.raw[1])? } else { cfg.cond_min.clone() };
    if cmax.len() != cmin.len() {
        return Err(CliError::Config(format!(
            "cond and cond_min pair up; got {} and {} values",
            cmax.len(),
            cmin.len()
        )));
    }
    let (bmax, bmin) = (prepared.bounds[0].expect("unit scale"), prepared.bounds[1].expect("unit scale"));
    let g = cfg.joint_grid;
    let axis = unit_lattice(g);
    let mut out = CsvOut::create(
        &dir.join("joint_density.csv"),
        &["cond_max", "cond_min", "y_max", "y_min", "density"],
    )?;
    for (&a, &b) in cmax.iter().zip(&cmin) {
        let cond = (bmax.to_unit_value(a), bmin.to_unit_value(b));
        let partial: Vec<(Vec<f64>, usize)> = draws
            .samples
            .par_chunks(JOINT_CHUNK)
            .map(|chunk| {
                let mut sum = vec![0.0; g * g];
                let mut used = 0;
                for theta in chunk {
                    let grid = f
                        .decode(theta)
                        .and_then(|m| joint_conditional_density_grid(&m, cond, g));
                    if let Ok(grid) = grid {
                        sum.iter_mut().zip(&grid.values).for_each(|(s, v)| *s += v);
                        used += 1;
                    }
                }
                (sum, used)
            })
            .collect();
        let mut total = vec![0.0; g * g];
        let mut used = 0;
        for (s, u) in partial {
            total.iter_mut().zip(&s).for_each(|(t, v)| *t += v);
            used += u;
        }
        if used == 0 {
            return Err(QarError::Numeric {
                t: 0,
                site: None,
                reason: "no draw produced a joint density grid".into(),
            }
            .into());
        }
        let jac = bmax.width() * bmin.width();
        for i in 0..g {
            for j in 0..g {
                out.record([
                    fmt(a),
                    fmt(b),
                    fmt(bmax.from_unit_value(axis[i])),
                    fmt(bmin.from_unit_value(axis[j])),
                    fmt(total[i * g + j] / used as f64 / jac),
                ])?;
            }
        }
    }
    out.finish()
}

pub fn run(mut cfg: RunConfig) -> CliResult<()> {
    cfg.resolve();
    cfg.validate()?;
    let data = cfg
        .data
        .clone()
        .ok_or_else(|| CliError::Config("a data file is required (--data)".into()))?;
    let out = cfg
        .out
        .clone()
        .ok_or_else(|| CliError::Config("an output directory is required (--out)".into()))?;
    let table = read_table(&data)?;
    let stations = load_stations(&cfg)?;
    cfg.data = Some(std::fs::canonicalize(&data).unwrap_or(data));
    if let Some(s) = cfg.stations.take() {
        cfg.stations = Some(std::fs::canonicalize(&s).unwrap_or(s));
    }
    let prepared = prepare(&cfg, &table, stations.as_ref(), None)?;
    cfg.series = prepared.series.clone();
    log::info!(
        "fitting {} to {} series with {} parameters",
        cfg.family.as_str(),
        prepared.series.len(),
        prepared.param_names().len()
    );

    let draws = prepared.run_chain(&cfg.chain)?;
    for w in &draws.warnings {
        log::warn!("{w}");
    }
    ensure_dir(&out)?;
    write_draws(&out.join(DRAWS_FILE), &draws.names, &draws.samples)?;
    let params = summarize(&draws, &[cfg.level])?;
    let mean_lp = draws.log_posterior.iter().sum::<f64>() / draws.log_posterior.len() as f64;
    let summary = FitSummary {
        tool: format!("qarlab {}", env!("CARGO_PKG_VERSION")),
        family: cfg.family,
        config: &cfg,
        series: &prepared.series,
        bounds: &prepared.bounds,
        stations: prepared.stations.as_ref().map(StationRecord::from_set),
        names: &draws.names,
        n_draws: draws.len(),
        acceptance_rate: draws.acceptance_rate,
        adapted_acceptance_rate: draws.adapted_acceptance_rate,
        mean_log_posterior: mean_lp,
        warnings: &draws.warnings,
        params: &params,
    };
    write_json(&out.join(SUMMARY_FILE), &summary)?;
    write_grids(&out, &prepared, &draws, &cfg)?;
    if let Fitted::Mqar(f) = &prepared.family {
        write_joint(&out, &prepared, f, &draws, &cfg)?;
    }
    Ok(())
}
