use std::path::PathBuf;

use qarlab::assess::{assess_models, MetricsReport};
use serde::Serialize;

use crate::error::{CliError, CliResult};
use crate::fit::{FitRecord, DRAWS_FILE};
use crate::io::{ensure_dir, fmt, read_draws, write_json, CsvOut};

#[derive(Debug, Clone)]
pub struct AssessOptions {
    pub fit: PathBuf,
    pub data: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub v: Vec<f64>,
}

#[derive(Serialize)]
struct PTilde {
    v: f64,
    value: f64,
}

#[derive(Serialize)]
struct SeriesMetrics {
    name: String,
    n_terms: usize,
    n_draws: usize,
    p_tilde: Vec<PTilde>,
    delta_tilde: f64,
    r1_bar: f64,
}

#[derive(Serialize)]
struct Average {
    p_tilde: Vec<PTilde>,
    delta_tilde: f64,
    r1_bar: f64,
}

#[derive(Serialize)]
struct Metrics {
    family: String,
    fit: PathBuf,
    data: PathBuf,
    tau: Vec<f64>,
    series: Vec<SeriesMetrics>,
    /// Averages across series, e.g. across locations of a spatial fit.
    average: Average,
}

fn mean(v: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = v.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    s / n as f64
}

pub fn run(opts: AssessOptions) -> CliResult<()> {
    if opts.v.is_empty() || opts.v.iter().any(|v| !(*v > 0.0 && v.is_finite())) {
        return Err(CliError::Config("v values must be positive".into()));
    }
    let rec = FitRecord::load(&opts.fit)?;
    let samples = read_draws(&opts.fit.join(DRAWS_FILE), &rec.names)?;
    if samples.is_empty() {
        return Err(CliError::input(opts.fit.join(DRAWS_FILE), "no draws"));
    }
    let (prepared, data_path) = rec.prepare(opts.data.as_deref())?;
    if prepared.param_names() != rec.names {
        return Err(CliError::input(
            opts.fit.join(DRAWS_FILE),
            "draw columns do not match the parameters of the rebuilt model",
        ));
    }
    let grid = rec.config.grid()?;
    let mut reports: Vec<(String, MetricsReport)> = Vec::new();
    for m in prepared.marginals() {
        let models = samples.iter().map(|t| m.decode(t)).collect::<qarlab::Result<Vec<_>>>()?;
        reports.push((m.name.clone(), assess_models(&models, m.scaled, &grid, &opts.v)?));
    }

    let out = opts.out.clone().unwrap_or_else(|| opts.fit.clone());
    ensure_dir(&out)?;
    let mut prof = CsvOut::create(&out.join("metrics_profile.csv"), &["series", "tau", "p", "delta", "omega"])?;
    for (name, r) in &reports {
        for k in 0..r.tau.len() {
            prof.record([
                name.clone(),
                fmt(r.tau[k]),
                fmt(r.p_profile[k]),
                fmt(r.delta_profile[k]),
                fmt(r.omega[k]),
            ])?;
        }
    }
    prof.finish()?;

    let series: Vec<SeriesMetrics> = reports
        .iter()
        .map(|(name, r)| SeriesMetrics {
            name: name.clone(),
            n_terms: r.n_terms,
            n_draws: r.n_draws,
            p_tilde: r.p_tilde.iter().map(|&(v, value)| PTilde { v, value }).collect(),
            delta_tilde: r.delta_tilde,
            r1_bar: r.r1_bar,
        })
        .collect();
    let average = Average {
        p_tilde: opts
            .v
            .iter()
            .enumerate()
            .map(|(i, &v)| PTilde {
                v,
                value: mean(series.iter().map(|s| s.p_tilde[i].value)),
            })
            .collect(),
        delta_tilde: mean(series.iter().map(|s| s.delta_tilde)),
        r1_bar: mean(series.iter().map(|s| s.r1_bar)),
    };
    write_json(
        &out.join("metrics.json"),
        &Metrics {
            family: rec.family.as_str().into(),
            fit: opts.fit.clone(),
            data: data_path,
            tau: grid.values().to_vec(),
            series,
            average,
        },
    )
}
