use std::path::PathBuf;

use qarlab::mqar::BivariateQarModel;
use qarlab::simkit::{
    chain_seed, sample_spatial_fields, scenario_catalog, simulate_bivariate, simulate_qar,
    simulate_spatial_with_gamma, Scenario,
};
use qarlab::spatial::{phi_from_dmax, GpHyper, SpatialQarModel, StationSet};
use serde::Serialize;

use crate::config::Family;
use crate::error::{CliError, CliResult};
use crate::io::{fmt, read_sites, write_json, CsvOut};

#[derive(Debug, Clone)]
pub struct SimulateOptions {
    pub family: Family,
    pub scenario: String,
    pub scenario_min: Option<String>,
    pub t: usize,
    pub warmup: usize,
    pub replicates: usize,
    pub seed: u64,
    pub rho: f64,
    pub stations: Option<PathBuf>,
    pub gamma: f64,
    pub field_sd: f64,
    pub out: PathBuf,
    pub truth: Option<PathBuf>,
}

#[derive(Serialize)]
struct Truth<'a> {
    family: Family,
    seed: u64,
    t: usize,
    warmup: usize,
    scenario: &'a Scenario,
    #[serde(skip_serializing_if = "Option::is_none")]
    scenario_min: Option<&'a Scenario>,
    #[serde(skip_serializing_if = "Option::is_none")]
    rho: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    gamma: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    fields: Option<&'a [Vec<f64>; 4]>,
    #[serde(skip_serializing_if = "Option::is_none")]
    hypers: Option<&'a [GpHyper; 4]>,
}

fn write_columns(path: &PathBuf, names: &[String], cols: &[Vec<f64>]) -> CliResult<()> {
    let header: Vec<&str> = names.iter().map(String::as_str).collect();
    let mut out = CsvOut::create(path, &header)?;
    for i in 0..cols[0].len() {
        out.record(cols.iter().map(|c| fmt(c[i])))?;
    }
    out.finish()
}

/// Spatial model whose log-shape fields are drawn around the scenario's shapes.
fn spatial_truth(sc: &Scenario, stations: &StationSet, opts: &SimulateOptions) -> CliResult<SpatialQarModel> {
    if sc.k != 1 {
        return Err(CliError::Config(format!("spatial simulation needs a k = 1 scenario; {} has k = {}", sc.name, sc.k)));
    }
    if !(opts.field_sd >= 0.0 && opts.field_sd.is_finite()) {
        return Err(CliError::Config(format!("field sd {} must be non-negative", opts.field_sd)));
    }
    let phi = phi_from_dmax(stations)?;
    let (c1, c2) = (sc.eta1.components()[0], sc.eta2.components()[0]);
    let centers = [c1.a().ln(), c1.b().ln(), c2.a().ln(), c2.b().ln()];
    let var = opts.field_sd.powi(2).max(1e-12);
    let mut hypers = Vec::with_capacity(4);
    for c in centers {
        hypers.push(GpHyper::new(c, var, phi)?);
    }
    let hypers: [GpHyper; 4] = hypers.try_into().expect("four hypers");
    let fields = sample_spatial_fields(stations, &hypers, chain_seed(opts.seed))?;
    // endpoint values of gamma are handled by the simulator override
    let g = if opts.gamma > 0.0 && opts.gamma < 1.0 { opts.gamma } else { 0.5 };
    Ok(SpatialQarModel::new(fields, hypers, g, phi)?)
}

pub fn run(opts: SimulateOptions) -> CliResult<()> {
    let err = |e: qarlab::QarError| CliError::Config(e.to_string());
    let sc = scenario_catalog(&opts.scenario).map_err(err)?;
    if opts.t == 0 {
        return Err(CliError::Config("series length must be positive".into()));
    }
    match opts.family {
        Family::Qar => {
            if opts.replicates == 0 {
                return Err(CliError::Config("replicates must be at least 1".into()));
            }
            let m = sc.model();
            let cols: Vec<Vec<f64>> = (0..opts.replicates as u64)
                .map(|r| simulate_qar(&m, opts.t, opts.warmup, opts.seed.wrapping_add(r)))
                .collect();
            let names: Vec<String> = if opts.replicates == 1 {
                vec!["y".into()]
            } else {
                (1..=opts.replicates).map(|r| format!("y{r}")).collect()
            };
            write_columns(&opts.out, &names, &cols)?;
            if let Some(p) = &opts.truth {
                write_json(p, &Truth { family: opts.family, seed: opts.seed, t: opts.t, warmup: opts.warmup, scenario: &sc, scenario_min: None, rho: None, gamma: None, fields: None, hypers: None })?;
            }
        }
        Family::Mqar => {
            let sc_min = match &opts.scenario_min {
                Some(n) => scenario_catalog(n).map_err(err)?,
                None => sc.clone(),
            };
            let m = BivariateQarModel::new(sc.model(), sc_min.model(), opts.rho)?;
            let (a, b) = simulate_bivariate(&m, opts.t, opts.warmup, opts.seed);
            write_columns(&opts.out, &["max".into(), "min".into()], &[a, b])?;
            if let Some(p) = &opts.truth {
                write_json(p, &Truth { family: opts.family, seed: opts.seed, t: opts.t, warmup: opts.warmup, scenario: &sc, scenario_min: Some(&sc_min), rho: Some(opts.rho), gamma: None, fields: None, hypers: None })?;
            }
        }
        Family::Sqar => {
            let path = opts
                .stations
                .as_ref()
                .ok_or_else(|| CliError::Config("spatial simulation needs --stations".into()))?;
            let (ids, coords) = read_sites(path)?;
            let stations = StationSet::new(ids, coords)?;
            let m = spatial_truth(&sc, &stations, &opts)?;
            let panel = simulate_spatial_with_gamma(&m, &stations, opts.gamma, opts.t, opts.warmup, opts.seed)?;
            let cols: Vec<Vec<f64>> = (0..stations.len()).map(|i| panel.iter().map(|r| r[i]).collect()).collect();
            write_columns(&opts.out, stations.ids(), &cols)?;
            if let Some(p) = &opts.truth {
                write_json(p, &Truth { family: opts.family, seed: opts.seed, t: opts.t, warmup: opts.warmup, scenario: &sc, scenario_min: None, rho: None, gamma: Some(opts.gamma), fields: Some(m.fields()), hypers: Some(m.hypers()) })?;
            }
        }
        Family::Kx2006 => {
            return Err(CliError::Config("simulation supports the qar, mqar and sqar families".into()));
        }
    }
    Ok(())
}
