use std::path::PathBuf;

use qarlab::assess::empirical_quantile;
use qarlab::mcmc::PosteriorDraws;
use qarlab::spatial::predict_quantile_surface;

use crate::config::Family;
use crate::error::{CliError, CliResult};
use crate::fit::{FitRecord, DRAWS_FILE};
use crate::io::{fmt, read_draws, read_sites, CsvOut};
use crate::model::Fitted;

#[derive(Debug, Clone)]
pub struct KrigeOptions {
    pub fit: PathBuf,
    pub sites: PathBuf,
    pub data: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub tau: Vec<f64>,
    /// Conditioning values on the data scale; empty uses the pooled median.
    pub cond_y: Vec<f64>,
    pub seed: Option<u64>,
}

pub fn run(opts: KrigeOptions) -> CliResult<()> {
    let rec = FitRecord::load(&opts.fit)?;
    if rec.family != Family::Sqar {
        return Err(CliError::Config(format!(
            "kriging needs an sqar fit; {} holds a {} fit",
            opts.fit.display(),
            rec.family.as_str()
        )));
    }
    let samples = read_draws(&opts.fit.join(DRAWS_FILE), &rec.names)?;
    let (prepared, _) = rec.prepare(opts.data.as_deref())?;
    let Fitted::Sqar(family) = &prepared.family else {
        unreachable!("family checked above")
    };
    let bounds = prepared.bounds[0].expect("sqar data are mapped to the unit interval");
    let (_, sites) = read_sites(&opts.sites)?;
    let cond_y = if opts.cond_y.is_empty() {
        let pooled: Vec<f64> = prepared.raw.iter().flatten().copied().collect();
        vec![empirical_quantile(&pooled, 0.5)?]
    } else {
        opts.cond_y.clone()
    };
    let draws = PosteriorDraws {
        names: rec.names.clone(),
        samples,
        acceptance_rate: f64::NAN,
        adapted_acceptance_rate: f64::NAN,
        log_posterior: Vec::new(),
        warnings: Vec::new(),
    };
    let seed = opts.seed.unwrap_or(rec.config.chain.seed);
    let out_path = opts.out.clone().unwrap_or_else(|| opts.fit.join("surface.csv"));
    let mut out = CsvOut::create(&out_path, &["x", "y", "tau", "cond_y", "q_mean"])?;
    for &c in &cond_y {
        let u = bounds.to_unit_value(c);
        let surf = predict_quantile_surface(&draws, family, &sites, &opts.tau, u, seed)?;
        if surf.skipped > 0 {
            log::warn!("{} draws failed during kriging and were skipped", surf.skipped);
        }
        for (s, &(x, y)) in surf.sites.iter().enumerate() {
            for (k, &tau) in surf.tau.iter().enumerate() {
                out.record([
                    fmt(x),
                    fmt(y),
                    fmt(tau),
                    fmt(c),
                    fmt(bounds.from_unit_value(surf.q_mean[s][k])),
                ])?;
            }
        }
    }
    out.finish()
}
