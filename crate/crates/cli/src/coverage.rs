use std::path::PathBuf;

use qarlab::mcmc::ChainConfig;
use qarlab::simkit::{coverage_study, scenario_catalog, CoverageConfig};

use crate::config::RunConfig;
use crate::error::{CliError, CliResult};
use crate::io::{ensure_dir, fmt, write_json, CsvOut};

#[derive(Debug, Clone)]
pub struct CoverageOptions {
    pub scenario: String,
    pub b: usize,
    pub t: usize,
    pub level: f64,
    pub warmup: usize,
    pub seed: u64,
    pub chain: ChainConfig,
    pub config: RunConfig,
    pub out: PathBuf,
}

pub fn run(opts: CoverageOptions) -> CliResult<()> {
    let sc = scenario_catalog(&opts.scenario).map_err(|e| CliError::Config(e.to_string()))?;
    let cfg = CoverageConfig {
        b: opts.b,
        t: opts.t,
        level: opts.level,
        grid: opts.config.grid()?,
        chain: opts.chain,
        warmup: opts.warmup,
        base_seed: opts.seed,
    };
    opts.chain.validate().map_err(|e| CliError::Config(e.to_string()))?;
    log::info!("coverage study for {} with {} replicates of length {}", sc.name, cfg.b, cfg.t);
    let res = coverage_study(&sc, &cfg)?;
    ensure_dir(&opts.out)?;
    write_json(
        &opts.out.join("coverage.json"),
        &serde_json::json!({
            "scenario": res.scenario,
            "b": res.b,
            "t": res.t,
            "level": res.level,
            "seed": opts.seed,
            "warmup": opts.warmup,
            "chain": opts.chain,
            "mean_cvg_theta0": res.mean_cvg_theta0,
            "mean_cvg_theta1": res.mean_cvg_theta1,
            "failures": res.failures,
            "failure_messages": res.failure_messages,
            "tau": res.tau,
            "cvg_theta0": res.cvg_theta0,
            "cvg_theta1": res.cvg_theta1,
            "replicates": res.replicates,
        }),
    )?;
    let mut csv = CsvOut::create(&opts.out.join("coverage.csv"), &["tau", "cvg_theta0", "cvg_theta1"])?;
    for k in 0..res.tau.len() {
        let at = |v: &[f64]| v.get(k).copied().unwrap_or(f64::NAN);
        csv.record([fmt(res.tau[k]), fmt(at(&res.cvg_theta0)), fmt(at(&res.cvg_theta1))])?;
    }
    csv.finish()
}
