//! `qarlab`: fit, simulate and assess joint quantile autoregressions.

mod assess;
mod config;
mod coverage;
mod error;
mod fit;
mod io;
mod krige;
mod model;
mod simulate;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use qarlab::mcmc::CurveSpec;

use crate::config::{BoundsPolicy, Family, RunConfig};
use crate::error::{CliError, CliResult};

#[derive(Parser)]
#[command(name = "qarlab", version, about = "Joint quantile autoregression toolkit")]
struct Cli {
    /// Worker threads; defaults to QARLAB_THREADS or all cores.
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit a model by adaptive MCMC and write draws, summaries and grids.
    Fit(FitArgs),
    /// Simulate data from a catalogued scenario.
    Simulate(SimulateArgs),
    /// Credible-interval coverage by repeated simulation and refitting.
    Coverage(CoverageArgs),
    /// Goodness-of-fit metrics for a completed fit.
    Assess(AssessArgs),
    /// Predict conditional quantile surfaces at new sites from a spatial fit.
    Krige(KrigeArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum CurveKind {
    Free,
    Basis,
}

#[derive(Args, Default)]
struct ChainArgs {
    #[arg(long)]
    iterations: Option<usize>,
    #[arg(long)]
    burn_in: Option<usize>,
    #[arg(long)]
    thin: Option<usize>,
    #[arg(long)]
    adapt_start: Option<usize>,
}

#[derive(Args)]
struct FitArgs {
    /// JSON run configuration; flags override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    data: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: u64,
    #[arg(long, value_enum)]
    family: Option<Family>,
    /// Autoregressive order.
    #[arg(long)]
    p: Option<usize>,
    /// Components per monotone curve.
    #[arg(long)]
    k: Option<usize>,
    #[arg(long, value_enum)]
    curve: Option<CurveKind>,
    #[command(flatten)]
    chain: ChainArgs,
    /// Credible level of reported intervals.
    #[arg(long)]
    level: Option<f64>,
    /// `auto`, `unit` or `m,M`.
    #[arg(long)]
    bounds: Option<BoundsPolicy>,
    /// Comma-separated column names to model.
    #[arg(long, value_delimiter = ',')]
    series: Option<Vec<String>>,
    /// Station file `id,x,y[,elev]` for the sqar family.
    #[arg(long)]
    stations: Option<PathBuf>,
    /// Conditioning values for density grids (data scale).
    #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
    cond: Option<Vec<f64>>,
    /// Conditioning values for the second mqar series.
    #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
    cond_min: Option<Vec<f64>>,
}

#[derive(Args)]
struct SimulateArgs {
    #[arg(long, default_value = "SC1")]
    scenario: String,
    /// Scenario of the second mqar series; defaults to `--scenario`.
    #[arg(long)]
    scenario_min: Option<String>,
    #[arg(long, value_enum, default_value = "qar")]
    family: Family,
    /// Series length after warm-up.
    #[arg(long, default_value_t = 150)]
    t: usize,
    #[arg(long, default_value_t = qarlab::simkit::DEFAULT_WARMUP)]
    warmup: usize,
    /// Independent qar series, seeded `seed`, `seed + 1`, ...
    #[arg(long, default_value_t = 1)]
    replicates: usize,
    #[arg(long)]
    seed: u64,
    /// Copula correlation of the mqar family.
    #[arg(long, default_value_t = 0.6, allow_negative_numbers = true)]
    rho: f64,
    #[arg(long)]
    stations: Option<PathBuf>,
    /// Spatial share of the sqar copula correlation, in [0, 1].
    #[arg(long, default_value_t = 0.9)]
    gamma: f64,
    /// Standard deviation of the simulated log-shape fields.
    #[arg(long, default_value_t = 0.2)]
    field_sd: f64,
    /// Output data CSV.
    #[arg(long)]
    out: PathBuf,
    /// Also write the true parameters as JSON.
    #[arg(long)]
    truth: Option<PathBuf>,
}

#[derive(Args)]
struct CoverageArgs {
    #[arg(long, default_value = "SC1")]
    scenario: String,
    /// Replicates.
    #[arg(long, default_value_t = 20)]
    b: usize,
    #[arg(long, default_value_t = 150)]
    t: usize,
    #[arg(long, default_value_t = 0.9)]
    level: f64,
    #[arg(long, default_value_t = qarlab::simkit::DEFAULT_WARMUP)]
    warmup: usize,
    /// Replicate `b` simulates with `seed + b`.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// JSON run configuration supplying `chain` and `tau_grid`.
    #[arg(long)]
    config: Option<PathBuf>,
    #[command(flatten)]
    chain: ChainArgs,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct AssessArgs {
    /// Output directory of a fit.
    #[arg(long)]
    fit: PathBuf,
    /// Data CSV; defaults to the file recorded by the fit.
    #[arg(long)]
    data: Option<PathBuf>,
    /// Output directory; defaults to the fit directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Exponents `v` of the coverage discrepancy.
    #[arg(long, value_delimiter = ',', default_value = "2")]
    v: Vec<f64>,
}

#[derive(Args)]
struct KrigeArgs {
    /// Output directory of an sqar fit.
    #[arg(long)]
    fit: PathBuf,
    /// Prediction sites, `x,y` or `id,x,y[,elev]`.
    #[arg(long)]
    sites: PathBuf,
    #[arg(long)]
    data: Option<PathBuf>,
    /// Output CSV; defaults to `surface.csv` in the fit directory.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_delimiter = ',', default_value = "0.1,0.5,0.9")]
    tau: Vec<f64>,
    /// Conditioning values of the previous observation (data scale).
    #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
    cond_y: Vec<f64>,
    /// Kriging seed; defaults to the fit's chain seed.
    #[arg(long)]
    seed: Option<u64>,
}

impl ChainArgs {
    fn apply(&self, c: &mut qarlab::mcmc::ChainConfig) {
        if let Some(v) = self.iterations {
            c.iterations = v;
        }
        if let Some(v) = self.burn_in {
            c.burn_in = v;
        }
        if let Some(v) = self.thin {
            c.thin = v;
        }
        if let Some(v) = self.adapt_start {
            c.adapt_start = v;
        }
    }
}

fn fit_config(a: FitArgs) -> CliResult<RunConfig> {
    let mut c = RunConfig::load(a.config.as_deref())?;
    c.chain.seed = a.seed;
    if let Some(v) = a.family {
        c.family = v;
    }
    if let Some(v) = a.p {
        c.p = v;
    }
    if let Some(kind) = a.curve {
        let k = c.curve.components();
        c.curve = match kind {
            CurveKind::Free => CurveSpec::Free { k },
            CurveKind::Basis => CurveSpec::Basis { k, shape: 2.0 },
        };
    }
    if let Some(k) = a.k {
        c.set_k(k);
    }
    a.chain.apply(&mut c.chain);
    if let Some(v) = a.level {
        c.level = v;
    }
    if let Some(v) = a.bounds {
        c.bounds = v;
    }
    if let Some(v) = a.series {
        c.series = v;
    }
    if let Some(v) = a.stations {
        c.stations = Some(v);
    }
    if let Some(v) = a.cond {
        c.cond = v;
    }
    if let Some(v) = a.cond_min {
        c.cond_min = v;
    }
    if let Some(v) = a.data {
        c.data = Some(v);
    }
    if let Some(v) = a.out {
        c.out = Some(v);
    }
    Ok(c)
}

fn thread_count(flag: Option<usize>) -> CliResult<Option<usize>> {
    if let Some(n) = flag {
        return Ok(Some(n));
    }
    match std::env::var("QARLAB_THREADS") {
        Ok(s) if !s.trim().is_empty() => s
            .trim()
            .parse()
            .map(Some)
            .map_err(|_| CliError::Config(format!("QARLAB_THREADS=`{s}` is not a thread count"))),
        _ => Ok(None),
    }
}

fn run(cli: Cli) -> CliResult<()> {
    if let Some(n) = thread_count(cli.threads)? {
        if n == 0 {
            return Err(CliError::Config("thread count must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Config(e.to_string()))?;
    }
    match cli.command {
        Command::Fit(a) => fit::run(fit_config(a)?),
        Command::Simulate(a) => simulate::run(simulate::SimulateOptions {
            family: a.family,
            scenario: a.scenario,
            scenario_min: a.scenario_min,
            t: a.t,
            warmup: a.warmup,
            replicates: a.replicates,
            seed: a.seed,
            rho: a.rho,
            stations: a.stations,
            gamma: a.gamma,
            field_sd: a.field_sd,
            out: a.out,
            truth: a.truth,
        }),
        Command::Coverage(a) => {
            let config = RunConfig::load(a.config.as_deref())?;
            let mut chain = config.chain;
            a.chain.apply(&mut chain);
            coverage::run(coverage::CoverageOptions {
                scenario: a.scenario,
                b: a.b,
                t: a.t,
                level: a.level,
                warmup: a.warmup,
                seed: a.seed,
                chain,
                config,
                out: a.out,
            })
        }
        Command::Assess(a) => assess::run(assess::AssessOptions {
            fit: a.fit,
            data: a.data,
            out: a.out,
            v: a.v,
        }),
        Command::Krige(a) => krige::run(krige::KrigeOptions {
            fit: a.fit,
            sites: a.sites,
            data: a.data,
            out: a.out,
            tau: a.tau,
            cond_y: a.cond_y,
            seed: a.seed,
        }),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
