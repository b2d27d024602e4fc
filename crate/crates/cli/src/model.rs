//! Build model families from a configuration and a data table.

use qarlab::mcmc::{decode_qar, ChainConfig, Kx2006Family, ModelFamily, PosteriorDraws, QarFamily, QarPriors};
use qarlab::mqar::MqarFamily;
use qarlab::qar::{Kx2006Model, QarModel, QuantileProcess};
use qarlab::spatial::{SqarFamily, StationSet};
use qarlab::support::{select_bounds, to_unit, SupportBounds};
use qarlab::QarError;
use serde::{Deserialize, Serialize};

use crate::config::{BoundsPolicy, Family, RunConfig};
use crate::error::{CliError, CliResult};
use crate::io::{fmt, Table};

/// Either process type, so per-series code can be written once.
#[derive(Debug, Clone)]
pub enum AnyProcess {
    Qar(QarModel),
    Kx2006(Kx2006Model),
}

impl QuantileProcess for AnyProcess {
    fn order(&self) -> usize {
        match self {
            AnyProcess::Qar(m) => m.order(),
            AnyProcess::Kx2006(m) => m.order(),
        }
    }
    fn quantile(&self, tau: f64, lags: &[f64]) -> qarlab::Result<f64> {
        match self {
            AnyProcess::Qar(m) => m.quantile(tau, lags),
            AnyProcess::Kx2006(m) => m.quantile(tau, lags),
        }
    }
    fn level(&self, y: f64, lags: &[f64]) -> qarlab::Result<f64> {
        match self {
            AnyProcess::Qar(m) => m.level(y, lags),
            AnyProcess::Kx2006(m) => m.level(y, lags),
        }
    }
    fn density(&self, y: f64, lags: &[f64]) -> qarlab::Result<f64> {
        match self {
            AnyProcess::Qar(m) => m.density(y, lags),
            AnyProcess::Kx2006(m) => m.density(y, lags),
        }
    }
    fn theta(&self, tau: f64) -> qarlab::Result<Vec<f64>> {
        match self {
            AnyProcess::Qar(m) => m.theta(tau),
            AnyProcess::Kx2006(m) => m.theta(tau),
        }
    }
    fn log_likelihood(&self, y: &[f64]) -> qarlab::Result<f64> {
        match self {
            AnyProcess::Qar(m) => m.log_likelihood(y),
            AnyProcess::Kx2006(m) => m.log_likelihood(y),
        }
    }
}

pub enum Fitted {
    Qar(QarFamily),
    Kx2006(Kx2006Family),
    Mqar(MqarFamily),
    Sqar(SqarFamily),
}

/// Station layout as stored in a fit summary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StationRecord {
    pub ids: Vec<String>,
    pub coords: Vec<(f64, f64)>,
}

impl StationRecord {
    pub fn from_set(s: &StationSet) -> Self {
        Self {
            ids: s.ids().to_vec(),
            coords: s.coords().to_vec(),
        }
    }

    pub fn to_set(&self) -> CliResult<StationSet> {
        Ok(StationSet::new(self.ids.clone(), self.coords.clone())?)
    }
}

pub struct Prepared {
    pub family: Fitted,
    pub series: Vec<String>,
    /// `None` for families fitted on the original scale.
    pub bounds: Vec<Option<SupportBounds>>,
    pub raw: Vec<Vec<f64>>,
    /// Series on the model scale.
    pub scaled: Vec<Vec<f64>>,
    pub stations: Option<StationSet>,
}

/// One modelled series with a decoder from a posterior draw to its process.
pub struct Marginal<'a> {
    pub name: String,
    pub bounds: Option<SupportBounds>,
    pub raw: &'a [f64],
    pub scaled: &'a [f64],
    decode: Decoder<'a>,
}

type Decoder<'a> = Box<dyn Fn(&[f64]) -> qarlab::Result<AnyProcess> + Sync + 'a>;

impl Marginal<'_> {
    pub fn decode(&self, theta: &[f64]) -> qarlab::Result<AnyProcess> {
        (self.decode)(theta)
    }

    /// Data value to model scale.
    pub fn to_model(&self, v: f64) -> f64 {
        self.bounds.map_or(v, |b| b.to_unit_value(v))
    }

    /// Model-scale value to data scale.
    pub fn to_data(&self, v: f64) -> f64 {
        self.bounds.map_or(v, |b| b.from_unit_value(v))
    }

    /// Jacobian of the model-to-data map.
    pub fn scale(&self) -> f64 {
        self.bounds.map_or(1.0, |b| b.width())
    }
}

fn default_series(cfg: &RunConfig, table: &Table) -> CliResult<Vec<String>> {
    if !cfg.series.is_empty() {
        return Ok(cfg.series.clone());
    }
    let need = match cfg.family {
        Family::Qar | Family::Kx2006 => 1,
        Family::Mqar => 2,
        Family::Sqar => table.names.len(),
    };
    if table.names.len() < need {
        return Err(CliError::Config(format!(
            "the {} family needs {need} series, the data have {}",
            cfg.family.as_str(),
            table.names.len()
        )));
    }
    Ok(table.names[..need].to_vec())
}

fn pick_bounds(policy: BoundsPolicy, values: &[f64]) -> CliResult<SupportBounds> {
    Ok(match policy {
        BoundsPolicy::Auto => select_bounds(values)?,
        BoundsPolicy::Unit => SupportBounds::unit(),
        BoundsPolicy::Fixed { lower, upper } => SupportBounds::new(lower, upper)?,
    })
}

fn order_stations(all: &StationSet, series: &[String]) -> CliResult<StationSet> {
    let order = series
        .iter()
        .map(|s| {
            all.ids().iter().position(|id| id == s).ok_or_else(|| {
                CliError::Config(format!("series `{s}` has no entry in the station file"))
            })
        })
        .collect::<CliResult<Vec<_>>>()?;
    let ids = order.iter().map(|&i| all.ids()[i].clone()).collect();
    let coords = order.iter().map(|&i| all.coords()[i]).collect();
    Ok(StationSet::new(ids, coords)?)
}

/// Select, scale and wrap the data. `recorded` reuses the bounds of an earlier fit.
pub fn prepare(
    cfg: &RunConfig,
    table: &Table,
    stations: Option<&StationSet>,
    recorded: Option<&[Option<SupportBounds>]>,
) -> CliResult<Prepared> {
    let series = default_series(cfg, table)?;
    let mut raw = Vec::with_capacity(series.len());
    for s in &series {
        let col = table
            .column(s)
            .ok_or_else(|| CliError::Config(format!("no column `{s}` in the data")))?;
        if col.len() < cfg.p + 2 {
            return Err(QarError::Domain(format!(
                "series `{s}` has {} observations; p = {} needs at least {}",
                col.len(),
                cfg.p,
                cfg.p + 2
            ))
            .into());
        }
        raw.push(col.to_vec());
    }
    let bounds: Vec<Option<SupportBounds>> = match recorded {
        Some(b) if b.len() == series.len() => b.to_vec(),
        Some(b) => {
            return Err(CliError::Config(format!(
                "fit records {} bounds for {} series",
                b.len(),
                series.len()
            )))
        }
        None => match cfg.family {
            Family::Kx2006 => vec![None; series.len()],
            Family::Sqar => {
                let pooled: Vec<f64> = raw.iter().flatten().copied().collect();
                vec![Some(pick_bounds(cfg.bounds, &pooled)?); series.len()]
            }
            _ => raw
                .iter()
                .map(|r| pick_bounds(cfg.bounds, r).map(Some))
                .collect::<CliResult<_>>()?,
        },
    };
    let scaled = raw
        .iter()
        .zip(&bounds)
        .map(|(r, b)| match b {
            Some(b) => to_unit(r, b).map_err(CliError::from),
            None => Ok(r.clone()),
        })
        .collect::<CliResult<Vec<_>>>()?;
    let priors = cfg.priors.sigma_ab.map(|sigma_ab| QarPriors { sigma_ab });
    let mut station_set = None;
    let family = match cfg.family {
        Family::Qar => Fitted::Qar(QarFamily::new(scaled[0].clone(), cfg.p, cfg.curve, priors)?),
        Family::Kx2006 => Fitted::Kx2006(Kx2006Family::new(scaled[0].clone(), cfg.priors.kx2006)?),
        Family::Mqar => Fitted::Mqar(MqarFamily::new(
            scaled[0].clone(),
            scaled[1].clone(),
            cfg.curve,
            priors,
        )?),
        Family::Sqar => {
            let all = stations.ok_or_else(|| CliError::Config("the sqar family needs stations".into()))?;
            let st = order_stations(all, &series)?;
            let t = scaled[0].len();
            let panel: Vec<Vec<f64>> = (0..t).map(|i| scaled.iter().map(|c| c[i]).collect()).collect();
            station_set = Some(st.clone());
            Fitted::Sqar(SqarFamily::new(panel, st, cfg.priors.sqar, cfg.decay, cfg.blocked)?)
        }
    };
    Ok(Prepared {
        family,
        series,
        bounds,
        raw,
        scaled,
        stations: station_set,
    })
}

/// Run the sampler after checking the likelihood at the starting point.
pub fn sample<F: ModelFamily>(f: &F, chain: &ChainConfig) -> CliResult<PosteriorDraws> {
    let spec = f.param_spec();
    let (theta, _) = spec.to_constrained(&f.initial_point());
    if let Err(source) = f.log_likelihood(&theta) {
        let snapshot = spec
            .names()
            .iter()
            .zip(&theta)
            .map(|(n, v)| format!("{n}={}", fmt(*v)))
            .collect::<Vec<_>>()
            .join(", ");
        return Err(CliError::Likelihood { source, snapshot });
    }
    Ok(qarlab::mcmc::run_chain(f, chain)?)
}

impl Prepared {
    pub fn run_chain(&self, chain: &ChainConfig) -> CliResult<PosteriorDraws> {
        match &self.family {
            Fitted::Qar(f) => sample(f, chain),
            Fitted::Kx2006(f) => sample(f, chain),
            Fitted::Mqar(f) => sample(f, chain),
            Fitted::Sqar(f) => sample(f, chain),
        }
    }

    pub fn param_names(&self) -> Vec<String> {
        match &self.family {
            Fitted::Qar(f) => f.param_spec().names(),
            Fitted::Kx2006(f) => f.param_spec().names(),
            Fitted::Mqar(f) => f.param_spec().names(),
            Fitted::Sqar(f) => f.param_spec().names(),
        }
    }

    fn marginal<'a>(&'a self, i: usize, decode: Decoder<'a>) -> Marginal<'a> {
        Marginal {
            name: self.series[i].clone(),
            bounds: self.bounds[i],
            raw: &self.raw[i],
            scaled: &self.scaled[i],
            decode,
        }
    }

    pub fn marginals(&self) -> Vec<Marginal<'_>> {
        let mk = |i, decode| self.marginal(i, decode);
        match &self.family {
            Fitted::Qar(f) => {
                let (curve, p) = (f.curve_spec(), f.order());
                vec![mk(0, Box::new(move |t| decode_qar(&curve, p, t).map(AnyProcess::Qar)))]
            }
            Fitted::Kx2006(_) => vec![mk(
                0,
                Box::new(|t| Kx2006Model::new(t[0], t[1], t[2], t[3]).map(AnyProcess::Kx2006)),
            )],
            Fitted::Mqar(f) => vec![
                mk(0, Box::new(move |t| Ok(AnyProcess::Qar(f.decode(t)?.model_max().clone())))),
                mk(1, Box::new(move |t| Ok(AnyProcess::Qar(f.decode(t)?.model_min().clone())))),
            ],
            Fitted::Sqar(f) => (0..self.series.len())
                .map(|i| mk(i, Box::new(move |t| Ok(AnyProcess::Qar(f.decode(t)?.site_model(i)?)))))
                .collect(),
        }
    }
}
