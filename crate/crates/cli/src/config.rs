//! Run configuration: one JSON document, overridden by command-line flags.

use std::path::{Path, PathBuf};

use qarlab::assess::TauGrid;
use qarlab::mcmc::{default_sigma_ab, ChainConfig, CurveSpec, Kx2006Priors};
use qarlab::spatial::{SqarDecay, SqarPriors};
use qarlab::support::SupportBounds;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Family {
    Qar,
    Kx2006,
    Mqar,
    Sqar,
}

impl Family {
    pub fn as_str(self) -> &'static str {
        match self {
            Family::Qar => "qar",
            Family::Kx2006 => "kx2006",
            Family::Mqar => "mqar",
            Family::Sqar => "sqar",
        }
    }
}

/// How raw data are mapped onto the unit interval.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BoundsPolicy {
    /// Sample-extreme heuristic.
    Auto,
    /// Data are already in `(0, 1)`.
    Unit,
    Fixed { lower: f64, upper: f64 },
}

impl std::str::FromStr for BoundsPolicy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s.trim().to_ascii_lowercase().as_str() {
            "auto" => Ok(BoundsPolicy::Auto),
            "unit" => Ok(BoundsPolicy::Unit),
            other => {
                let parts: Vec<&str> = other.split(',').collect();
                match parts.as_slice() {
                    [a, b] => {
                        let lower = a.trim().parse::<f64>().map_err(|e| e.to_string())?;
                        let upper = b.trim().parse::<f64>().map_err(|e| e.to_string())?;
                        Ok(BoundsPolicy::Fixed { lower, upper })
                    }
                    _ => Err(format!("expected `auto`, `unit` or `m,M`, got `{s}`")),
                }
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PriorConfig {
    /// Prior sd of the log Kumaraswamy shapes; `null` picks the family default.
    pub sigma_ab: Option<f64>,
    pub kx2006: Kx2006Priors,
    pub sqar: SqarPriors,
}

impl Default for PriorConfig {
    fn default() -> Self {
        Self {
            sigma_ab: None,
            kx2006: Kx2006Priors::default(),
            sqar: SqarPriors::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub family: Family,
    pub p: usize,
    pub curve: CurveSpec,
    pub priors: PriorConfig,
    pub chain: ChainConfig,
    pub tau_grid: Vec<f64>,
    /// Credible level of every reported interval.
    pub level: f64,
    pub bounds: BoundsPolicy,
    /// Columns to model; empty selects the family default.
    pub series: Vec<String>,
    /// Conditioning values (data scale) for density grids; empty uses the quartiles.
    pub cond: Vec<f64>,
    /// Conditioning values for the second series of an mqar fit.
    pub cond_min: Vec<f64>,
    pub density_points: usize,
    /// Side of the mqar joint density lattice.
    pub joint_grid: usize,
    /// Separate proposal blocks for sqar fields and hyperparameters.
    pub blocked: bool,
    pub decay: SqarDecay,
    pub data: Option<PathBuf>,
    pub stations: Option<PathBuf>,
    pub out: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            family: Family::Qar,
            p: 1,
            curve: CurveSpec::Free { k: 1 },
            priors: PriorConfig::default(),
            chain: ChainConfig::default(),
            tau_grid: TauGrid::default().values().to_vec(),
            level: 0.95,
            bounds: BoundsPolicy::Auto,
            series: Vec::new(),
            cond: Vec::new(),
            cond_min: Vec::new(),
            density_points: 101,
            joint_grid: 51,
            blocked: true,
            decay: SqarDecay::default(),
            data: None,
            stations: None,
            out: None,
        }
    }
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> CliResult<Self> {
        match path {
            Some(p) => crate::io::read_json(p),
            None => Ok(Self::default()),
        }
    }

    pub fn grid(&self) -> CliResult<TauGrid> {
        TauGrid::new(self.tau_grid.clone()).map_err(|e| CliError::Config(e.to_string()))
    }

    /// Set `k` while keeping the curve kind.
    pub fn set_k(&mut self, k: usize) {
        self.curve = match self.curve {
            CurveSpec::Free { .. } => CurveSpec::Free { k },
            CurveSpec::Basis { shape, .. } => CurveSpec::Basis { k, shape },
        };
    }

    /// Fill family defaults so the stored config is complete.
    pub fn resolve(&mut self) {
        if self.priors.sigma_ab.is_none() && matches!(self.family, Family::Qar | Family::Mqar) {
            self.priors.sigma_ab = Some(default_sigma_ab(&self.curve, self.p));
        }
    }

    /// Check everything that does not need the data.
    pub fn validate(&self) -> CliResult<()> {
        let bad = |m: String| Err(CliError::Config(m));
        self.chain.validate().map_err(|e| CliError::Config(e.to_string()))?;
        self.curve.validate().map_err(|e| CliError::Config(e.to_string()))?;
        self.grid()?;
        if !(self.level > 0.0 && self.level < 1.0) {
            return bad(format!("level {} is not in (0, 1)", self.level));
        }
        if self.p == 0 {
            return bad("p must be at least 1".into());
        }
        if self.family != Family::Qar && self.p != 1 {
            return bad(format!("the {} family is first order; got p = {}", self.family.as_str(), self.p));
        }
        if self.family == Family::Sqar && self.curve != (CurveSpec::Free { k: 1 }) {
            return bad("the sqar family uses one free Kumaraswamy component per curve (k = 1)".into());
        }
        if self.family == Family::Sqar && self.stations.is_none() {
            return bad("the sqar family needs a station file (--stations)".into());
        }
        if self.family == Family::Mqar && !(self.series.is_empty() || self.series.len() == 2) {
            return bad(format!("mqar models two series; {} were named", self.series.len()));
        }
        if matches!(self.family, Family::Qar | Family::Kx2006) && self.series.len() > 1 {
            return bad(format!("{} models one series; {} were named", self.family.as_str(), self.series.len()));
        }
        if let Some(s) = self.priors.sigma_ab {
            if !(s > 0.0 && s.is_finite()) {
                return bad(format!("sigma_ab = {s} must be positive"));
            }
        }
        if let BoundsPolicy::Fixed { lower, upper } = self.bounds {
            SupportBounds::new(lower, upper).map_err(|e| CliError::Config(e.to_string()))?;
        }
        if self.density_points < 2 {
            return bad("density_points must be at least 2".into());
        }
        if self.joint_grid == 0 {
            return bad("joint_grid must be at least 1".into());
        }
        if self.cond.iter().chain(&self.cond_min).any(|v| !v.is_finite()) {
            return bad("conditioning values must be finite".into());
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip_through_json() {
        let mut c = RunConfig::default();
        c.resolve();
        let text = serde_json::to_string(&c).unwrap();
        let back: RunConfig = serde_json::from_str(&text).unwrap();
        assert_eq!(back, c);
        assert_eq!(c.priors.sigma_ab, Some(3.0));
        assert_eq!(c.tau_grid.len(), 99);
    }

    #[test]
    fn partial_documents_fill_defaults() {
        let c: RunConfig = serde_json::from_str(
            r#"{"family": "mqar", "curve": {"kind": "free", "k": 2}, "chain": {"iterations": 400}, "bounds": "unit"}"#,
        )
        .unwrap();
        assert_eq!(c.family, Family::Mqar);
        assert_eq!(c.chain.iterations, 400);
        assert_eq!(c.chain.thin, ChainConfig::default().thin);
        assert_eq!(c.bounds, BoundsPolicy::Unit);
        assert!(serde_json::from_str::<RunConfig>(r#"{"famly": "qar"}"#).is_err());
    }

    #[test]
    fn bounds_flags() {
        assert_eq!("auto".parse::<BoundsPolicy>().unwrap(), BoundsPolicy::Auto);
        assert_eq!(
            "-1, 2.5".parse::<BoundsPolicy>().unwrap(),
            BoundsPolicy::Fixed { lower: -1.0, upper: 2.5 }
        );
        assert!("1,2,3".parse::<BoundsPolicy>().is_err());
    }

    #[test]
    fn family_requirements() {
        let c = RunConfig {
            family: Family::Sqar,
            ..RunConfig::default()
        };
        assert!(matches!(c.validate(), Err(CliError::Config(m)) if m.contains("station")));
        let c = RunConfig {
            family: Family::Mqar,
            p: 2,
            ..RunConfig::default()
        };
        assert!(c.validate().is_err());
        let mut c = RunConfig::default();
        c.set_k(3);
        assert_eq!(c.curve, CurveSpec::Free { k: 3 });
        assert!(c.validate().is_ok());
    }
}
