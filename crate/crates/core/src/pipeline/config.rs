use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::bayes::{GaussianRidgePrior, SkewTPrior};
use crate::copula::WeibullTau2Prior;
use crate::error::{Error, Result};
use crate::forecast::{Family, FeatureSpec, FitSettings, SimOptions, ValueScale};
use crate::margins::PriceTransform;
use crate::panel::{CapRegime, PanelSchema, ValueKind};
use crate::reservoir::ReservoirConfig;
use crate::scoring::SystemWeights;
use crate::synthetic::SynthSpec;

/// A duration in calendar months, days or sampling steps, written like
/// `"3 months"`, `"14 days"` or `"480 steps"`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum Span {
    Months(u32),
    Days(u32),
    Steps(usize),
}

impl FromStr for Span {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || {
            Error::InvalidConfig(format!(
                "cannot parse span {s:?}; expected e.g. \"3 months\" or \"480 steps\""
            ))
        };
        let mut it = s.split_whitespace();
        let n = it.next().ok_or_else(bad)?;
        let unit = it.next().ok_or_else(bad)?;
        if it.next().is_some() {
            return Err(bad());
        }
        match unit.trim_end_matches('s') {
            "month" => Ok(Span::Months(n.parse().map_err(|_| bad())?)),
            "day" => Ok(Span::Days(n.parse().map_err(|_| bad())?)),
            "step" => Ok(Span::Steps(n.parse().map_err(|_| bad())?)),
            _ => Err(bad()),
        }
    }
}

impl TryFrom<String> for Span {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<Span> for String {
    fn from(s: Span) -> String {
        s.to_string()
    }
}

impl fmt::Display for Span {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Span::Months(n) => write!(f, "{n} month{}", if *n == 1 { "" } else { "s" }),
            Span::Days(n) => write!(f, "{n} day{}", if *n == 1 { "" } else { "s" }),
            Span::Steps(n) => write!(f, "{n} step{}", if *n == 1 { "" } else { "s" }),
        }
    }
}

/// Synthetic demand columns added to a generated panel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthDemand {
    pub noise_scale: f64,
    pub seed: u64,
}

impl Default for SynthDemand {
    fn default() -> Self {
        Self {
            noise_scale: 0.2,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    /// Long-format panel file; relative paths resolve against the config file.
    pub panel: Option<PathBuf>,
    /// Generate the panel instead of loading one.
    pub synthetic: Option<SynthSpec>,
    pub synthetic_demand: Option<SynthDemand>,
    pub timestamp_column: String,
    pub series_column: String,
    pub value_column: String,
    pub value_kind: ValueKind,
    pub step_minutes: i64,
    /// Exogenous columns to load.
    pub exogenous: Vec<String>,
    /// Exogenous columns that are forecasts issued before the origin, and so
    /// may be read at future timestamps.
    pub forward_exogenous: Vec<String>,
    pub transform: PriceTransform,
    pub regimes: Vec<CapRegime>,
}

impl Default for DataConfig {
    fn default() -> Self {
        let s = PanelSchema::default();
        Self {
            panel: None,
            synthetic: None,
            synthetic_demand: None,
            timestamp_column: s.timestamp_column,
            series_column: s.series_column,
            value_column: s.value_column,
            value_kind: s.value_kind,
            step_minutes: s.step_minutes,
            exogenous: Vec::new(),
            forward_exogenous: Vec::new(),
            transform: s.transform,
            regimes: Vec::new(),
        }
    }
}

impl DataConfig {
    pub fn schema(&self) -> PanelSchema {
        PanelSchema {
            timestamp_column: self.timestamp_column.clone(),
            series_column: self.series_column.clone(),
            value_column: self.value_column.clone(),
            value_kind: self.value_kind,
            step_minutes: self.step_minutes,
            exogenous: self.exogenous.clone(),
            transform: self.transform.clone(),
            regimes: self.regimes.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScheduleConfig {
    pub train_window: Span,
    pub refit_cadence: Span,
    /// Steps between consecutive forecast origins.
    pub origin_cadence: usize,
    pub horizon: usize,
    /// First origin; defaults to the earliest with a full training window.
    pub eval_start: Option<String>,
    /// Last origin (inclusive); defaults to the last with realized values over the horizon.
    pub eval_end: Option<String>,
    pub max_origins: Option<usize>,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        Self {
            train_window: Span::Months(3),
            refit_cadence: Span::Months(1),
            origin_cadence: 1,
            horizon: 48,
            eval_start: None,
            eval_end: None,
            max_origins: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FeatureConfig {
    pub short_lags: Vec<usize>,
    pub long_lags: Vec<usize>,
    pub exogenous: Vec<String>,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        let f = FeatureSpec::default();
        Self {
            short_lags: f.short_lags,
            long_lags: f.long_lags,
            exogenous: Vec::new(),
        }
    }
}

impl FeatureConfig {
    pub fn spec(&self, series_ids: &[String], family: Family) -> FeatureSpec {
        FeatureSpec {
            series_ids: series_ids.to_vec(),
            short_lags: self.short_lags.clone(),
            long_lags: self.long_lags.clone(),
            exogenous: self.exogenous.clone(),
            include_intercept: family.has_intercept(),
            value_scale: family.value_scale(),
        }
    }

    pub fn max_lag(&self) -> usize {
        self.short_lags
            .iter()
            .chain(&self.long_lags)
            .copied()
            .max()
            .unwrap_or(0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelsConfig {
    pub families: Vec<Family>,
    /// Appended to each family name in reports, e.g. `"+D"`.
    pub label_suffix: String,
    pub k: usize,
    pub n_iter: usize,
    pub n_burn: usize,
    pub washout: usize,
    pub keep_draws: usize,
    pub seed: u64,
    pub skew_normal_nu: f64,
    pub gaussian_prior: GaussianRidgePrior,
    pub skew_t_prior: SkewTPrior,
    pub copula_prior: WeibullTau2Prior,
}

impl Default for ModelsConfig {
    fn default() -> Self {
        let f = FitSettings::default();
        Self {
            families: vec![Family::Copula, Family::SkewT],
            label_suffix: String::new(),
            k: f.k,
            n_iter: f.n_iter,
            n_burn: f.n_burn,
            washout: f.washout,
            keep_draws: f.keep_draws,
            seed: 0,
            skew_normal_nu: f.skew_normal_nu,
            gaussian_prior: f.gaussian_prior,
            skew_t_prior: f.skew_prior,
            copula_prior: f.copula_prior,
        }
    }
}

impl ModelsConfig {
    pub fn label(&self, family: Family) -> String {
        format!("{}{}", family.name(), self.label_suffix)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulationConfig {
    pub n_path: usize,
    pub seed: u64,
    pub shared_k: bool,
    pub shuffle_series: bool,
    pub posterior_draws: bool,
}

impl Default for SimulationConfig {
    fn default() -> Self {
        let s = SimOptions::default();
        Self {
            n_path: s.n_path,
            seed: 0,
            shared_k: s.shared_k,
            shuffle_series: s.shuffle_series,
            posterior_draws: s.posterior_draws,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct MarginConfig {
    /// Fixed KDE bandwidth; the rule-of-thumb bandwidth when absent.
    pub bandwidth: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScoringConfig {
    /// Weights for system aggregates; equal weights when absent.
    pub weights: Option<SystemWeights>,
    /// Horizon steps pooled into the calibration curves.
    pub calibration_steps: usize,
    pub calibration_grid: usize,
}

impl Default for ScoringConfig {
    fn default() -> Self {
        Self {
            weights: None,
            calibration_steps: 8,
            calibration_grid: 200,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputConfig {
    pub dir: PathBuf,
    /// Also write the fitted models, for exact re-runs.
    pub save_fits: bool,
    /// Also write raw simulated paths (large).
    pub keep_paths: bool,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self {
            dir: PathBuf::from("out"),
            save_fits: false,
            keep_paths: false,
        }
    }
}

/// Every setting of a backtest run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct BacktestConfig {
    pub data: DataConfig,
    pub schedule: ScheduleConfig,
    pub features: FeatureConfig,
    pub reservoir: ReservoirConfig,
    pub models: ModelsConfig,
    pub simulation: SimulationConfig,
    pub margins: MarginConfig,
    pub scoring: ScoringConfig,
    pub output: OutputConfig,
}

/// Annotated configuration with every default spelled out.
pub const TEMPLATE: &str = include_str!("template.toml");

impl BacktestConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        Ok(toml::from_str(text)?)
    }

    /// Loads a config file; a relative panel path resolves against its directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let mut cfg = Self::from_toml(&std::fs::read_to_string(path)?)?;
        if let (Some(p), Some(dir)) = (&cfg.data.panel, path.parent()) {
            if p.is_relative() {
                cfg.data.panel = Some(dir.join(p));
            }
        }
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::InvalidConfig(e.to_string()))
    }

    /// SHA-256 of the canonical serialization.
    pub fn hash(&self) -> Result<String> {
        let digest = Sha256::digest(self.to_toml()?.as_bytes());
        Ok(digest.iter().map(|b| format!("{b:02x}")).collect())
    }

    pub fn fit_settings(&self, family: Family) -> FitSettings {
        let m = &self.models;
        FitSettings {
            family,
            k: m.k,
            reservoir: self.reservoir.clone(),
            gaussian_prior: m.gaussian_prior.clone(),
            skew_prior: m.skew_t_prior.clone(),
            copula_prior: m.copula_prior.clone(),
            skew_normal_nu: m.skew_normal_nu,
            n_iter: m.n_iter,
            n_burn: m.n_burn,
            keep_draws: m.keep_draws,
            washout: m.washout,
            seed: m.seed,
        }
    }

    pub fn sim_options(&self, seed: u64) -> SimOptions {
        let s = &self.simulation;
        SimOptions {
            n_path: s.n_path,
            horizon: self.schedule.horizon,
            seed,
            shared_k: s.shared_k,
            shuffle_series: s.shuffle_series,
            posterior_draws: s.posterior_draws,
            keep_paths: self.output.keep_paths,
        }
    }

    /// Checks that need no data.
    pub fn validate(&self) -> Result<()> {
        let s = &self.schedule;
        if s.horizon == 0 {
            return Err(Error::InvalidConfig("horizon must be at least 1".into()));
        }
        if s.origin_cadence == 0 {
            return Err(Error::InvalidConfig("origin_cadence must be at least 1 step".into()));
        }
        if matches!(s.train_window, Span::Months(0) | Span::Days(0) | Span::Steps(0)) {
            return Err(Error::InvalidConfig("train_window must be positive".into()));
        }
        if matches!(s.refit_cadence, Span::Months(0) | Span::Days(0) | Span::Steps(0)) {
            return Err(Error::InvalidConfig("refit_cadence must be positive".into()));
        }
        let m = &self.models;
        if m.families.is_empty() {
            return Err(Error::InvalidConfig("no model families selected".into()));
        }
        if m.k == 0 || m.n_iter <= m.n_burn {
            return Err(Error::InvalidConfig("need K ≥ 1 and n_iter > n_burn".into()));
        }
        if self.simulation.posterior_draws && m.keep_draws == 0 {
            return Err(Error::InvalidConfig(
                "posterior_draws needs models.keep_draws > 0".into(),
            ));
        }
        if self.simulation.n_path == 0 {
            return Err(Error::InvalidConfig("n_path must be at least 1".into()));
        }
        self.reservoir.validate()?;
        m.gaussian_prior.validate()?;
        m.copula_prior.validate()?;
        let probe = self.features.spec(&["probe".into()], Family::Gaussian);
        if probe.short_lags.iter().chain(&probe.long_lags).any(|&l| l == 0) {
            return Err(Error::LookAhead("a lag of 0 reads the value being forecast".into()));
        }
        probe.validate()?;
        if let Some(missing) = self
            .features
            .exogenous
            .iter()
            .find(|c| !self.available_exogenous().contains(c))
        {
            return Err(Error::InvalidConfig(format!(
                "feature column {missing:?} is not loaded by [data]"
            )));
        }
        if let Some(w) = &self.scoring.weights {
            w.validate()?;
        }
        if self.scoring.calibration_grid < 2 {
            return Err(Error::InvalidConfig("calibration_grid must be at least 2".into()));
        }
        match (&self.data.panel, &self.data.synthetic) {
            (Some(_), Some(_)) => Err(Error::InvalidConfig(
                "set either data.panel or data.synthetic, not both".into(),
            )),
            (None, None) => Err(Error::InvalidConfig(
                "no data source: set data.panel or data.synthetic".into(),
            )),
            _ => Ok(()),
        }
    }

    /// Exogenous columns the panel will carry.
    pub fn available_exogenous(&self) -> Vec<String> {
        let mut cols = self.data.exogenous.clone();
        if self.data.synthetic_demand.is_some() {
            for c in ["D10", "D50", "D90"] {
                if !cols.iter().any(|x| x == c) {
                    cols.push(c.to_string());
                }
            }
        }
        cols
    }

    pub fn value_scales(&self) -> Vec<ValueScale> {
        self.models.families.iter().map(|f| f.value_scale()).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn spans() {
        assert_eq!("3 months".parse::<Span>().unwrap(), Span::Months(3));
        assert_eq!("1 month".parse::<Span>().unwrap(), Span::Months(1));
        assert_eq!("480 steps".parse::<Span>().unwrap(), Span::Steps(480));
        assert_eq!("7 days".parse::<Span>().unwrap(), Span::Days(7));
        assert!("3 fortnights".parse::<Span>().is_err());
        assert!("months".parse::<Span>().is_err());
        assert_eq!(Span::Months(3).to_string().parse::<Span>().unwrap(), Span::Months(3));
    }

    #[test]
    fn template_matches_defaults() {
        let parsed = BacktestConfig::from_toml(TEMPLATE).unwrap();
        assert_eq!(parsed, BacktestConfig::default());
    }

    #[test]
    fn round_trip_and_hash() {
        let cfg = BacktestConfig::default();
        let back = BacktestConfig::from_toml(&cfg.to_toml().unwrap()).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(cfg.hash().unwrap(), back.hash().unwrap());
        let mut other = cfg.clone();
        other.schedule.horizon = 12;
        assert_ne!(other.hash().unwrap(), cfg.hash().unwrap());
        assert!(BacktestConfig::from_toml("[schedule]\nhorizon = 4\nbogus = 1\n").is_err());
        assert!(BacktestConfig::from_toml("[nonsense]\n").is_err());
    }

    #[test]
    fn validation() {
        let mut cfg = BacktestConfig::default();
        assert!(cfg.validate().is_err()); // no data source
        cfg.data.synthetic = Some(SynthSpec::default());
        cfg.validate().unwrap();
        cfg.schedule.horizon = 0;
        assert!(cfg.validate().is_err());
        cfg.schedule.horizon = 4;
        cfg.features.exogenous = vec!["D50".into()];
        assert!(cfg.validate().is_err());
        cfg.data.synthetic_demand = Some(SynthDemand::default());
        cfg.validate().unwrap();
        cfg.features.short_lags = vec![0, 1];
        assert!(matches!(cfg.validate(), Err(Error::LookAhead(_))));
    }
}
