//! Feature vectors, per-series ensemble fits, and joint multi-step path
//! simulation across coupled series.

use chrono::NaiveDateTime;
use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bayes::{self, Diagnostics, GaussianRidgePrior, PointEstimate, SkewTPrior};
use crate::copula::{self, WeibullTau2Prior};
use crate::error::{Error, Result};
use crate::margins::MarginModel;
use crate::panel::TimeSeriesPanel;
use crate::reservoir::{self, DesignMatrix, ReservoirConfig, ReservoirWeights};
use crate::rng::{derive_seed, substream, Rng};
use crate::stats;

/// Attempts before the truncation sampler clamps to the nearest bound.
pub const MAX_TRUNCATION_TRIES: usize = 1000;
/// Number of interior quantile levels kept per (step, series): `i/200`.
pub const N_LEVELS: usize = 199;

pub fn quantile_levels() -> Vec<f64> {
    (1..=N_LEVELS).map(|i| i as f64 / (N_LEVELS + 1) as f64).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ValueScale {
    #[default]
    RawY,
    NormalScore,
}

/// Which lagged values and exogenous columns make up `x_t`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FeatureSpec {
    pub series_ids: Vec<String>,
    pub short_lags: Vec<usize>,
    pub long_lags: Vec<usize>,
    pub exogenous: Vec<String>,
    pub include_intercept: bool,
    pub value_scale: ValueScale,
}

impl Default for FeatureSpec {
    fn default() -> Self {
        Self {
            series_ids: Vec::new(),
            short_lags: (1..=48).collect(),
            long_lags: vec![96, 144, 192, 240, 288, 336],
            exogenous: Vec::new(),
            include_intercept: true,
            value_scale: ValueScale::RawY,
        }
    }
}

impl FeatureSpec {
    pub fn n_x(&self) -> usize {
        usize::from(self.include_intercept)
            + self.series_ids.len() * (self.short_lags.len() + self.long_lags.len())
            + self.exogenous.len()
    }

    pub fn max_lag(&self) -> usize {
        self.short_lags
            .iter()
            .chain(&self.long_lags)
            .copied()
            .max()
            .unwrap_or(0)
    }

    pub fn min_lag(&self) -> usize {
        self.short_lags
            .iter()
            .chain(&self.long_lags)
            .copied()
            .min()
            .unwrap_or(usize::MAX)
    }

    pub fn lags(&self) -> impl Iterator<Item = usize> + '_ {
        self.short_lags.iter().chain(&self.long_lags).copied()
    }

    pub fn validate(&self) -> Result<()> {
        if self.lags().any(|l| l == 0) {
            return Err(Error::InvalidConfig("lags must be positive".into()));
        }
        if self.n_x() == 0 {
            return Err(Error::InvalidConfig("feature vector is empty".into()));
        }
        Ok(())
    }

    fn resolve(&self, panel: &TimeSeriesPanel) -> Result<Vec<usize>> {
        self.series_ids.iter().map(|id| panel.series_index(id)).collect()
    }
}

/// Writes `x_t` into `out`: intercept, then each series' short and long lags
/// (series-major), then the focal series' exogenous values at `t`.
///
/// `value(j, τ)` returns series `spec.series_ids[j]` at time `τ` on the
/// feature scale; `exog(name, τ)` the exogenous value.
pub fn fill_features(
    spec: &FeatureSpec,
    t: usize,
    value: &dyn Fn(usize, usize) -> f64,
    exog: &dyn Fn(&str, usize) -> Option<f64>,
    out: &mut Vec<f64>,
) -> Result<()> {
    let max_lag = spec.max_lag();
    if t < max_lag {
        return Err(Error::InsufficientHistory { t, max_lag });
    }
    out.clear();
    if spec.include_intercept {
        out.push(1.0);
    }
    for j in 0..spec.series_ids.len() {
        for lag in spec.lags() {
            out.push(value(j, t - lag));
        }
    }
    for name in &spec.exogenous {
        out.push(
            exog(name, t)
                .ok_or_else(|| Error::MissingData(format!("exogenous column {name:?} missing at index {t}")))?,
        );
    }
    Ok(())
}

fn scale_value(panel: &TimeSeriesPanel, s: usize, t: usize, margins: Option<&[MarginModel]>) -> f64 {
    let y = panel.value(s, t);
    match margins {
        Some(m) => m[s].normal_score(y),
        None => y,
    }
}

fn margins_for<'a>(spec: &FeatureSpec, margins: Option<&'a [MarginModel]>) -> Result<Option<&'a [MarginModel]>> {
    match spec.value_scale {
        ValueScale::RawY => Ok(None),
        ValueScale::NormalScore => margins
            .map(Some)
            .ok_or_else(|| Error::InvalidConfig("normal-score features need a margin per series".into())),
    }
}

/// `x_t` from observed panel data for the model of series `focal`.
///
/// `margins` (indexed like the panel's series) is required when the spec uses
/// normal scores.
pub fn make_features(
    panel: &TimeSeriesPanel,
    t: usize,
    spec: &FeatureSpec,
    focal: usize,
    margins: Option<&[MarginModel]>,
) -> Result<Vec<f64>> {
    let idx = spec.resolve(panel)?;
    let margins = margins_for(spec, margins)?;
    if t >= panel.len() {
        return Err(Error::InvalidInput(format!(
            "time index {t} beyond panel length {}",
            panel.len()
        )));
    }
    let mut out = Vec::with_capacity(spec.n_x());
    fill_features(
        spec,
        t,
        &|j, tau| scale_value(panel, idx[j], tau, margins),
        &|name, tau| panel.exog(name, focal, tau),
        &mut out,
    )?;
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    Gaussian,
    SkewNormal,
    SkewT,
    Copula,
}

impl Family {
    pub fn name(self) -> &'static str {
        match self {
            Family::Gaussian => "gaussian",
            Family::SkewNormal => "skew_normal",
            Family::SkewT => "skew_t",
            Family::Copula => "copula",
        }
    }

    pub fn has_intercept(self) -> bool {
        self != Family::Copula
    }

    pub fn value_scale(self) -> ValueScale {
        match self {
            Family::Copula => ValueScale::NormalScore,
            _ => ValueScale::RawY,
        }
    }
}

impl std::str::FromStr for Family {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gaussian" => Ok(Family::Gaussian),
            "skew_normal" => Ok(Family::SkewNormal),
            "skew_t" => Ok(Family::SkewT),
            "copula" => Ok(Family::Copula),
            other => Err(Error::InvalidConfig(format!("unknown family {other:?}"))),
        }
    }
}

/// Output-layer parameters of one configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum OutputParams {
    Gaussian {
        beta: Vec<f64>,
        sigma2: f64,
    },
    SkewT {
        beta: Vec<f64>,
        psi: f64,
        sigma2: f64,
        nu: f64,
    },
    Copula {
        beta: Vec<f64>,
        tau2: f64,
    },
}

impl OutputParams {
    pub fn beta(&self) -> &[f64] {
        match self {
            OutputParams::Gaussian { beta, .. }
            | OutputParams::SkewT { beta, .. }
            | OutputParams::Copula { beta, .. } => beta,
        }
    }

    fn from_estimate(family: Family, est: PointEstimate, nu: f64) -> Self {
        match family {
            Family::Gaussian => OutputParams::Gaussian {
                beta: est.beta,
                sigma2: est.sigma2,
            },
            Family::SkewNormal | Family::SkewT => OutputParams::SkewT {
                beta: est.beta,
                psi: est.psi.unwrap_or(0.0),
                sigma2: est.sigma2,
                nu,
            },
            Family::Copula => OutputParams::Copula {
                beta: est.beta,
                tau2: est.tau2,
            },
        }
    }
}

/// One ensemble member: reservoir, fitted output layer, boundary state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfigRecord {
    pub reservoir: ReservoirConfig,
    pub weights: ReservoirWeights,
    pub params: OutputParams,
    /// Thinned posterior draws for the full-posterior simulation mode.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub draws: Vec<OutputParams>,
    pub h_last: Vec<f64>,
    pub diagnostics: Diagnostics,
}

/// Ensemble of `K` configurations for one series and family.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelFit {
    pub series_id: String,
    pub family: Family,
    pub feature_spec: FeatureSpec,
    pub records: Vec<ConfigRecord>,
    /// Margin of the focal series (copula family).
    pub margin: Option<MarginModel>,
    /// Admissible Y range used for truncation at fit time.
    pub bounds: (f64, f64),
    /// First and last training indices (inclusive) in the fitting panel.
    pub train_start: usize,
    pub train_end: usize,
    pub train_end_time: NaiveDateTime,
}

impl ModelFit {
    pub fn k(&self) -> usize {
        self.records.len()
    }
}

/// Settings for [`fit_series`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FitSettings {
    pub family: Family,
    pub k: usize,
    pub reservoir: ReservoirConfig,
    pub gaussian_prior: GaussianRidgePrior,
    pub skew_prior: SkewTPrior,
    pub copula_prior: WeibullTau2Prior,
    /// ν for the skew-normal family.
    pub skew_normal_nu: f64,
    pub n_iter: usize,
    pub n_burn: usize,
    /// Thinned draws retained per configuration (0 keeps only posterior means).
    pub keep_draws: usize,
    /// Reservoir steps run before the training window to wash out `h_0 = 0`.
    pub washout: usize,
    pub seed: u64,
}

impl Default for FitSettings {
    fn default() -> Self {
        Self {
            family: Family::Gaussian,
            k: 100,
            reservoir: ReservoirConfig::default(),
            gaussian_prior: GaussianRidgePrior::default(),
            skew_prior: SkewTPrior::default(),
            copula_prior: WeibullTau2Prior::default(),
            skew_normal_nu: 30.0,
            n_iter: bayes::DEFAULT_N_ITER,
            n_burn: bayes::DEFAULT_N_BURN,
            keep_draws: 0,
            washout: 48,
            seed: 0,
        }
    }
}

/// Fits `K` configurations for `series` on training indices `[start, end]`.
///
/// `margins` (one per panel series) are required for the copula family; the
/// focal series' margin becomes the fit's margin.
pub fn fit_series(
    panel: &TimeSeriesPanel,
    series: &str,
    spec: &FeatureSpec,
    settings: &FitSettings,
    window: (usize, usize),
    margins: Option<&[MarginModel]>,
) -> Result<ModelFit> {
    spec.validate()?;
    let focal = panel.series_index(series)?;
    let (start, end) = window;
    if start > end || end >= panel.len() {
        return Err(Error::InvalidInput(format!(
            "bad training window [{start}, {end}] for panel of {}",
            panel.len()
        )));
    }
    let max_lag = spec.max_lag();
    if start < max_lag {
        return Err(Error::InsufficientHistory { t: start, max_lag });
    }
    if settings.k == 0 {
        return Err(Error::InvalidConfig("K must be at least 1".into()));
    }
    let family = settings.family;
    if family.value_scale() != spec.value_scale {
        return Err(Error::InvalidConfig(format!(
            "{} family needs {:?} features",
            family.name(),
            family.value_scale()
        )));
    }
    let margins = margins_for(spec, margins)?;
    let idx = spec.resolve(panel)?;
    let n_x = spec.n_x();
    let first = start.saturating_sub(settings.washout).max(max_lag);

    // features are shared by all configurations
    let mut xs = Vec::with_capacity(end + 1 - first);
    let mut row = Vec::with_capacity(n_x);
    for t in first..=end {
        fill_features(
            spec,
            t,
            &|j, tau| scale_value(panel, idx[j], tau, margins),
            &|name, tau| panel.exog(name, focal, tau),
            &mut row,
        )?;
        xs.push(row.clone());
    }
    let y: Vec<f64> = (start..=end)
        .map(|t| match (family, margins) {
            (Family::Copula, Some(m)) => m[focal].normal_score(panel.value(focal, t)),
            _ => panel.value(focal, t),
        })
        .collect();
    let skip = start - first;
    let base_seed = derive_seed(settings.seed, &[focal as u64]);
    let base = ReservoirConfig {
        seed: base_seed,
        ..settings.reservoir.clone()
    };
    base.validate()?;
    let nu = match family {
        Family::SkewNormal => settings.skew_normal_nu,
        _ => settings.skew_prior.nu,
    };

    let records = (0..settings.k)
        .into_par_iter()
        .map(|k| -> Result<ConfigRecord> {
            let rcfg = base.member(k);
            let weights = reservoir::sample_weights(&rcfg, n_x)?;
            let path = reservoir::run_hidden_states(&weights, &xs, &rcfg, None)?;
            let mut design =
                nalgebra::DMatrix::zeros(y.len(), reservoir::design_width(rcfg.n_h, family.has_intercept()));
            let mut drow = Vec::new();
            for (i, t) in (skip..path.len()).enumerate() {
                reservoir::design_row(path.row(t), family.has_intercept(), &mut drow);
                for (j, v) in drow.iter().enumerate() {
                    design[(i, j)] = *v;
                }
            }
            let b = DesignMatrix::from_matrix(design, family.has_intercept());
            let mcmc_seed = derive_seed(base_seed, &[k as u64, 7]);
            let (params, draws, diagnostics) = match family {
                Family::Copula => {
                    let fit = copula::mcmc_copula(
                        &b,
                        &y,
                        &settings.copula_prior,
                        settings.n_iter,
                        settings.n_burn,
                        mcmc_seed,
                    )?;
                    let mut diagnostics = Diagnostics::default();
                    diagnostics.acceptance.insert("tau2".into(), fit.acceptance);
                    diagnostics.ess.insert("tau2".into(), fit.ess_tau2);
                    diagnostics.warnings = fit.warnings.clone();
                    let draws = thin_indices(fit.draws.tau2.len(), settings.keep_draws)
                        .map(|i| OutputParams::Copula {
                            beta: fit.draws.beta.row(i).iter().copied().collect(),
                            tau2: fit.draws.tau2[i],
                        })
                        .collect();
                    (
                        OutputParams::Copula {
                            beta: fit.beta_mean,
                            tau2: fit.tau2_mean,
                        },
                        draws,
                        diagnostics,
                    )
                }
                _ => {
                    let d = match family {
                        Family::Gaussian => bayes::gibbs_gaussian(
                            &b,
                            &y,
                            &settings.gaussian_prior,
                            settings.n_iter,
                            settings.n_burn,
                            mcmc_seed,
                        )?,
                        _ => {
                            let prior = SkewTPrior {
                                nu,
                                ..settings.skew_prior.clone()
                            };
                            bayes::gibbs_skew_t(&b, &y, &prior, settings.n_iter, settings.n_burn, mcmc_seed)?
                        }
                    };
                    let est = bayes::posterior_mean(&d)?;
                    let draws = thin_indices(d.n_draw(), settings.keep_draws)
                        .map(|i| {
                            let e = PointEstimate {
                                beta: d.beta.row(i).iter().copied().collect(),
                                sigma2: d.sigma2[i],
                                tau2: d.tau2[i],
                                tau2_quadratic: None,
                                psi: d.psi.as_ref().map(|p| p[i]),
                            };
                            OutputParams::from_estimate(family, e, nu)
                        })
                        .collect();
                    (OutputParams::from_estimate(family, est, nu), draws, d.diagnostics)
                }
            };
            Ok(ConfigRecord {
                reservoir: rcfg,
                weights,
                params,
                draws,
                h_last: path.h_last,
                diagnostics,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    Ok(ModelFit {
        series_id: series.to_string(),
        family,
        feature_spec: spec.clone(),
        records,
        margin: margins.map(|m| m[focal].clone()),
        bounds: panel.bounds_at(end),
        train_start: start,
        train_end: end,
        train_end_time: panel.timestamp(end),
    })
}

fn thin_indices(n: usize, keep: usize) -> impl Iterator<Item = usize> {
    let keep = keep.min(n);
    (0..keep).map(move |i| i * n / keep)
}

/// Draws `b'β + ε` for the Gaussian and skew families.
pub fn predictive_draw_noncopula(b_row: &[f64], params: &OutputParams, rng: &mut Rng) -> f64 {
    let mean: f64 = b_row.iter().zip(params.beta()).map(|(b, c)| b * c).sum();
    match params {
        OutputParams::Gaussian { sigma2, .. } => mean + sigma2.sqrt() * stats::std_normal(rng),
        OutputParams::SkewT { psi, sigma2, nu, .. } => mean + bayes::draw_skew_t_error(rng, *psi, *sigma2, *nu),
        OutputParams::Copula { .. } => mean,
    }
}

/// Keeps `sample` if it lies in `[lower, upper]`; otherwise redraws from the
/// same predictive up to [`MAX_TRUNCATION_TRIES`] times, then clamps. The
/// flag reports a clamp.
pub fn truncate_to_bounds(
    sample: f64,
    lower: f64,
    upper: f64,
    rng: &mut Rng,
    mut redraw: impl FnMut(&mut Rng) -> f64,
) -> (f64, bool) {
    let mut s = sample;
    for _ in 0..MAX_TRUNCATION_TRIES {
        if s >= lower && s <= upper {
            return (s, false);
        }
        s = redraw(rng);
    }
    if s >= lower && s <= upper {
        return (s, false);
    }
    (s.clamp(lower, upper), true)
}

/// Hidden states of every `(fit, k)` at a common time index.
#[derive(Debug, Clone, PartialEq)]
pub struct OriginStates {
    pub t: usize,
    /// `[fit][k][n_h]`.
    pub h: Vec<Vec<Vec<f64>>>,
}

fn margins_from_fits(fits: &[ModelFit], panel: &TimeSeriesPanel) -> Result<Option<Vec<MarginModel>>> {
    if fits.iter().all(|f| f.feature_spec.value_scale == ValueScale::RawY) {
        return Ok(None);
    }
    let mut out = Vec::with_capacity(panel.n_series());
    for id in &panel.series_ids {
        let m = fits.iter().find(|f| &f.series_id == id).and_then(|f| f.margin.clone());
        match m {
            Some(m) => out.push(m),
            None => {
                // series without a model are never needed unless referenced
                let referenced = fits.iter().any(|f| f.feature_spec.series_ids.contains(id));
                if referenced {
                    return Err(Error::InvalidConfig(format!("no margin for series {id:?}")));
                }
                out.push(MarginModel::from_density(vec![0.0, 1.0], vec![1.0, 1.0], 0.0)?);
            }
        }
    }
    Ok(Some(out))
}

impl OriginStates {
    /// States at the shared training boundary of `fits`.
    pub fn at_train_end(fits: &[ModelFit]) -> Result<Self> {
        let t = fits
            .first()
            .map(|f| f.train_end)
            .ok_or_else(|| Error::InvalidInput("no fits".into()))?;
        if fits.iter().any(|f| f.train_end != t) {
            return Err(Error::InvalidInput("fits end at different training indices".into()));
        }
        Ok(Self {
            t,
            h: fits
                .iter()
                .map(|f| f.records.iter().map(|r| r.h_last.clone()).collect())
                .collect(),
        })
    }

    /// Runs every reservoir forward over observed data up to `to` (inclusive).
    pub fn advance(&mut self, fits: &[ModelFit], panel: &TimeSeriesPanel, to: usize) -> Result<()> {
        if to < self.t {
            return Err(Error::InvalidInput(format!(
                "cannot rewind states from {} to {to}",
                self.t
            )));
        }
        if to >= panel.len() {
            return Err(Error::InvalidInput(format!(
                "index {to} beyond panel length {}",
                panel.len()
            )));
        }
        let margins = margins_from_fits(fits, panel)?;
        let mut x = Vec::new();
        for (f, fit) in fits.iter().enumerate() {
            let spec = &fit.feature_spec;
            let idx = spec.resolve(panel)?;
            let focal = panel.series_index(&fit.series_id)?;
            let m = margins_for(spec, margins.as_deref())?;
            let mut next = Vec::new();
            for t in (self.t + 1)..=to {
                fill_features(
                    spec,
                    t,
                    &|j, tau| scale_value(panel, idx[j], tau, m),
                    &|name, tau| panel.exog(name, focal, tau),
                    &mut x,
                )?;
                for (k, rec) in fit.records.iter().enumerate() {
                    next.resize(rec.h_last.len(), 0.0);
                    reservoir::step(&rec.weights, &rec.reservoir, &self.h[f][k], &x, &mut next);
                    self.h[f][k].copy_from_slice(&next);
                }
            }
        }
        self.t = to;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimOptions {
    pub n_path: usize,
    pub horizon: usize,
    pub seed: u64,
    /// Use one configuration index for all series within a path.
    pub shared_k: bool,
    /// Randomize the series order within each step (sensitivity check).
    pub shuffle_series: bool,
    /// Draw parameters from retained posterior draws instead of plugging in means.
    pub posterior_draws: bool,
    /// Keep the raw `n_path × horizon × n_series` array.
    pub keep_paths: bool,
}

impl Default for SimOptions {
    fn default() -> Self {
        Self {
            n_path: 2000,
            horizon: 48,
            seed: 0,
            shared_k: false,
            shuffle_series: false,
            posterior_draws: false,
            keep_paths: false,
        }
    }
}

/// Per (step, series) summary of the simulated predictive distribution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepSummary {
    /// Empirical quantiles at [`quantile_levels`].
    pub quantiles: Vec<f64>,
    pub mean: f64,
    /// Mean of draws above the empirical 0.975 quantile.
    pub longrise: f64,
}

impl StepSummary {
    pub fn quantile_at(&self, level: f64) -> f64 {
        let i = (level * (N_LEVELS + 1) as f64).round() as usize;
        self.quantiles[i.clamp(1, N_LEVELS) - 1]
    }

    pub fn interval95(&self) -> (f64, f64) {
        (self.quantile_at(0.025), self.quantile_at(0.975))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ForecastEnsemble {
    pub origin: usize,
    pub origin_time: NaiveDateTime,
    pub horizon: usize,
    pub series: Vec<String>,
    pub n_path: usize,
    /// Sorted draws, `[step][series][path]`.
    pub samples: Vec<Vec<Vec<f64>>>,
    /// `[step][series]`.
    pub summary: Vec<Vec<StepSummary>>,
    /// Raw paths, `[path][step][series]`, when requested.
    pub paths: Option<Vec<Vec<Vec<f64>>>>,
    /// Draws that hit the truncation clamp.
    pub clamped: usize,
}

impl ForecastEnsemble {
    /// Empirical predictive CDF at `y` for (step index, series index).
    pub fn cdf(&self, step: usize, series: usize, y: f64) -> f64 {
        let s = &self.samples[step][series];
        s.partition_point(|&v| v <= y) as f64 / s.len() as f64
    }
}

pub fn summarize_sorted(sorted: &[f64]) -> StepSummary {
    let quantiles: Vec<f64> = quantile_levels()
        .iter()
        .map(|&a| stats::quantile_sorted(sorted, a))
        .collect();
    let q975 = stats::quantile_sorted(sorted, 0.975);
    let tail: Vec<f64> = sorted.iter().copied().filter(|&v| v > q975).collect();
    StepSummary {
        quantiles,
        mean: stats::mean(sorted),
        longrise: if tail.is_empty() { q975 } else { stats::mean(&tail) },
    }
}

struct PathResult {
    /// `[step][series]` on the Y scale.
    y: Vec<Vec<f64>>,
    clamped: usize,
}

/// Simulates `n_path` joint paths of all fitted series from origin
/// `states.t`, continuing hidden states and feeding simulated values back
/// into later features.
pub fn simulate_paths(
    fits: &[ModelFit],
    panel: &TimeSeriesPanel,
    states: &OriginStates,
    opts: &SimOptions,
) -> Result<ForecastEnsemble> {
    if fits.is_empty() {
        return Err(Error::InvalidInput("no fits to simulate".into()));
    }
    if opts.horizon == 0 || opts.n_path == 0 {
        return Err(Error::InvalidConfig("horizon and n_path must be at least 1".into()));
    }
    if states.h.len() != fits.len() {
        return Err(Error::DimensionMismatch {
            expected: fits.len(),
            got: states.h.len(),
            context: "origin states vs fits",
        });
    }
    let origin = states.t;
    let horizon = opts.horizon;
    if origin >= panel.len() {
        return Err(Error::InvalidInput(format!(
            "origin {origin} beyond panel length {}",
            panel.len()
        )));
    }
    // lexicographic simulation order
    let mut order: Vec<usize> = (0..fits.len()).collect();
    order.sort_by(|&a, &b| fits[a].series_id.cmp(&fits[b].series_id));
    let focal: Vec<usize> = fits
        .iter()
        .map(|f| panel.series_index(&f.series_id))
        .collect::<Result<_>>()?;
    let margins = margins_from_fits(fits, panel)?;

    // map each spec's series to the simulated fit index
    let mut spec_map = Vec::with_capacity(fits.len());
    for fit in fits {
        let spec = &fit.feature_spec;
        let mut m = Vec::with_capacity(spec.series_ids.len());
        for id in &spec.series_ids {
            let panel_idx = panel.series_index(id)?;
            let sim_idx = fits.iter().position(|f| &f.series_id == id);
            if sim_idx.is_none() && horizon > spec.min_lag() {
                return Err(Error::InvalidConfig(format!(
                    "series {id:?} is a feature of {} but is not simulated",
                    fit.series_id
                )));
            }
            m.push((panel_idx, sim_idx));
        }
        spec_map.push(m);
        if fit.records.iter().any(|r| r.draws.is_empty()) && opts.posterior_draws {
            return Err(Error::InvalidConfig(format!(
                "fit for {} has no retained draws for the posterior-draw mode",
                fit.series_id
            )));
        }
        for name in &spec.exogenous {
            let f = panel.series_index(&fit.series_id)?;
            for t in (origin + 1)..=(origin + horizon) {
                if t >= panel.len() || panel.exog(name, f, t).is_none() {
                    return Err(Error::MissingData(format!(
                        "exogenous column {name:?} for {} missing over the horizon (index {t})",
                        fit.series_id
                    )));
                }
            }
        }
    }

    // observed values on each fit's feature scale, cached from the earliest lag
    let max_lag = fits.iter().map(|f| f.feature_spec.max_lag()).max().unwrap_or(0);
    let base = origin + 1 - max_lag.min(origin + 1);
    let observed: Vec<Vec<Vec<f64>>> = fits
        .iter()
        .map(|fit| {
            let m = if fit.feature_spec.value_scale == ValueScale::NormalScore {
                margins.as_deref()
            } else {
                None
            };
            (0..panel.n_series())
                .map(|s| (base..=origin).map(|t| scale_value(panel, s, t, m)).collect())
                .collect()
        })
        .collect();
    let bounds: Vec<(f64, f64)> = (1..=horizon)
        .map(|h| panel.bounds_at((origin + h).min(panel.len() - 1)))
        .collect();
    let k_max = fits.iter().map(ModelFit::k).min().unwrap_or(0);
    if opts.shared_k && fits.iter().any(|f| f.k() != k_max) {
        return Err(Error::InvalidConfig(
            "shared configuration index needs equal K across series".into(),
        ));
    }

    let results: Vec<Result<PathResult>> = (0..opts.n_path)
        .into_par_iter()
        .map(|p| {
            let mut rng = substream(opts.seed, &[origin as u64, p as u64]);
            let shared = rng.gen_range(0..k_max.max(1));
            let ks: Vec<usize> = fits
                .iter()
                .map(|f| if opts.shared_k { shared } else { rng.gen_range(0..f.k()) })
                .collect();
            let params: Vec<&OutputParams> = fits
                .iter()
                .zip(&ks)
                .map(|(f, &k)| {
                    let rec = &f.records[k];
                    if opts.posterior_draws {
                        &rec.draws[rng.gen_range(0..rec.draws.len())]
                    } else {
                        &rec.params
                    }
                })
                .collect();
            let mut h: Vec<Vec<f64>> = (0..fits.len()).map(|f| states.h[f][ks[f]].clone()).collect();
            let mut next = Vec::new();
            let mut x = Vec::new();
            let mut drow = Vec::new();
            // simulated values per fit: Y scale and feature scale
            let mut sim_y = vec![Vec::with_capacity(horizon); fits.len()];
            let mut sim_f = vec![Vec::with_capacity(horizon); fits.len()];
            let mut clamped = 0;
            let mut step_order = order.clone();
            for step in 1..=horizon {
                let t = origin + step;
                if opts.shuffle_series {
                    for i in (1..step_order.len()).rev() {
                        step_order.swap(i, rng.gen_range(0..=i));
                    }
                }
                for &f in &step_order {
                    let fit = &fits[f];
                    let spec = &fit.feature_spec;
                    let map = &spec_map[f];
                    let obs = &observed[f];
                    let lookup = |j: usize, tau: usize| -> f64 {
                        let (panel_idx, sim_idx) = map[j];
                        if tau <= origin {
                            obs[panel_idx][tau - base]
                        } else {
                            // validated above: every series needed past the origin is simulated
                            let fi = sim_idx.expect("unsimulated series beyond origin");
                            let v = if fit.family == Family::Copula && fits[fi].family != Family::Copula {
                                margins
                                    .as_ref()
                                    .map(|m| m[panel_idx].normal_score(sim_y[fi][tau - origin - 1]))
                            } else if fit.family != Family::Copula && fits[fi].family == Family::Copula {
                                Some(sim_y[fi][tau - origin - 1])
                            } else {
                                None
                            };
                            v.unwrap_or(sim_f[fi][tau - origin - 1])
                        }
                    };
                    fill_features(spec, t, &lookup, &|name, tau| panel.exog(name, focal[f], tau), &mut x)?;
                    let rec = &fit.records[ks[f]];
                    next.resize(h[f].len(), 0.0);
                    reservoir::step(&rec.weights, &rec.reservoir, &h[f], &x, &mut next);
                    h[f].copy_from_slice(&next);
                    reservoir::design_row(&h[f], fit.family.has_intercept(), &mut drow);
                    let (y, feat) = match params[f] {
                        OutputParams::Copula { beta, tau2 } => {
                            let margin = fit
                                .margin
                                .as_ref()
                                .ok_or_else(|| Error::InvalidConfig("copula fit without margin".into()))?;
                            copula::draw_for(&drow, beta, *tau2, margin, &mut rng)
                        }
                        other => {
                            let (lo, hi) = bounds[step - 1];
                            let first = predictive_draw_noncopula(&drow, other, &mut rng);
                            let (y, c) = truncate_to_bounds(first, lo, hi, &mut rng, |r| {
                                predictive_draw_noncopula(&drow, other, r)
                            });
                            clamped += usize::from(c);
                            (y, y)
                        }
                    };
                    if !y.is_finite() || !feat.is_finite() {
                        return Err(Error::Numeric(format!(
                            "non-finite draw for {} on path {p} at step {step} (configuration {})",
                            fit.series_id, ks[f]
                        )));
                    }
                    sim_y[f].push(y);
                    sim_f[f].push(feat);
                }
            }
            let y = (0..horizon)
                .map(|s| (0..fits.len()).map(|f| sim_y[f][s]).collect())
                .collect();
            Ok(PathResult { y, clamped })
        })
        .collect();
    let results: Vec<PathResult> = results.into_iter().collect::<Result<_>>()?;

    let n_series = fits.len();
    let mut samples = vec![vec![Vec::with_capacity(opts.n_path); n_series]; horizon];
    let mut clamped = 0;
    for r in &results {
        clamped += r.clamped;
        for (step, row) in r.y.iter().enumerate() {
            for (f, v) in row.iter().enumerate() {
                samples[step][f].push(*v);
            }
        }
    }
    if clamped > 0 {
        log::debug!("{clamped} draws clamped to bounds at origin {origin}");
    }
    for row in samples.iter_mut() {
        for s in row.iter_mut() {
            s.sort_by(f64::total_cmp);
        }
    }
    let summary = samples
        .iter()
        .map(|row| row.iter().map(|s| summarize_sorted(s)).collect())
        .collect();
    Ok(ForecastEnsemble {
        origin,
        origin_time: panel.timestamp(origin),
        horizon,
        series: fits.iter().map(|f| f.series_id.clone()).collect(),
        n_path: opts.n_path,
        samples,
        summary,
        paths: opts.keep_paths.then(|| results.into_iter().map(|r| r.y).collect()),
        clamped,
    })
}

/// Design rows `b_{T+1}` of every configuration of fit `f` at origin `states.t`.
pub fn one_step_design_rows(
    fits: &[ModelFit],
    f: usize,
    panel: &TimeSeriesPanel,
    states: &OriginStates,
) -> Result<Vec<Vec<f64>>> {
    let fit = &fits[f];
    let t = states.t + 1;
    if t >= panel.len() && !fit.feature_spec.exogenous.is_empty() {
        return Err(Error::MissingData("exogenous values needed beyond the panel".into()));
    }
    let margins = margins_from_fits(fits, panel)?;
    let spec = &fit.feature_spec;
    let idx = spec.resolve(panel)?;
    let focal = panel.series_index(&fit.series_id)?;
    let m = margins_for(spec, margins.as_deref())?;
    let mut x = Vec::new();
    fill_features(
        spec,
        t,
        &|j, tau| scale_value(panel, idx[j], tau, m),
        &|name, tau| panel.exog(name, focal, tau),
        &mut x,
    )?;
    fit.records
        .iter()
        .enumerate()
        .map(|(k, rec)| {
            let mut next = vec![0.0; rec.h_last.len()];
            reservoir::step(&rec.weights, &rec.reservoir, &states.h[f][k], &x, &mut next);
            let mut row = Vec::new();
            reservoir::design_row(&next, fit.family.has_intercept(), &mut row);
            Ok(row)
        })
        .collect()
}

const NORMALIZER_INTERVALS: usize = 20_000;

fn simpson(lo: f64, hi: f64, n: usize, f: impl Fn(f64) -> f64) -> f64 {
    let n = n + n % 2;
    let h = (hi - lo) / n as f64;
    let mut s = f(lo) + f(hi);
    for i in 1..n {
        s += if i % 2 == 1 { 4.0 } else { 2.0 } * f(lo + i as f64 * h);
    }
    s * h / 3.0
}

/// Density of one configuration at `y`, truncated to `bounds` for the
/// non-copula families. `norm` is the truncation mass.
fn component_density(
    y: f64,
    b_row: &[f64],
    params: &OutputParams,
    margin: Option<&MarginModel>,
    bounds: (f64, f64),
    norm: f64,
) -> f64 {
    match params {
        OutputParams::Copula { beta, tau2 } => margin.map_or(0.0, |m| copula::density_for(y, b_row, beta, *tau2, m)),
        _ if y < bounds.0 || y > bounds.1 => 0.0,
        OutputParams::Gaussian { beta, sigma2 } => {
            let mean: f64 = b_row.iter().zip(beta).map(|(b, c)| b * c).sum();
            let sd = sigma2.sqrt();
            stats::norm_pdf((y - mean) / sd) / sd / norm
        }
        OutputParams::SkewT { beta, psi, sigma2, nu } => {
            let mean: f64 = b_row.iter().zip(beta).map(|(b, c)| b * c).sum();
            let (omega2, alpha) = bayes::latent_to_skew_t(*psi, *sigma2);
            bayes::marginal_error_density_skew_t(y - mean, omega2, alpha, *nu) / norm
        }
    }
}

fn truncation_mass(b_row: &[f64], params: &OutputParams, bounds: (f64, f64)) -> f64 {
    match params {
        OutputParams::Copula { .. } => 1.0,
        OutputParams::Gaussian { beta, sigma2 } => {
            let mean: f64 = b_row.iter().zip(beta).map(|(b, c)| b * c).sum();
            let sd = sigma2.sqrt();
            stats::norm_cdf((bounds.1 - mean) / sd) - stats::norm_cdf((bounds.0 - mean) / sd)
        }
        OutputParams::SkewT { .. } => simpson(bounds.0, bounds.1, NORMALIZER_INTERVALS, |y| {
            component_density(y, b_row, params, None, (f64::NEG_INFINITY, f64::INFINITY), 1.0)
        }),
    }
}

/// Equal-weight average of the `K` one-step predictive densities on `grid`.
pub fn ensemble_density(fit: &ModelFit, b_rows: &[Vec<f64>], grid: &[f64], bounds: (f64, f64)) -> Result<Vec<f64>> {
    if b_rows.len() != fit.k() {
        return Err(Error::DimensionMismatch {
            expected: fit.k(),
            got: b_rows.len(),
            context: "design rows vs configurations",
        });
    }
    let mut out = vec![0.0; grid.len()];
    for (rec, b) in fit.records.iter().zip(b_rows) {
        let norm = truncation_mass(b, &rec.params, bounds);
        if !(norm > 0.0) {
            return Err(Error::Numeric("predictive has no mass inside the bounds".into()));
        }
        for (o, &y) in out.iter_mut().zip(grid) {
            *o += component_density(y, b, &rec.params, fit.margin.as_ref(), bounds, norm);
        }
    }
    let k = fit.k() as f64;
    out.iter_mut().for_each(|v| *v /= k);
    Ok(out)
}
