//! Panels simulated from known models, for recovery, calibration and
//! coverage checks without market data.

use chrono::NaiveDateTime;
use serde::{Deserialize, Serialize};

use crate::bayes::{self, Diagnostics};
use crate::error::{Error, Result};
use crate::forecast::{fill_features, ConfigRecord, Family, FeatureSpec, ModelFit, OutputParams, ValueScale};
use crate::margins::MarginModel;
use crate::panel::{parse_timestamp, TimeSeriesPanel};
use crate::reservoir::{self, ReservoirConfig, ReservoirWeights};
use crate::rng::{derive_seed, substream, Rng};
use crate::stats;

/// Steps simulated and discarded before recording.
pub const WARMUP: usize = 500;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SynthFamily {
    GaussianEsn,
    SkewTEsn,
    CopulaEsn,
    GaussianVar,
}

impl SynthFamily {
    pub fn fit_family(self) -> Option<Family> {
        match self {
            SynthFamily::GaussianEsn => Some(Family::Gaussian),
            SynthFamily::SkewTEsn => Some(Family::SkewT),
            SynthFamily::CopulaEsn => Some(Family::Copula),
            SynthFamily::GaussianVar => None,
        }
    }
}

/// Target margin of the copula family: a Beta(a, b) density stretched onto `[lower, upper]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthMargin {
    pub lower: f64,
    pub upper: f64,
    pub a: f64,
    pub b: f64,
    pub grid: usize,
}

impl Default for SynthMargin {
    fn default() -> Self {
        // right-skewed, mode near 3.3 on the default log-price range
        Self {
            lower: 0.0,
            upper: 9.65,
            a: 4.0,
            b: 9.0,
            grid: 4096,
        }
    }
}

impl SynthMargin {
    pub fn model(&self) -> Result<MarginModel> {
        if !(self.a > 0.0 && self.b > 0.0 && self.upper > self.lower && self.grid >= 16) {
            return Err(Error::InvalidConfig(
                "synthetic margin needs a, b > 0, upper > lower and grid ≥ 16".into(),
            ));
        }
        let w = self.upper - self.lower;
        let grid: Vec<f64> = (0..self.grid)
            .map(|i| self.lower + w * i as f64 / (self.grid - 1) as f64)
            .collect();
        let pdf = grid
            .iter()
            .map(|y| {
                let u = (y - self.lower) / w;
                if u <= 0.0 || u >= 1.0 {
                    0.0
                } else {
                    u.powf(self.a - 1.0) * (1.0 - u).powf(self.b - 1.0)
                }
            })
            .collect();
        MarginModel::from_density(grid, pdf, 0.0)
    }
}

/// Generating parameters; only those of the chosen family are read.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthParams {
    /// Output weights per series; drawn as `N(0, beta_scale²)` when absent.
    pub beta: Option<Vec<Vec<f64>>>,
    pub beta_scale: f64,
    /// Intercept of the ESN families and VAR.
    pub level: f64,
    pub sigma2: f64,
    pub psi: f64,
    pub nu: f64,
    pub tau2: f64,
    pub margin: SynthMargin,
    /// Lag-one coefficient matrix of the VAR family (`n_series × n_series`).
    pub var_coef: Option<Vec<Vec<f64>>>,
}

impl Default for SynthParams {
    fn default() -> Self {
        Self {
            beta: None,
            beta_scale: 0.15,
            level: 4.0,
            sigma2: 0.04,
            psi: 0.3,
            nu: 7.0,
            tau2: 2.0,
            margin: SynthMargin::default(),
            var_coef: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthSpec {
    pub family: SynthFamily,
    pub series_ids: Vec<String>,
    pub t_len: usize,
    pub seed: u64,
    pub start: String,
    pub step_minutes: i64,
    pub reservoir: ReservoirConfig,
    pub short_lags: Vec<usize>,
    pub long_lags: Vec<usize>,
    pub params: SynthParams,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            family: SynthFamily::GaussianEsn,
            series_ids: vec!["A".into(), "B".into()],
            t_len: 2000,
            seed: 0,
            start: "2019-01-01T00:00:00".into(),
            step_minutes: 30,
            reservoir: ReservoirConfig {
                n_h: 20,
                ..ReservoirConfig::default()
            },
            short_lags: vec![1, 2],
            long_lags: Vec::new(),
            params: SynthParams::default(),
        }
    }
}

impl SynthSpec {
    /// Feature layout the generating model reads.
    pub fn feature_spec(&self) -> FeatureSpec {
        let copula = self.family == SynthFamily::CopulaEsn;
        FeatureSpec {
            series_ids: self.series_ids.clone(),
            short_lags: self.short_lags.clone(),
            long_lags: self.long_lags.clone(),
            exogenous: Vec::new(),
            include_intercept: !copula,
            value_scale: if copula {
                ValueScale::NormalScore
            } else {
                ValueScale::RawY
            },
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.reservoir.delta < 1.0) {
            return Err(Error::InvalidConfig(format!(
                "explosive reservoir: delta = {} ≥ 1",
                self.reservoir.delta
            )));
        }
        self.reservoir.validate()?;
        if self.series_ids.is_empty() || self.t_len == 0 {
            return Err(Error::InvalidConfig("need at least one series and one step".into()));
        }
        let p = &self.params;
        if !(p.sigma2 >= 0.0) {
            return Err(Error::InvalidConfig("sigma2 must be nonnegative".into()));
        }
        match self.family {
            SynthFamily::SkewTEsn if !(p.nu > 0.0) => return Err(Error::InvalidConfig("nu must be positive".into())),
            SynthFamily::CopulaEsn if !(p.tau2 > 0.0) => {
                return Err(Error::InvalidConfig("tau2 must be positive".into()))
            }
            SynthFamily::GaussianVar => {
                let n = self.series_ids.len();
                if let Some(a) = &p.var_coef {
                    if a.len() != n || a.iter().any(|r| r.len() != n) {
                        return Err(Error::DimensionMismatch {
                            expected: n,
                            got: a.len(),
                            context: "VAR coefficient matrix",
                        });
                    }
                    let m = nalgebra::DMatrix::from_fn(n, n, |i, j| a[i][j]);
                    let rho = reservoir::spectral_radius(&m, 1e-10, 10_000)?;
                    if rho >= 1.0 {
                        return Err(Error::InvalidConfig(format!(
                            "explosive VAR: spectral radius {rho} ≥ 1"
                        )));
                    }
                }
            }
            _ => {}
        }
        if self.family != SynthFamily::GaussianVar {
            self.feature_spec().validate()?;
        }
        Ok(())
    }
}

/// Generating model of one ESN-family series.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeriesTruth {
    pub reservoir: ReservoirConfig,
    pub weights: ReservoirWeights,
    pub params: OutputParams,
    /// Hidden state at panel index `state_index`.
    pub h_state: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthTruth {
    pub spec: SynthSpec,
    /// Per-series generators (ESN families only).
    pub series: Vec<SeriesTruth>,
    /// Panel index whose hidden state `h_state` records.
    pub state_index: usize,
    /// Deterministic part of each observation, `[series][t]`: `b'β` (ESN),
    /// the normal-score mean (copula) or the conditional mean (VAR).
    pub location: Vec<Vec<f64>>,
    pub margin: Option<MarginModel>,
}

impl SynthTruth {
    /// The generating model as single-configuration fits whose boundary is
    /// `state_index`, ready for `OriginStates::at_train_end`.
    pub fn model_fits(&self, panel: &TimeSeriesPanel) -> Result<Vec<ModelFit>> {
        let family = self
            .spec
            .family
            .fit_family()
            .ok_or_else(|| Error::InvalidConfig("the VAR family has no reservoir model".into()))?;
        let spec = self.spec.feature_spec();
        Ok(self
            .series
            .iter()
            .zip(&self.spec.series_ids)
            .map(|(s, id)| ModelFit {
                series_id: id.clone(),
                family,
                feature_spec: spec.clone(),
                records: vec![ConfigRecord {
                    reservoir: s.reservoir.clone(),
                    weights: s.weights.clone(),
                    params: s.params.clone(),
                    draws: Vec::new(),
                    h_last: s.h_state.clone(),
                    diagnostics: Diagnostics::default(),
                }],
                margin: self.margin.clone(),
                bounds: panel.bounds_at(self.state_index),
                train_start: self.state_index,
                train_end: self.state_index,
                train_end_time: panel.timestamp(self.state_index),
            })
            .collect())
    }
}

fn start_time(spec: &SynthSpec) -> Result<NaiveDateTime> {
    parse_timestamp(&spec.start).ok_or_else(|| Error::InvalidConfig(format!("bad start timestamp {:?}", spec.start)))
}

/// Simulates the panel and returns it with its generating parameters.
pub fn generate(spec: &SynthSpec) -> Result<(TimeSeriesPanel, SynthTruth)> {
    spec.validate()?;
    let start = start_time(spec)?;
    match spec.family {
        SynthFamily::GaussianVar => generate_var(spec, start),
        _ => generate_esn(spec, start),
    }
}

fn generate_var(spec: &SynthSpec, start: NaiveDateTime) -> Result<(TimeSeriesPanel, SynthTruth)> {
    let n = spec.series_ids.len();
    let p = &spec.params;
    let a = p.var_coef.clone().unwrap_or_else(|| vec![vec![0.0; n]; n]);
    let sd = p.sigma2.sqrt();
    let mut rng = substream(spec.seed, &[0]);
    let mut y: Vec<f64> = (0..n).map(|_| p.level + sd * stats::std_normal(&mut rng)).collect();
    let mut values = vec![Vec::with_capacity(spec.t_len); n];
    let mut location = vec![Vec::with_capacity(spec.t_len); n];
    for t in 0..WARMUP + spec.t_len {
        let mean: Vec<f64> = (0..n)
            .map(|i| p.level + (0..n).map(|j| a[i][j] * (y[j] - p.level)).sum::<f64>())
            .collect();
        for i in 0..n {
            y[i] = mean[i] + sd * stats::std_normal(&mut rng);
            if t >= WARMUP {
                values[i].push(y[i]);
                location[i].push(mean[i]);
            }
        }
    }
    let panel = TimeSeriesPanel::new(start, spec.step_minutes, spec.series_ids.clone(), values)?;
    Ok((
        panel,
        SynthTruth {
            spec: spec.clone(),
            series: Vec::new(),
            state_index: 0,
            location,
            margin: None,
        },
    ))
}

fn generate_esn(spec: &SynthSpec, start: NaiveDateTime) -> Result<(TimeSeriesPanel, SynthTruth)> {
    let n = spec.series_ids.len();
    let p = &spec.params;
    let fspec = spec.feature_spec();
    let n_x = fspec.n_x();
    let max_lag = fspec.max_lag();
    let copula = spec.family == SynthFamily::CopulaEsn;
    let margin = if copula { Some(p.margin.model()?) } else { None };
    let width = reservoir::design_width(spec.reservoir.n_h, !copula);

    let mut truths = Vec::with_capacity(n);
    for s in 0..n {
        let rcfg = ReservoirConfig {
            seed: derive_seed(spec.seed, &[1, s as u64]),
            ..spec.reservoir.clone()
        };
        let weights = reservoir::sample_weights(&rcfg, n_x)?;
        let beta = match &p.beta {
            Some(b) => {
                let b = b
                    .get(s)
                    .cloned()
                    .ok_or_else(|| Error::InvalidConfig(format!("no beta for series {s}")))?;
                if b.len() != width {
                    return Err(Error::DimensionMismatch {
                        expected: width,
                        got: b.len(),
                        context: "synthetic beta",
                    });
                }
                b
            }
            None => {
                let mut rng = substream(spec.seed, &[2, s as u64]);
                let mut b: Vec<f64> = (0..width).map(|_| p.beta_scale * stats::std_normal(&mut rng)).collect();
                if !copula {
                    b[0] = p.level;
                }
                b
            }
        };
        let params = match spec.family {
            SynthFamily::GaussianEsn => OutputParams::Gaussian { beta, sigma2: p.sigma2 },
            SynthFamily::SkewTEsn => OutputParams::SkewT {
                beta,
                psi: p.psi,
                sigma2: p.sigma2,
                nu: p.nu,
            },
            _ => OutputParams::Copula { beta, tau2: p.tau2 },
        };
        truths.push(SeriesTruth {
            h_state: vec![0.0; rcfg.n_h],
            reservoir: rcfg,
            weights,
            params,
        });
    }

    // buffers on the Y scale and the feature scale, seeded from stationary noise
    let total = max_lag + WARMUP + spec.t_len;
    let mut rng = substream(spec.seed, &[0]);
    let mut ys = vec![Vec::with_capacity(total); n];
    let mut fs = vec![Vec::with_capacity(total); n];
    for s in 0..n {
        for _ in 0..max_lag {
            let e = stats::std_normal(&mut rng);
            let (y, f) = match &margin {
                Some(m) => {
                    let y = m.from_normal_score(e);
                    (y, m.normal_score(y))
                }
                None => {
                    let y = p.level + p.sigma2.sqrt() * e;
                    (y, y)
                }
            };
            ys[s].push(y);
            fs[s].push(f);
        }
    }
    let mut h: Vec<Vec<f64>> = truths.iter().map(|t| vec![0.0; t.reservoir.n_h]).collect();
    let mut location = vec![Vec::with_capacity(spec.t_len); n];
    let mut next = Vec::new();
    let mut x = Vec::new();
    let mut drow = Vec::new();
    let record_from = max_lag + WARMUP;
    let state_t = record_from + max_lag.saturating_sub(1);
    for t in max_lag..total {
        for s in 0..n {
            fill_features(&fspec, t, &|j, tau| fs[j][tau], &|_, _| None, &mut x)?;
            let tr = &truths[s];
            next.resize(h[s].len(), 0.0);
            reservoir::step(&tr.weights, &tr.reservoir, &h[s], &x, &mut next);
            h[s].copy_from_slice(&next);
            reservoir::design_row(&h[s], !copula, &mut drow);
            let (y, f, loc) = draw(&tr.params, &drow, margin.as_ref(), &mut rng);
            if !y.is_finite() {
                return Err(Error::Numeric(format!(
                    "non-finite synthetic value for series {s} at step {t}"
                )));
            }
            ys[s].push(y);
            fs[s].push(f);
            if t >= record_from {
                location[s].push(loc);
            }
        }
        if t == state_t {
            for (tr, hs) in truths.iter_mut().zip(&h) {
                tr.h_state = hs.clone();
            }
        }
    }
    let values = ys.into_iter().map(|v| v[record_from..].to_vec()).collect();
    let panel = TimeSeriesPanel::new(start, spec.step_minutes, spec.series_ids.clone(), values)?;
    Ok((
        panel,
        SynthTruth {
            spec: spec.clone(),
            series: truths,
            state_index: state_t - record_from,
            location,
            margin,
        },
    ))
}

/// One observation: `(y, feature value, deterministic part)`.
fn draw(params: &OutputParams, b_row: &[f64], margin: Option<&MarginModel>, rng: &mut Rng) -> (f64, f64, f64) {
    let dot = |beta: &[f64]| b_row.iter().zip(beta).map(|(b, c)| b * c).sum::<f64>();
    match params {
        OutputParams::Gaussian { beta, sigma2 } => {
            let m = dot(beta);
            let y = m + sigma2.sqrt() * stats::std_normal(rng);
            (y, y, m)
        }
        OutputParams::SkewT { beta, psi, sigma2, nu } => {
            let m = dot(beta);
            let y = m + bayes::draw_skew_t_error(rng, *psi, *sigma2, *nu);
            (y, y, m)
        }
        OutputParams::Copula { beta, tau2 } => {
            let m = margin.expect("copula family has a margin");
            let (_, mu) = crate::copula::location_for(b_row, beta, *tau2);
            let (y, _) = crate::copula::draw_for(b_row, beta, *tau2, m, rng);
            (y, m.normal_score(y), mu)
        }
    }
}

/// Synthetic demand forecasts and the realized latent demand, `[series][t]`.
#[derive(Debug, Clone, PartialEq)]
pub struct DemandColumns {
    pub d10: Vec<Vec<f64>>,
    pub d50: Vec<Vec<f64>>,
    pub d90: Vec<Vec<f64>>,
    pub latent: Vec<Vec<f64>>,
}

/// 10% quantile of the standard normal, up to sign.
const Z90: f64 = 1.2815515655446004;

/// Demand quantile forecasts for a realized demand `m_t` that is a
/// standardized copy of each series: `D50 = m_t + s·ε_t` and
/// `D10/D90 = D50 ∓ z₀.₉·s` with `s = noise_scale`, so the bands are
/// calibrated for `m_t`.
pub fn make_demand_quantile_columns(panel: &TimeSeriesPanel, noise_scale: f64, seed: u64) -> Result<DemandColumns> {
    if panel.is_empty() {
        return Err(Error::InvalidInput("empty panel".into()));
    }
    if !(noise_scale >= 0.0) {
        return Err(Error::InvalidConfig("noise_scale must be nonnegative".into()));
    }
    let mut out = DemandColumns {
        d10: Vec::new(),
        d50: Vec::new(),
        d90: Vec::new(),
        latent: Vec::new(),
    };
    for (s, v) in panel.values.iter().enumerate() {
        let mean = stats::mean(v);
        let sd = if v.len() > 1 { stats::variance(v).sqrt() } else { 0.0 };
        let sd = if sd > 0.0 { sd } else { 1.0 };
        let mut rng = substream(seed, &[s as u64]);
        // realized demand tracks the series; the forecast median misses it by N(0, noise²)
        let m: Vec<f64> = v.iter().map(|y| 1.0 + 0.25 * (y - mean) / sd).collect();
        let c: Vec<f64> = m
            .iter()
            .map(|mt| mt + noise_scale * stats::std_normal(&mut rng))
            .collect();
        out.d10.push(c.iter().map(|ct| ct - Z90 * noise_scale).collect());
        out.d90.push(c.iter().map(|ct| ct + Z90 * noise_scale).collect());
        out.d50.push(c);
        out.latent.push(m);
    }
    Ok(out)
}

/// Adds the columns to the panel as `D10`, `D50`, `D90`.
pub fn attach_demand(panel: TimeSeriesPanel, cols: &DemandColumns) -> Result<TimeSeriesPanel> {
    panel
        .with_exogenous("D10", cols.d10.clone())?
        .with_exogenous("D50", cols.d50.clone())?
        .with_exogenous("D90", cols.d90.clone())
}
