use std::collections::BTreeMap;

use chrono::{Datelike, Duration, Months, NaiveDateTime};
use serde::{Deserialize, Serialize};

use super::audit::{audit, AuditReport};
use super::config::{BacktestConfig, Span};
use crate::error::{Error, Result};
use crate::forecast::{fit_series, simulate_paths, Family, ModelFit, OriginStates, StepSummary};
use crate::margins::{fit_bounded_kde, MarginModel};
use crate::panel::{format_timestamp, load_panel, parse_timestamp, TimeSeriesPanel};
use crate::rng::derive_seed;
use crate::scoring::{
    CalibrationAccumulator, CalibrationCurves, LossTable, Losses, ScoreMetadata, ScoreReport, SystemWeights,
};
use crate::synthetic::{attach_demand, generate, make_demand_quantile_columns, SynthTruth};

/// Loads or generates the configured panel.
pub fn load_data(cfg: &BacktestConfig) -> Result<(TimeSeriesPanel, Option<SynthTruth>)> {
    let d = &cfg.data;
    let (mut panel, truth) = match (&d.panel, &d.synthetic) {
        (Some(path), None) => (load_panel(path, &d.schema())?, None),
        (None, Some(spec)) => {
            let (p, t) = generate(spec)?;
            (p, Some(t))
        }
        _ => {
            return Err(Error::InvalidConfig(
                "set exactly one of data.panel and data.synthetic".into(),
            ))
        }
    };
    panel.transform = d.transform.clone();
    panel.regimes = d.regimes.clone();
    if let Some(dem) = &d.synthetic_demand {
        let cols = make_demand_quantile_columns(&panel, dem.noise_scale, dem.seed)?;
        panel = attach_demand(panel, &cols)?;
    }
    Ok((panel, truth))
}

/// One refit: training indices and the origins forecast with it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Window {
    pub train_start: usize,
    pub train_end: usize,
    pub origins: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Plan {
    pub windows: Vec<Window>,
    pub max_lag: usize,
}

impl Plan {
    pub fn n_origins(&self) -> usize {
        self.windows.iter().map(|w| w.origins.len()).sum()
    }

    pub fn origins(&self) -> impl Iterator<Item = usize> + '_ {
        self.windows.iter().flat_map(|w| w.origins.iter().copied())
    }
}

fn span_steps(span: Span, step_minutes: i64) -> Option<usize> {
    match span {
        Span::Steps(n) => Some(n),
        Span::Days(d) => Some((d as i64 * 1440 / step_minutes) as usize),
        Span::Months(_) => None,
    }
}

fn sub_months(ts: NaiveDateTime, n: u32) -> Result<NaiveDateTime> {
    ts.checked_sub_months(Months::new(n))
        .ok_or_else(|| Error::InvalidConfig("timestamp arithmetic overflow".into()))
}

/// First training index for a window ending at `end`, or an error when the
/// window reaches before the panel.
fn train_start_for(panel: &TimeSeriesPanel, span: Span, end: usize) -> Result<Option<usize>> {
    Ok(match span_steps(span, panel.step_minutes) {
        Some(n) => (end + 1).checked_sub(n),
        None => {
            let Span::Months(m) = span else { unreachable!() };
            let from = sub_months(panel.timestamp(end), m)?;
            if from < panel.start {
                None
            } else {
                Some(panel.index_at_or_after(from + Duration::minutes(panel.step_minutes)))
            }
        }
    })
}

/// Refit windows and forecast origins, checked against the available data
/// before anything is computed.
pub fn plan(panel: &TimeSeriesPanel, cfg: &BacktestConfig) -> Result<Plan> {
    cfg.validate()?;
    let s = &cfg.schedule;
    let max_lag = cfg.features.max_lag();
    let n = panel.len();
    let horizon = s.horizon;
    if n <= horizon + max_lag {
        return Err(Error::InvalidConfig(format!(
            "panel of {n} steps is too short for horizon {horizon} and max lag {max_lag}"
        )));
    }
    if let Some(steps) = span_steps(s.train_window, panel.step_minutes) {
        if steps <= max_lag {
            return Err(Error::InvalidConfig(format!(
                "train_window spans {steps} steps, not more than the maximum lag {max_lag}"
            )));
        }
    }
    if let Span::Months(m) = s.train_window {
        // at least 28 days per month
        if (m as i64 * 28 * 1440 / panel.step_minutes) as usize <= max_lag {
            return Err(Error::InvalidConfig(format!(
                "train_window of {m} months is shorter than the maximum lag {max_lag}"
            )));
        }
    }
    let parse = |v: &Option<String>, what: &str| -> Result<Option<usize>> {
        v.as_ref()
            .map(|t| {
                parse_timestamp(t)
                    .map(|ts| panel.index_at_or_after(ts))
                    .ok_or_else(|| Error::InvalidConfig(format!("bad {what} timestamp {t:?}")))
            })
            .transpose()
    };
    let last_possible = n - 1 - horizon;
    let first = match parse(&s.eval_start, "eval_start")? {
        Some(i) => i,
        None => {
            // earliest origin whose training window clears the lag history
            let mut t = max_lag;
            loop {
                if t > last_possible {
                    return Err(Error::InvalidConfig(
                        "no origin has a full training window before the end of the panel".into(),
                    ));
                }
                match train_start_for(panel, s.train_window, t)? {
                    Some(st) if st >= max_lag => break t,
                    _ => t += 1,
                }
            }
        }
    };
    let last = parse(&s.eval_end, "eval_end")?.unwrap_or(last_possible);
    if last > last_possible {
        return Err(Error::InvalidConfig(format!(
            "eval_end leaves no realized values for the {horizon}-step horizon (last usable origin {})",
            format_timestamp(panel.timestamp(last_possible))
        )));
    }
    if first > last {
        return Err(Error::InvalidConfig("evaluation range is empty".into()));
    }
    let mut origins: Vec<usize> = (first..=last).step_by(s.origin_cadence).collect();
    if let Some(m) = s.max_origins {
        origins.truncate(m);
    }
    if origins.is_empty() {
        return Err(Error::InvalidConfig("no forecast origins".into()));
    }

    // window boundaries: the first origin, then every cadence (calendar-aligned for months)
    let mut bounds = vec![origins[0]];
    match span_steps(s.refit_cadence, panel.step_minutes) {
        Some(c) => {
            let mut b = origins[0] + c;
            while b <= *origins.last().unwrap() {
                bounds.push(b);
                b += c;
            }
        }
        None => {
            let Span::Months(m) = s.refit_cadence else {
                unreachable!()
            };
            let t0 = panel.timestamp(origins[0]);
            let month_start = t0.date().with_day(1).unwrap().and_hms_opt(0, 0, 0).unwrap();
            let mut k = 1;
            loop {
                let b = month_start
                    .checked_add_months(Months::new(m * k))
                    .ok_or_else(|| Error::InvalidConfig("timestamp arithmetic overflow".into()))?;
                let bi = panel.index_at_or_after(b);
                if bi > *origins.last().unwrap() {
                    break;
                }
                if bi > bounds[bounds.len() - 1] {
                    bounds.push(bi);
                }
                k += 1;
            }
        }
    }
    let mut windows = Vec::new();
    for (i, &b) in bounds.iter().enumerate() {
        let next = bounds.get(i + 1).copied().unwrap_or(usize::MAX);
        let os: Vec<usize> = origins.iter().copied().filter(|&o| o >= b && o < next).collect();
        if os.is_empty() {
            continue;
        }
        let train_end = b;
        let train_start = train_start_for(panel, s.train_window, train_end)?
            .filter(|&st| st >= max_lag)
            .ok_or_else(|| {
                Error::InvalidConfig(format!(
                    "training window ending {} needs data before the panel's lag history",
                    format_timestamp(panel.timestamp(train_end))
                ))
            })?;
        windows.push(Window {
            train_start,
            train_end,
            origins: os,
        });
    }
    Ok(Plan { windows, max_lag })
}

/// Fitted models of one window, keyed by model label.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowFits {
    pub window: Window,
    pub margins: Option<Vec<MarginModel>>,
    pub models: BTreeMap<String, Vec<ModelFit>>,
}

/// Margins of every series on the training window only.
pub fn fit_margins(panel: &TimeSeriesPanel, cfg: &BacktestConfig, w: &Window) -> Result<Vec<MarginModel>> {
    let (lo, hi) = panel.bounds_at(w.train_end);
    panel
        .values
        .iter()
        .map(|v| fit_bounded_kde(&v[w.train_start..=w.train_end], lo, hi, cfg.margins.bandwidth))
        .collect()
}

pub fn fit_window(panel: &TimeSeriesPanel, cfg: &BacktestConfig, w: &Window) -> Result<WindowFits> {
    let needs_margins = cfg.models.families.iter().any(|f| *f == Family::Copula);
    let margins = if needs_margins {
        Some(fit_margins(panel, cfg, w)?)
    } else {
        None
    };
    let mut models = BTreeMap::new();
    for &family in &cfg.models.families {
        let spec = cfg.features.spec(&panel.series_ids, family);
        let mut settings = cfg.fit_settings(family);
        settings.seed = derive_seed(cfg.models.seed, &[family as u64, w.train_end as u64]);
        let fits = panel
            .series_ids
            .iter()
            .map(|id| {
                fit_series(
                    panel,
                    id,
                    &spec,
                    &settings,
                    (w.train_start, w.train_end),
                    margins.as_deref(),
                )
            })
            .collect::<Result<Vec<_>>>()?;
        log::info!(
            "fitted {} on {} .. {}",
            cfg.models.label(family),
            format_timestamp(panel.timestamp(w.train_start)),
            format_timestamp(panel.timestamp(w.train_end))
        );
        models.insert(cfg.models.label(family), fits);
    }
    Ok(WindowFits {
        window: w.clone(),
        margins,
        models,
    })
}

/// Quantile summaries of one model at one origin.
#[derive(Debug, Clone, PartialEq)]
pub struct ArchivedForecast {
    pub model: String,
    pub origin_time: NaiveDateTime,
    pub series: Vec<String>,
    /// `[step][series]`.
    pub summary: Vec<Vec<StepSummary>>,
    /// Raw paths `[path][step][series]` when kept.
    pub paths: Option<Vec<Vec<Vec<f64>>>>,
}

pub struct BacktestResult {
    pub plan: Plan,
    pub fits: Vec<WindowFits>,
    pub archive: Vec<ArchivedForecast>,
    pub report: ScoreReport,
    /// Keyed by `model/series`.
    pub calibration: BTreeMap<String, CalibrationCurves>,
    pub audit: AuditReport,
    pub clamped: usize,
}

/// Calibration grid spanning the admissible range at `t`.
pub fn calibration_grid(panel: &TimeSeriesPanel, cfg: &BacktestConfig, t: usize) -> Vec<f64> {
    let (lo, hi) = panel.bounds_at(t);
    let n = cfg.scoring.calibration_grid;
    (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect()
}

pub fn weights_for(panel: &TimeSeriesPanel, cfg: &BacktestConfig) -> SystemWeights {
    cfg.scoring
        .weights
        .clone()
        .unwrap_or_else(|| SystemWeights::equal(&panel.series_ids))
}

/// Fits every window, forecasts every origin, and scores the forecasts.
pub fn run_backtest(panel: &TimeSeriesPanel, cfg: &BacktestConfig) -> Result<BacktestResult> {
    let plan = plan(panel, cfg)?;
    let report = audit(cfg, Some((panel, &plan)));
    report.into_result()?;
    let fits = plan
        .windows
        .iter()
        .map(|w| fit_window(panel, cfg, w))
        .collect::<Result<Vec<_>>>()?;
    run_with(panel, cfg, plan, fits)
}

/// Re-runs the forecasting and scoring stages from previously fitted models.
pub fn run_backtest_with_fits(
    panel: &TimeSeriesPanel,
    cfg: &BacktestConfig,
    fits: Vec<WindowFits>,
) -> Result<BacktestResult> {
    let plan = plan(panel, cfg)?;
    audit(cfg, Some((panel, &plan))).into_result()?;
    if fits.len() != plan.windows.len() || fits.iter().zip(&plan.windows).any(|(f, w)| &f.window != w) {
        return Err(Error::InvalidConfig(
            "saved fits do not match this configuration's refit schedule".into(),
        ));
    }
    run_with(panel, cfg, plan, fits)
}

fn run_with(
    panel: &TimeSeriesPanel,
    cfg: &BacktestConfig,
    plan: Plan,
    fits: Vec<WindowFits>,
) -> Result<BacktestResult> {
    let horizon = cfg.schedule.horizon;
    let grid = calibration_grid(panel, cfg, plan.windows[0].origins[0]);
    let mut losses = LossTable::new();
    let mut calib: BTreeMap<String, CalibrationAccumulator> = BTreeMap::new();
    let mut archive = Vec::new();
    let mut clamped = 0;
    for wf in &fits {
        for (label, model_fits) in &wf.models {
            let family = model_fits[0].family;
            let opts = cfg.sim_options(derive_seed(cfg.simulation.seed, &[family as u64]));
            let mut states = OriginStates::at_train_end(model_fits)?;
            for &origin in &wf.window.origins {
                states.advance(model_fits, panel, origin)?;
                let ens = simulate_paths(model_fits, panel, &states, &opts)?;
                clamped += ens.clamped;
                for h in 0..horizon {
                    for (f, fit) in model_fits.iter().enumerate() {
                        let s = panel.series_index(&fit.series_id)?;
                        let y = panel.value(s, origin + h + 1);
                        losses
                            .entry((label.clone(), fit.series_id.clone(), h + 1))
                            .or_default()
                            .push(Losses::from_summary(&ens.summary[h][f], y)?);
                        if h < cfg.scoring.calibration_steps {
                            let key = format!("{label}/{}", fit.series_id);
                            if !calib.contains_key(&key) {
                                calib.insert(key.clone(), CalibrationAccumulator::new(grid.clone())?);
                            }
                            calib.get_mut(&key).unwrap().add_sorted(&ens.samples[h][f], y);
                        }
                    }
                }
                archive.push(ArchivedForecast {
                    model: label.clone(),
                    origin_time: ens.origin_time,
                    series: ens.series,
                    summary: ens.summary,
                    paths: ens.paths,
                });
            }
        }
    }
    let meta = metadata(panel, cfg, &plan);
    let report = ScoreReport::build(&losses, meta)?;
    let calibration = calib
        .into_iter()
        .map(|(k, a)| Ok((k, a.finish()?)))
        .collect::<Result<_>>()?;
    let audit_report = audit(cfg, Some((panel, &plan)));
    Ok(BacktestResult {
        plan,
        fits,
        archive,
        report,
        calibration,
        audit: audit_report,
        clamped,
    })
}

fn metadata(panel: &TimeSeriesPanel, cfg: &BacktestConfig, plan: &Plan) -> ScoreMetadata {
    let first = plan.origins().next().unwrap_or(0);
    let last = plan.origins().last().unwrap_or(0);
    ScoreMetadata {
        window_start: format_timestamp(panel.timestamp(first)),
        window_end: format_timestamp(panel.timestamp(last)),
        n_origins: plan.n_origins(),
        weights: Some(weights_for(panel, cfg)),
    }
}

/// Scores archived forecasts against the panel.
pub fn score_archive(
    archive: &[ArchivedForecast],
    panel: &TimeSeriesPanel,
    cfg: &BacktestConfig,
) -> Result<(ScoreReport, BTreeMap<String, CalibrationCurves>)> {
    if archive.is_empty() {
        return Err(Error::InvalidInput("no forecasts to score".into()));
    }
    let mut losses = LossTable::new();
    let mut calib: BTreeMap<String, CalibrationAccumulator> = BTreeMap::new();
    let mut origins = std::collections::BTreeSet::new();
    let first_origin = panel.index_at_or_after(archive.iter().map(|a| a.origin_time).min().unwrap());
    let grid = calibration_grid(panel, cfg, first_origin);
    for a in archive {
        let origin = panel.index_at_or_after(a.origin_time);
        if panel.timestamp(origin) != a.origin_time {
            return Err(Error::InvalidInput(format!(
                "origin {} is not on the panel grid",
                format_timestamp(a.origin_time)
            )));
        }
        origins.insert(origin);
        for (h, row) in a.summary.iter().enumerate() {
            let t = origin + h + 1;
            if t >= panel.len() {
                return Err(Error::MissingData(format!(
                    "no realized value {} steps after {}",
                    h + 1,
                    format_timestamp(a.origin_time)
                )));
            }
            for (sum, id) in row.iter().zip(&a.series) {
                let y = panel.value(panel.series_index(id)?, t);
                losses
                    .entry((a.model.clone(), id.clone(), h + 1))
                    .or_default()
                    .push(Losses::from_summary(sum, y)?);
                if h < cfg.scoring.calibration_steps {
                    let key = format!("{}/{id}", a.model);
                    if !calib.contains_key(&key) {
                        calib.insert(key.clone(), CalibrationAccumulator::new(grid.clone())?);
                    }
                    calib.get_mut(&key).unwrap().add(|g| quantile_cdf(&sum.quantiles, g), y);
                }
            }
        }
    }
    let meta = ScoreMetadata {
        window_start: format_timestamp(panel.timestamp(*origins.first().unwrap())),
        window_end: format_timestamp(panel.timestamp(*origins.last().unwrap())),
        n_origins: origins.len(),
        weights: Some(weights_for(panel, cfg)),
    };
    let report = ScoreReport::build(&losses, meta)?;
    let calibration = calib
        .into_iter()
        .map(|(k, a)| Ok((k, a.finish()?)))
        .collect::<Result<_>>()?;
    Ok((report, calibration))
}

/// Predictive CDF from quantiles at levels `i/(n+1)`, linear between knots.
pub fn quantile_cdf(quantiles: &[f64], y: f64) -> f64 {
    let n = quantiles.len();
    let level = |i: usize| (i + 1) as f64 / (n + 1) as f64;
    let j = quantiles.partition_point(|&q| q <= y);
    if j == 0 {
        return 0.0;
    }
    if j == n {
        return 1.0;
    }
    let (q0, q1) = (quantiles[j - 1], quantiles[j]);
    if q1 > q0 {
        level(j - 1) + (level(j) - level(j - 1)) * (y - q0) / (q1 - q0)
    } else {
        level(j)
    }
}
