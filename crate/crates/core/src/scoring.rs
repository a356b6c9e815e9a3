//! Point and probabilistic accuracy metrics, the upper-tail joint loss,
//! coverage, marginal calibration, system weighting and Diebold–Mariano tests.

use std::collections::BTreeMap;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::forecast::StepSummary;
use crate::stats;

/// Default CRPS grid size (levels `i / 200`).
pub const DEFAULT_CRPS_GRID: usize = 199;
pub const TAIL_ALPHA: f64 = 0.975;
/// Largest expected longrise accepted by [`upper_tail_loss`] before `exp` overflows.
pub const MAX_LONGRISE: f64 = 700.0;

/// Pinball loss `2(I(y < q) − α)(q − y)`.
pub fn quantile_score(q: f64, y: f64, alpha: f64) -> f64 {
    let ind = if y < q { 1.0 } else { 0.0 };
    2.0 * (ind - alpha) * (q - y)
}

fn check_grid(n_grid: usize) -> Result<()> {
    if n_grid < 19 {
        return Err(Error::InvalidInput(format!(
            "CRPS grid needs at least 19 levels, got {n_grid}"
        )));
    }
    Ok(())
}

/// CRPS by the trapezoid rule over levels `i/(n_grid+1)`; the integrand
/// vanishes at both endpoints.
pub fn crps(quantile: impl Fn(f64) -> f64, y: f64, n_grid: usize) -> Result<f64> {
    check_grid(n_grid)?;
    let h = 1.0 / (n_grid + 1) as f64;
    let s: f64 = (1..=n_grid)
        .map(|i| {
            let a = i as f64 * h;
            quantile_score(quantile(a), y, a)
        })
        .sum();
    Ok(s * h)
}

fn check_sorted(sorted: &[f64]) -> Result<()> {
    if sorted.is_empty() {
        return Err(Error::InvalidInput("empty forecast sample".into()));
    }
    if sorted.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("forecast sample contains non-finite values".into()));
    }
    if sorted.windows(2).any(|w| w[1] < w[0]) {
        return Err(Error::InvalidInput("forecast sample is not sorted".into()));
    }
    Ok(())
}

/// CRPS of an empirical forecast from its sorted draws.
pub fn crps_sorted(sorted: &[f64], y: f64, n_grid: usize) -> Result<f64> {
    check_sorted(sorted)?;
    crps(|a| stats::quantile_sorted(sorted, a), y, n_grid)
}

/// CRPS from quantiles already evaluated at levels `i/(n+1)`, `i = 1..=n`.
pub fn crps_from_levels(quantiles: &[f64], y: f64) -> Result<f64> {
    crps(
        |a| quantiles[((a * (quantiles.len() + 1) as f64).round() as usize).clamp(1, quantiles.len()) - 1],
        y,
        quantiles.len(),
    )
}

/// Energy form `E|X − y| − ½E|X − X′|` of the sample CRPS.
pub fn crps_energy_form(sorted: &[f64], y: f64) -> Result<f64> {
    check_sorted(sorted)?;
    let n = sorted.len() as f64;
    let e1 = sorted.iter().map(|x| (x - y).abs()).sum::<f64>() / n;
    // Σ_{i,j}|x_i − x_j| = 2 Σ_i (2i − n + 1) x_(i) for sorted x
    let pair: f64 = sorted
        .iter()
        .enumerate()
        .map(|(i, x)| (2.0 * i as f64 - n + 1.0) * x)
        .sum::<f64>()
        * 2.0;
    Ok(e1 - 0.5 * pair / (n * n))
}

/// Upper-tail joint loss for a (VaR, expected longrise) pair at level `alpha`:
/// `I(y ≥ q)(−q + y − e^el (q − y)) + (1−α)(q − e^el (el − q) + e^el)`.
pub fn upper_tail_loss(q: f64, el: f64, y: f64, alpha: f64) -> Result<f64> {
    if !(q.is_finite() && el.is_finite() && y.is_finite()) {
        return Err(Error::Domain("upper-tail loss needs finite inputs".into()));
    }
    if el > MAX_LONGRISE {
        return Err(Error::Domain(format!(
            "expected longrise {el} overflows exp; score on the log-price scale"
        )));
    }
    let e = el.exp();
    let ind = if y >= q { 1.0 } else { 0.0 };
    Ok(ind * (-q + y - e * (q - y)) + (1.0 - alpha) * (q - e * (el - q) + e))
}

/// Mean of sorted draws strictly above the empirical `alpha` quantile.
pub fn longrise(sorted: &[f64], alpha: f64) -> Result<f64> {
    check_sorted(sorted)?;
    let q = stats::quantile_sorted(sorted, alpha);
    let start = sorted.partition_point(|&v| v <= q);
    Ok(if start == sorted.len() {
        q
    } else {
        stats::mean(&sorted[start..])
    })
}

/// Fraction of `y` inside `[lower, upper]`.
pub fn interval_coverage(lower: &[f64], upper: &[f64], y: &[f64]) -> Result<f64> {
    if lower.len() != y.len() || upper.len() != y.len() {
        return Err(Error::DimensionMismatch {
            expected: y.len(),
            got: lower.len().min(upper.len()),
            context: "interval bounds vs observations",
        });
    }
    if y.is_empty() {
        return Err(Error::InvalidInput("no observations".into()));
    }
    if lower.iter().zip(upper).any(|(l, u)| l > u) {
        return Err(Error::InvalidInput("interval lower bound above upper bound".into()));
    }
    let inside = y
        .iter()
        .zip(lower.iter().zip(upper))
        .filter(|(v, (l, u))| *v >= *l && *v <= *u)
        .count();
    Ok(inside as f64 / y.len() as f64)
}

/// `(MAE, RMSE)` of point forecasts.
pub fn point_errors(forecast: &[f64], y: &[f64]) -> Result<(f64, f64)> {
    if forecast.len() != y.len() {
        return Err(Error::DimensionMismatch {
            expected: y.len(),
            got: forecast.len(),
            context: "point forecasts vs observations",
        });
    }
    if y.is_empty() {
        return Err(Error::InvalidInput("no observations".into()));
    }
    let n = y.len() as f64;
    let mae = forecast.iter().zip(y).map(|(f, v)| (f - v).abs()).sum::<f64>() / n;
    let mse = forecast.iter().zip(y).map(|(f, v)| (f - v).powi(2)).sum::<f64>() / n;
    Ok((mae, mse.sqrt()))
}

/// Regional demand shares used to aggregate per-series metrics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SystemWeights(pub BTreeMap<String, f64>);

impl Default for SystemWeights {
    fn default() -> Self {
        Self(
            [
                ("NSW", 0.3687),
                ("VIC", 0.2355),
                ("QLD", 0.2818),
                ("SA", 0.0624),
                ("TAS", 0.0516),
            ]
            .into_iter()
            .map(|(k, v)| (k.to_string(), v))
            .collect(),
        )
    }
}

impl SystemWeights {
    pub fn equal(series: &[String]) -> Self {
        let w = 1.0 / series.len() as f64;
        Self(series.iter().map(|s| (s.clone(), w)).collect())
    }

    pub fn validate(&self) -> Result<()> {
        if self.0.values().any(|w| !(*w >= 0.0)) {
            return Err(Error::InvalidConfig("system weights must be nonnegative".into()));
        }
        let sum: f64 = self.0.values().sum();
        if (sum - 1.0).abs() > 1e-6 {
            return Err(Error::InvalidConfig(format!("system weights sum to {sum}, not 1")));
        }
        Ok(())
    }

    pub fn covers(&self, series: &[String]) -> bool {
        self.0.len() == series.len() && series.iter().all(|s| self.0.contains_key(s))
    }
}

/// Weighted average of per-series values.
pub fn system_weighted(values: &BTreeMap<String, f64>, weights: &SystemWeights) -> Result<f64> {
    weights.validate()?;
    let mut total = 0.0;
    for (series, w) in &weights.0 {
        let v = values
            .get(series)
            .ok_or_else(|| Error::MissingData(format!("no value for weighted series {series:?}")))?;
        total += w * v;
    }
    Ok(total)
}

/// Observed vs average-predictive CDFs on a common grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationCurves {
    pub grid: Vec<f64>,
    pub h_hat: Vec<f64>,
    pub f_bar: Vec<f64>,
    pub n: usize,
}

impl CalibrationCurves {
    pub fn sup_distance(&self) -> f64 {
        self.h_hat
            .iter()
            .zip(&self.f_bar)
            .map(|(h, f)| (h - f).abs())
            .fold(0.0, f64::max)
    }
}

/// Streaming accumulator for [`CalibrationCurves`].
#[derive(Debug, Clone)]
pub struct CalibrationAccumulator {
    grid: Vec<f64>,
    h_count: Vec<u64>,
    f_sum: Vec<f64>,
    n: usize,
}

impl CalibrationAccumulator {
    pub fn new(grid: Vec<f64>) -> Result<Self> {
        if grid.is_empty() || grid.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::InvalidInput(
                "calibration grid must be strictly increasing and nonempty".into(),
            ));
        }
        let m = grid.len();
        Ok(Self {
            grid,
            h_count: vec![0; m],
            f_sum: vec![0.0; m],
            n: 0,
        })
    }

    /// Adds one forecast, given by its predictive CDF, and its outcome.
    pub fn add(&mut self, cdf: impl Fn(f64) -> f64, y: f64) {
        for (i, &g) in self.grid.iter().enumerate() {
            self.f_sum[i] += cdf(g);
            if y <= g {
                self.h_count[i] += 1;
            }
        }
        self.n += 1;
    }

    /// Adds an empirical forecast from sorted draws.
    pub fn add_sorted(&mut self, sorted: &[f64], y: f64) {
        let n = sorted.len() as f64;
        self.add(|g| sorted.partition_point(|&v| v <= g) as f64 / n, y);
    }

    pub fn finish(&self) -> Result<CalibrationCurves> {
        if self.n == 0 {
            return Err(Error::InvalidInput("no forecasts for calibration".into()));
        }
        let n = self.n as f64;
        Ok(CalibrationCurves {
            grid: self.grid.clone(),
            h_hat: self.h_count.iter().map(|&c| c as f64 / n).collect(),
            f_bar: self.f_sum.iter().map(|s| s / n).collect(),
            n: self.n,
        })
    }
}

/// `Ĥ` and `F̄` from sorted forecast samples and matching observations.
pub fn marginal_calibration(forecasts: &[&[f64]], observations: &[f64], grid: &[f64]) -> Result<CalibrationCurves> {
    if forecasts.len() != observations.len() {
        return Err(Error::DimensionMismatch {
            expected: observations.len(),
            got: forecasts.len(),
            context: "forecasts vs observations",
        });
    }
    let mut acc = CalibrationAccumulator::new(grid.to_vec())?;
    for (f, &y) in forecasts.iter().zip(observations) {
        check_sorted(f)?;
        acc.add_sorted(f, y);
    }
    acc.finish()
}

/// Writes curves as `model,y,h_hat,f_bar` rows.
pub fn write_calibration<W: Write>(curves: &BTreeMap<String, CalibrationCurves>, out: W) -> Result<()> {
    let mut wr = csv::Writer::from_writer(out);
    wr.write_record(["model", "y", "h_hat", "f_bar"])?;
    for (model, c) in curves {
        for i in 0..c.grid.len() {
            wr.write_record([
                model.as_str(),
                &c.grid[i].to_string(),
                &c.h_hat[i].to_string(),
                &c.f_bar[i].to_string(),
            ])?;
        }
    }
    wr.flush()?;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DmResult {
    pub statistic: f64,
    pub p_value: f64,
    pub n: usize,
    /// The loss differential has zero long-run variance.
    pub degenerate: bool,
}

/// Two-sided Diebold–Mariano test on `loss_a − loss_b`, Bartlett long-run
/// variance with lag `horizon_step − 1`.
pub fn dm_test(loss_a: &[f64], loss_b: &[f64], horizon_step: usize) -> Result<DmResult> {
    if loss_a.len() != loss_b.len() {
        return Err(Error::DimensionMismatch {
            expected: loss_a.len(),
            got: loss_b.len(),
            context: "DM loss series",
        });
    }
    let n = loss_a.len();
    if n < 30 {
        return Err(Error::InvalidInput(format!(
            "DM test needs at least 30 losses, got {n}"
        )));
    }
    if horizon_step == 0 {
        return Err(Error::InvalidInput("horizon step must be at least 1".into()));
    }
    let d: Vec<f64> = loss_a.iter().zip(loss_b).map(|(a, b)| a - b).collect();
    let mean = stats::mean(&d);
    let nf = n as f64;
    let gamma = |k: usize| {
        d[k..]
            .iter()
            .zip(&d[..n - k])
            .map(|(a, b)| (a - mean) * (b - mean))
            .sum::<f64>()
            / nf
    };
    let lag = (horizon_step - 1).min(n - 1);
    let mut lrv = gamma(0);
    for k in 1..=lag {
        lrv += 2.0 * (1.0 - k as f64 / (lag + 1) as f64) * gamma(k);
    }
    if !(lrv > 0.0) || gamma(0) == 0.0 {
        return Ok(DmResult {
            statistic: 0.0,
            p_value: 1.0,
            n,
            degenerate: true,
        });
    }
    let statistic = mean / (lrv / nf).sqrt();
    Ok(DmResult {
        statistic,
        p_value: 2.0 * stats::norm_sf(statistic.abs()),
        n,
        degenerate: false,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Metric {
    #[serde(rename = "MAE")]
    Mae,
    #[serde(rename = "RMSE")]
    Rmse,
    #[serde(rename = "CRPS")]
    Crps,
    #[serde(rename = "JS")]
    Js,
    #[serde(rename = "QS95")]
    Qs95,
    #[serde(rename = "QS05")]
    Qs05,
    #[serde(rename = "C95")]
    C95,
}

impl Metric {
    pub const ALL: [Metric; 7] = [
        Metric::Mae,
        Metric::Rmse,
        Metric::Crps,
        Metric::Js,
        Metric::Qs95,
        Metric::Qs05,
        Metric::C95,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Metric::Mae => "MAE",
            Metric::Rmse => "RMSE",
            Metric::Crps => "CRPS",
            Metric::Js => "JS",
            Metric::Qs95 => "QS95",
            Metric::Qs05 => "QS05",
            Metric::C95 => "C95",
        }
    }
}

/// Per-forecast losses for one (origin, step, series).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Losses {
    pub abs_err: f64,
    pub sq_err: f64,
    pub crps: f64,
    pub js: f64,
    pub qs95: f64,
    pub qs05: f64,
    pub covered: bool,
}

impl Losses {
    pub fn from_summary(s: &StepSummary, y: f64) -> Result<Self> {
        let (lo, hi) = s.interval95();
        Ok(Self {
            abs_err: (s.mean - y).abs(),
            sq_err: (s.mean - y).powi(2),
            crps: crps_from_levels(&s.quantiles, y)?,
            js: upper_tail_loss(s.quantile_at(TAIL_ALPHA), s.longrise, y, TAIL_ALPHA)?,
            qs95: quantile_score(s.quantile_at(0.95), y, 0.95),
            qs05: quantile_score(s.quantile_at(0.05), y, 0.05),
            covered: y >= lo && y <= hi,
        })
    }

    /// Loss series entering DM comparisons for `metric` (C95 has none).
    pub fn get(&self, metric: Metric) -> Option<f64> {
        match metric {
            Metric::Mae => Some(self.abs_err),
            Metric::Rmse => Some(self.sq_err),
            Metric::Crps => Some(self.crps),
            Metric::Js => Some(self.js),
            Metric::Qs95 => Some(self.qs95),
            Metric::Qs05 => Some(self.qs05),
            Metric::C95 => None,
        }
    }
}

/// Aggregate a loss sequence into the reported metric value.
pub fn aggregate(losses: &[Losses], metric: Metric) -> f64 {
    let n = losses.len() as f64;
    match metric {
        Metric::Rmse => (losses.iter().map(|l| l.sq_err).sum::<f64>() / n).sqrt(),
        Metric::C95 => losses.iter().filter(|l| l.covered).count() as f64 / n,
        m => losses.iter().filter_map(|l| l.get(m)).sum::<f64>() / n,
    }
}

pub const SYSTEM: &str = "SYSTEM";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreEntry {
    pub model: String,
    pub step: usize,
    pub series: String,
    pub metric: Metric,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DmEntry {
    pub model_a: String,
    pub model_b: String,
    pub step: usize,
    /// Series id, or [`SYSTEM`] for the weight-pooled differential.
    pub series: String,
    pub metric: Metric,
    pub result: DmResult,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreMetadata {
    pub window_start: String,
    pub window_end: String,
    pub n_origins: usize,
    pub weights: Option<SystemWeights>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreReport {
    pub metadata: ScoreMetadata,
    pub entries: Vec<ScoreEntry>,
    #[serde(default)]
    pub dm: Vec<DmEntry>,
}

/// Losses keyed by (model, series, step), one per origin in origin order.
pub type LossTable = BTreeMap<(String, String, usize), Vec<Losses>>;

impl ScoreReport {
    /// Aggregates per-origin losses; adds system-weighted rows when the
    /// weights cover exactly the scored series, and DM tests of every model
    /// pair on CRPS and MAE.
    pub fn build(losses: &LossTable, metadata: ScoreMetadata) -> Result<Self> {
        let mut entries = Vec::new();
        let mut per_model_step: BTreeMap<(String, usize), BTreeMap<String, &Vec<Losses>>> = BTreeMap::new();
        for ((model, series, step), l) in losses {
            if l.is_empty() {
                continue;
            }
            for m in Metric::ALL {
                entries.push(ScoreEntry {
                    model: model.clone(),
                    step: *step,
                    series: series.clone(),
                    metric: m,
                    value: aggregate(l, m),
                });
            }
            per_model_step
                .entry((model.clone(), *step))
                .or_default()
                .insert(series.clone(), l);
        }
        let weights = metadata.weights.clone();
        if let Some(w) = &weights {
            for ((model, step), by_series) in &per_model_step {
                let ids: Vec<String> = by_series.keys().cloned().collect();
                if !w.covers(&ids) {
                    continue;
                }
                for m in Metric::ALL {
                    let values = by_series.iter().map(|(s, l)| (s.clone(), aggregate(l, m))).collect();
                    entries.push(ScoreEntry {
                        model: model.clone(),
                        step: *step,
                        series: SYSTEM.into(),
                        metric: m,
                        value: system_weighted(&values, w)?,
                    });
                }
            }
        }
        if let Some(bad) = entries.iter().find(|e| !e.value.is_finite()) {
            return Err(Error::Numeric(format!(
                "non-finite {} for {} / {} at step {}",
                bad.metric.name(),
                bad.model,
                bad.series,
                bad.step
            )));
        }

        let mut dm = Vec::new();
        let models: Vec<String> = per_model_step
            .keys()
            .map(|(m, _)| m.clone())
            .collect::<std::collections::BTreeSet<_>>()
            .into_iter()
            .collect();
        for (i, a) in models.iter().enumerate() {
            for b in &models[i + 1..] {
                for ((model, step), by_a) in &per_model_step {
                    if model != a {
                        continue;
                    }
                    let Some(by_b) = per_model_step.get(&(b.clone(), *step)) else {
                        continue;
                    };
                    for metric in [Metric::Crps, Metric::Mae] {
                        let mut pooled_a: Option<Vec<f64>> = None;
                        let mut pooled_b: Option<Vec<f64>> = None;
                        for (series, la) in by_a {
                            let Some(lb) = by_b.get(series) else { continue };
                            if la.len() != lb.len() || la.len() < 30 {
                                continue;
                            }
                            let va: Vec<f64> = la.iter().filter_map(|l| l.get(metric)).collect();
                            let vb: Vec<f64> = lb.iter().filter_map(|l| l.get(metric)).collect();
                            dm.push(DmEntry {
                                model_a: a.clone(),
                                model_b: b.clone(),
                                step: *step,
                                series: series.clone(),
                                metric,
                                result: dm_test(&va, &vb, *step)?,
                            });
                            if let Some(w) = weights.as_ref().and_then(|w| w.0.get(series)) {
                                let pa = pooled_a.get_or_insert_with(|| vec![0.0; va.len()]);
                                let pb = pooled_b.get_or_insert_with(|| vec![0.0; vb.len()]);
                                if pa.len() == va.len() {
                                    pa.iter_mut().zip(&va).for_each(|(p, v)| *p += w * v);
                                    pb.iter_mut().zip(&vb).for_each(|(p, v)| *p += w * v);
                                }
                            }
                        }
                        let covered = weights
                            .as_ref()
                            .is_some_and(|w| w.covers(&by_a.keys().cloned().collect::<Vec<_>>()));
                        if let (true, Some(pa), Some(pb)) = (covered, pooled_a, pooled_b) {
                            dm.push(DmEntry {
                                model_a: a.clone(),
                                model_b: b.clone(),
                                step: *step,
                                series: SYSTEM.into(),
                                metric,
                                result: dm_test(&pa, &pb, *step)?,
                            });
                        }
                    }
                }
            }
        }
        Ok(Self { metadata, entries, dm })
    }

    pub fn get(&self, model: &str, series: &str, step: usize, metric: Metric) -> Option<f64> {
        self.entries
            .iter()
            .find(|e| e.model == model && e.series == series && e.step == step && e.metric == metric)
            .map(|e| e.value)
    }

    pub fn steps(&self) -> Vec<usize> {
        let s: std::collections::BTreeSet<usize> = self.entries.iter().map(|e| e.step).collect();
        s.into_iter().collect()
    }

    /// Metric blocks × horizon columns, one row per (model, series).
    pub fn write_table<W: Write>(&self, out: W) -> Result<()> {
        let steps = self.steps();
        let mut wr = csv::Writer::from_writer(out);
        let mut header = vec!["metric".to_string(), "model".into(), "series".into()];
        header.extend(steps.iter().map(|s| format!("h{s}")));
        wr.write_record(&header)?;
        let mut rows: BTreeMap<(Metric, &str, &str), BTreeMap<usize, f64>> = BTreeMap::new();
        for e in &self.entries {
            rows.entry((e.metric, &e.model, &e.series))
                .or_default()
                .insert(e.step, e.value);
        }
        for ((metric, model, series), vals) in rows {
            let mut rec = vec![metric.name().to_string(), model.to_string(), series.to_string()];
            rec.extend(
                steps
                    .iter()
                    .map(|s| vals.get(s).map(|v| format!("{v:.6}")).unwrap_or_default()),
            );
            wr.write_record(&rec)?;
        }
        wr.flush()?;
        Ok(())
    }

    /// One row per model for `series`, metrics averaged over steps:
    /// `model,MAE,RMSE,CRPS,JS,QS95,QS05,C95`.
    pub fn write_summary<W: Write>(&self, series: &str, out: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(out);
        let mut header = vec!["model"];
        header.extend(Metric::ALL.iter().map(|m| m.name()));
        wr.write_record(&header)?;
        let mut by_model: BTreeMap<&str, BTreeMap<Metric, Vec<f64>>> = BTreeMap::new();
        for e in self.entries.iter().filter(|e| e.series == series) {
            by_model
                .entry(&e.model)
                .or_default()
                .entry(e.metric)
                .or_default()
                .push(e.value);
        }
        for (model, metrics) in by_model {
            let mut rec = vec![model.to_string()];
            for m in Metric::ALL {
                rec.push(
                    metrics
                        .get(&m)
                        .map(|v| format!("{:.6}", stats::mean(v)))
                        .unwrap_or_default(),
                );
            }
            wr.write_record(&rec)?;
        }
        wr.flush()?;
        Ok(())
    }

    pub fn write_json<W: Write>(&self, out: W) -> Result<()> {
        serde_json::to_writer_pretty(out, self)?;
        Ok(())
    }
}
