//! Report files: forecast quantiles, scores, calibration curves, fits and
//! the run manifest.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::backtest::{ArchivedForecast, BacktestResult, WindowFits};
use super::config::BacktestConfig;
use crate::error::{Error, Result};
use crate::forecast::{quantile_levels, StepSummary, N_LEVELS};
use crate::panel::{format_timestamp, parse_timestamp};
use crate::scoring::{write_calibration, CalibrationCurves, ScoreReport, SYSTEM};

const MEAN: &str = "mean";
const LONGRISE: &str = "longrise";

fn level_label(l: f64) -> String {
    format!("{l:.3}")
}

/// Rows `model,origin,step,series,level,value`; `level` is a probability,
/// `mean` or `longrise`.
pub fn write_forecasts<W: Write>(archive: &[ArchivedForecast], out: W) -> Result<()> {
    let mut wr = csv::Writer::from_writer(out);
    wr.write_record(["model", "origin", "step", "series", "level", "value"])?;
    let labels: Vec<String> = quantile_levels().into_iter().map(level_label).collect();
    for a in archive {
        let origin = format_timestamp(a.origin_time);
        for (h, row) in a.summary.iter().enumerate() {
            let step = (h + 1).to_string();
            for (sum, series) in row.iter().zip(&a.series) {
                let mut rec = |level: &str, v: f64| {
                    wr.write_record([a.model.as_str(), &origin, &step, series, level, &v.to_string()])
                };
                for (l, q) in labels.iter().zip(&sum.quantiles) {
                    rec(l, *q)?;
                }
                rec(MEAN, sum.mean)?;
                rec(LONGRISE, sum.longrise)?;
            }
        }
    }
    wr.flush()?;
    Ok(())
}

#[derive(Default)]
struct Partial {
    quantiles: Vec<(usize, f64)>,
    mean: Option<f64>,
    longrise: Option<f64>,
}

/// Reads a file written by [`write_forecasts`].
pub fn read_forecasts<R: Read>(input: R) -> Result<Vec<ArchivedForecast>> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(input);
    let labels: BTreeMap<String, usize> = quantile_levels()
        .into_iter()
        .enumerate()
        .map(|(i, l)| (level_label(l), i))
        .collect();
    // (model, origin) in file order → step → series → partial summary
    let mut order: Vec<(String, String)> = Vec::new();
    let mut series_order: BTreeMap<(String, String), Vec<String>> = BTreeMap::new();
    let mut cells: BTreeMap<(String, String), BTreeMap<usize, BTreeMap<String, Partial>>> = BTreeMap::new();
    for (i, rec) in rdr.records().enumerate() {
        let line = i + 2;
        let load = |message: String| Error::Load { row: line, message };
        let rec = rec.map_err(|e| load(e.to_string()))?;
        if rec.len() != 6 {
            return Err(load(format!("expected 6 fields, got {}", rec.len())));
        }
        let key = (rec[0].to_string(), rec[1].to_string());
        let step: usize = rec[2].parse().map_err(|_| load(format!("bad step {:?}", &rec[2])))?;
        if step == 0 {
            return Err(load("steps start at 1".into()));
        }
        let series = rec[3].to_string();
        let value: f64 = rec[5].parse().map_err(|_| load(format!("bad value {:?}", &rec[5])))?;
        if !cells.contains_key(&key) {
            order.push(key.clone());
        }
        let so = series_order.entry(key.clone()).or_default();
        if !so.contains(&series) {
            so.push(series.clone());
        }
        let p = cells
            .entry(key)
            .or_default()
            .entry(step)
            .or_default()
            .entry(series)
            .or_default();
        match &rec[4] {
            MEAN => p.mean = Some(value),
            LONGRISE => p.longrise = Some(value),
            l => p.quantiles.push((
                *labels.get(l).ok_or_else(|| load(format!("unknown level {l:?}")))?,
                value,
            )),
        }
    }
    let mut out = Vec::with_capacity(order.len());
    for key in order {
        let steps = cells.remove(&key).unwrap();
        let series = series_order.remove(&key).unwrap();
        let origin_time =
            parse_timestamp(&key.1).ok_or_else(|| Error::InvalidInput(format!("bad origin {:?}", key.1)))?;
        let n_steps = steps.len();
        let mut summary = Vec::with_capacity(n_steps);
        for (h, (step, mut by_series)) in steps.into_iter().enumerate() {
            if step != h + 1 {
                return Err(Error::MissingData(format!(
                    "{} at {}: step {} missing",
                    key.0,
                    key.1,
                    h + 1
                )));
            }
            let mut row = Vec::with_capacity(series.len());
            for id in &series {
                let p = by_series
                    .remove(id)
                    .ok_or_else(|| Error::MissingData(format!("{} at {}: no step {step} for {id}", key.0, key.1)))?;
                let mut q = p.quantiles;
                q.sort_by_key(|(i, _)| *i);
                if q.len() != N_LEVELS || q.iter().enumerate().any(|(i, (j, _))| i != *j) {
                    return Err(Error::MissingData(format!(
                        "{} at {}: incomplete quantiles for {id} step {step}",
                        key.0, key.1
                    )));
                }
                let (Some(mean), Some(longrise)) = (p.mean, p.longrise) else {
                    return Err(Error::MissingData(format!(
                        "{} at {}: missing mean or longrise for {id} step {step}",
                        key.0, key.1
                    )));
                };
                row.push(StepSummary {
                    quantiles: q.into_iter().map(|(_, v)| v).collect(),
                    mean,
                    longrise,
                });
            }
            summary.push(row);
        }
        out.push(ArchivedForecast {
            model: key.0,
            origin_time,
            series,
            summary,
            paths: None,
        });
    }
    Ok(out)
}

pub fn write_paths<W: Write>(archive: &[ArchivedForecast], out: W) -> Result<()> {
    let mut wr = csv::Writer::from_writer(out);
    wr.write_record(["model", "origin", "path", "step", "series", "value"])?;
    for a in archive {
        let Some(paths) = &a.paths else { continue };
        let origin = format_timestamp(a.origin_time);
        for (p, path) in paths.iter().enumerate() {
            for (h, row) in path.iter().enumerate() {
                for (v, s) in row.iter().zip(&a.series) {
                    wr.write_record([
                        a.model.as_str(),
                        &origin,
                        &p.to_string(),
                        &(h + 1).to_string(),
                        s,
                        &v.to_string(),
                    ])?;
                }
            }
        }
    }
    wr.flush()?;
    Ok(())
}

pub fn save_fits(fits: &[WindowFits], path: &Path) -> Result<()> {
    let f = std::io::BufWriter::new(std::fs::File::create(path)?);
    serde_json::to_writer(f, fits)?;
    Ok(())
}

pub fn load_fits(path: &Path) -> Result<Vec<WindowFits>> {
    let f = std::io::BufReader::new(std::fs::File::open(path)?);
    Ok(serde_json::from_reader(f)?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowSummary {
    pub train_start: String,
    pub train_end: String,
    pub n_origins: usize,
}

/// Everything needed to reproduce a run, plus digests of its outputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub tool_version: String,
    pub config_hash: String,
    pub model_seed: u64,
    pub simulation_seed: u64,
    pub n_origins: usize,
    pub windows: Vec<WindowSummary>,
    pub models: Vec<String>,
    pub audit_passed: bool,
    pub clamped_draws: usize,
    /// File name → SHA-256.
    pub files: BTreeMap<String, String>,
}

fn sha256_file(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path)?;
    Ok(Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect())
}

fn create(dir: &Path, name: &str) -> Result<std::io::BufWriter<std::fs::File>> {
    Ok(std::io::BufWriter::new(std::fs::File::create(dir.join(name))?))
}

/// Writes scores and calibration curves under `dir`; returns the file names.
pub fn write_scores(
    dir: &Path,
    report: &ScoreReport,
    calibration: &BTreeMap<String, CalibrationCurves>,
) -> Result<Vec<String>> {
    std::fs::create_dir_all(dir)?;
    let mut files = vec![
        "scores.csv".to_string(),
        "scores.json".into(),
        "dm.csv".into(),
        "calibration.csv".into(),
    ];
    report.write_table(create(dir, "scores.csv")?)?;
    report.write_json(create(dir, "scores.json")?)?;
    let mut wr = csv::Writer::from_writer(create(dir, "dm.csv")?);
    wr.write_record([
        "model_a",
        "model_b",
        "metric",
        "series",
        "step",
        "statistic",
        "p_value",
        "degenerate",
    ])?;
    for d in &report.dm {
        wr.write_record([
            d.model_a.as_str(),
            &d.model_b,
            d.metric.name(),
            &d.series,
            &d.step.to_string(),
            &d.result.statistic.to_string(),
            &d.result.p_value.to_string(),
            &d.result.degenerate.to_string(),
        ])?;
    }
    wr.flush()?;
    write_calibration(calibration, create(dir, "calibration.csv")?)?;
    let mut series: Vec<String> = report.entries.iter().map(|e| e.series.clone()).collect();
    series.sort();
    series.dedup();
    for s in series {
        let name = if s == SYSTEM {
            "summary_system.csv".to_string()
        } else {
            format!("summary_{s}.csv")
        };
        report.write_summary(&s, create(dir, &name)?)?;
        files.push(name);
    }
    Ok(files)
}

/// Writes every report file of a backtest plus `manifest.json`.
pub fn write_outputs(
    dir: &Path,
    result: &BacktestResult,
    cfg: &BacktestConfig,
    panel: &crate::panel::TimeSeriesPanel,
) -> Result<Manifest> {
    std::fs::create_dir_all(dir)?;
    let mut files = write_scores(dir, &result.report, &result.calibration)?;
    write_forecasts(&result.archive, create(dir, "forecasts.csv")?)?;
    files.push("forecasts.csv".into());
    serde_json::to_writer_pretty(create(dir, "audit.json")?, &result.audit)?;
    files.push("audit.json".into());
    if cfg.output.keep_paths {
        write_paths(&result.archive, create(dir, "paths.csv")?)?;
        files.push("paths.csv".into());
    }
    if cfg.output.save_fits {
        save_fits(&result.fits, &dir.join("fits.json"))?;
        files.push("fits.json".into());
    }
    std::fs::write(dir.join("config.toml"), cfg.to_toml()?)?;
    files.push("config.toml".into());
    let digests = files
        .iter()
        .map(|f| Ok((f.clone(), sha256_file(&dir.join(f))?)))
        .collect::<Result<_>>()?;
    let manifest = Manifest {
        tool_version: env!("CARGO_PKG_VERSION").into(),
        config_hash: cfg.hash()?,
        model_seed: cfg.models.seed,
        simulation_seed: cfg.simulation.seed,
        n_origins: result.plan.n_origins(),
        windows: result
            .plan
            .windows
            .iter()
            .map(|w| WindowSummary {
                train_start: format_timestamp(panel.timestamp(w.train_start)),
                train_end: format_timestamp(panel.timestamp(w.train_end)),
                n_origins: w.origins.len(),
            })
            .collect(),
        models: cfg.models.families.iter().map(|f| cfg.models.label(*f)).collect(),
        audit_passed: result.audit.passed(),
        clamped_draws: result.clamped,
        files: digests,
    };
    let mut f = create(dir, "manifest.json")?;
    serde_json::to_writer_pretty(&mut f, &manifest)?;
    f.write_all(b"\n")?;
    Ok(manifest)
}
