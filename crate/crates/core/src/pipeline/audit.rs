//! Provenance audit: every input to a fit or forecast is tagged with the
//! latest timestamp it can carry and checked against the time it is used.

use serde::{Deserialize, Serialize};

use super::backtest::Plan;
use super::config::BacktestConfig;
use crate::error::{Error, Result};
use crate::panel::{format_timestamp, TimeSeriesPanel};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    /// Realized data, usable up to the decision time.
    Observed,
    /// Values simulated on the forecast path.
    Simulated,
    /// A forecast issued before the origin for a later time.
    ForwardForecast,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditRecord {
    /// `fit`, `margin` or `forecast`.
    pub stage: String,
    /// Decision time: end of training, or the forecast origin.
    pub at: String,
    pub source: String,
    pub provenance: Provenance,
    /// Latest timestamp read, as an offset in steps from `at`.
    pub latest_offset: i64,
    pub ok: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct AuditReport {
    pub records: Vec<AuditRecord>,
    /// Distinct violations; per-origin detail is in `records`.
    pub violations: Vec<String>,
}

impl AuditReport {
    pub fn passed(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn into_result(self) -> Result<Self> {
        if self.passed() {
            Ok(self)
        } else {
            Err(Error::LookAhead(self.violations.join("; ")))
        }
    }

    fn push(&mut self, rec: AuditRecord, violation: impl FnOnce() -> String) {
        if !rec.ok {
            let v = violation();
            if !self.violations.contains(&v) {
                self.violations.push(v);
            }
        }
        self.records.push(rec);
    }
}

/// Audits a configuration, and its refit schedule on `data` when given.
pub fn audit(cfg: &BacktestConfig, data: Option<(&TimeSeriesPanel, &Plan)>) -> AuditReport {
    let mut rep = AuditReport::default();
    let f = &cfg.features;
    let min_lag = f.short_lags.iter().chain(&f.long_lags).copied().min().unwrap_or(1);
    let horizon = cfg.schedule.horizon as i64;
    let at_rel = |at: Option<String>| at.unwrap_or_else(|| "T".into());

    let check_origin = |rep: &mut AuditReport, at: Option<String>| {
        // lagged series values: observed up to the origin, simulated beyond it
        let ok = min_lag >= 1;
        let when = at_rel(at.clone());
        rep.push(
            AuditRecord {
                stage: "forecast".into(),
                at: when.clone(),
                source: "lagged values".into(),
                provenance: Provenance::Observed,
                latest_offset: if ok { (horizon - min_lag as i64).min(0) } else { 1 },
                ok,
            },
            || "forecast: a lag of 0 reads the realized value being forecast".to_string(),
        );
        if horizon > min_lag as i64 {
            rep.records.push(AuditRecord {
                stage: "forecast".into(),
                at: when.clone(),
                source: "lagged values".into(),
                provenance: Provenance::Simulated,
                latest_offset: horizon - min_lag as i64,
                ok: true,
            });
        }
        for col in &f.exogenous {
            let forward = cfg.data.forward_exogenous.contains(col);
            rep.push(
                AuditRecord {
                    stage: "forecast".into(),
                    at: when.clone(),
                    source: col.clone(),
                    provenance: if forward { Provenance::ForwardForecast } else { Provenance::Observed },
                    latest_offset: horizon,
                    ok: forward,
                },
                || format!("forecast: column {col:?} is read {horizon} steps past the origin but is not declared in data.forward_exogenous"),
            );
        }
    };

    match data {
        None => check_origin(&mut rep, None),
        Some((panel, plan)) => {
            let ts = |t: usize| format_timestamp(panel.timestamp(t));
            for w in &plan.windows {
                let at = ts(w.train_end);
                for (stage, source) in [("fit", "series values"), ("margin", "series values")] {
                    rep.records.push(AuditRecord {
                        stage: stage.into(),
                        at: at.clone(),
                        source: source.into(),
                        provenance: Provenance::Observed,
                        latest_offset: 0,
                        ok: true,
                    });
                }
                for col in &f.exogenous {
                    rep.records.push(AuditRecord {
                        stage: "fit".into(),
                        at: at.clone(),
                        source: col.clone(),
                        provenance: if cfg.data.forward_exogenous.contains(col) {
                            Provenance::ForwardForecast
                        } else {
                            Provenance::Observed
                        },
                        latest_offset: 0,
                        ok: true,
                    });
                }
                let first = w.origins.iter().copied().min().unwrap_or(w.train_end);
                let ok = w.train_end <= first;
                rep.push(
                    AuditRecord {
                        stage: "fit".into(),
                        at: at.clone(),
                        source: "training window".into(),
                        provenance: Provenance::Observed,
                        latest_offset: w.train_end as i64 - first as i64,
                        ok,
                    },
                    || format!("fit ending {at} is used at the earlier origin {}", ts(first)),
                );
                for &o in &w.origins {
                    check_origin(&mut rep, Some(ts(o)));
                }
            }
        }
    }
    rep
}
