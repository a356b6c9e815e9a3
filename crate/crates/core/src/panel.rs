//! Regularly spaced multi-series panel on the `Y = log(price + shift)` scale,
//! with optional per-series exogenous columns and dated price-cap regimes.

use std::collections::{BTreeMap, HashMap};
use std::io::{Read, Write};
use std::path::Path;

use chrono::{Duration, NaiveDate, NaiveDateTime};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::margins::{inverse_transform, transform_price, PriceTransform};

const TIME_FORMATS: [&str; 4] = [
    "%Y-%m-%dT%H:%M:%S",
    "%Y-%m-%d %H:%M:%S",
    "%Y-%m-%dT%H:%M",
    "%Y-%m-%d %H:%M",
];

pub fn parse_timestamp(s: &str) -> Option<NaiveDateTime> {
    let s = s.trim();
    TIME_FORMATS
        .iter()
        .find_map(|f| NaiveDateTime::parse_from_str(s, f).ok())
        .or_else(|| {
            NaiveDate::parse_from_str(s, "%Y-%m-%d")
                .ok()
                .and_then(|d| d.and_hms_opt(0, 0, 0))
        })
}

pub fn format_timestamp(t: NaiveDateTime) -> String {
    t.format("%Y-%m-%dT%H:%M:%S").to_string()
}

/// Price cap in force from `effective` onward.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CapRegime {
    pub effective: NaiveDateTime,
    pub cap: f64,
}

/// What the value column of an input file holds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ValueKind {
    #[default]
    Price,
    Y,
}

/// Column layout and transform for [`load_panel`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PanelSchema {
    pub timestamp_column: String,
    pub series_column: String,
    pub value_column: String,
    pub value_kind: ValueKind,
    pub step_minutes: i64,
    /// Extra columns to keep; every other column is ignored.
    pub exogenous: Vec<String>,
    pub transform: PriceTransform,
    pub regimes: Vec<CapRegime>,
}

impl Default for PanelSchema {
    fn default() -> Self {
        Self {
            timestamp_column: "timestamp".into(),
            series_column: "series_id".into(),
            value_column: "price".into(),
            value_kind: ValueKind::Price,
            step_minutes: 30,
            exogenous: Vec::new(),
            transform: PriceTransform::default(),
            regimes: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeSeriesPanel {
    pub start: NaiveDateTime,
    pub step_minutes: i64,
    pub series_ids: Vec<String>,
    /// `values[s][t]` on the Y scale.
    pub values: Vec<Vec<f64>>,
    /// Column name → per-series values (`NaN` where absent).
    pub exogenous: BTreeMap<String, Vec<Vec<f64>>>,
    pub transform: PriceTransform,
    pub regimes: Vec<CapRegime>,
}

impl TimeSeriesPanel {
    pub fn new(
        start: NaiveDateTime,
        step_minutes: i64,
        series_ids: Vec<String>,
        values: Vec<Vec<f64>>,
    ) -> Result<Self> {
        if step_minutes <= 0 {
            return Err(Error::InvalidConfig("step_minutes must be positive".into()));
        }
        if series_ids.len() != values.len() || series_ids.is_empty() {
            return Err(Error::DimensionMismatch {
                expected: series_ids.len(),
                got: values.len(),
                context: "series ids vs value columns",
            });
        }
        let t = values[0].len();
        if values.iter().any(|v| v.len() != t) {
            return Err(Error::InvalidDimension("series have different lengths".into()));
        }
        if let Some((s, i)) = values
            .iter()
            .enumerate()
            .find_map(|(s, v)| v.iter().position(|x| !x.is_finite()).map(|i| (s, i)))
        {
            return Err(Error::MissingData(format!(
                "series {} has a non-finite value at {}",
                series_ids[s],
                format_timestamp(start + Duration::minutes(step_minutes * i as i64))
            )));
        }
        Ok(Self {
            start,
            step_minutes,
            series_ids,
            values,
            exogenous: BTreeMap::new(),
            transform: PriceTransform::default(),
            regimes: Vec::new(),
        })
    }

    pub fn len(&self) -> usize {
        self.values.first().map_or(0, Vec::len)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn n_series(&self) -> usize {
        self.series_ids.len()
    }

    pub fn timestamp(&self, t: usize) -> NaiveDateTime {
        self.start + Duration::minutes(self.step_minutes * t as i64)
    }

    /// Index of the first step at or after `ts`.
    pub fn index_at_or_after(&self, ts: NaiveDateTime) -> usize {
        let mins = (ts - self.start).num_minutes();
        if mins <= 0 {
            return 0;
        }
        ((mins + self.step_minutes - 1) / self.step_minutes) as usize
    }

    pub fn series_index(&self, id: &str) -> Result<usize> {
        self.series_ids
            .iter()
            .position(|s| s == id)
            .ok_or_else(|| Error::InvalidInput(format!("unknown series {id:?}")))
    }

    pub fn value(&self, s: usize, t: usize) -> f64 {
        self.values[s][t]
    }

    /// Exogenous value of `column` for series `s` at `t`, if present.
    pub fn exog(&self, column: &str, s: usize, t: usize) -> Option<f64> {
        self.exogenous
            .get(column)
            .and_then(|cols| cols.get(s))
            .and_then(|c| c.get(t))
            .copied()
            .filter(|v| v.is_finite())
    }

    pub fn with_exogenous(mut self, column: &str, per_series: Vec<Vec<f64>>) -> Result<Self> {
        if per_series.len() != self.n_series() || per_series.iter().any(|c| c.len() != self.len()) {
            return Err(Error::DimensionMismatch {
                expected: self.len(),
                got: per_series.first().map_or(0, Vec::len),
                context: "exogenous column length",
            });
        }
        self.exogenous.insert(column.to_string(), per_series);
        Ok(self)
    }

    /// Price cap in force at `t`.
    pub fn cap_at(&self, t: usize) -> f64 {
        let ts = self.timestamp(t);
        self.regimes
            .iter()
            .filter(|r| r.effective <= ts)
            .max_by_key(|r| r.effective)
            .map_or(self.transform.upper_price, |r| r.cap)
    }

    /// Admissible `[lower_y, upper_y]` at `t`.
    pub fn bounds_at(&self, t: usize) -> (f64, f64) {
        let tr = self.transform.with_cap(self.cap_at(t));
        (tr.lower_y(), tr.upper_y())
    }

    /// Sub-panel covering `[from, to)`.
    pub fn slice(&self, from: usize, to: usize) -> Self {
        Self {
            start: self.timestamp(from),
            step_minutes: self.step_minutes,
            series_ids: self.series_ids.clone(),
            values: self.values.iter().map(|v| v[from..to].to_vec()).collect(),
            exogenous: self
                .exogenous
                .iter()
                .map(|(k, cols)| (k.clone(), cols.iter().map(|c| c[from..to].to_vec()).collect()))
                .collect(),
            transform: self.transform.clone(),
            regimes: self.regimes.clone(),
        }
    }

    /// Long-format CSV: `timestamp,series_id,price[,exogenous...]`.
    pub fn write_long_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        let exo: Vec<&String> = self.exogenous.keys().collect();
        let mut header = vec!["timestamp".to_string(), "series_id".into(), "price".into()];
        header.extend(exo.iter().map(|s| s.to_string()));
        wr.write_record(&header)?;
        for t in 0..self.len() {
            let ts = format_timestamp(self.timestamp(t));
            for (s, id) in self.series_ids.iter().enumerate() {
                let mut rec = vec![
                    ts.clone(),
                    id.clone(),
                    inverse_transform(self.values[s][t], &self.transform).to_string(),
                ];
                for col in &exo {
                    let v = self.exogenous[*col][s][t];
                    rec.push(if v.is_finite() { v.to_string() } else { String::new() });
                }
                wr.write_record(&rec)?;
            }
        }
        wr.flush()?;
        Ok(())
    }
}

/// Reads a long-format panel file.
pub fn load_panel(path: impl AsRef<Path>, schema: &PanelSchema) -> Result<TimeSeriesPanel> {
    let path = path.as_ref();
    let file =
        std::fs::File::open(path).map_err(|e| std::io::Error::new(e.kind(), format!("{}: {e}", path.display())))?;
    read_panel(file, schema)
}

struct Row {
    line: usize,
    ts: NaiveDateTime,
    series: String,
    value: f64,
    exo: Vec<f64>,
}

pub fn read_panel<R: Read>(reader: R, schema: &PanelSchema) -> Result<TimeSeriesPanel> {
    if schema.step_minutes <= 0 {
        return Err(Error::InvalidConfig("step_minutes must be positive".into()));
    }
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers()?.clone();
    let col = |name: &str| {
        headers.iter().position(|h| h == name).ok_or_else(|| Error::Load {
            row: 1,
            message: format!("missing column {name:?}"),
        })
    };
    let ts_col = col(&schema.timestamp_column)?;
    let id_col = col(&schema.series_column)?;
    let val_col = col(&schema.value_column)?;
    let exo_cols: Vec<usize> = schema.exogenous.iter().map(|c| col(c)).collect::<Result<_>>()?;

    let mut rows = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let line = i + 2;
        let rec = rec.map_err(|e| Error::Load {
            row: line,
            message: e.to_string(),
        })?;
        let field = |c: usize| rec.get(c).unwrap_or("");
        let ts = parse_timestamp(field(ts_col)).ok_or_else(|| Error::Load {
            row: line,
            message: format!("unparseable timestamp {:?}", field(ts_col)),
        })?;
        let raw: f64 = field(val_col).parse().map_err(|_| Error::Load {
            row: line,
            message: format!("unparseable value {:?}", field(val_col)),
        })?;
        let value = match schema.value_kind {
            ValueKind::Price => transform_price(raw, &schema.transform).map_err(|e| Error::Load {
                row: line,
                message: e.to_string(),
            })?,
            ValueKind::Y => raw,
        };
        let mut exo = Vec::with_capacity(exo_cols.len());
        for (&c, name) in exo_cols.iter().zip(&schema.exogenous) {
            let f = field(c);
            exo.push(if f.is_empty() {
                f64::NAN
            } else {
                f.parse().map_err(|_| Error::Load {
                    row: line,
                    message: format!("unparseable {name} value {f:?}"),
                })?
            });
        }
        rows.push(Row {
            line,
            ts,
            series: field(id_col).to_string(),
            value,
            exo,
        });
    }
    if rows.is_empty() {
        return Err(Error::Load {
            row: 1,
            message: "panel file has no data rows".into(),
        });
    }

    let mut series_ids: Vec<String> = Vec::new();
    for r in &rows {
        if !series_ids.contains(&r.series) {
            series_ids.push(r.series.clone());
        }
    }
    let start = rows.iter().map(|r| r.ts).min().unwrap();
    let end = rows.iter().map(|r| r.ts).max().unwrap();
    let step = schema.step_minutes;
    let span = (end - start).num_minutes();
    if span % step != 0 {
        return Err(Error::Load {
            row: 0,
            message: format!("time span {span} minutes is not a multiple of the {step}-minute step"),
        });
    }
    let n_t = (span / step) as usize + 1;
    let n_s = series_ids.len();
    let index: HashMap<&str, usize> = series_ids.iter().enumerate().map(|(i, s)| (s.as_str(), i)).collect();
    let mut values = vec![vec![f64::NAN; n_t]; n_s];
    let mut exo = vec![vec![vec![f64::NAN; n_t]; n_s]; schema.exogenous.len()];
    let mut seen = vec![vec![0usize; n_t]; n_s];
    for r in &rows {
        let mins = (r.ts - start).num_minutes();
        if mins % step != 0 {
            return Err(Error::Load {
                row: r.line,
                message: format!("timestamp {} is off the {step}-minute grid", format_timestamp(r.ts)),
            });
        }
        let t = (mins / step) as usize;
        let s = index[r.series.as_str()];
        if seen[s][t] != 0 {
            return Err(Error::Load {
                row: r.line,
                message: format!(
                    "duplicate key ({}, {}) first seen at row {}",
                    format_timestamp(r.ts),
                    r.series,
                    seen[s][t]
                ),
            });
        }
        seen[s][t] = r.line;
        values[s][t] = r.value;
        for (j, v) in r.exo.iter().enumerate() {
            exo[j][s][t] = *v;
        }
    }
    for s in 0..n_s {
        if let Some(t) = seen[s].iter().position(|&l| l == 0) {
            return Err(Error::Load {
                row: 0,
                message: format!(
                    "series {} has no observation at {}",
                    series_ids[s],
                    format_timestamp(start + Duration::minutes(step * t as i64))
                ),
            });
        }
    }
    let mut panel = TimeSeriesPanel::new(start, step, series_ids, values)?;
    panel.transform = schema.transform.clone();
    panel.regimes = schema.regimes.clone();
    for (name, cols) in schema.exogenous.iter().zip(exo) {
        panel.exogenous.insert(name.clone(), cols);
    }
    Ok(panel)
}
