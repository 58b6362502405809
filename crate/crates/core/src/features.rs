//! Lagged temperature, temporal-gradient and spatial-gradient features.
//!
//! Columns are ordered lag-major, then depth, then kind, so each lag step
//! forms a contiguous block of `3 × n_depths` values. Sequence models read
//! a row directly as a `(n_lags, 3 × n_depths)` array in that order.

use std::fmt;
use std::io::Write;
use std::ops::Range;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::data::{FluxSeries, TemperatureField};
use crate::error::{Error, Result};
use crate::matrix::Matrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum FeatureKind {
    Temp,
    TemporalGrad,
    SpatialGrad,
}

impl FeatureKind {
    pub const ALL: [FeatureKind; 3] = [
        FeatureKind::Temp,
        FeatureKind::TemporalGrad,
        FeatureKind::SpatialGrad,
    ];

    pub fn name(self) -> &'static str {
        match self {
            FeatureKind::Temp => "Temp",
            FeatureKind::TemporalGrad => "TemporalGrad",
            FeatureKind::SpatialGrad => "SpatialGrad",
        }
    }
}

impl fmt::Display for FeatureKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Identifies one engineered column.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeatureKey {
    pub kind: FeatureKind,
    pub depth_m: f64,
    pub lag_steps: i32,
}

impl fmt::Display for FeatureKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}@{:.3}@{}", self.kind, self.depth_m, self.lag_steps)
    }
}

impl FromStr for FeatureKey {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::arg(format!("malformed feature key `{s}`"));
        let mut parts = s.split('@');
        let kind = match parts.next().ok_or_else(bad)? {
            "Temp" => FeatureKind::Temp,
            "TemporalGrad" => FeatureKind::TemporalGrad,
            "SpatialGrad" => FeatureKind::SpatialGrad,
            _ => return Err(bad()),
        };
        let depth_m = parts.next().and_then(|d| d.parse().ok()).ok_or_else(bad)?;
        let lag_steps = parts.next().and_then(|l| l.parse().ok()).ok_or_else(bad)?;
        if parts.next().is_some() {
            return Err(bad());
        }
        Ok(Self {
            kind,
            depth_m,
            lag_steps,
        })
    }
}

/// Inclusive range of lag offsets around the inference time.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LagWindow {
    pub lag_min: i32,
    pub lag_max: i32,
}

impl Default for LagWindow {
    fn default() -> Self {
        Self {
            lag_min: -6,
            lag_max: 6,
        }
    }
}

impl LagWindow {
    pub fn validate(&self) -> Result<()> {
        if self.lag_min > self.lag_max {
            return Err(Error::arg(format!(
                "lag_min {} exceeds lag_max {}",
                self.lag_min, self.lag_max
            )));
        }
        Ok(())
    }

    pub fn n_lags(&self) -> usize {
        (self.lag_max - self.lag_min + 1) as usize
    }

    /// Range of inference times whose lag window stays inside `[0, n)`.
    pub fn valid_rows(&self, n_times: usize) -> Range<usize> {
        let start = (-self.lag_min).max(0) as usize;
        let end = (n_times as i64 - self.lag_max.max(0) as i64).max(0) as usize;
        start..end.max(start)
    }

    /// Indices a row at time `t` depends on, including the extra sample
    /// that the earliest temporal gradient reaches back to.
    pub fn footprint(&self, t: usize) -> Range<i64> {
        let t = t as i64;
        (t + self.lag_min as i64 - 1)..(t + self.lag_max as i64 + 1)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    pub keys: Vec<FeatureKey>,
    pub rows: Matrix,
    pub row_times: Vec<usize>,
    /// Times whose lag window left the data and were therefore skipped.
    pub dropped_times: Vec<usize>,
}

impl FeatureMatrix {
    pub fn n_features(&self) -> usize {
        self.keys.len()
    }

    /// Restricts to the given row times, which must all be present.
    pub fn select_times(&self, times: &[usize]) -> Result<FeatureMatrix> {
        let first = *self.row_times.first().unwrap_or(&0);
        let mut idx = Vec::with_capacity(times.len());
        for &t in times {
            let i = t.checked_sub(first).filter(|&i| self.row_times.get(i) == Some(&t));
            let i = match i {
                Some(i) => i,
                None => self
                    .row_times
                    .binary_search(&t)
                    .map_err(|_| Error::arg(format!("time {t} has no feature row")))?,
            };
            idx.push(i);
        }
        Ok(FeatureMatrix {
            keys: self.keys.clone(),
            rows: self.rows.select_rows(&idx),
            row_times: times.to_vec(),
            dropped_times: Vec::new(),
        })
    }

    /// Writes `time_index,<key>...` followed by one line per row.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let to_err = |e: csv::Error| Error::Csv {
            path: "<features>".into(),
            message: e.to_string(),
        };
        let mut header = vec!["time_index".to_string()];
        header.extend(self.keys.iter().map(|k| k.to_string()));
        w.write_record(&header).map_err(to_err)?;
        for (r, t) in self.row_times.iter().enumerate() {
            let mut rec = vec![t.to_string()];
            rec.extend(self.rows.row(r).iter().map(f64::to_string));
            w.write_record(&rec).map_err(to_err)?;
        }
        w.flush().map_err(|e| Error::io("flushing feature csv", e))
    }
}

/// `out[t] = T[t] − T[t−1]`, with `out[0] = 0`.
pub fn temporal_gradient(field: &TemperatureField, depth_m: f64) -> Result<Vec<f64>> {
    let d = field.depth_index(depth_m)?;
    Ok(temporal_gradient_at(field, d))
}

fn temporal_gradient_at(field: &TemperatureField, d: usize) -> Vec<f64> {
    let col = field.column(d);
    let mut out = vec![0.0; col.len()];
    for t in 1..col.len() {
        out[t] = col[t] - col[t - 1];
    }
    out
}

/// `out[t] = T[t, k] − T[t, k−1]`; identically zero for the shallowest sensor.
pub fn spatial_gradient(field: &TemperatureField, depth_index: usize) -> Result<Vec<f64>> {
    if depth_index >= field.n_depths() {
        return Err(Error::arg(format!(
            "depth index {depth_index} out of range for {} sensors",
            field.n_depths()
        )));
    }
    if depth_index == 0 {
        return Ok(vec![0.0; field.n_times()]);
    }
    Ok((0..field.n_times())
        .map(|t| field.get(t, depth_index) - field.get(t, depth_index - 1))
        .collect())
}

/// Feature keys in column order for the given sensors and lags.
pub fn feature_keys(depths: &[f64], lags: LagWindow) -> Vec<FeatureKey> {
    let mut keys = Vec::with_capacity(lags.n_lags() * depths.len() * 3);
    for lag in lags.lag_min..=lags.lag_max {
        for &depth_m in depths {
            for kind in FeatureKind::ALL {
                keys.push(FeatureKey {
                    kind,
                    depth_m,
                    lag_steps: lag,
                });
            }
        }
    }
    keys
}

/// Builds a row for every time whose whole lag window lies in the data.
pub fn build_features(field: &TemperatureField, lags: LagWindow) -> Result<FeatureMatrix> {
    lags.validate()?;
    if field.n_depths() < 2 {
        return Err(Error::arg("feature construction needs at least two sensor depths"));
    }
    let n = field.n_times();
    let valid = lags.valid_rows(n);
    if valid.is_empty() {
        return Err(Error::arg(format!(
            "{n} samples cannot cover a lag window of {} steps",
            lags.n_lags()
        )));
    }
    let dropped_times = (0..valid.start).chain(valid.end..n).collect();
    let times: Vec<usize> = valid.collect();
    let mut fm = build_rows(field, lags, &times)?;
    fm.dropped_times = dropped_times;
    Ok(fm)
}

/// Builds rows only at `times`; each must have its lag window in the data.
pub fn build_features_at(
    field: &TemperatureField,
    lags: LagWindow,
    times: &[usize],
) -> Result<FeatureMatrix> {
    lags.validate()?;
    if field.n_depths() < 2 {
        return Err(Error::arg("feature construction needs at least two sensor depths"));
    }
    let valid = lags.valid_rows(field.n_times());
    if let Some(t) = times.iter().find(|t| !valid.contains(t)) {
        return Err(Error::arg(format!("lag window at time {t} leaves the data")));
    }
    build_rows(field, lags, times)
}

fn build_rows(field: &TemperatureField, lags: LagWindow, times: &[usize]) -> Result<FeatureMatrix> {
    let nd = field.n_depths();
    let mut series: Vec<[Vec<f64>; 3]> = Vec::with_capacity(nd);
    for d in 0..nd {
        series.push([
            field.column(d),
            temporal_gradient_at(field, d),
            spatial_gradient(field, d)?,
        ]);
    }
    let keys = feature_keys(field.depths(), lags);
    let mut rows = Matrix::zeros(times.len(), keys.len());
    for (r, &t) in times.iter().enumerate() {
        let row = rows.row_mut(r);
        let mut c = 0;
        for lag in lags.lag_min..=lags.lag_max {
            let at = (t as i64 + lag as i64) as usize;
            for s in &series {
                for kind_series in s {
                    row[c] = kind_series[at];
                    c += 1;
                }
            }
        }
    }
    Ok(FeatureMatrix {
        keys,
        rows,
        row_times: times.to_vec(),
        dropped_times: Vec::new(),
    })
}

/// Pairs each feature row with the flux at its inference time.
pub fn align_targets(flux: &FluxSeries, matrix: &FeatureMatrix) -> Result<(Matrix, Vec<f64>)> {
    let mut targets = Vec::with_capacity(matrix.row_times.len());
    for &t in &matrix.row_times {
        let v = flux
            .values
            .get(t)
            .ok_or_else(|| Error::arg(format!("flux series has no value at time {t}")))?;
        targets.push(*v);
    }
    Ok((matrix.rows.clone(), targets))
}

/// Row times whose footprint lies entirely inside one segment.
///
/// The footprint includes the sample before the earliest lag because the
/// temporal gradient reaches back one step; at the very start of the series
/// that sample is absent and the gradient is defined as zero.
pub fn rows_within_segments(
    n_times: usize,
    segments: &[Range<usize>],
    lags: LagWindow,
) -> Vec<Vec<usize>> {
    let valid = lags.valid_rows(n_times);
    segments
        .iter()
        .map(|seg| {
            valid
                .clone()
                .filter(|&t| {
                    let fp = lags.footprint(t);
                    let lo = if seg.start == 0 { fp.start.max(0) } else { fp.start };
                    lo >= seg.start as i64 && fp.end <= seg.end as i64
                })
                .collect()
        })
        .collect()
}
