//! Process data loading, min-max normalization, sliding windows and
//! chronological splits.
//!
//! A window ending at time `t` holds the `w` input timesteps `t-w+1..=t` of
//! every sensor except the target, and is labelled with the target value at
//! `t`. End times run over `w..T`, so a series of length `T` yields exactly
//! `T - w` samples.

use std::collections::HashMap;
use std::fs::File;
use std::ops::Range;
use std::path::Path;

use ndarray::{Array2, ArrayView1};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Ranges narrower than this are treated as constant.
pub const DEGENERATE_RANGE: f64 = 1e-12;

/// Descriptive metadata for one column of a process dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariableMeta {
    pub id: usize,
    pub tag: String,
    pub description: String,
    pub unit: String,
}

impl VariableMeta {
    pub fn new(id: usize, tag: &str, description: &str, unit: &str) -> Self {
        Self {
            id,
            tag: tag.to_string(),
            description: description.to_string(),
            unit: unit.to_string(),
        }
    }
}

/// Variable list of the Cranfield multiphase flow facility, numbered as in
/// the facility's published sensor table. Tags repeat where one instrument
/// reports several quantities.
pub fn mfp_variables() -> Vec<VariableMeta> {
    [
        (1, "PT312", "Air delivery pressure", "MPa"),
        (2, "PT401", "Pressure in the bottom of the riser", "MPa"),
        (3, "PT408", "Pressure in top of the riser", "MPa"),
        (4, "PT403", "Pressure in top separator", "MPa"),
        (5, "PT501", "Pressure in 3 phase separator", "MPa"),
        (6, "PT408", "Diff. pressure (PT401-PT408)", "MPa"),
        (7, "PT403", "Differential pressure over VC404", "MPa"),
        (8, "FT305", "Flow rate input air", "Sm3/s"),
        (9, "FT104", "Flow rate input water", "kg/s"),
        (10, "FT407", "Flow rate top riser", "kg/s"),
        (11, "LI405", "Level top separator", "m"),
        (12, "FT406", "Flow rate top separator output", "kg/s"),
        (13, "FT407", "Density top riser", "kg/m3"),
        (14, "FT406", "Density top separator output", "kg/m3"),
        (15, "FT104", "Density water input", "kg/m3"),
        (16, "FT407", "Temperature top riser", "degC"),
        (17, "FT406", "Temperature top separator output", "degC"),
        (18, "FT104", "Temperature water input", "degC"),
        (19, "LI504", "Level gas-liquid 3 phase separator", "%"),
        (20, "VC501", "Position of valve", "%"),
        (21, "VC302", "Position of valve VC302", "%"),
        (22, "VC101", "Position of valve VC101", "%"),
        (23, "PO1", "Water pump current", "A"),
    ]
    .into_iter()
    .map(|(id, tag, desc, unit)| VariableMeta::new(id, tag, desc, unit))
    .collect()
}

/// A `T x D` matrix of sensor readings in time order.
#[derive(Debug, Clone, PartialEq)]
pub struct ProcessDataset {
    pub values: Array2<f64>,
    pub variable_meta: Vec<VariableMeta>,
    pub sample_rate_hz: f64,
}

impl ProcessDataset {
    pub fn new(values: Array2<f64>, variable_meta: Vec<VariableMeta>) -> Result<Self> {
        if variable_meta.len() != values.ncols() {
            return Err(Error::MetaMismatch {
                meta: variable_meta.len(),
                columns: values.ncols(),
            });
        }
        if values.nrows() == 0 {
            return Err(Error::EmptyDataset);
        }
        Ok(Self {
            values,
            variable_meta,
            sample_rate_hz: 1.0,
        })
    }

    /// Builds a dataset whose metadata is derived from bare column tags.
    pub fn from_tags(values: Array2<f64>, tags: &[&str]) -> Result<Self> {
        let meta = tags
            .iter()
            .enumerate()
            .map(|(i, t)| VariableMeta::new(i + 1, t, "", ""))
            .collect();
        Self::new(values, meta)
    }

    /// Number of timesteps `T`.
    pub fn len(&self) -> usize {
        self.values.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.values.nrows() == 0
    }

    /// Number of variables `D`.
    pub fn num_variables(&self) -> usize {
        self.values.ncols()
    }

    pub fn tags(&self) -> Vec<String> {
        self.variable_meta.iter().map(|m| m.tag.clone()).collect()
    }

    pub fn column(&self, index: usize) -> ArrayView1<'_, f64> {
        self.values.column(index)
    }

    /// Resolves a column tag to its index. Tags that occur more than once
    /// cannot be used for lookup.
    pub fn index_of(&self, tag: &str) -> Result<usize> {
        let mut hits = self
            .variable_meta
            .iter()
            .enumerate()
            .filter(|(_, m)| m.tag == tag)
            .map(|(i, _)| i);
        match (hits.next(), hits.next()) {
            (Some(i), None) => Ok(i),
            (Some(_), Some(_)) => Err(Error::AmbiguousTag(tag.to_string())),
            _ => Err(Error::UnknownTag(tag.to_string())),
        }
    }
}

/// Column indices of every variable except `target`, ascending.
pub fn input_indices(num_variables: usize, target: usize) -> Vec<usize> {
    (0..num_variables).filter(|&c| c != target).collect()
}

/// Reads a comma-separated file with one header row of variable tags.
///
/// When `meta` is given it must have one entry per column and supplies the
/// descriptive metadata; otherwise metadata is derived from the header.
/// Rows with empty cells are rejected. Row numbers in errors count data rows
/// from 1, not counting the header.
pub fn load_csv(path: &Path, meta: Option<&[VariableMeta]>) -> Result<ProcessDataset> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(file);
    let header: Vec<String> = reader.headers()?.iter().map(str::to_string).collect();
    let columns = header.len();
    let variable_meta = match meta {
        Some(m) if m.len() != columns => {
            return Err(Error::MetaMismatch {
                meta: m.len(),
                columns,
            })
        }
        Some(m) => m.to_vec(),
        None => header
            .iter()
            .enumerate()
            .map(|(i, t)| VariableMeta::new(i + 1, t, "", ""))
            .collect(),
    };

    let mut data = Vec::new();
    let mut rows = 0;
    for (r, record) in reader.records().enumerate() {
        let record = record?;
        let row = r + 1;
        if record.len() != columns {
            return Err(Error::ColumnCount {
                row,
                expected: columns,
                found: record.len(),
            });
        }
        for (c, cell) in record.iter().enumerate() {
            if cell.is_empty() {
                return Err(Error::Missing {
                    row,
                    column: c + 1,
                    tag: header[c].clone(),
                });
            }
            let v: f64 = cell.parse().map_err(|_| Error::Parse {
                row,
                column: c + 1,
                tag: header[c].clone(),
                value: cell.to_string(),
            })?;
            if !v.is_finite() {
                return Err(Error::Parse {
                    row,
                    column: c + 1,
                    tag: header[c].clone(),
                    value: cell.to_string(),
                });
            }
            data.push(v);
        }
        rows += 1;
    }
    if rows == 0 {
        return Err(Error::EmptyDataset);
    }
    let values = Array2::from_shape_vec((rows, columns), data)
        .expect("row-major buffer matches counted shape");
    ProcessDataset::new(values, variable_meta)
}

/// Writes a dataset in the same format [`load_csv`] reads.
pub fn write_csv(ds: &ProcessDataset, path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = csv::Writer::from_writer(file);
    w.write_record(ds.variable_meta.iter().map(|m| m.tag.as_str()))?;
    for row in ds.values.rows() {
        w.write_record(row.iter().map(|v| v.to_string()))?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

/// Per-variable min-max scaling parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormalizationStats {
    pub tags: Vec<String>,
    pub min: Vec<f64>,
    pub max: Vec<f64>,
    pub fitted_on: String,
}

#[derive(Serialize, Deserialize)]
struct MinMax {
    min: f64,
    max: f64,
}

impl NormalizationStats {
    pub fn dim(&self) -> usize {
        self.min.len()
    }

    pub fn range(&self, var: usize) -> f64 {
        self.max[var] - self.min[var]
    }

    pub fn normalize(&self, var: usize, v: f64) -> f64 {
        (v - self.min[var]) / self.range(var)
    }

    pub fn denormalize(&self, var: usize, v: f64) -> f64 {
        v * self.range(var) + self.min[var]
    }

    /// Serializes as `{tag: {min, max}}`.
    pub fn to_json(&self) -> Result<String> {
        let mut map = serde_json::Map::new();
        for (i, tag) in self.tags.iter().enumerate() {
            if map.contains_key(tag) {
                return Err(Error::AmbiguousTag(tag.clone()));
            }
            map.insert(
                tag.clone(),
                serde_json::to_value(MinMax {
                    min: self.min[i],
                    max: self.max[i],
                })?,
            );
        }
        Ok(serde_json::to_string_pretty(&serde_json::Value::Object(map))?)
    }

    /// Parses a `{tag: {min, max}}` document, ordering variables as in
    /// `tags`.
    pub fn from_json(json: &str, tags: &[String], fitted_on: &str) -> Result<Self> {
        let map: HashMap<String, MinMax> = serde_json::from_str(json)?;
        let mut min = Vec::with_capacity(tags.len());
        let mut max = Vec::with_capacity(tags.len());
        for tag in tags {
            let mm = map.get(tag).ok_or_else(|| Error::UnknownTag(tag.clone()))?;
            min.push(mm.min);
            max.push(mm.max);
        }
        Ok(Self {
            tags: tags.to_vec(),
            min,
            max,
            fitted_on: fitted_on.to_string(),
        })
    }
}

/// Fits min-max statistics on the rows in `rows` only.
pub fn fit_normalizer(ds: &ProcessDataset, rows: Range<usize>) -> Result<NormalizationStats> {
    if rows.start >= rows.end || rows.end > ds.len() {
        return Err(Error::InvalidRange {
            start: rows.start,
            end: rows.end,
            len: ds.len(),
        });
    }
    let block = ds.values.slice(ndarray::s![rows.clone(), ..]);
    let mut min = Vec::with_capacity(ds.num_variables());
    let mut max = Vec::with_capacity(ds.num_variables());
    let mut degenerate = Vec::new();
    for (c, col) in block.columns().into_iter().enumerate() {
        let lo = col.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = col.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if hi - lo < DEGENERATE_RANGE {
            degenerate.push(ds.variable_meta[c].tag.clone());
        }
        min.push(lo);
        max.push(hi);
    }
    if !degenerate.is_empty() {
        return Err(Error::DegenerateVariables(degenerate));
    }
    Ok(NormalizationStats {
        tags: ds.tags(),
        min,
        max,
        fitted_on: format!("rows {}..{}", rows.start, rows.end),
    })
}

/// Maps every value to `(v - min) / (max - min)`. No clipping.
pub fn apply_normalizer(ds: &ProcessDataset, stats: &NormalizationStats) -> Result<ProcessDataset> {
    if stats.dim() != ds.num_variables() {
        return Err(Error::shape(
            "normalization stats",
            ds.num_variables(),
            stats.dim(),
        ));
    }
    let mut values = ds.values.clone();
    for (c, mut col) in values.columns_mut().into_iter().enumerate() {
        col.mapv_inplace(|v| stats.normalize(c, v));
    }
    Ok(ProcessDataset {
        values,
        variable_meta: ds.variable_meta.clone(),
        sample_rate_hz: ds.sample_rate_hz,
    })
}

/// One supervised sample: `x` is `N x w` (input sensors by timesteps).
#[derive(Debug, Clone, PartialEq)]
pub struct WindowSample {
    pub x: Array2<f64>,
    pub y: f64,
    pub t_index: usize,
}

/// Builds the `T - w` sliding-window samples for `target`.
pub fn make_windows(ds: &ProcessDataset, target: usize, w: usize) -> Result<Vec<WindowSample>> {
    let t_len = ds.len();
    if w == 0 || w >= t_len {
        return Err(Error::InvalidWindow { window: w, len: t_len });
    }
    if target >= ds.num_variables() {
        return Err(Error::IndexOutOfRange {
            what: "target variable",
            index: target,
            size: ds.num_variables(),
        });
    }
    let inputs = input_indices(ds.num_variables(), target);
    let samples = (w..t_len)
        .map(|t| {
            let start = t + 1 - w;
            let x = Array2::from_shape_fn((inputs.len(), w), |(i, s)| {
                ds.values[[start + s, inputs[i]]]
            });
            WindowSample {
                x,
                y: ds.values[[t, target]],
                t_index: t,
            }
        })
        .collect();
    Ok(samples)
}

/// Split sizes `(train, val, test)` for `n` samples.
pub fn split_sizes(n: usize, fractions: (f64, f64, f64)) -> Result<(usize, usize, usize)> {
    let (a, b, c) = fractions;
    let valid = [a, b, c].iter().all(|f| f.is_finite() && *f > 0.0)
        && (a + b + c - 1.0).abs() <= 1e-9;
    if !valid {
        return Err(Error::InvalidFractions(fractions));
    }
    let n_train = (n as f64 * a).round() as usize;
    let n_train_val = ((n as f64 * (a + b)).round() as usize).min(n);
    let n_val = n_train_val.saturating_sub(n_train);
    let n_test = n - n_train_val;
    for (size, name) in [(n_train, "train"), (n_val, "validation"), (n_test, "test")] {
        if size == 0 {
            return Err(Error::EmptySplit(name));
        }
    }
    Ok((n_train, n_val, n_test))
}

/// Contiguous time-ordered train/validation/test split.
pub fn split_chronological<T>(
    mut samples: Vec<T>,
    fractions: (f64, f64, f64),
) -> Result<(Vec<T>, Vec<T>, Vec<T>)> {
    let (n_train, n_val, _) = split_sizes(samples.len(), fractions)?;
    let rest = samples.split_off(n_train);
    let mut val = rest;
    let test = val.split_off(n_val);
    Ok((samples, val, test))
}
