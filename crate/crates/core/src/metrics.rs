//! Regression metrics for soft-sensor evaluation.
//!
//! NRMSE and NMAE divide by the range of the ground truth, so errors are
//! comparable across variables with different units. Reports carry NRMSE,
//! NMAE and MAPE in percent.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Ground-truth values with `|y|` at or below this are left out of MAPE.
pub const MAPE_EPSILON: f64 = 1e-8;

fn check_pair(y: &[f64], y_hat: &[f64], min_len: usize) -> Result<()> {
    if y.len() != y_hat.len() {
        return Err(Error::shape("predictions", y.len(), y_hat.len()));
    }
    if y.len() < min_len {
        return Err(Error::Empty("metric input needs more samples"));
    }
    Ok(())
}

fn range(y: &[f64]) -> Result<f64> {
    let lo = y.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = y.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if hi > lo {
        Ok(hi - lo)
    } else {
        Err(Error::ConstantSeries)
    }
}

/// RMSE over the ground-truth range, as a fraction.
pub fn nrmse(y: &[f64], y_hat: &[f64]) -> Result<f64> {
    check_pair(y, y_hat, 2)?;
    let span = range(y)?;
    let mse = y.iter().zip(y_hat).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / y.len() as f64;
    Ok(mse.sqrt() / span)
}

/// Coefficient of determination `1 - SS_res / SS_tot`.
pub fn r2(y: &[f64], y_hat: &[f64]) -> Result<f64> {
    check_pair(y, y_hat, 2)?;
    range(y)?;
    let mean = y.iter().sum::<f64>() / y.len() as f64;
    let ss_res: f64 = y.iter().zip(y_hat).map(|(a, b)| (a - b).powi(2)).sum();
    let ss_tot: f64 = y.iter().map(|a| (a - mean).powi(2)).sum();
    Ok(1.0 - ss_res / ss_tot)
}

/// MAE over the ground-truth range, as a fraction.
pub fn nmae(y: &[f64], y_hat: &[f64]) -> Result<f64> {
    check_pair(y, y_hat, 2)?;
    let span = range(y)?;
    let mae = y.iter().zip(y_hat).map(|(a, b)| (a - b).abs()).sum::<f64>() / y.len() as f64;
    Ok(mae / span)
}

/// MAPE in percent plus the number of samples skipped for near-zero `y`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Mape {
    pub percent: f64,
    pub excluded: usize,
}

pub fn mape(y: &[f64], y_hat: &[f64]) -> Result<Mape> {
    check_pair(y, y_hat, 1)?;
    let mut total = 0.0;
    let mut used = 0usize;
    for (a, b) in y.iter().zip(y_hat) {
        if a.abs() > MAPE_EPSILON {
            total += ((a - b) / a).abs();
            used += 1;
        }
    }
    if used == 0 {
        return Err(Error::AllExcluded);
    }
    Ok(Mape {
        percent: 100.0 * total / used as f64,
        excluded: y.len() - used,
    })
}

/// All four metrics for one evaluation run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    /// Percent.
    pub nrmse: f64,
    pub r2: f64,
    /// Percent.
    pub nmae: f64,
    /// Percent.
    pub mape: f64,
    pub n_samples: usize,
    pub mape_excluded: usize,
    pub y_min: f64,
    pub y_max: f64,
    pub y_mean: f64,
}

impl MetricsReport {
    pub fn compute(y: &[f64], y_hat: &[f64]) -> Result<Self> {
        let m = mape(y, y_hat)?;
        Ok(Self {
            nrmse: 100.0 * nrmse(y, y_hat)?,
            r2: r2(y, y_hat)?,
            nmae: 100.0 * nmae(y, y_hat)?,
            mape: m.percent,
            n_samples: y.len(),
            mape_excluded: m.excluded,
            y_min: y.iter().copied().fold(f64::INFINITY, f64::min),
            y_max: y.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            y_mean: y.iter().sum::<f64>() / y.len() as f64,
        })
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub const CSV_HEADER: [&'static str; 8] = [
        "target", "model", "nrmse_pct", "r2", "nmae_pct", "mape_pct", "n_samples", "mape_excluded",
    ];

    /// One comparison-table row.
    pub fn csv_row(&self, target: &str, model: &str) -> Vec<String> {
        vec![
            target.to_string(),
            model.to_string(),
            self.nrmse.to_string(),
            self.r2.to_string(),
            self.nmae.to_string(),
            self.mape.to_string(),
            self.n_samples.to_string(),
            self.mape_excluded.to_string(),
        ]
    }

    /// Writes a header plus one row per `(target, model, report)`.
    pub fn write_csv<W: Write>(out: W, rows: &[(String, String, MetricsReport)]) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(Self::CSV_HEADER)?;
        for (target, model, report) in rows {
            w.write_record(report.csv_row(target, model))?;
        }
        w.flush().map_err(csv::Error::from)?;
        Ok(())
    }
}
