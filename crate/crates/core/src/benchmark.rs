//! Comparison harness for the six key variables of the multiphase flow
//! facility. Runs train + test evaluation per held-out variable and writes
//! a table next to the published reference scores. No tolerance is applied:
//! the reference numbers depend on data splits and compute not available
//! here.

use std::io::Write;

use crate::data::ProcessDataset;
use crate::error::{Error, Result};
use crate::metrics::MetricsReport;
use crate::training::{evaluate, train, TrainConfig};

/// 1-based variable numbers of the key variables.
pub const KEY_VARIABLES: [usize; 6] = [5, 8, 15, 16, 19, 20];

/// Published test scores `(nrmse %, r2, nmae %, mape)` per key variable.
pub const REFERENCE: [(usize, [f64; 4]); 6] = [
    (5, [2.685, 0.952, 1.702, 0.208]),
    (8, [2.426, 0.992, 1.735, 1.496]),
    (15, [5.159, 0.969, 4.068, 0.016]),
    (16, [2.213, 0.995, 1.521, 0.763]),
    (19, [3.304, 0.993, 2.423, 1.591]),
    (20, [3.604, 0.954, 2.240, 1.061]),
];

#[derive(Debug, Clone)]
pub struct BenchmarkRow {
    pub variable: usize,
    pub tag: String,
    pub report: MetricsReport,
}

/// Trains and evaluates one model per entry of `variables` (1-based column
/// numbers). `progress` is called after each run.
pub fn run(
    ds: &ProcessDataset,
    cfg: &TrainConfig,
    variables: &[usize],
    mut progress: impl FnMut(&BenchmarkRow),
) -> Result<Vec<BenchmarkRow>> {
    let mut rows = Vec::new();
    for &var in variables {
        if var == 0 || var > ds.num_variables() {
            return Err(Error::IndexOutOfRange {
                what: "variable number",
                index: var,
                size: ds.num_variables(),
            });
        }
        let target = var - 1;
        let (outcome, data) = train(ds, cfg, target)?;
        let eval = evaluate(&outcome.checkpoint, &data.test)?;
        let row = BenchmarkRow {
            variable: var,
            tag: ds.variable_meta[target].tag.clone(),
            report: eval.report,
        };
        progress(&row);
        rows.push(row);
    }
    Ok(rows)
}

/// Writes `variable,tag,source,nrmse_pct,r2,nmae_pct,mape` with a
/// `reported` row (when a reference exists) and a `this-run` row per
/// variable.
pub fn write_table<W: Write>(out: W, rows: &[BenchmarkRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["variable", "tag", "source", "nrmse_pct", "r2", "nmae_pct", "mape"])?;
    for row in rows {
        if let Some((_, r)) = REFERENCE.iter().find(|(v, _)| *v == row.variable) {
            let mut rec = vec![row.variable.to_string(), row.tag.clone(), "reported".into()];
            rec.extend(r.iter().map(|v| v.to_string()));
            w.write_record(&rec)?;
        }
        let m = &row.report;
        w.write_record([
            row.variable.to_string(),
            row.tag.clone(),
            "this-run".into(),
            format!("{:.3}", m.nrmse),
            format!("{:.3}", m.r2),
            format!("{:.3}", m.nmae),
            format!("{:.3}", m.mape),
        ])?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}
