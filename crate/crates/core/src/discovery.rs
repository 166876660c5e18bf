//! Interpretability matrices: Pearson correlation of the raw sensor data,
//! Pearson correlation of the learned embeddings, and attention averaged
//! over evaluation windows.

use std::fs;
use std::ops::Range;
use std::path::{Path, PathBuf};

use ndarray::{Array2, ArrayView1};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::checkpoint::Checkpoint;
use crate::data::{input_indices, ProcessDataset, WindowSample};
use crate::error::{Error, Result};
use crate::graph::{Adjacency, EmbeddingTable};
use crate::matrix_csv;
use crate::model::{Phase, SoftSensor};

/// Pearson correlation, or `None` when either series is constant.
pub fn pearson(a: ArrayView1<f64>, b: ArrayView1<f64>) -> Option<f64> {
    let n = a.len() as f64;
    let ma = a.sum() / n;
    let mb = b.sum() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b.iter()) {
        let (dx, dy) = (x - ma, y - mb);
        sab += dx * dy;
        saa += dx * dx;
        sbb += dy * dy;
    }
    if saa <= 0.0 || sbb <= 0.0 {
        return None;
    }
    Some(sab / (saa.sqrt() * sbb.sqrt()))
}

/// Correlation matrix of the rows of `series`; unit diagonal, mirrored
/// off-diagonal.
fn correlation_rows(series: &Array2<f64>, name: impl Fn(usize) -> String) -> Result<Array2<f64>> {
    let n = series.nrows();
    for i in 0..n {
        let row = series.row(i);
        let first = row[0];
        if row.iter().all(|&v| v == first) {
            return Err(Error::ConstantVariable(name(i)));
        }
    }
    let mut c = Array2::eye(n);
    for i in 0..n {
        for j in (i + 1)..n {
            let r = pearson(series.row(i), series.row(j)).ok_or_else(|| Error::ConstantVariable(name(i)))?;
            c[[i, j]] = r;
            c[[j, i]] = r;
        }
    }
    Ok(c)
}

/// Pairwise Pearson correlation of the raw series of `variables` over
/// `rows`.
pub fn data_correlation(ds: &ProcessDataset, variables: &[usize], rows: Range<usize>) -> Result<Array2<f64>> {
    if rows.start + 1 >= rows.end || rows.end > ds.len() {
        return Err(Error::InvalidRange {
            start: rows.start,
            end: rows.end,
            len: ds.len(),
        });
    }
    for &v in variables {
        if v >= ds.num_variables() {
            return Err(Error::IndexOutOfRange {
                what: "variable",
                index: v,
                size: ds.num_variables(),
            });
        }
    }
    let series = Array2::from_shape_fn((variables.len(), rows.len()), |(i, t)| {
        ds.values[[rows.start + t, variables[i]]]
    });
    correlation_rows(&series, |i| ds.variable_meta[variables[i]].tag.clone())
}

/// Pairwise Pearson correlation between embedding vectors.
pub fn embedding_correlation(table: &EmbeddingTable) -> Result<Array2<f64>> {
    if table.dim() < 2 {
        return Err(Error::Config("embedding correlation needs d >= 2".into()));
    }
    correlation_rows(&table.z, |i| format!("embedding row {i}"))
}

/// Attention probabilities averaged over `samples`, dropout off.
pub fn attention_matrix(model: &SoftSensor, adjacency: &Adjacency, samples: &[WindowSample]) -> Result<Array2<f64>> {
    if samples.is_empty() {
        return Err(Error::Empty("attention samples"));
    }
    let traces: Vec<Array2<f64>> = samples
        .par_iter()
        .map(|s| model.forward(&s.x, adjacency, Phase::Eval).map(|t| t.alpha))
        .collect::<Result<_>>()?;
    let n = model.config.num_nodes;
    let mut sum = Array2::zeros((n, n));
    for a in &traces {
        sum += a;
    }
    Ok(sum / samples.len() as f64)
}

/// Total attention each node receives from other nodes (column sums
/// without the diagonal).
pub fn attention_received(attention: &Array2<f64>) -> Vec<f64> {
    let n = attention.nrows();
    (0..n)
        .map(|j| (0..n).filter(|&i| i != j).map(|i| attention[[i, j]]).sum())
        .collect()
}

/// Nodes ordered by received attention, highest first; ties by index.
pub fn rank_by_attention(attention: &Array2<f64>) -> Vec<usize> {
    let recv = attention_received(attention);
    let mut order: Vec<usize> = (0..recv.len()).collect();
    order.sort_by(|&a, &b| recv[b].total_cmp(&recv[a]).then(a.cmp(&b)));
    order
}

#[derive(Debug, Clone, PartialEq)]
pub struct DiscoveryBundle {
    pub data_corr: Array2<f64>,
    pub embed_corr: Array2<f64>,
    pub attention_avg: Array2<f64>,
    pub sensor_tags: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscoveryManifest {
    pub target_tag: String,
    pub target_index: usize,
    pub checkpoint_id: String,
    /// First and last window end time covered.
    pub sample_range: (usize, usize),
    pub n_windows: usize,
    pub attention_aggregation: String,
    pub sensor_tags: Vec<String>,
    pub files: Vec<String>,
}

/// Output file names for `target_tag`: data, embedding and attention CSVs,
/// then the manifest.
pub fn bundle_file_names(target_tag: &str) -> [String; 4] {
    [
        format!("{target_tag}_data.csv"),
        format!("{target_tag}_embed.csv"),
        format!("{target_tag}_attn.csv"),
        format!("{target_tag}_manifest.json"),
    ]
}

/// Builds all three matrices for a trained model over `samples` (windows
/// cut from `ds` with the checkpoint's statistics). Data correlation uses
/// the raw rows those windows cover.
pub fn discover(
    ckpt: &Checkpoint,
    ds: &ProcessDataset,
    samples: &[WindowSample],
) -> Result<(DiscoveryBundle, DiscoveryManifest)> {
    ckpt.check_dataset(ds)?;
    let (first, last) = match (samples.first(), samples.last()) {
        (Some(a), Some(b)) => (a.t_index, b.t_index),
        _ => return Err(Error::Empty("discovery samples")),
    };
    let w = ckpt.model.config.window;
    let inputs = input_indices(ds.num_variables(), ckpt.target);
    let data_corr = data_correlation(ds, &inputs, first + 1 - w..last + 1)?;
    let embed_corr = embedding_correlation(&ckpt.model.embeddings)?;
    let adjacency = ckpt.model.graph()?.adjacency;
    let attention_avg = attention_matrix(&ckpt.model, &adjacency, samples)?;
    let sensor_tags = ckpt.input_tags();
    let manifest = DiscoveryManifest {
        target_tag: ckpt.target_tag.clone(),
        target_index: ckpt.target,
        checkpoint_id: ckpt.id()?,
        sample_range: (first, last),
        n_windows: samples.len(),
        attention_aggregation: "mean over windows, dropout off".into(),
        sensor_tags: sensor_tags.clone(),
        files: Vec::new(),
    };
    let bundle = DiscoveryBundle {
        data_corr,
        embed_corr,
        attention_avg,
        sensor_tags,
    };
    Ok((bundle, manifest))
}

fn remove_all(paths: &[PathBuf]) {
    for p in paths {
        let _ = fs::remove_file(p);
    }
}

/// Writes the three matrices and the manifest into `dir`. Files are staged
/// under temporary names and renamed into place; on failure nothing new is
/// left behind.
pub fn export_bundle(bundle: &DiscoveryBundle, manifest: &DiscoveryManifest, dir: &Path) -> Result<Vec<PathBuf>> {
    let names = bundle_file_names(&manifest.target_tag);
    let mut contents: Vec<Vec<u8>> = Vec::new();
    for m in [&bundle.data_corr, &bundle.embed_corr, &bundle.attention_avg] {
        let mut buf = Vec::new();
        matrix_csv::write_to(&mut buf, &bundle.sensor_tags, m)?;
        contents.push(buf);
    }
    let mut manifest = manifest.clone();
    manifest.files = names.to_vec();
    contents.push(serde_json::to_vec_pretty(&manifest)?);

    let finals: Vec<PathBuf> = names.iter().map(|n| dir.join(n)).collect();
    let temps: Vec<PathBuf> = names.iter().map(|n| dir.join(format!(".{n}.tmp"))).collect();
    for (k, (tmp, bytes)) in temps.iter().zip(&contents).enumerate() {
        if let Err(e) = fs::write(tmp, bytes) {
            remove_all(&temps[..k]);
            return Err(Error::io(tmp, e));
        }
    }
    for (k, (tmp, dst)) in temps.iter().zip(&finals).enumerate() {
        if let Err(e) = fs::rename(tmp, dst) {
            remove_all(&finals[..k]);
            remove_all(&temps[k..]);
            return Err(Error::io(dst, e));
        }
    }
    Ok(finals)
}
