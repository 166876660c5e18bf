//! Sensor embeddings and the graph learned from them.
//!
//! Each input sensor owns a learnable embedding `z_i`. Pairwise cosine
//! similarity between embeddings ranks candidate neighbors and every node
//! keeps its `k` most similar peers as in-neighbors.

use std::path::Path;

use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const MIN_NORM: f64 = 1e-12;

/// `N x d` table of sensor embeddings; row `i` is `z_i`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingTable {
    pub z: Array2<f64>,
}

impl EmbeddingTable {
    pub fn new(z: Array2<f64>) -> Self {
        Self { z }
    }

    pub fn num_nodes(&self) -> usize {
        self.z.nrows()
    }

    pub fn dim(&self) -> usize {
        self.z.ncols()
    }
}

/// Draws embeddings i.i.d. from `N(0, 1/d)`.
pub fn init_embeddings(n: usize, d: usize, seed: u64) -> Result<EmbeddingTable> {
    if n < 2 {
        return Err(Error::TooFewNodes(n));
    }
    if d == 0 {
        return Err(Error::Config("embedding dimension must be >= 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, 1.0 / (d as f64).sqrt()).expect("positive std");
    let mut z = Array2::zeros((n, d));
    for mut row in z.rows_mut() {
        loop {
            row.iter_mut().for_each(|v| *v = normal.sample(&mut rng));
            if row.dot(&row).sqrt() > MIN_NORM {
                break;
            }
        }
    }
    Ok(EmbeddingTable { z })
}

/// Pairwise cosine similarity; entry `(j, i)` is `e_ji`. The matrix is
/// symmetric and its diagonal is not used for neighbor selection.
pub fn cosine_similarity_matrix(table: &EmbeddingTable) -> Result<Array2<f64>> {
    let z = &table.z;
    let norms: Vec<f64> = z.rows().into_iter().map(|r| r.dot(&r).sqrt()).collect();
    if let Some(i) = norms.iter().position(|&n| n <= MIN_NORM) {
        return Err(Error::ZeroNorm(i));
    }
    let n = z.nrows();
    let mut e = Array2::zeros((n, n));
    for i in 0..n {
        for j in i..n {
            let s = z.row(i).dot(&z.row(j)) / (norms[i] * norms[j]);
            e[[i, j]] = s;
            e[[j, i]] = s;
        }
    }
    Ok(e)
}

/// Directed adjacency stored by destination: `mask[[i, j]]` is true when `j`
/// is an in-neighbor of `i` (the edge `j -> i`, i.e. `A_ji = 1`).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Adjacency {
    mask: Array2<bool>,
}

impl Adjacency {
    pub fn from_mask(mask: Array2<bool>) -> Result<Self> {
        if mask.nrows() != mask.ncols() {
            return Err(Error::shape("adjacency", "square matrix", format!("{:?}", mask.dim())));
        }
        Ok(Self { mask })
    }

    pub fn empty(n: usize) -> Self {
        Self {
            mask: Array2::from_elem((n, n), false),
        }
    }

    /// Every node receives an edge from every other node.
    pub fn full(n: usize) -> Self {
        Self {
            mask: Array2::from_shape_fn((n, n), |(i, j)| i != j),
        }
    }

    pub fn num_nodes(&self) -> usize {
        self.mask.nrows()
    }

    /// Is there an edge `j -> i`?
    pub fn has_edge(&self, j: usize, i: usize) -> bool {
        self.mask[[i, j]]
    }

    pub fn mask(&self) -> &Array2<bool> {
        &self.mask
    }

    /// In-neighbors of `i` in ascending index order.
    pub fn neighbors(&self, i: usize) -> Vec<usize> {
        self.mask
            .row(i)
            .iter()
            .enumerate()
            .filter_map(|(j, &on)| on.then_some(j))
            .collect()
    }

    pub fn in_degree(&self, i: usize) -> usize {
        self.mask.row(i).iter().filter(|&&on| on).count()
    }

    /// Adds the reverse of every edge.
    pub fn symmetrized(&self) -> Self {
        let n = self.num_nodes();
        Self {
            mask: Array2::from_shape_fn((n, n), |(i, j)| self.mask[[i, j]] || self.mask[[j, i]]),
        }
    }

    /// `(j, i)` pairs for every edge `j -> i`, ordered by destination then
    /// source.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        (0..self.num_nodes())
            .flat_map(|i| self.neighbors(i).into_iter().map(move |j| (j, i)))
            .collect()
    }
}

/// Keeps, for each node `i`, the `k` candidates `j != i` with the largest
/// `e_ji`. Equal scores prefer the lower index.
pub fn topk_adjacency(similarity: &Array2<f64>, k: usize) -> Result<Adjacency> {
    let n = similarity.nrows();
    if similarity.ncols() != n {
        return Err(Error::shape(
            "similarity matrix",
            "square matrix",
            format!("{:?}", similarity.dim()),
        ));
    }
    if n == 0 || k > n - 1 {
        return Err(Error::InvalidK { k, nodes: n });
    }
    let mut mask = Array2::from_elem((n, n), false);
    let mut candidates: Vec<usize> = Vec::with_capacity(n);
    for i in 0..n {
        candidates.clear();
        candidates.extend((0..n).filter(|&j| j != i));
        candidates.sort_by(|&a, &b| {
            similarity[[b, i]]
                .total_cmp(&similarity[[a, i]])
                .then(a.cmp(&b))
        });
        for &j in &candidates[..k] {
            mask[[i, j]] = true;
        }
    }
    Ok(Adjacency { mask })
}

/// In-neighbors of node `i`.
pub fn neighbors(adjacency: &Adjacency, i: usize) -> Vec<usize> {
    adjacency.neighbors(i)
}

/// Similarity matrix plus the adjacency selected from it.
#[derive(Debug, Clone, PartialEq)]
pub struct LearnedGraph {
    pub similarity: Array2<f64>,
    pub adjacency: Adjacency,
    pub k: usize,
}

impl LearnedGraph {
    /// Builds the graph from the current embeddings.
    pub fn from_embeddings(table: &EmbeddingTable, k: usize, symmetric: bool) -> Result<Self> {
        let similarity = cosine_similarity_matrix(table)?;
        let mut adjacency = topk_adjacency(&similarity, k)?;
        if symmetric {
            adjacency = adjacency.symmetrized();
        }
        Ok(Self {
            similarity,
            adjacency,
            k,
        })
    }

    /// `{k, edges: [[j, i, e_ji], ...]}`.
    pub fn to_json(&self) -> Result<String> {
        #[derive(Serialize)]
        struct Doc {
            k: usize,
            edges: Vec<(usize, usize, f64)>,
        }
        let edges = self
            .adjacency
            .edges()
            .into_iter()
            .map(|(j, i)| (j, i, self.similarity[[j, i]]))
            .collect();
        Ok(serde_json::to_string_pretty(&Doc { k: self.k, edges })?)
    }

    /// Writes `graph.json` and `similarity.csv` under `dir`.
    pub fn export(&self, dir: &Path, tags: &[String]) -> Result<()> {
        let json_path = dir.join("graph.json");
        std::fs::write(&json_path, self.to_json()?).map_err(|e| Error::io(&json_path, e))?;
        crate::matrix_csv::write(&dir.join("similarity.csv"), tags, &self.similarity)
    }
}
