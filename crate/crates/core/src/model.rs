//! Single-head graph attention over sensor windows with an
//! embedding-gated readout.
//!
//! For one window `x` (`N x w`) the forward pass is
//!
//! ```text
//! p_i    = W x_i                                   (d)
//! g_i    = z_i ++ p_i                              (2d)
//! pi_ij  = LeakyReLU(a . (g_i ++ g_j))             j in N(i) + {i}
//! alpha  = row-wise softmax of pi over the support
//! n_i    = ReLU(sum_j alpha_ij p_j)
//! h      = ReLU(theta^T [z_1 * n_1, ..., z_N * n_N] + b)   (dropout on h)
//! y_hat  = readout . h + c
//! ```

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{init_embeddings, Adjacency, EmbeddingTable, LearnedGraph};

pub const LEAKY_SLOPE: f64 = 0.2;

pub fn leaky_relu(v: f64) -> f64 {
    if v > 0.0 {
        v
    } else {
        LEAKY_SLOPE * v
    }
}

/// Architecture hyperparameters that fix every tensor shape.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    /// Input sensors `N`.
    pub num_nodes: usize,
    /// Embedding dimension `d`.
    pub embed_dim: usize,
    /// Window length `w`.
    pub window: usize,
    /// Width `H` of the hidden readout layer.
    pub hidden: usize,
    /// In-neighbors kept per node.
    pub k: usize,
    pub dropout: f64,
    /// Add reverse edges after top-k selection.
    #[serde(default)]
    pub symmetric_graph: bool,
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_nodes < 2 {
            return Err(Error::TooFewNodes(self.num_nodes));
        }
        if self.embed_dim == 0 || self.window == 0 || self.hidden == 0 {
            return Err(Error::Config(
                "embed_dim, window and hidden must be positive".into(),
            ));
        }
        if self.k > self.num_nodes - 1 {
            return Err(Error::InvalidK {
                k: self.k,
                nodes: self.num_nodes,
            });
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!(
                "dropout must lie in [0, 1), got {}",
                self.dropout
            )));
        }
        Ok(())
    }
}

/// Trainable weights other than the embeddings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    /// `W`, `d x w`.
    pub projection: Array2<f64>,
    /// `a`, length `4d`.
    pub attention: Array1<f64>,
    /// `(N*d) x H`.
    pub hidden_weight: Array2<f64>,
    pub hidden_bias: Array1<f64>,
    pub readout_weight: Array1<f64>,
    pub readout_bias: f64,
}

impl ModelParams {
    pub fn init(cfg: &ModelConfig, rng: &mut impl Rng) -> Self {
        let (n, d, w, h) = (cfg.num_nodes, cfg.embed_dim, cfg.window, cfg.hidden);
        let mut normal = |rows: usize, cols: usize, fan_in: usize, gain: f64| {
            let dist = Normal::new(0.0, (gain / fan_in as f64).sqrt()).expect("positive std");
            Array2::from_shape_simple_fn((rows, cols), || dist.sample(rng))
        };
        let projection = normal(d, w, w, 1.0);
        let attention = normal(1, 4 * d, 4 * d, 1.0).remove_axis(Axis(0));
        let hidden_weight = normal(n * d, h, n * d, 2.0);
        let readout_weight = normal(1, h, h, 1.0).remove_axis(Axis(0));
        Self {
            projection,
            attention,
            hidden_weight,
            hidden_bias: Array1::zeros(h),
            readout_weight,
            readout_bias: 0.0,
        }
    }

    pub fn zeros(cfg: &ModelConfig) -> Self {
        let (n, d, w, h) = (cfg.num_nodes, cfg.embed_dim, cfg.window, cfg.hidden);
        Self {
            projection: Array2::zeros((d, w)),
            attention: Array1::zeros(4 * d),
            hidden_weight: Array2::zeros((n * d, h)),
            hidden_bias: Array1::zeros(h),
            readout_weight: Array1::zeros(h),
            readout_bias: 0.0,
        }
    }

    pub fn check_shapes(&self, cfg: &ModelConfig) -> Result<()> {
        let (n, d, w, h) = (cfg.num_nodes, cfg.embed_dim, cfg.window, cfg.hidden);
        let checks: [(&str, Vec<usize>, Vec<usize>); 5] = [
            ("projection", vec![d, w], self.projection.shape().to_vec()),
            ("attention", vec![4 * d], self.attention.shape().to_vec()),
            ("hidden_weight", vec![n * d, h], self.hidden_weight.shape().to_vec()),
            ("hidden_bias", vec![h], self.hidden_bias.shape().to_vec()),
            ("readout_weight", vec![h], self.readout_weight.shape().to_vec()),
        ];
        for (name, want, got) in checks {
            if want != got {
                return Err(Error::shape(name, format!("{want:?}"), format!("{got:?}")));
            }
        }
        Ok(())
    }

    pub fn all_finite(&self) -> bool {
        self.projection.iter().all(|v| v.is_finite())
            && self.attention.iter().all(|v| v.is_finite())
            && self.hidden_weight.iter().all(|v| v.is_finite())
            && self.hidden_bias.iter().all(|v| v.is_finite())
            && self.readout_weight.iter().all(|v| v.is_finite())
            && self.readout_bias.is_finite()
    }
}

/// Whether dropout is active, and where its randomness comes from.
pub enum Phase<'a> {
    Eval,
    Train { rng: &'a mut ChaCha8Rng },
}

/// Intermediates of one forward pass, kept for backpropagation and for
/// attention inspection.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardTrace {
    /// `W x_i` per node, `N x d`.
    pub projected: Array2<f64>,
    /// `z_i ++ W x_i`, `N x 2d`.
    pub g: Array2<f64>,
    /// LeakyReLU scores; `-inf` outside the support.
    pub scores: Array2<f64>,
    /// Attention probabilities; zero outside the support.
    pub alpha: Array2<f64>,
    /// Aggregate before ReLU, `N x d`.
    pub pre_activation: Array2<f64>,
    /// Node embeddings `n_i`, `N x d`.
    pub n: Array2<f64>,
    /// Flattened `z_i * n_i`, length `N d`.
    pub gated: Array1<f64>,
    pub hidden_pre: Array1<f64>,
    /// Hidden activations after ReLU and dropout.
    pub hidden: Array1<f64>,
    /// Inverted-dropout multipliers, `None` when dropout was inactive.
    pub dropout_mask: Option<Array1<f64>>,
    pub y_hat: f64,
}

fn check_window(x: &ArrayView2<f64>, projection: &Array2<f64>, n: usize) -> Result<()> {
    if x.nrows() != n || x.ncols() != projection.ncols() {
        return Err(Error::shape(
            "input window",
            format!("{}x{}", n, projection.ncols()),
            format!("{}x{}", x.nrows(), x.ncols()),
        ));
    }
    Ok(())
}

/// `W x_i` for every node: `x W^T`, `N x d`.
pub fn project(x: &Array2<f64>, projection: &Array2<f64>) -> Result<Array2<f64>> {
    check_window(&x.view(), projection, x.nrows())?;
    Ok(x.dot(&projection.t()))
}

/// `g_i = z_i ++ W x_i`.
pub fn node_features(
    table: &EmbeddingTable,
    x: &Array2<f64>,
    projection: &Array2<f64>,
) -> Result<Array2<f64>> {
    check_window(&x.view(), projection, table.num_nodes())?;
    if projection.nrows() != table.dim() {
        return Err(Error::shape("projection rows", table.dim(), projection.nrows()));
    }
    let p = x.dot(&projection.t());
    Ok(ndarray::concatenate![Axis(1), table.z, p])
}

/// LeakyReLU scores on `N(i) + {i}`; `-inf` elsewhere.
pub fn attention_scores(
    g: &Array2<f64>,
    attention: &Array1<f64>,
    adjacency: &Adjacency,
) -> Result<Array2<f64>> {
    let width = g.ncols();
    if attention.len() != 2 * width {
        return Err(Error::shape("attention vector", 2 * width, attention.len()));
    }
    let n = g.nrows();
    if adjacency.num_nodes() != n {
        return Err(Error::shape("adjacency", n, adjacency.num_nodes()));
    }
    let left = attention.slice(ndarray::s![..width]);
    let right = attention.slice(ndarray::s![width..]);
    let src: Array1<f64> = g.dot(&left);
    let dst: Array1<f64> = g.dot(&right);
    Ok(Array2::from_shape_fn((n, n), |(i, j)| {
        if i == j || adjacency.has_edge(j, i) {
            leaky_relu(src[i] + dst[j])
        } else {
            f64::NEG_INFINITY
        }
    }))
}

/// Row-wise softmax over `N(i) + {i}` with max subtraction.
pub fn attention_probs(scores: &Array2<f64>, adjacency: &Adjacency) -> Array2<f64> {
    let n = scores.nrows();
    let mut alpha = Array2::zeros((n, n));
    for i in 0..n {
        let support = |j: usize| i == j || adjacency.has_edge(j, i);
        let max = (0..n)
            .filter(|&j| support(j))
            .map(|j| scores[[i, j]])
            .fold(f64::NEG_INFINITY, f64::max);
        let mut total = 0.0;
        for j in (0..n).filter(|&j| support(j)) {
            let e = (scores[[i, j]] - max).exp();
            alpha[[i, j]] = e;
            total += e;
        }
        alpha.row_mut(i).mapv_inplace(|v| v / total);
    }
    alpha
}

fn aggregate_projected(alpha: &Array2<f64>, projected: &Array2<f64>) -> (Array2<f64>, Array2<f64>) {
    let pre = alpha.dot(projected);
    let n = pre.mapv(|v| v.max(0.0));
    (pre, n)
}

/// `n_i = ReLU(sum_j alpha_ij W x_j)` over the support of row `i`.
pub fn aggregate(
    alpha: &Array2<f64>,
    x: &Array2<f64>,
    projection: &Array2<f64>,
    adjacency: &Adjacency,
) -> Result<Array2<f64>> {
    let n = adjacency.num_nodes();
    if alpha.dim() != (n, n) {
        return Err(Error::shape("alpha", format!("{n}x{n}"), format!("{:?}", alpha.dim())));
    }
    check_window(&x.view(), projection, n)?;
    let p = x.dot(&projection.t());
    Ok(aggregate_projected(alpha, &p).1)
}

fn gate(table: &EmbeddingTable, n: &Array2<f64>) -> Array1<f64> {
    let prod = &table.z * n;
    Array1::from_iter(prod.iter().copied())
}

fn dropout_mask(rate: f64, len: usize, rng: &mut ChaCha8Rng) -> Array1<f64> {
    let keep = 1.0 - rate;
    Array1::from_shape_simple_fn(len, || {
        if rng.random::<f64>() < keep {
            1.0 / keep
        } else {
            0.0
        }
    })
}

struct ReadoutParts {
    gated: Array1<f64>,
    hidden_pre: Array1<f64>,
    hidden: Array1<f64>,
    mask: Option<Array1<f64>>,
    y_hat: f64,
}

fn readout_parts(
    table: &EmbeddingTable,
    n: &Array2<f64>,
    params: &ModelParams,
    dropout: f64,
    phase: Phase<'_>,
) -> ReadoutParts {
    let gated = gate(table, n);
    let hidden_pre = gated.dot(&params.hidden_weight) + &params.hidden_bias;
    let mut hidden = hidden_pre.mapv(|v| v.max(0.0));
    let mask = match phase {
        Phase::Train { rng } if dropout > 0.0 => {
            let m = dropout_mask(dropout, hidden.len(), rng);
            hidden *= &m;
            Some(m)
        }
        _ => None,
    };
    let y_hat = hidden.dot(&params.readout_weight) + params.readout_bias;
    ReadoutParts {
        gated,
        hidden_pre,
        hidden,
        mask,
        y_hat,
    }
}

/// Gates node embeddings by sensor embeddings, applies the hidden layer
/// (dropout only in [`Phase::Train`]) and the scalar readout.
pub fn readout(
    table: &EmbeddingTable,
    n: &Array2<f64>,
    params: &ModelParams,
    dropout: f64,
    phase: Phase<'_>,
) -> Result<f64> {
    if n.dim() != table.z.dim() {
        return Err(Error::shape(
            "node embeddings",
            format!("{:?}", table.z.dim()),
            format!("{:?}", n.dim()),
        ));
    }
    if params.hidden_weight.nrows() != table.z.len() {
        return Err(Error::shape("hidden_weight rows", table.z.len(), params.hidden_weight.nrows()));
    }
    if !(0.0..1.0).contains(&dropout) {
        return Err(Error::Config(format!("dropout must lie in [0, 1), got {dropout}")));
    }
    Ok(readout_parts(table, n, params, dropout, phase).y_hat)
}

/// Full forward pass for one window.
pub fn forward(
    table: &EmbeddingTable,
    x: &Array2<f64>,
    params: &ModelParams,
    adjacency: &Adjacency,
    dropout: f64,
    phase: Phase<'_>,
) -> Result<ForwardTrace> {
    let n_nodes = table.num_nodes();
    check_window(&x.view(), &params.projection, n_nodes)?;
    if adjacency.num_nodes() != n_nodes {
        return Err(Error::shape("adjacency", n_nodes, adjacency.num_nodes()));
    }
    if params.projection.nrows() != table.dim() {
        return Err(Error::shape("projection rows", table.dim(), params.projection.nrows()));
    }
    if params.hidden_weight.nrows() != table.z.len() {
        return Err(Error::shape("hidden_weight rows", table.z.len(), params.hidden_weight.nrows()));
    }
    let projected = x.dot(&params.projection.t());
    let g = ndarray::concatenate![Axis(1), table.z, projected];
    let scores = attention_scores(&g, &params.attention, adjacency)?;
    let alpha = attention_probs(&scores, adjacency);
    let (pre_activation, n) = aggregate_projected(&alpha, &projected);
    let parts = readout_parts(table, &n, params, dropout, phase);
    Ok(ForwardTrace {
        projected,
        g,
        scores,
        alpha,
        pre_activation,
        n,
        gated: parts.gated,
        hidden_pre: parts.hidden_pre,
        hidden: parts.hidden,
        dropout_mask: parts.mask,
        y_hat: parts.y_hat,
    })
}

/// Mean squared error.
pub fn mse_loss(y: &[f64], y_hat: &[f64]) -> Result<f64> {
    if y.is_empty() {
        return Err(Error::Empty("mse targets"));
    }
    if y.len() != y_hat.len() {
        return Err(Error::shape("predictions", y.len(), y_hat.len()));
    }
    let sum: f64 = y.iter().zip(y_hat).map(|(a, b)| (b - a).powi(2)).sum();
    Ok(sum / y.len() as f64)
}

/// `dL/dy_hat_t = 2 (y_hat_t - y_t) / T`.
pub fn mse_grad(y: &[f64], y_hat: &[f64]) -> Result<Vec<f64>> {
    mse_loss(y, y_hat)?;
    let scale = 2.0 / y.len() as f64;
    Ok(y.iter().zip(y_hat).map(|(a, b)| scale * (b - a)).collect())
}

/// Embeddings, weights and the configuration that shapes them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SoftSensor {
    pub config: ModelConfig,
    pub embeddings: EmbeddingTable,
    pub params: ModelParams,
}

impl SoftSensor {
    pub fn init(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let embeddings = init_embeddings(config.num_nodes, config.embed_dim, seed)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(1);
        let params = ModelParams::init(&config, &mut rng);
        Ok(Self {
            config,
            embeddings,
            params,
        })
    }

    /// Graph induced by the current embeddings.
    pub fn graph(&self) -> Result<LearnedGraph> {
        LearnedGraph::from_embeddings(&self.embeddings, self.config.k, self.config.symmetric_graph)
    }

    pub fn forward(&self, x: &Array2<f64>, adjacency: &Adjacency, phase: Phase<'_>) -> Result<ForwardTrace> {
        forward(&self.embeddings, x, &self.params, adjacency, self.config.dropout, phase)
    }

    /// Dropout-free prediction.
    pub fn predict_one(&self, x: &Array2<f64>, adjacency: &Adjacency) -> Result<f64> {
        Ok(self.forward(x, adjacency, Phase::Eval)?.y_hat)
    }
}
