//! Reverse-mode gradients of the squared error through one forward trace.
//!
//! The top-k graph is treated as a constant. Embeddings receive gradient
//! through the node features that feed attention and through the readout
//! gating.

use ndarray::{s, Array1, Array2, Axis};

use crate::error::{Error, Result};
use crate::graph::{Adjacency, EmbeddingTable};
use crate::model::{ForwardTrace, ModelConfig, ModelParams, SoftSensor, LEAKY_SLOPE};

/// Gradient buffers mirroring every trainable tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub embeddings: Array2<f64>,
    pub projection: Array2<f64>,
    pub attention: Array1<f64>,
    pub hidden_weight: Array2<f64>,
    pub hidden_bias: Array1<f64>,
    pub readout_weight: Array1<f64>,
    pub readout_bias: f64,
}

impl Gradients {
    pub fn zeros(cfg: &ModelConfig) -> Self {
        let p = ModelParams::zeros(cfg);
        Self {
            embeddings: Array2::zeros((cfg.num_nodes, cfg.embed_dim)),
            projection: p.projection,
            attention: p.attention,
            hidden_weight: p.hidden_weight,
            hidden_bias: p.hidden_bias,
            readout_weight: p.readout_weight,
            readout_bias: 0.0,
        }
    }

    pub fn add_assign(&mut self, other: &Gradients) {
        self.embeddings += &other.embeddings;
        self.projection += &other.projection;
        self.attention += &other.attention;
        self.hidden_weight += &other.hidden_weight;
        self.hidden_bias += &other.hidden_bias;
        self.readout_weight += &other.readout_weight;
        self.readout_bias += other.readout_bias;
    }

    pub fn scale(&mut self, factor: f64) {
        self.embeddings *= factor;
        self.projection *= factor;
        self.attention *= factor;
        self.hidden_weight *= factor;
        self.hidden_bias *= factor;
        self.readout_weight *= factor;
        self.readout_bias *= factor;
    }

    /// Named flat views, in the same order as [`SoftSensor::tensors_mut`].
    pub fn tensors(&self) -> Vec<(&'static str, &[f64])> {
        vec![
            ("embeddings", self.embeddings.as_slice().expect("standard layout")),
            ("projection", self.projection.as_slice().expect("standard layout")),
            ("attention", self.attention.as_slice().expect("standard layout")),
            ("hidden_weight", self.hidden_weight.as_slice().expect("standard layout")),
            ("hidden_bias", self.hidden_bias.as_slice().expect("standard layout")),
            ("readout_weight", self.readout_weight.as_slice().expect("standard layout")),
            ("readout_bias", std::slice::from_ref(&self.readout_bias)),
        ]
    }

    pub fn global_norm(&self) -> f64 {
        self.tensors()
            .iter()
            .flat_map(|(_, t)| t.iter())
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt()
    }

    /// Rescales so the global norm is at most `max_norm`.
    pub fn clip_global_norm(&mut self, max_norm: f64) {
        let norm = self.global_norm();
        if norm > max_norm && norm > 0.0 {
            self.scale(max_norm / norm);
        }
    }

    /// Name of the first tensor holding a NaN or infinity.
    pub fn first_non_finite(&self) -> Option<&'static str> {
        self.tensors()
            .into_iter()
            .find(|(_, t)| t.iter().any(|v| !v.is_finite()))
            .map(|(name, _)| name)
    }
}

impl SoftSensor {
    /// Named mutable flat views of embeddings and weights.
    pub fn tensors_mut(&mut self) -> Vec<(&'static str, &mut [f64])> {
        let p = &mut self.params;
        vec![
            ("embeddings", self.embeddings.z.as_slice_mut().expect("standard layout")),
            ("projection", p.projection.as_slice_mut().expect("standard layout")),
            ("attention", p.attention.as_slice_mut().expect("standard layout")),
            ("hidden_weight", p.hidden_weight.as_slice_mut().expect("standard layout")),
            ("hidden_bias", p.hidden_bias.as_slice_mut().expect("standard layout")),
            ("readout_weight", p.readout_weight.as_slice_mut().expect("standard layout")),
            ("readout_bias", std::slice::from_mut(&mut p.readout_bias)),
        ]
    }
}

/// Accumulates into `grads` the gradient of a loss whose derivative with
/// respect to `trace.y_hat` is `upstream`.
pub fn accumulate(
    trace: &ForwardTrace,
    x: &Array2<f64>,
    upstream: f64,
    table: &EmbeddingTable,
    params: &ModelParams,
    adjacency: &Adjacency,
    grads: &mut Gradients,
) -> Result<()> {
    let (n_nodes, d) = table.z.dim();
    if trace.n.dim() != (n_nodes, d)
        || trace.alpha.dim() != (n_nodes, n_nodes)
        || trace.hidden.len() != params.readout_weight.len()
        || x.nrows() != n_nodes
        || x.ncols() != params.projection.ncols()
        || adjacency.num_nodes() != n_nodes
        || grads.embeddings.dim() != (n_nodes, d)
    {
        return Err(Error::shape(
            "backward",
            format!("trace for {n_nodes} nodes, embed dim {d}"),
            "mismatched trace, window or gradient buffer",
        ));
    }

    // readout
    grads.readout_bias += upstream;
    grads.readout_weight.scaled_add(upstream, &trace.hidden);
    let mut d_hidden = &params.readout_weight * upstream;
    if let Some(mask) = &trace.dropout_mask {
        d_hidden *= mask;
    }
    let d_hidden_pre = Array1::from_shape_fn(d_hidden.len(), |k| {
        if trace.hidden_pre[k] > 0.0 {
            d_hidden[k]
        } else {
            0.0
        }
    });
    grads.hidden_bias += &d_hidden_pre;
    {
        let gated = trace.gated.view().insert_axis(Axis(1));
        let dh = d_hidden_pre.view().insert_axis(Axis(0));
        ndarray::linalg::general_mat_mul(1.0, &gated, &dh, 1.0, &mut grads.hidden_weight);
    }
    let d_gated = params.hidden_weight.dot(&d_hidden_pre);
    let d_gated = d_gated
        .into_shape_with_order((n_nodes, d))
        .expect("gated vector is N*d");

    // gating z_i * n_i
    grads.embeddings += &(&d_gated * &trace.n);
    let d_n = &d_gated * &table.z;
    let d_pre = Array2::from_shape_fn((n_nodes, d), |(i, c)| {
        if trace.pre_activation[[i, c]] > 0.0 {
            d_n[[i, c]]
        } else {
            0.0
        }
    });

    // aggregation pre_i = sum_j alpha_ij p_j
    let alpha = &trace.alpha;
    let mut d_projected = alpha.t().dot(&d_pre);
    let d_alpha = d_pre.dot(&trace.projected.t());

    // softmax and LeakyReLU, restricted to the support
    let mut d_src = Array1::<f64>::zeros(n_nodes);
    let mut d_dst = Array1::<f64>::zeros(n_nodes);
    for i in 0..n_nodes {
        let inner: f64 = (0..n_nodes).map(|j| alpha[[i, j]] * d_alpha[[i, j]]).sum();
        for j in 0..n_nodes {
            if i != j && !adjacency.has_edge(j, i) {
                continue;
            }
            let d_pi = alpha[[i, j]] * (d_alpha[[i, j]] - inner);
            let slope = if trace.scores[[i, j]] > 0.0 { 1.0 } else { LEAKY_SLOPE };
            let d_s = d_pi * slope;
            d_src[i] += d_s;
            d_dst[j] += d_s;
        }
    }

    // s_ij = a_left . g_i + a_right . g_j
    let width = 2 * d;
    let a_left = params.attention.slice(s![..width]);
    let a_right = params.attention.slice(s![width..]);
    grads
        .attention
        .slice_mut(s![..width])
        .scaled_add(1.0, &trace.g.t().dot(&d_src));
    grads
        .attention
        .slice_mut(s![width..])
        .scaled_add(1.0, &trace.g.t().dot(&d_dst));
    for i in 0..n_nodes {
        for c in 0..width {
            let dg = d_src[i] * a_left[c] + d_dst[i] * a_right[c];
            if c < d {
                grads.embeddings[[i, c]] += dg;
            } else {
                d_projected[[i, c - d]] += dg;
            }
        }
    }

    // p_i = W x_i
    ndarray::linalg::general_mat_mul(1.0, &d_projected.t(), x, 1.0, &mut grads.projection);
    Ok(())
}

/// Gradients of the single-window loss `(y_hat - y)^2`.
pub fn backward(
    trace: &ForwardTrace,
    x: &Array2<f64>,
    y: f64,
    model: &SoftSensor,
    adjacency: &Adjacency,
) -> Result<Gradients> {
    let mut grads = Gradients::zeros(&model.config);
    accumulate(
        trace,
        x,
        2.0 * (trace.y_hat - y),
        &model.embeddings,
        &model.params,
        adjacency,
        &mut grads,
    )?;
    Ok(grads)
}
