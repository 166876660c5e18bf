#![allow(dead_code)]

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sensorgraph::graph::Adjacency;
use sensorgraph::model::{ModelConfig, Phase, SoftSensor};
use sensorgraph::training::backward::{accumulate, Gradients};

/// Mean squared error of `model` over `batch`, dropout off, graph fixed.
pub fn batch_loss(model: &SoftSensor, adj: &Adjacency, batch: &[(Array2<f64>, f64)]) -> f64 {
    batch
        .iter()
        .map(|(x, y)| {
            let y_hat = model.forward(x, adj, Phase::Eval).unwrap().y_hat;
            (y_hat - y).powi(2)
        })
        .sum::<f64>()
        / batch.len() as f64
}

pub fn analytic_gradients(model: &SoftSensor, adj: &Adjacency, batch: &[(Array2<f64>, f64)]) -> Gradients {
    let mut grads = Gradients::zeros(&model.config);
    let scale = 2.0 / batch.len() as f64;
    for (x, y) in batch {
        let trace = model.forward(x, adj, Phase::Eval).unwrap();
        accumulate(
            &trace,
            x,
            scale * (trace.y_hat - y),
            &model.embeddings,
            &model.params,
            adj,
            &mut grads,
        )
        .unwrap();
    }
    grads
}

/// Worst relative error per tensor between analytic gradients and central
/// differences of [`batch_loss`]. Relative error is
/// `|a - n| / max(|a|, |n|, floor)`.
pub fn gradient_check(
    model: &SoftSensor,
    adj: &Adjacency,
    batch: &[(Array2<f64>, f64)],
    step: f64,
    floor: f64,
) -> Vec<(&'static str, f64, usize)> {
    let analytic = analytic_gradients(model, adj, batch);
    let analytic: Vec<(&'static str, Vec<f64>)> = analytic
        .tensors()
        .into_iter()
        .map(|(n, t)| (n, t.to_vec()))
        .collect();
    let mut probe = model.clone();
    let mut out = Vec::new();
    for (k, (name, grad)) in analytic.iter().enumerate() {
        let mut worst = 0.0f64;
        for idx in 0..grad.len() {
            let orig = probe.tensors_mut()[k].1[idx];
            probe.tensors_mut()[k].1[idx] = orig + step;
            let up = batch_loss(&probe, adj, batch);
            probe.tensors_mut()[k].1[idx] = orig - step;
            let down = batch_loss(&probe, adj, batch);
            probe.tensors_mut()[k].1[idx] = orig;
            let numeric = (up - down) / (2.0 * step);
            let a = grad[idx];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(floor);
            worst = worst.max(rel);
        }
        out.push((*name, worst, grad.len()));
    }
    out
}

pub fn random_batch(cfg: &ModelConfig, size: usize, seed: u64) -> Vec<(Array2<f64>, f64)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..size)
        .map(|_| {
            let x = Array2::from_shape_simple_fn((cfg.num_nodes, cfg.window), || rng.random_range(0.0..1.0));
            (x, rng.random_range(0.0..1.0))
        })
        .collect()
}

/// Prints one pass/fail line and fails the test on a miss.
pub fn verdict(id: u32, name: &str, ok: bool, detail: &str) {
    println!("[{}] criterion {id}: {name} :: {detail}", if ok { "PASS" } else { "FAIL" });
    assert!(ok, "criterion {id} ({name}) failed: {detail}");
}
