mod common;

use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sensorgraph::graph::Adjacency;
use sensorgraph::model::{ModelConfig, Phase, SoftSensor};
use sensorgraph::training::backward::{accumulate, backward, Gradients};

use common::{gradient_check, random_batch};

fn cfg(k: usize, dropout: f64, symmetric: bool) -> ModelConfig {
    ModelConfig {
        num_nodes: 5,
        embed_dim: 3,
        window: 4,
        hidden: 6,
        k,
        dropout,
        symmetric_graph: symmetric,
    }
}

fn assert_close(report: &[(&str, f64, usize)], tol: f64) {
    for (name, err, _) in report {
        assert!(*err <= tol, "{name}: relative error {err:.3e}");
    }
}

#[test]
fn directed_graph_matches_finite_differences() {
    for seed in 0..4 {
        let c = cfg(2, 0.0, false);
        let model = SoftSensor::init(c.clone(), seed).unwrap();
        let adj = model.graph().unwrap().adjacency;
        assert_close(&gradient_check(&model, &adj, &random_batch(&c, 3, seed), 1e-5, 1e-6), 1e-4);
    }
}

#[test]
fn symmetric_graph_matches_finite_differences() {
    let c = cfg(1, 0.0, true);
    let model = SoftSensor::init(c.clone(), 7).unwrap();
    let adj = model.graph().unwrap().adjacency;
    assert!(adj.edges().len() > c.num_nodes, "symmetrized graph should add edges");
    assert_close(&gradient_check(&model, &adj, &random_batch(&c, 3, 7), 1e-5, 1e-6), 1e-4);
}

#[test]
fn self_only_graph_gives_zero_attention_gradient() {
    let c = cfg(0, 0.0, false);
    let model = SoftSensor::init(c.clone(), 3).unwrap();
    let adj = model.graph().unwrap().adjacency;
    assert!(adj.edges().is_empty());
    let batch = random_batch(&c, 3, 3);
    assert_close(&gradient_check(&model, &adj, &batch, 1e-5, 1e-6), 1e-4);
    let grads = common::analytic_gradients(&model, &adj, &batch);
    assert!(grads.attention.iter().all(|&g| g == 0.0));
}

#[test]
fn full_graph_matches_finite_differences() {
    let c = cfg(4, 0.0, false);
    let model = SoftSensor::init(c.clone(), 9).unwrap();
    let adj = Adjacency::full(5);
    assert_close(&gradient_check(&model, &adj, &random_batch(&c, 2, 9), 1e-5, 1e-6), 1e-4);
}

/// Loss with the dropout mask drawn from a fresh generator on every call,
/// so perturbed evaluations reuse the same mask.
fn masked_loss(model: &SoftSensor, adj: &Adjacency, x: &Array2<f64>, y: f64, mask_seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(mask_seed);
    let trace = model.forward(x, adj, Phase::Train { rng: &mut rng }).unwrap();
    (trace.y_hat - y).powi(2)
}

#[test]
fn dropout_with_fixed_mask_matches_finite_differences() {
    let c = cfg(2, 0.4, false);
    let model = SoftSensor::init(c.clone(), 21).unwrap();
    let adj = model.graph().unwrap().adjacency;
    let (x, y) = random_batch(&c, 1, 21).remove(0);
    let mask_seed = 5;

    let mut rng = ChaCha8Rng::seed_from_u64(mask_seed);
    let trace = model.forward(&x, &adj, Phase::Train { rng: &mut rng }).unwrap();
    let mask = trace.dropout_mask.clone().expect("dropout active in training");
    assert!(mask.iter().any(|&m| m == 0.0), "mask should drop something");
    let grads = backward(&trace, &x, y, &model, &adj).unwrap();

    let analytic: Vec<Vec<f64>> = grads.tensors().into_iter().map(|(_, t)| t.to_vec()).collect();
    let mut probe = model.clone();
    let h = 1e-5;
    for (k, grad) in analytic.iter().enumerate() {
        for (idx, &a) in grad.iter().enumerate() {
            let orig = probe.tensors_mut()[k].1[idx];
            probe.tensors_mut()[k].1[idx] = orig + h;
            let up = masked_loss(&probe, &adj, &x, y, mask_seed);
            probe.tensors_mut()[k].1[idx] = orig - h;
            let down = masked_loss(&probe, &adj, &x, y, mask_seed);
            probe.tensors_mut()[k].1[idx] = orig;
            let n = (up - down) / (2.0 * h);
            let rel = (a - n).abs() / a.abs().max(n.abs()).max(1e-6);
            assert!(rel <= 1e-4, "tensor {k} entry {idx}: analytic {a}, numeric {n}");
        }
    }
    // dropped hidden units pass no gradient to the readout weights
    for (m, g) in mask.iter().zip(grads.readout_weight.iter()) {
        if *m == 0.0 {
            assert_eq!(*g, 0.0);
        }
    }
}

#[test]
fn accumulate_is_additive_over_samples() {
    let c = cfg(2, 0.0, false);
    let model = SoftSensor::init(c.clone(), 4).unwrap();
    let adj = model.graph().unwrap().adjacency;
    let batch = random_batch(&c, 2, 4);
    let mut together = Gradients::zeros(&c);
    let mut parts = Vec::new();
    for (x, y) in &batch {
        let trace = model.forward(x, &adj, Phase::Eval).unwrap();
        let upstream = 2.0 * (trace.y_hat - y);
        accumulate(&trace, x, upstream, &model.embeddings, &model.params, &adj, &mut together).unwrap();
        parts.push(backward(&trace, x, *y, &model, &adj).unwrap());
    }
    let mut summed = parts[0].clone();
    summed.add_assign(&parts[1]);
    for ((_, a), (_, b)) in together.tensors().iter().zip(summed.tensors().iter()) {
        for (u, v) in a.iter().zip(b.iter()) {
            assert!((u - v).abs() <= 1e-12 * u.abs().max(1.0));
        }
    }
}
