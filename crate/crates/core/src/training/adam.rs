//! Adam with bias correction.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::SoftSensor;
use crate::training::backward::Gradients;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// First and second moment buffers, one per parameter tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub config: AdamConfig,
    pub step: u64,
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
}

impl AdamState {
    /// Zeroed moments shaped like `shapes`, given as flat tensor lengths.
    pub fn new(config: AdamConfig, shapes: &[usize]) -> Self {
        Self {
            config,
            step: 0,
            m: shapes.iter().map(|&n| vec![0.0; n]).collect(),
            v: shapes.iter().map(|&n| vec![0.0; n]).collect(),
        }
    }

    pub fn for_model(config: AdamConfig, model: &mut SoftSensor) -> Self {
        let shapes: Vec<usize> = model.tensors_mut().iter().map(|(_, t)| t.len()).collect();
        Self::new(config, &shapes)
    }
}

/// One element-wise Adam update of `params` at step `t` (1-based).
pub fn update_slice(
    params: &mut [f64],
    grads: &[f64],
    m: &mut [f64],
    v: &mut [f64],
    t: u64,
    cfg: &AdamConfig,
    lr: f64,
) {
    let bias1 = 1.0 - cfg.beta1.powi(t as i32);
    let bias2 = 1.0 - cfg.beta2.powi(t as i32);
    for (((p, &g), m), v) in params.iter_mut().zip(grads).zip(m.iter_mut()).zip(v.iter_mut()) {
        *m = cfg.beta1 * *m + (1.0 - cfg.beta1) * g;
        *v = cfg.beta2 * *v + (1.0 - cfg.beta2) * g * g;
        let m_hat = *m / bias1;
        let v_hat = *v / bias2;
        *p -= lr * m_hat / (v_hat.sqrt() + cfg.epsilon);
    }
}

/// Applies one Adam step to every tensor of `model`. Non-finite gradients
/// abort before anything is modified.
pub fn adam_step(model: &mut SoftSensor, grads: &Gradients, state: &mut AdamState, lr: f64) -> Result<()> {
    if !(lr > 0.0 && lr.is_finite()) {
        return Err(Error::Config(format!("learning rate must be positive, got {lr}")));
    }
    if let Some(name) = grads.first_non_finite() {
        return Err(Error::NonFiniteGradient(name));
    }
    let grad_tensors = grads.tensors();
    let mut params = model.tensors_mut();
    if params.len() != state.m.len()
        || params
            .iter()
            .zip(&grad_tensors)
            .zip(&state.m)
            .any(|(((_, p), (_, g)), m)| p.len() != g.len() || p.len() != m.len())
    {
        return Err(Error::shape("adam step", "matching tensors", "mismatched tensor sizes"));
    }
    state.step += 1;
    let t = state.step;
    let cfg = state.config;
    for (k, ((_, p), (_, g))) in params.iter_mut().zip(&grad_tensors).enumerate() {
        update_slice(p, g, &mut state.m[k], &mut state.v[k], t, &cfg, lr);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_first_step_is_noop() {
        let mut p = vec![0.5, -1.0];
        let (mut m, mut v) = (vec![0.0; 2], vec![0.0; 2]);
        update_slice(&mut p, &[0.0, 0.0], &mut m, &mut v, 1, &AdamConfig::default(), 0.001);
        assert_eq!(p, vec![0.5, -1.0]);
    }

    #[test]
    fn textbook_recurrence() {
        // hand-rolled reference, g = 1 then g = -0.5
        let cfg = AdamConfig::default();
        let lr = 0.001;
        let mut p = [2.0];
        let (mut m, mut v) = ([0.0], [0.0]);
        update_slice(&mut p, &[1.0], &mut m, &mut v, 1, &cfg, lr);
        // m_hat = 1, v_hat = 1 => step = lr / (1 + eps)
        let expect1 = 2.0 - 0.001 / (1.0 + 1e-8);
        assert!((p[0] - expect1).abs() < 1e-15);

        update_slice(&mut p, &[-0.5], &mut m, &mut v, 2, &cfg, lr);
        let m2 = 0.9 * 0.1 + 0.1 * -0.5;
        let v2 = 0.999 * 0.001 + 0.001 * 0.25;
        let m_hat = m2 / (1.0 - 0.81);
        let v_hat = v2 / (1.0 - 0.999f64 * 0.999);
        let expect2 = expect1 - lr * m_hat / (v_hat.sqrt() + 1e-8);
        assert!((p[0] - expect2).abs() < 1e-15);
    }

    #[test]
    fn order_of_elements_does_not_matter() {
        let cfg = AdamConfig::default();
        let grads = [0.3, -2.0, 1e-4, 7.5];
        let mut a = vec![1.0, 2.0, 3.0, 4.0];
        let (mut ma, mut va) = (vec![0.0; 4], vec![0.0; 4]);
        update_slice(&mut a, &grads, &mut ma, &mut va, 1, &cfg, 0.01);

        let rev = |s: &[f64]| s.iter().rev().copied().collect::<Vec<_>>();
        let mut b = rev(&[1.0, 2.0, 3.0, 4.0]);
        let (mut mb, mut vb) = (vec![0.0; 4], vec![0.0; 4]);
        update_slice(&mut b, &rev(&grads), &mut mb, &mut vb, 1, &cfg, 0.01);
        assert_eq!(a, rev(&b));
    }

    #[test]
    fn identical_tensors_identical_updates() {
        let cfg = AdamConfig::default();
        let mut a = vec![0.25; 3];
        let mut b = vec![0.25; 3];
        let g = [0.1, 0.2, -0.3];
        let (mut m1, mut v1, mut m2, mut v2) = (vec![0.0; 3], vec![0.0; 3], vec![0.0; 3], vec![0.0; 3]);
        for t in 1..=5 {
            update_slice(&mut a, &g, &mut m1, &mut v1, t, &cfg, 0.01);
            update_slice(&mut b, &g, &mut m2, &mut v2, t, &cfg, 0.01);
        }
        assert_eq!(a, b);
        assert!(v1.iter().all(|&v| v >= 0.0));
    }
}
