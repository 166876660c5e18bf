//! Synthetic process data with a known sensor-to-target dependency.
//!
//! Every input sensor is an AR(1) process plus a slow sinusoid. Driver
//! sensors also share a common latent AR(1) mode, as co-moving process
//! variables do. The target is a lagged function of the drivers plus
//! Gaussian noise, so which inputs matter is known exactly.

use std::path::Path;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::data::{write_csv, ProcessDataset};
use crate::error::{Error, Result};

pub const TARGET_TAG: &str = "y";

const LATENT_PHI: f64 = 0.97;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthSpec {
    /// Number of input sensors `N`.
    pub sensors: usize,
    /// Number of timesteps `T`.
    pub length: usize,
    /// 0-based indices of the sensors that drive the target.
    pub drivers: Vec<usize>,
    /// Delay between a driver reading and its effect on the target.
    pub lag: usize,
    /// Noise standard deviation relative to the noiseless target's.
    pub noise: f64,
    /// Pass drivers through `tanh` before mixing.
    #[serde(default)]
    pub nonlinear: bool,
    /// Loading of the shared latent mode on every driver.
    #[serde(default = "default_coupling")]
    pub coupling: f64,
    pub seed: u64,
}

fn default_coupling() -> f64 {
    1.0
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        if self.sensors < 2 {
            return Err(Error::Config("synthetic spec needs at least 2 sensors".into()));
        }
        if self.length <= self.lag + 1 {
            return Err(Error::Config("synthetic length must exceed lag + 1".into()));
        }
        if self.drivers.is_empty() {
            return Err(Error::Config("synthetic spec needs at least one driver".into()));
        }
        let mut seen = vec![false; self.sensors];
        for &d in &self.drivers {
            if d >= self.sensors {
                return Err(Error::Config(format!(
                    "driver {d} out of range for {} sensors",
                    self.sensors
                )));
            }
            if std::mem::replace(&mut seen[d], true) {
                return Err(Error::Config(format!("driver {d} listed twice")));
            }
        }
        if !(self.noise >= 0.0 && self.noise.is_finite()) {
            return Err(Error::Config("noise must be a finite non-negative number".into()));
        }
        if !self.coupling.is_finite() {
            return Err(Error::Config("coupling must be finite".into()));
        }
        Ok(())
    }

    pub fn sensor_tag(i: usize) -> String {
        format!("s{i}")
    }
}

/// Ground-truth description written next to a synthetic dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthTruth {
    pub drivers: Vec<usize>,
    pub driver_tags: Vec<String>,
    pub coefficients: Vec<f64>,
    pub lag: usize,
    pub nonlinear: bool,
    pub noise: f64,
    pub coupling: f64,
    pub target_tag: String,
    pub seed: u64,
}

/// Generates a `T x (N + 1)` dataset; the target is the last column.
pub fn generate(spec: &SynthSpec) -> Result<(ProcessDataset, SynthTruth)> {
    spec.validate()?;
    let (n, t_len) = (spec.sensors, spec.length);
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut values = Array2::<f64>::zeros((t_len, n + 1));

    for i in 0..n {
        let phi: f64 = rng.random_range(0.85..0.98);
        let innovation = (1.0 - phi * phi).sqrt();
        let period: f64 = rng.random_range(40.0..200.0);
        let phase: f64 = rng.random_range(0.0..std::f64::consts::TAU);
        let amplitude: f64 = rng.random_range(0.5..1.5);
        let offset: f64 = rng.random_range(-5.0..5.0);
        let mut state: f64 = StandardNormal.sample(&mut rng);
        for t in 0..t_len {
            let eps: f64 = StandardNormal.sample(&mut rng);
            state = phi * state + innovation * eps;
            let wave = amplitude * (std::f64::consts::TAU * t as f64 / period + phase).sin();
            values[[t, i]] = offset + state + wave;
        }
    }

    let mut latent: f64 = StandardNormal.sample(&mut rng);
    for t in 0..t_len {
        let eps: f64 = StandardNormal.sample(&mut rng);
        latent = LATENT_PHI * latent + (1.0 - LATENT_PHI * LATENT_PHI).sqrt() * eps;
        for &d in &spec.drivers {
            values[[t, d]] += spec.coupling * latent;
        }
    }

    let coefficients: Vec<f64> = spec
        .drivers
        .iter()
        .map(|_| {
            let mag: f64 = rng.random_range(0.5..1.5);
            if rng.random_bool(0.5) {
                mag
            } else {
                -mag
            }
        })
        .collect();
    let clean: Vec<f64> = (0..t_len)
        .map(|t| {
            let src = t.saturating_sub(spec.lag);
            spec.drivers
                .iter()
                .zip(&coefficients)
                .map(|(&d, c)| {
                    let v = values[[src, d]];
                    c * if spec.nonlinear { v.tanh() } else { v }
                })
                .sum()
        })
        .collect();
    let mean = clean.iter().sum::<f64>() / t_len as f64;
    let std = (clean.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / t_len as f64).sqrt();
    for (t, c) in clean.iter().enumerate() {
        let eps: f64 = StandardNormal.sample(&mut rng);
        values[[t, n]] = c + spec.noise * std * eps;
    }

    let mut tags: Vec<String> = (0..n).map(SynthSpec::sensor_tag).collect();
    tags.push(TARGET_TAG.to_string());
    let tag_refs: Vec<&str> = tags.iter().map(String::as_str).collect();
    let ds = ProcessDataset::from_tags(values, &tag_refs)?;
    let truth = SynthTruth {
        drivers: spec.drivers.clone(),
        driver_tags: spec.drivers.iter().map(|&d| SynthSpec::sensor_tag(d)).collect(),
        coefficients,
        lag: spec.lag,
        nonlinear: spec.nonlinear,
        noise: spec.noise,
        coupling: spec.coupling,
        target_tag: TARGET_TAG.to_string(),
        seed: spec.seed,
    };
    Ok((ds, truth))
}

/// Writes `data_path` and a `<data_path>.truth.json` file beside it.
pub fn write(spec: &SynthSpec, data_path: &Path) -> Result<SynthTruth> {
    let (ds, truth) = generate(spec)?;
    write_csv(&ds, data_path)?;
    let truth_path = truth_path(data_path);
    std::fs::write(&truth_path, serde_json::to_string_pretty(&truth)?)
        .map_err(|e| Error::io(&truth_path, e))?;
    Ok(truth)
}

pub fn truth_path(data_path: &Path) -> std::path::PathBuf {
    let mut name = data_path.file_name().unwrap_or_default().to_os_string();
    name.push(".truth.json");
    data_path.with_file_name(name)
}
