//! Mini-batch training with Adam, periodic graph refresh and early
//! stopping, plus dropout-free evaluation.
//!
//! Within a batch, windows are processed in fixed-size chunks that may run
//! on different threads; chunk gradients are summed in chunk order so the
//! result does not depend on the thread count.

pub mod adam;
pub mod backward;
pub mod config;

use std::io::Write;
use std::ops::Range;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::checkpoint::{Checkpoint, CHECKPOINT_FORMAT};
use crate::data::{
    apply_normalizer, fit_normalizer, make_windows, split_chronological, split_sizes,
    NormalizationStats, ProcessDataset, WindowSample,
};
use crate::error::{Error, Result};
use crate::graph::Adjacency;
use crate::metrics::MetricsReport;
use crate::model::{Phase, SoftSensor};

pub use adam::{adam_step, AdamConfig, AdamState};
pub use backward::{backward, Gradients};
pub use config::{GraphRefresh, TrainConfig};

const CHUNK: usize = 8;
const DROPOUT_SALT: u64 = 0x9e37_79b9_7f4a_7c15;

/// Normalized windows split chronologically, with the statistics used.
#[derive(Debug, Clone)]
pub struct PreparedData {
    pub target: usize,
    pub variable_tags: Vec<String>,
    pub stats: NormalizationStats,
    pub train: Vec<WindowSample>,
    pub val: Vec<WindowSample>,
    pub test: Vec<WindowSample>,
}

impl PreparedData {
    pub fn num_nodes(&self) -> usize {
        self.variable_tags.len() - 1
    }
}

/// Windows the dataset, fits min-max statistics on the rows covered by the
/// training windows and normalizes everything with them.
pub fn prepare(ds: &ProcessDataset, cfg: &TrainConfig, target: usize) -> Result<PreparedData> {
    cfg.validate()?;
    let w = cfg.window;
    if w == 0 || w >= ds.len() {
        return Err(Error::InvalidWindow { window: w, len: ds.len() });
    }
    if target >= ds.num_variables() {
        return Err(Error::IndexOutOfRange {
            what: "target variable",
            index: target,
            size: ds.num_variables(),
        });
    }
    let (n_train, _, _) = split_sizes(ds.len() - w, cfg.fractions())?;
    // training windows end at times w..w+n_train
    let stats = fit_normalizer(ds, 0..w + n_train)?;
    let normalized = apply_normalizer(ds, &stats)?;
    let samples = make_windows(&normalized, target, w)?;
    let (train, val, test) = split_chronological(samples, cfg.fractions())?;
    Ok(PreparedData {
        target,
        variable_tags: ds.tags(),
        stats,
        train,
        val,
        test,
    })
}

/// One line of the training history.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_mse: f64,
    pub val_mse: f64,
    pub lr: f64,
    pub wall_time: f64,
}

/// Writes `epoch,train_mse,val_mse,lr,wall_time`.
pub fn write_history<W: Write>(out: W, history: &[EpochRecord]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for rec in history {
        w.serialize(rec)?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

/// Tracks the best validation loss and decides when to stop.
#[derive(Debug, Clone)]
pub struct EarlyStopping {
    patience: usize,
    best: f64,
    best_epoch: usize,
    stale: usize,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        Self {
            patience,
            best: f64::INFINITY,
            best_epoch: 0,
            stale: 0,
        }
    }

    /// Records a validation loss; returns `true` if it is a new best.
    pub fn observe(&mut self, epoch: usize, val: f64) -> bool {
        if val < self.best {
            self.best = val;
            self.best_epoch = epoch;
            self.stale = 0;
            true
        } else {
            self.stale += 1;
            false
        }
    }

    pub fn should_stop(&self) -> bool {
        self.stale >= self.patience
    }

    pub fn best(&self) -> (usize, f64) {
        (self.best_epoch, self.best)
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Model from the epoch with the lowest validation MSE.
    pub checkpoint: Checkpoint,
    pub history: Vec<EpochRecord>,
    pub stopped_early: bool,
}

fn dropout_rng(seed: u64, epoch: usize, sample: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ DROPOUT_SALT);
    rng.set_stream(((epoch as u64) << 32) | sample as u64);
    rng
}

/// Mean-loss gradients over `samples`, plus their summed squared error.
fn batch_gradients(
    model: &SoftSensor,
    adjacency: &Adjacency,
    samples: &[WindowSample],
    first_index: usize,
    epoch: usize,
    seed: u64,
) -> Result<(Gradients, f64)> {
    let scale = 2.0 / samples.len() as f64;
    let parts: Vec<(Gradients, f64)> = samples
        .par_chunks(CHUNK)
        .enumerate()
        .map(|(c, chunk)| -> Result<(Gradients, f64)> {
            let mut grads = Gradients::zeros(&model.config);
            let mut sq = 0.0;
            for (offset, s) in chunk.iter().enumerate() {
                let mut rng = dropout_rng(seed, epoch, first_index + c * CHUNK + offset);
                let trace = model.forward(&s.x, adjacency, Phase::Train { rng: &mut rng })?;
                let residual = trace.y_hat - s.y;
                sq += residual * residual;
                backward::accumulate(
                    &trace,
                    &s.x,
                    scale * residual,
                    &model.embeddings,
                    &model.params,
                    adjacency,
                    &mut grads,
                )?;
            }
            Ok((grads, sq))
        })
        .collect::<Result<_>>()?;
    let mut iter = parts.into_iter();
    let (mut total, mut sq) = iter.next().expect("batch is non-empty");
    for (g, s) in iter {
        total.add_assign(&g);
        sq += s;
    }
    Ok((total, sq))
}

/// Dropout-free predictions in normalized units, in sample order.
pub fn predict_normalized(
    model: &SoftSensor,
    adjacency: &Adjacency,
    samples: &[WindowSample],
) -> Result<Vec<f64>> {
    samples
        .par_iter()
        .map(|s| model.predict_one(&s.x, adjacency))
        .collect()
}

fn batch_ranges(n: usize, size: usize) -> Vec<Range<usize>> {
    (0..n).step_by(size).map(|s| s..(s + size).min(n)).collect()
}

/// Trains on prepared windows. Batches are contiguous slices of the
/// training windows, visited in a freshly shuffled order every epoch.
pub fn fit(data: &PreparedData, cfg: &TrainConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    let model_cfg = cfg.model_config(data.num_nodes())?;
    let mut model = SoftSensor::init(model_cfg, cfg.seed)?;
    // start the output at the mean training target
    model.params.readout_bias = data.train.iter().map(|s| s.y).sum::<f64>() / data.train.len() as f64;
    let mut state = AdamState::for_model(cfg.adam(), &mut model);
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    shuffle_rng.set_stream(2);

    let batches = batch_ranges(data.train.len(), cfg.batch_size);
    let val_y: Vec<f64> = data.val.iter().map(|s| s.y).collect();
    let mut stopper = EarlyStopping::new(cfg.patience);
    let mut best_model = model.clone();
    let mut history = Vec::new();
    let mut stopped_early = false;

    for epoch in 1..=cfg.max_epochs {
        let started = Instant::now();
        let mut order: Vec<usize> = (0..batches.len()).collect();
        order.shuffle(&mut shuffle_rng);
        let mut adjacency = model.graph()?.adjacency;
        let mut sq_total = 0.0;
        for (pos, &b) in order.iter().enumerate() {
            if cfg.graph_refresh == GraphRefresh::PerBatch && pos > 0 {
                adjacency = model.graph()?.adjacency;
            }
            let range = batches[b].clone();
            let (mut grads, sq) = batch_gradients(
                &model,
                &adjacency,
                &data.train[range.clone()],
                range.start,
                epoch,
                cfg.seed,
            )?;
            if !sq.is_finite() {
                return Err(Error::NonFiniteLoss { epoch, batch: pos });
            }
            if let Some(max_norm) = cfg.clip_norm {
                grads.clip_global_norm(max_norm);
            }
            adam_step(&mut model, &grads, &mut state, cfg.learning_rate)?;
            sq_total += sq;
        }
        let train_mse = sq_total / data.train.len() as f64;

        let eval_graph = model.graph()?.adjacency;
        let val_pred = predict_normalized(&model, &eval_graph, &data.val)?;
        let val_mse = crate::model::mse_loss(&val_y, &val_pred)?;
        if !val_mse.is_finite() {
            return Err(Error::NonFiniteLoss { epoch, batch: batches.len() });
        }
        history.push(EpochRecord {
            epoch,
            train_mse,
            val_mse,
            lr: cfg.learning_rate,
            wall_time: started.elapsed().as_secs_f64(),
        });
        if stopper.observe(epoch, val_mse) {
            best_model = model.clone();
        }
        if stopper.should_stop() {
            stopped_early = epoch < cfg.max_epochs;
            break;
        }
    }

    let (best_epoch, best_val_mse) = stopper.best();
    let checkpoint = Checkpoint {
        format: CHECKPOINT_FORMAT.to_string(),
        model: best_model,
        target: data.target,
        target_tag: data.variable_tags[data.target].clone(),
        variable_tags: data.variable_tags.clone(),
        normalization: data.stats.clone(),
        train_config: cfg.clone(),
        best_epoch,
        best_val_mse,
    };
    Ok(TrainOutcome {
        checkpoint,
        history,
        stopped_early,
    })
}

/// Prepares the dataset and trains a model for `target`.
pub fn train(ds: &ProcessDataset, cfg: &TrainConfig, target: usize) -> Result<(TrainOutcome, PreparedData)> {
    let data = prepare(ds, cfg, target)?;
    let outcome = fit(&data, cfg)?;
    Ok((outcome, data))
}

/// One prediction in the target's original units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub t_index: usize,
    pub y_true: f64,
    pub y_hat: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub report: MetricsReport,
    pub predictions: Vec<Prediction>,
}

/// Writes `t_index,y_true,y_hat`.
pub fn write_predictions<W: Write>(out: W, predictions: &[Prediction]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for p in predictions {
        w.serialize(p)?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

pub fn read_predictions<R: std::io::Read>(input: R) -> Result<Vec<Prediction>> {
    let mut r = csv::Reader::from_reader(input);
    r.deserialize().map(|p| p.map_err(Error::from)).collect()
}

fn check_samples(ckpt: &Checkpoint, samples: &[WindowSample]) -> Result<()> {
    let cfg = &ckpt.model.config;
    if let Some(s) = samples.iter().find(|s| s.x.dim() != (cfg.num_nodes, cfg.window)) {
        return Err(Error::shape(
            "window sample",
            format!("{}x{}", cfg.num_nodes, cfg.window),
            format!("{}x{}", s.x.nrows(), s.x.ncols()),
        ));
    }
    Ok(())
}

/// Predictions for normalized windows, mapped back to original units.
pub fn predict(ckpt: &Checkpoint, samples: &[WindowSample]) -> Result<Vec<Prediction>> {
    check_samples(ckpt, samples)?;
    let adjacency = ckpt.model.graph()?.adjacency;
    let y_hat = predict_normalized(&ckpt.model, &adjacency, samples)?;
    Ok(samples
        .iter()
        .zip(y_hat)
        .map(|(s, p)| Prediction {
            t_index: s.t_index,
            y_true: ckpt.denormalize_target(s.y),
            y_hat: ckpt.denormalize_target(p),
        })
        .collect())
}

/// Dropout-free evaluation on normalized windows; metrics are computed in
/// the target's original units.
pub fn evaluate(ckpt: &Checkpoint, samples: &[WindowSample]) -> Result<Evaluation> {
    if samples.is_empty() {
        return Err(Error::Empty("evaluation samples"));
    }
    let predictions = predict(ckpt, samples)?;
    let y: Vec<f64> = predictions.iter().map(|p| p.y_true).collect();
    let y_hat: Vec<f64> = predictions.iter().map(|p| p.y_hat).collect();
    let report = MetricsReport::compute(&y, &y_hat)?;
    Ok(Evaluation { report, predictions })
}
