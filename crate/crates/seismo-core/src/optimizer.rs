//! MSE loss, the Adam update rule, and the mini-batch training loop.
//!
//! Batch gradients are averaged (not summed) so the learning rate is robust
//! to batch-size changes. Sequences are backpropagated in full — no
//! truncation. Per-sample forward/backward passes inside a batch run in
//! parallel; gradient accumulation, clipping, and the Adam update are a
//! serial barrier per batch, summed in sample order so training is
//! bit-reproducible for a fixed seed.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::Dataset;
use crate::network::{Model, NetworkError};

#[derive(Debug, Error)]
pub enum OptimizerError {
    #[error("length mismatch: prediction has {pred} values, target has {target}")]
    LengthMismatch { pred: usize, target: usize },
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("training diverged at epoch {epoch} (non-finite loss)")]
    Diverged { epoch: usize },
    #[error("invalid training configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Network(#[from] NetworkError),
}

/// Mean squared error and its gradient `2·(pred − target)/n`.
pub fn mse_loss(pred: &[f64], target: &[f64]) -> Result<(f64, Vec<f64>), OptimizerError> {
    if pred.len() != target.len() {
        return Err(OptimizerError::LengthMismatch {
            pred: pred.len(),
            target: target.len(),
        });
    }
    let n = pred.len() as f64;
    let mut loss = 0.0;
    let grad: Vec<f64> = pred
        .iter()
        .zip(target)
        .map(|(p, t)| {
            let d = p - t;
            loss += d * d;
            2.0 * d / n
        })
        .collect();
    Ok((loss / n, grad))
}

/// Adam moment estimates and step counter.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u64,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl AdamState {
    pub fn new(n_params: usize, lr: f64, beta1: f64, beta2: f64, epsilon: f64) -> Self {
        AdamState {
            m: vec![0.0; n_params],
            v: vec![0.0; n_params],
            t: 0,
            lr,
            beta1,
            beta2,
            epsilon,
        }
    }
}

/// One bias-corrected Adam update, in place:
/// `θ ← θ − lr·m̂/(√v̂ + ε)`.
pub fn adam_step(
    params: &mut [f64],
    grads: &[f64],
    state: &mut AdamState,
) -> Result<(), OptimizerError> {
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(OptimizerError::ShapeMismatch(format!(
            "params {}, grads {}, state {}",
            params.len(),
            grads.len(),
            state.m.len()
        )));
    }
    state.t += 1;
    let b1 = state.beta1;
    let b2 = state.beta2;
    let bc1 = 1.0 - b1.powi(state.t as i32);
    let bc2 = 1.0 - b2.powi(state.t as i32);
    for i in 0..params.len() {
        let g = grads[i];
        state.m[i] = b1 * state.m[i] + (1.0 - b1) * g;
        state.v[i] = b2 * state.v[i] + (1.0 - b2) * g * g;
        let m_hat = state.m[i] / bc1;
        let v_hat = state.v[i] / bc2;
        params[i] -= state.lr * m_hat / (v_hat.sqrt() + state.epsilon);
    }
    Ok(())
}

/// Training hyperparameters.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub max_epochs: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    /// Early-stopping patience on the validation MSE.
    pub patience: usize,
    /// Global-norm gradient clip; `None` disables clipping.
    pub grad_clip_norm: Option<f64>,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 32,
            max_epochs: 300,
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            patience: 20,
            grad_clip_norm: Some(5.0),
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), OptimizerError> {
        if self.batch_size == 0 {
            return Err(OptimizerError::InvalidConfig("batch_size must be >= 1".into()));
        }
        if self.patience == 0 {
            return Err(OptimizerError::InvalidConfig("patience must be >= 1".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(OptimizerError::InvalidConfig(
                "learning_rate must be positive".into(),
            ));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(OptimizerError::InvalidConfig(
                "beta1/beta2 must lie in [0, 1)".into(),
            ));
        }
        if !(self.epsilon > 0.0) {
            return Err(OptimizerError::InvalidConfig("epsilon must be positive".into()));
        }
        if let Some(clip) = self.grad_clip_norm {
            if !(clip > 0.0) {
                return Err(OptimizerError::InvalidConfig(
                    "grad_clip_norm must be positive when set".into(),
                ));
            }
        }
        Ok(())
    }
}

/// Loss trajectory of one epoch.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_mse: f64,
    pub val_mse: f64,
}

/// Outcome of [`train`]: the best-validation model and the loss history.
#[derive(Clone, Debug)]
pub struct TrainResult {
    pub model: Model,
    pub history: Vec<EpochStats>,
    pub best_epoch: usize,
    pub best_val_mse: f64,
}

/// Writes the history as CSV (`epoch,train_mse,val_mse`).
pub fn write_history_csv<W: std::io::Write>(
    history: &[EpochStats],
    mut w: W,
) -> std::io::Result<()> {
    writeln!(w, "epoch,train_mse,val_mse")?;
    for e in history {
        writeln!(w, "{},{},{}", e.epoch, e.train_mse, e.val_mse)?;
    }
    Ok(())
}

/// Mean forward MSE over a dataset (normalized-target space).
pub fn evaluate_mse(model: &Model, data: &Dataset) -> f64 {
    if data.is_empty() {
        return f64::NAN;
    }
    let losses: Vec<f64> = data
        .samples
        .par_iter()
        .map(|s| {
            let (pred, _) = model.forward(&s.input_gm, s.input_struct);
            let n = pred.len() as f64;
            pred.iter()
                .zip(&s.target)
                .map(|(p, t)| (p - t) * (p - t))
                .sum::<f64>()
                / n
        })
        .collect();
    losses.iter().sum::<f64>() / losses.len() as f64
}

/// Trains with shuffled mini-batches, Adam, optional gradient clipping, and
/// validation-based early stopping. Returns the checkpoint with the best
/// validation loss seen, which is not necessarily the last epoch's.
pub fn train(
    model: Model,
    train_set: &Dataset,
    val_set: &Dataset,
    cfg: &TrainConfig,
) -> Result<TrainResult, OptimizerError> {
    cfg.validate()?;
    if cfg.max_epochs == 0 {
        return Ok(TrainResult {
            model,
            history: Vec::new(),
            best_epoch: 0,
            best_val_mse: f64::INFINITY,
        });
    }
    if train_set.is_empty() || val_set.is_empty() {
        return Err(OptimizerError::InvalidConfig(
            "train and validation sets must be non-empty".into(),
        ));
    }

    let mut work = model;
    let mut flat = work.to_flat();
    let mut adam = AdamState::new(flat.len(), cfg.learning_rate, cfg.beta1, cfg.beta2, cfg.epsilon);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);

    let mut history = Vec::with_capacity(cfg.max_epochs);
    let mut best_val = f64::INFINITY;
    let mut best_flat = flat.clone();
    let mut best_epoch = 0usize;
    let mut stale = 0usize;

    let mut order: Vec<usize> = (0..train_set.len()).collect();

    for epoch in 1..=cfg.max_epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss_sum = 0.0;

        for batch in order.chunks(cfg.batch_size) {
            let per_sample: Vec<(f64, Vec<f64>)> = batch
                .par_iter()
                .map(|&idx| {
                    let s = &train_set.samples[idx];
                    let (pred, cache) = work.forward(&s.input_gm, s.input_struct);
                    let (loss, dpred) =
                        mse_loss(&pred, &s.target).expect("targets sized like predictions");
                    let grads = work
                        .backward(&cache, &dpred)
                        .expect("cache from matching forward");
                    (loss, grads.to_flat())
                })
                .collect();

            let bsize = batch.len() as f64;
            let mut grad_acc = vec![0.0; flat.len()];
            for (loss, g) in &per_sample {
                epoch_loss_sum += loss;
                for (acc, gi) in grad_acc.iter_mut().zip(g) {
                    *acc += gi;
                }
            }
            for g in &mut grad_acc {
                *g /= bsize;
            }

            if let Some(clip) = cfg.grad_clip_norm {
                let norm = grad_acc.iter().map(|g| g * g).sum::<f64>().sqrt();
                if norm > clip {
                    let scale = clip / norm;
                    for g in &mut grad_acc {
                        *g *= scale;
                    }
                }
            }

            adam_step(&mut flat, &grad_acc, &mut adam)?;
            work.copy_from_flat(&flat);
        }

        let train_mse = epoch_loss_sum / train_set.len() as f64;
        let val_mse = evaluate_mse(&work, val_set);
        if !train_mse.is_finite() || !val_mse.is_finite() {
            return Err(OptimizerError::Diverged { epoch });
        }
        history.push(EpochStats {
            epoch,
            train_mse,
            val_mse,
        });
        log::debug!("epoch {epoch}: train {train_mse:.3e}, val {val_mse:.3e}");

        if val_mse < best_val {
            best_val = val_mse;
            best_flat.copy_from_slice(&flat);
            best_epoch = epoch;
            stale = 0;
        } else {
            stale += 1;
            if stale >= cfg.patience {
                log::info!("early stop at epoch {epoch} (best epoch {best_epoch})");
                break;
            }
        }
    }

    work.copy_from_flat(&best_flat);
    Ok(TrainResult {
        model: work,
        history,
        best_epoch,
        best_val_mse: best_val,
    })
}
