//! Mini-batch training with Adam, validation early stopping and JSON-lines logs.

mod adam;

use std::io::Write;
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::bench::{compute_metrics, MetricPair};
use crate::data::{stack_batch, MinMax, SampleWindow};
use crate::error::{Error, Result};
use crate::model::Forecaster;
use crate::nn::Mode;
use crate::tensor::{Precision, Scalar, Tensor};

pub use adam::{AdamState, BETA1, BETA2, EPSILON};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub lr: f64,
    pub weight_decay: f64,
    pub epochs: usize,
    pub batch_size: usize,
    /// Epochs without validation improvement before stopping.
    pub patience: usize,
    pub seed: u64,
    pub precision: Precision,
    /// Apply weight decay directly to the weights instead of adding it to
    /// the gradient.
    pub decoupled_decay: bool,
    /// Min-max scale inputs and targets using the training windows.
    pub min_max_scale: bool,
    /// Hard cap on optimizer steps across all epochs.
    pub max_steps: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            weight_decay: 5e-5,
            epochs: 200,
            batch_size: 64,
            patience: 10,
            seed: 0,
            precision: Precision::Standard,
            decoupled_decay: false,
            min_max_scale: false,
            max_steps: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Usage(m.to_string()));
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return bad("learning rate must be positive");
        }
        if !(self.weight_decay.is_finite() && self.weight_decay >= 0.0) {
            return bad("weight decay must be non-negative");
        }
        if self.epochs == 0 || self.batch_size == 0 || self.patience == 0 {
            return bad("epochs, batch size and patience must be positive");
        }
        if self.patience > self.epochs {
            return bad("patience cannot exceed the epoch count");
        }
        if self.max_steps == Some(0) {
            return bad("max_steps must be positive");
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    /// 1-based.
    pub epoch: usize,
    /// Mean batch MSE on the (possibly scaled) training targets.
    pub train_loss: f64,
    pub val: MetricPair,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub epochs: Vec<EpochRecord>,
    /// 1-based epoch whose weights were kept.
    pub best_epoch: usize,
    pub steps: usize,
    pub stopped_early: bool,
}

impl TrainHistory {
    pub fn best(&self) -> Option<&EpochRecord> {
        self.epochs.iter().find(|e| e.epoch == self.best_epoch)
    }
}

/// Raw-scale predictions for `windows`, flattened `N x 2 x rows x cols`.
pub fn predict_windows<T: Scalar, M: Forecaster<T> + ?Sized>(
    model: &mut M,
    windows: &[SampleWindow],
    batch_size: usize,
) -> Result<Vec<f64>> {
    let (seq_len, rows, cols) = model.window_shape();
    let scaling = model.scaling();
    let mut out = Vec::with_capacity(windows.len() * 2 * rows * cols);
    for chunk in windows.chunks(batch_size.max(1)) {
        let refs: Vec<&SampleWindow> = chunk.iter().collect();
        let (x, hours, _) = stack_batch::<T>(&refs, seq_len, rows, cols)?;
        let x = match scaling {
            Some(s) => s.scale_tensor(&x),
            None => x,
        };
        let y = model.predict(&x, &hours)?;
        out.extend(y.data().iter().map(|v| match scaling {
            Some(s) => s.unscale(v.as_f64()),
            None => v.as_f64(),
        }));
    }
    Ok(out)
}

pub fn targets_of(windows: &[SampleWindow]) -> Vec<f64> {
    windows.iter().flat_map(|w| w.target.iter().map(|&v| v as f64)).collect()
}

/// Test-style metrics of a model over `windows` on the raw count scale.
pub fn evaluate<T: Scalar, M: Forecaster<T> + ?Sized>(
    model: &mut M,
    windows: &[SampleWindow],
    batch_size: usize,
) -> Result<MetricPair> {
    let preds = predict_windows(model, windows, batch_size)?;
    compute_metrics(&preds, &targets_of(windows))
}

/// Splits a shuffled index list into batches; a trailing singleton batch is
/// folded into its predecessor because batch norm needs two samples.
fn batches(order: &[usize], size: usize) -> Vec<&[usize]> {
    let mut out: Vec<&[usize]> = order.chunks(size).collect();
    if out.len() >= 2 && out.last().is_some_and(|b| b.len() == 1) {
        let n = order.len();
        out.pop();
        let start = n - 1 - out.last().unwrap().len();
        *out.last_mut().unwrap() = &order[start..n];
    }
    out
}

fn unix_seconds() -> f64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs_f64()).unwrap_or(0.0)
}

/// Trains `model` in place and leaves it holding the weights of the epoch
/// with the lowest validation RMSE.
pub fn fit<T: Scalar, M: Forecaster<T> + ?Sized>(
    model: &mut M,
    train: &[SampleWindow],
    val: &[SampleWindow],
    cfg: &TrainConfig,
    log: Option<&mut dyn Write>,
) -> Result<TrainHistory> {
    let batch = cfg.batch_size;
    fit_with(model, train, val, cfg, log, &mut |m, _| evaluate(m, val, batch))
}

pub(crate) fn fit_with<T: Scalar, M: Forecaster<T> + ?Sized>(
    model: &mut M,
    train: &[SampleWindow],
    val: &[SampleWindow],
    cfg: &TrainConfig,
    mut log: Option<&mut dyn Write>,
    validate: &mut dyn FnMut(&mut M, usize) -> Result<MetricPair>,
) -> Result<TrainHistory> {
    cfg.validate()?;
    if train.is_empty() || val.is_empty() {
        return Err(Error::Usage("training and validation sets must be non-empty".into()));
    }
    let (seq_len, rows, cols) = model.window_shape();
    let scaling = if cfg.min_max_scale { Some(MinMax::fit(train)?) } else { None };
    model.set_scaling(scaling);

    let mut adam = AdamState::new(model.store());
    let mut history = TrainHistory::default();
    let mut best: Option<(f64, crate::nn::ParamStore<T>)> = None;
    let mut since_best = 0;
    let started = Instant::now();

    'epochs: for epoch in 1..=cfg.epochs {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ (epoch as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15));
        let mut order: Vec<usize> = (0..train.len()).collect();
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        let mut n_batches = 0;
        let mut capped = false;
        for (b, idx) in batches(&order, cfg.batch_size).into_iter().enumerate() {
            let refs: Vec<&SampleWindow> = idx.iter().map(|&i| &train[i]).collect();
            let (mut x, hours, mut y) = stack_batch::<T>(&refs, seq_len, rows, cols)?;
            if let Some(s) = scaling {
                x = s.scale_tensor(&x);
                y = s.scale_tensor(&y);
            }
            let diverged = |loss: f64| Error::Diverged { epoch, batch: b + 1, loss };
            let mut pass = match model.forward(&x, &hours, Mode::Train) {
                Err(Error::NonFinite { .. }) => return Err(diverged(f64::NAN)),
                other => other?,
            };
            let loss = match pass.backward_mse(&y) {
                Err(Error::NonFinite { .. }) => return Err(diverged(f64::NAN)),
                other => other?.as_f64(),
            };
            if !loss.is_finite() {
                return Err(diverged(loss));
            }
            adam.step(model.store_mut(), &pass.param_grads(), cfg.lr, cfg.weight_decay, cfg.decoupled_decay)?;
            if !model.store().all_finite() {
                return Err(diverged(loss));
            }
            loss_sum += loss;
            n_batches += 1;
            history.steps += 1;
            if cfg.max_steps.is_some_and(|m| history.steps >= m) {
                capped = true;
                break;
            }
        }
        let metrics = validate(model, epoch)?;
        let record = EpochRecord {
            epoch,
            train_loss: loss_sum / n_batches as f64,
            val: metrics,
        };
        log::debug!("epoch {epoch}: train {:.6} val rmse {:.6}", record.train_loss, metrics.rmse);
        if let Some(w) = log.as_deref_mut() {
            let line = serde_json::json!({
                "epoch": epoch,
                "train_loss": record.train_loss,
                "val_rmse": metrics.rmse,
                "val_mae": metrics.mae,
                "steps": history.steps,
                "elapsed_s": started.elapsed().as_secs_f64(),
                "timestamp": unix_seconds(),
            });
            writeln!(w, "{line}")?;
        }
        history.epochs.push(record);
        if best.as_ref().is_none_or(|(r, _)| metrics.rmse < *r) {
            best = Some((metrics.rmse, model.store().clone()));
            history.best_epoch = epoch;
            since_best = 0;
        } else {
            since_best += 1;
        }
        if capped {
            break 'epochs;
        }
        if since_best >= cfg.patience {
            history.stopped_early = epoch < cfg.epochs;
            break;
        }
    }
    if let Some((_, store)) = best {
        model.store_mut().copy_from(&store)?;
    }
    Ok(history)
}

/// Mean squared error of a single forward pass, for loss probes in tests and tools.
pub fn batch_loss<T: Scalar, M: Forecaster<T> + ?Sized>(
    model: &mut M,
    x: &Tensor<T>,
    hours: &[usize],
    y: &Tensor<T>,
    mode: Mode,
) -> Result<f64> {
    let pred = model.forward(x, hours, mode)?;
    let out = pred.output();
    if out.shape() != y.shape() {
        return Err(Error::shape("mse", format!("{:?} vs {:?}", out.shape(), y.shape())));
    }
    let n = out.len() as f64;
    Ok(out.data().iter().zip(y.data()).map(|(p, t)| (p.as_f64() - t.as_f64()).powi(2)).sum::<f64>() / n)
}
