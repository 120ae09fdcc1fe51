use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::Graph;
use crate::dataflow::{batch_tensors, DatasetSplit, NormalizationParams, Sample};
use crate::error::{Error, Result};
use crate::models::Model;
use crate::scalar::Scalar;
use crate::training::metrics::{metrics, multitask_loss, MetricsReport};
use crate::training::optim::{Adam, AdamConfig};

/// Samples per forward pass when no gradient is needed.
pub const EVAL_BATCH: usize = 256;

/// Optimization settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_epsilon: f64,
    pub seed: u64,
    pub shuffle: bool,
    /// Stop after this many epochs without a new best validation loss;
    /// 0 disables early stopping.
    pub early_stop_patience: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        let adam = AdamConfig::default();
        Self {
            epochs: 100,
            batch_size: 4,
            learning_rate: adam.learning_rate,
            beta1: adam.beta1,
            beta2: adam.beta2,
            adam_epsilon: adam.epsilon,
            seed: 0,
            shuffle: true,
            early_stop_patience: 20,
        }
    }
}

impl TrainConfig {
    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            learning_rate: self.learning_rate,
            beta1: self.beta1,
            beta2: self.beta2,
            epsilon: self.adam_epsilon,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be at least 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be at least 1".into()));
        }
        self.adam().validate()
    }
}

/// Per-epoch losses (normalized units) and timings.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TrainHistory {
    pub train_loss: Vec<f64>,
    pub val_loss: Vec<f64>,
    /// Seconds spent in each epoch.
    pub wall_time: Vec<f64>,
    /// Epoch (0-based) whose parameters the returned model carries.
    pub best_epoch: usize,
}

impl TrainHistory {
    pub fn epochs(&self) -> usize {
        self.train_loss.len()
    }

    /// Same losses and best epoch, ignoring timings.
    pub fn same_trajectory(&self, other: &Self) -> bool {
        self.train_loss == other.train_loss && self.val_loss == other.val_loss && self.best_epoch == other.best_epoch
    }

    /// `epoch,train_loss,val_loss[,seconds]`. Leave timings out when the
    /// file must be reproducible byte for byte.
    pub fn to_csv(&self, with_timing: bool) -> String {
        let mut out = String::from("epoch,train_loss,val_loss");
        if with_timing {
            out.push_str(",seconds");
        }
        out.push('\n');
        for e in 0..self.epochs() {
            out.push_str(&format!("{e},{},{}", self.train_loss[e], self.val_loss[e]));
            if with_timing {
                out.push_str(&format!(",{:.6}", self.wall_time[e]));
            }
            out.push('\n');
        }
        out
    }
}

/// One optimizer step on `batch`; returns the loss before the update.
pub fn train_step<T: Scalar>(model: &mut Model<T>, opt: &mut Adam, batch: &[&Sample]) -> Result<f64> {
    let (x, y) = batch_tensors::<T>(batch)?;
    let mut g = Graph::new();
    let p = model.params().bind(&mut g);
    let xv = g.constant(x);
    let yv = g.constant(y);
    let trace = model.forward(&mut g, &p, xv)?;
    let loss = multitask_loss(&mut g, trace.output, yv)?;
    let value = g.value(loss)[0].as_f64();
    if !value.is_finite() {
        return Ok(value);
    }
    g.backward(loss)?;
    let params = model.params_mut();
    params.zero_grad();
    params.accumulate_grads(&g, &p)?;
    opt.step(params)?;
    Ok(value)
}

/// Mean per-sample loss over `samples` without touching gradients.
pub fn dataset_loss<T: Scalar>(model: &Model<T>, samples: &[Sample]) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::Usage("loss of an empty sample set".into()));
    }
    let mut total = 0.0;
    for chunk in samples.chunks(EVAL_BATCH) {
        let refs: Vec<&Sample> = chunk.iter().collect();
        let (x, y) = batch_tensors::<T>(&refs)?;
        let mut g = Graph::new();
        let p = model.params().bind_frozen(&mut g);
        let xv = g.constant(x);
        let yv = g.constant(y);
        let trace = model.forward(&mut g, &p, xv)?;
        let loss = multitask_loss(&mut g, trace.output, yv)?;
        total += g.value(loss)[0].as_f64() * chunk.len() as f64;
    }
    Ok(total / samples.len() as f64)
}

/// Trains on `split.train` with Adam, scoring `split.validation` after
/// every epoch. The returned model carries the parameters of the best
/// validation epoch and the split's normalization bounds.
pub fn train<T: Scalar>(model: Model<T>, split: &DatasetSplit, cfg: &TrainConfig) -> Result<(Model<T>, TrainHistory)> {
    train_with(model, split, cfg, |_, _| {})
}

/// [`train`] with a callback receiving `(epoch, history so far)` after
/// each epoch.
pub fn train_with<T: Scalar>(
    mut model: Model<T>,
    split: &DatasetSplit,
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(usize, &TrainHistory),
) -> Result<(Model<T>, TrainHistory)> {
    cfg.validate()?;
    if split.window != model.window() {
        return Err(Error::dim(
            "train",
            format!("data window {} vs model window {}", split.window, model.window()),
        ));
    }
    if split.train.is_empty() {
        return Err(Error::Config("training split is empty".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut opt = Adam::new(cfg.adam(), model.params())?;
    let mut order: Vec<usize> = (0..split.train.len()).collect();
    let mut history = TrainHistory::default();
    let mut best = (f64::INFINITY, model.params().clone());

    for epoch in 0..cfg.epochs {
        let start = Instant::now();
        if cfg.shuffle {
            order.shuffle(&mut rng);
        }
        let mut total = 0.0;
        for idx in order.chunks(cfg.batch_size) {
            let batch: Vec<&Sample> = idx.iter().map(|&i| &split.train[i]).collect();
            let loss = train_step(&mut model, &mut opt, &batch)?;
            if !loss.is_finite() {
                return Err(Error::Training {
                    epoch,
                    detail: format!("loss became {loss}"),
                });
            }
            total += loss * batch.len() as f64;
        }
        let train_loss = total / split.train.len() as f64;
        let val_loss = if split.validation.is_empty() {
            train_loss
        } else {
            dataset_loss(&model, &split.validation)?
        };
        if !val_loss.is_finite() {
            return Err(Error::Training {
                epoch,
                detail: format!("validation loss became {val_loss}"),
            });
        }
        history.train_loss.push(train_loss);
        history.val_loss.push(val_loss);
        history.wall_time.push(start.elapsed().as_secs_f64());
        if val_loss < best.0 {
            best = (val_loss, model.params().clone());
            history.best_epoch = epoch;
        }
        log::debug!("epoch {epoch}: train {train_loss:.6e} val {val_loss:.6e}");
        on_epoch(epoch, &history);
        if cfg.early_stop_patience > 0 && epoch - history.best_epoch >= cfg.early_stop_patience {
            break;
        }
    }
    *model.params_mut() = best.1;
    model.params_mut().zero_grad();
    model.normalization = Some(split.norm);
    Ok((model, history))
}

/// Normalized predictions for `samples`, in order.
pub fn predict_samples<T: Scalar>(model: &Model<T>, samples: &[Sample]) -> Result<Vec<[f64; 3]>> {
    let mut out = Vec::with_capacity(samples.len());
    for chunk in samples.chunks(EVAL_BATCH) {
        let refs: Vec<&Sample> = chunk.iter().collect();
        let (x, _) = batch_tensors::<T>(&refs)?;
        let pred = model.predict(&x)?;
        out.extend(pred.data().chunks(3).map(|r| [r[0].as_f64(), r[1].as_f64(), r[2].as_f64()]));
    }
    Ok(out)
}

/// Metrics on counts: predictions and targets are mapped back through
/// `norm` before scoring.
pub fn evaluate<T: Scalar>(model: &Model<T>, samples: &[Sample], norm: &NormalizationParams) -> Result<MetricsReport> {
    if samples.is_empty() {
        return Err(Error::Usage("cannot evaluate on zero samples".into()));
    }
    let pred = norm.denormalize(&predict_samples(model, samples)?);
    let actual: Vec<[f64; 3]> = samples.iter().map(|s| s.y).collect();
    metrics(&pred, &norm.denormalize(&actual))
}
