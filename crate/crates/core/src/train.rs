//! Training loop, evaluation and the copy-last-frame baseline.

use serde::{Deserialize, Serialize};

use crate::datagen::{Dataset, Split, TrajectorySet};
use crate::error::{Error, Result};
use crate::model::{Model, ModelConfig};
use crate::numeric::optim::{Adam, AdamConfig};
use crate::numeric::{Tape, Tensor};
use crate::objective::{Metrics, MetricsAccumulator};
use crate::seed::{tagged_rng, Rng};
use rand::seq::SliceRandom;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub adam: AdamConfig,
    /// Epochs without a validation improvement before stopping.
    pub patience: usize,
    /// Cap on validation samples scored per epoch; 0 means all.
    pub valid_samples: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 200,
            batch_size: 64,
            learning_rate: 1e-4,
            adam: AdamConfig::default(),
            patience: 20,
            valid_samples: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::Config("epochs and batch_size must be positive".into()));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config("learning_rate must be non-negative".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub valid_mse: f64,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    /// Parameters from the epoch with the lowest validation MSE.
    pub model: Model,
    pub curve: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_valid_mse: f64,
}

/// Runs `f(i)` for `i in 0..n` on up to `jobs` threads and returns the
/// results in index order.
pub fn parallel_map<T: Send>(n: usize, jobs: usize, f: impl Fn(usize) -> T + Sync) -> Vec<T> {
    let jobs = jobs.max(1).min(n.max(1));
    if jobs == 1 {
        return (0..n).map(f).collect();
    }
    let chunk = n.div_ceil(jobs);
    let f = &f;
    std::thread::scope(|scope| {
        let handles: Vec<_> = (0..jobs)
            .map(|w| {
                scope.spawn(move || {
                    let lo = (w * chunk).min(n);
                    let hi = ((w + 1) * chunk).min(n);
                    (lo..hi).map(f).collect::<Vec<T>>()
                })
            })
            .collect();
        handles
            .into_iter()
            .flat_map(|h| h.join().expect("worker panicked"))
            .collect()
    })
}

/// Loss and dense gradient of one training example.
fn example_gradient(
    model: &Model,
    set: &TrajectorySet,
    index: usize,
    window: (usize, usize),
    rng: &mut Rng,
) -> Result<(f64, Vec<Tensor>)> {
    let sample = model.sample(set, index, window.0, window.1)?;
    let mut tape = Tape::new();
    let (loss, parts) = model.loss(&mut tape, &sample, Some(rng))?;
    let grads = tape.backward(loss)?;
    Ok((parts.total, grads.dense(&model.store)))
}

/// Trains a fresh model built from `model_cfg` and `seed`.
pub fn train(
    ds: &Dataset,
    model_cfg: &ModelConfig,
    cfg: &TrainConfig,
    seed: u64,
    jobs: usize,
) -> Result<TrainOutcome> {
    let mut mc = model_cfg.clone();
    mc.features = ds.train.features;
    let model = Model::new(&mc, seed)?;
    train_model(model, ds, cfg, seed, jobs)
}

/// Trains `model` in place with Adam and early stopping on validation MSE.
pub fn train_model(
    mut model: Model,
    ds: &Dataset,
    cfg: &TrainConfig,
    seed: u64,
    jobs: usize,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    let window = (ds.condition_len, ds.prediction_len);
    let n = ds.train.samples;
    let mut adam = Adam::new(&model.store, cfg.learning_rate, cfg.adam);
    let mut order: Vec<usize> = (0..n).collect();
    let mut curve = Vec::with_capacity(cfg.epochs);
    let mut best = (usize::MAX, f64::INFINITY, model.store.clone());
    let valid_count = match cfg.valid_samples {
        0 => ds.valid.samples,
        k => k.min(ds.valid.samples),
    };
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut tagged_rng(seed, "batch_order", epoch as u64));
        let mut epoch_loss = 0.0;
        for (b, batch) in order.chunks(cfg.batch_size).enumerate() {
            let results = parallel_map(batch.len(), jobs, |k| {
                let idx = batch[k];
                let mut rng = tagged_rng(seed, "train_noise", (epoch * n + idx) as u64);
                example_gradient(&model, &ds.train, idx, window, &mut rng)
            });
            let mut total = 0.0;
            let mut grad: Option<Vec<Tensor>> = None;
            for r in results {
                let (loss, g) = r?;
                total += loss;
                match &mut grad {
                    None => grad = Some(g),
                    Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, b)| a.add_assign(b)),
                }
            }
            let mean = total / batch.len() as f64;
            let mut grad = grad.expect("non-empty batch");
            if !mean.is_finite() || grad.iter().any(|g| !g.is_finite()) {
                return Err(Error::TrainingDiverged { epoch, batch: b, loss: mean });
            }
            let scale = 1.0 / batch.len() as f64;
            grad.iter_mut().for_each(|g| *g = g.scale(scale));
            adam.step(&mut model.store, &grad);
            epoch_loss += total;
        }
        let valid = evaluate_split(&model, ds, Split::Valid, valid_count, window.1, jobs)?;
        curve.push(EpochRecord {
            epoch,
            train_loss: epoch_loss / n as f64,
            valid_mse: valid.mse,
        });
        if valid.mse < best.1 {
            best = (epoch, valid.mse, model.store.clone());
        } else if epoch >= best.0.saturating_add(cfg.patience) {
            break;
        }
    }
    model.store = best.2;
    Ok(TrainOutcome {
        model,
        curve,
        best_epoch: best.0,
        best_valid_mse: best.1,
    })
}

/// Denormalized forecast error on the first `count` samples of `split`.
pub fn evaluate_split(
    model: &Model,
    ds: &Dataset,
    split: Split,
    count: usize,
    pred_len: usize,
    jobs: usize,
) -> Result<Metrics> {
    let cond = ds.condition_len;
    let (set, raw) = ds.split(split);
    if cond + pred_len > set.timesteps {
        return Err(Error::Usage(format!(
            "prediction length {pred_len} needs {} frames, data has {}",
            cond + pred_len,
            set.timesteps
        )));
    }
    let parts = parallel_map(count.min(set.samples), jobs, |s| -> Result<MetricsAccumulator> {
        let sample = model.sample(set, s, cond, pred_len)?;
        let preds = model.predict(&sample, pred_len)?;
        let mut acc = MetricsAccumulator::default();
        for (k, p) in preds.iter().enumerate() {
            let d = set.features;
            let denorm: Vec<f64> = p
                .data()
                .iter()
                .enumerate()
                .map(|(i, &v)| ds.normalizer.denormalize_value(i % d, v))
                .collect();
            acc.add(raw.frame(s, cond + k), &denorm);
        }
        Ok(acc)
    });
    let mut total = MetricsAccumulator::default();
    for p in parts {
        total.merge(&p?);
    }
    Ok(total.finish())
}

/// Test-split metrics for a forecast of `pred_len` steps.
pub fn evaluate(model: &Model, ds: &Dataset, pred_len: usize, jobs: usize) -> Result<Metrics> {
    evaluate_split(model, ds, Split::Test, ds.test.samples, pred_len, jobs)
}

/// Metrics of repeating the last observed frame over the horizon.
pub fn copy_last_baseline(ds: &Dataset, pred_len: usize) -> Result<Metrics> {
    let raw = &ds.raw[2];
    let cond = ds.condition_len;
    if cond + pred_len > raw.timesteps {
        return Err(Error::Usage(format!(
            "prediction length {pred_len} needs {} frames, data has {}",
            cond + pred_len,
            raw.timesteps
        )));
    }
    let mut acc = MetricsAccumulator::default();
    for s in 0..raw.samples {
        let last = raw.frame(s, cond - 1);
        for t in cond..cond + pred_len {
            acc.add(raw.frame(s, t), last);
        }
    }
    Ok(acc.finish())
}
