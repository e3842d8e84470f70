//! Mini-batch training with sharded, deterministic gradient accumulation.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::numerics::{clip_global_norm, Adam, AdamConfig, Tape, Tensor};

use super::dataset::SequenceDataset;
use super::model::Seq2Seq;
use super::PredictorError;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub max_epochs: usize,
    pub patience: usize,
    pub batch_size: usize,
    pub tf_ratio: f64,
    pub adam: AdamConfig,
    pub clip_norm: f64,
    /// Fixed number of shards per mini-batch; each shard runs on its own tape.
    pub shards: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            max_epochs: 200,
            patience: 5,
            batch_size: 32,
            tf_ratio: 0.5,
            adam: AdamConfig::default(),
            clip_norm: 5.0,
            shards: 4,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub validation_loss: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct History {
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub stopped_early: bool,
}

/// Early-stopping bookkeeping: tracks the best loss and how many epochs have
/// passed without strict improvement.
#[derive(Clone, Debug)]
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

    /// Records an epoch. Returns `(improved, should_stop)`.
    pub fn observe(&mut self, epoch: usize, loss: f64) -> (bool, bool) {
        if loss < self.best {
            self.best = loss;
            self.best_epoch = epoch;
            self.stale = 0;
            (true, false)
        } else {
            self.stale += 1;
            (false, self.stale >= self.patience)
        }
    }

    pub fn best_epoch(&self) -> usize {
        self.best_epoch
    }
}

/// Seed for the RNG of one shard of one mini-batch.
pub fn shard_seed(seed: u64, epoch: usize, batch: usize, shard: usize) -> u64 {
    let mut x = seed ^ 0x9E37_79B9_7F4A_7C15;
    for v in [epoch as u64, batch as u64, shard as u64] {
        x = x.wrapping_mul(0xBF58_476D_1CE4_E5B9).wrapping_add(v).rotate_left(31);
    }
    x
}

/// Splits `len` items into `shards` contiguous ranges whose sizes differ by
/// at most one.
pub fn partition(len: usize, shards: usize) -> Vec<std::ops::Range<usize>> {
    let shards = shards.clamp(1, len.max(1));
    let base = len / shards;
    let extra = len % shards;
    let mut out = Vec::with_capacity(shards);
    let mut start = 0;
    for s in 0..shards {
        let n = base + usize::from(s < extra);
        out.push(start..start + n);
        start += n;
    }
    out
}

/// Loss and parameter gradients for one mini-batch. Shard losses are
/// weighted by shard size so the total equals the batch mean; gradients are
/// summed in shard order.
pub fn batch_gradients(
    model: &Seq2Seq,
    data: &SequenceDataset,
    ks: &[usize],
    cfg: &TrainConfig,
    epoch: usize,
    batch_no: usize,
) -> Result<(f64, Vec<Tensor>), PredictorError> {
    let parts = partition(ks.len(), cfg.shards);
    let total = ks.len() as f64;
    let results: Vec<(f64, Vec<Tensor>)> = parts
        .par_iter()
        .enumerate()
        .map(|(s, range)| {
            let mut rng = ChaCha8Rng::seed_from_u64(shard_seed(cfg.seed, epoch, batch_no, s));
            let batch = data.batch(&ks[range.clone()]);
            let mut tape = Tape::new();
            let loss = model.loss(&mut tape, &batch, cfg.tf_ratio, true, &mut rng)?;
            let w = range.len() as f64 / total;
            let weighted = tape.scale(loss, w)?;
            let grads = tape.backward(weighted, &model.store)?;
            Ok((tape.value(weighted).item(), grads))
        })
        .collect::<Result<_, PredictorError>>()?;
    let mut iter = results.into_iter();
    let (mut loss, mut grads) = iter.next().expect("at least one shard");
    for (l, g) in iter {
        loss += l;
        for (a, b) in grads.iter_mut().zip(&g) {
            a.add_scaled(b, 1.0);
        }
    }
    Ok((loss, grads))
}

/// Mean squared error on scaled speeds in evaluation mode.
pub fn evaluate_loss(model: &Seq2Seq, data: &SequenceDataset, ks: &[usize], batch_size: usize) -> Result<f64, PredictorError> {
    if ks.is_empty() {
        return Err(PredictorError::EmptyDataset);
    }
    let chunks: Vec<&[usize]> = ks.chunks(batch_size.max(1)).collect();
    let sums: Vec<f64> = chunks
        .par_iter()
        .map(|c| {
            let b = data.batch(c);
            let pred = model.predict_scaled(&b)?;
            let mut s = 0.0;
            for (p, t) in pred.iter().zip(&b.targets) {
                s += p.data().iter().zip(t.data()).map(|(x, y)| (x - y) * (x - y)).sum::<f64>();
            }
            Ok(s)
        })
        .collect::<Result<_, PredictorError>>()?;
    let n = ks.len() * model.config.horizon * model.layout.targets.len();
    Ok(sums.iter().sum::<f64>() / n as f64)
}

/// Trains `model` in place and leaves it at the parameters of the best
/// validation epoch. Without a validation slice the training loss drives
/// early stopping.
pub fn train(
    model: &mut Seq2Seq,
    data: &SequenceDataset,
    train_ks: &[usize],
    validation_ks: &[usize],
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<History, PredictorError> {
    if train_ks.is_empty() {
        return Err(PredictorError::EmptyDataset);
    }
    let mut adam = Adam::new(&model.store, cfg.adam);
    let mut stopper = EarlyStopping::new(cfg.patience);
    let mut best = model.store.clone();
    let mut history = History::default();
    let mut order = train_ks.to_vec();
    for epoch in 0..cfg.max_epochs {
        order.copy_from_slice(train_ks);
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(shard_seed(cfg.seed, epoch, usize::MAX, 0)));
        let mut total = 0.0;
        for (b, ks) in order.chunks(cfg.batch_size.max(1)).enumerate() {
            let (loss, mut grads) = batch_gradients(model, data, ks, cfg, epoch, b)?;
            clip_global_norm(&mut grads, cfg.clip_norm);
            adam.step(&mut model.store, &grads);
            total += loss * ks.len() as f64;
        }
        let train_loss = total / order.len() as f64;
        let validation_loss = if validation_ks.is_empty() {
            train_loss
        } else {
            evaluate_loss(model, data, validation_ks, cfg.batch_size)?
        };
        let rec = EpochRecord {
            epoch,
            train_loss,
            validation_loss,
        };
        on_epoch(&rec);
        history.epochs.push(rec);
        let (improved, stop) = stopper.observe(epoch, validation_loss);
        if improved {
            best = model.store.clone();
        }
        if stop {
            history.stopped_early = true;
            break;
        }
    }
    history.best_epoch = stopper.best_epoch();
    model.store = best;
    Ok(history)
}
