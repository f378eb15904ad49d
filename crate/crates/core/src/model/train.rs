//! Mini-batch training, history bookkeeping and overfit detection.

use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::backbone::Backbone;
use super::head::Head;
use super::optim::{Optimizer, OptimizerConfig};
use crate::rng;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub train_fraction: f64,
    pub seed: u64,
    #[serde(default)]
    pub use_augmented: bool,
    /// `None` disables early stopping.
    #[serde(default)]
    pub overfit_patience: Option<usize>,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs < 1 {
            return Err(Error::InvalidConfig("epochs must be at least 1".into()));
        }
        if self.batch_size < 1 {
            return Err(Error::InvalidConfig("batch_size must be at least 1".into()));
        }
        if !(0.0..=1.0).contains(&self.train_fraction) {
            return Err(Error::InvalidFraction(self.train_fraction));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    /// 1-based.
    pub epoch: usize,
    pub train_loss: f64,
    pub train_accuracy: f64,
    /// `None` when the validation split is empty.
    pub val_loss: Option<f64>,
    pub val_accuracy: Option<f64>,
    /// Rate at the epoch's first optimizer step.
    pub learning_rate: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingHistory {
    pub epochs: Vec<EpochRecord>,
    /// Epoch at which the overfit detector stopped training.
    pub stopped_early_at: Option<usize>,
}

impl TrainingHistory {
    pub fn len(&self) -> usize {
        self.epochs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.epochs.is_empty()
    }

    pub fn last(&self) -> Option<&EpochRecord> {
        self.epochs.last()
    }
}

/// Whether epoch `e` (0-based) closes a window of `window` epochs in which
/// validation loss sat above its running minimum and training loss did not
/// increase.
fn fires_at(train_loss: &[f64], val_loss: &[f64], e: usize, window: usize) -> bool {
    if e < window {
        return false;
    }
    (e + 1 - window..=e).all(|j| {
        let best = val_loss[..j].iter().copied().fold(f64::INFINITY, f64::min);
        val_loss[j] > best && train_loss[j] <= train_loss[j - 1]
    })
}

/// First 1-based epoch at which the detector fires. A `patience` of zero
/// behaves like one.
pub fn first_overfit_epoch(train_loss: &[f64], val_loss: &[f64], patience: usize) -> Option<usize> {
    let n = train_loss.len().min(val_loss.len());
    (0..n).find(|&e| fires_at(train_loss, val_loss, e, patience.max(1))).map(|e| e + 1)
}

/// Whether the detector fires at the most recent epoch of `history`.
pub fn detect_overfit(history: &TrainingHistory, patience: usize) -> bool {
    let mut train = Vec::with_capacity(history.len());
    let mut val = Vec::with_capacity(history.len());
    for r in &history.epochs {
        match r.val_loss {
            Some(v) => {
                train.push(r.train_loss);
                val.push(v);
            }
            None => return false,
        }
    }
    !val.is_empty() && fires_at(&train, &val, val.len() - 1, patience.max(1))
}

/// Training inputs: pooled features for a frozen backbone, stem maps when
/// the backbone projection trains too.
pub(crate) struct Inputs<'a> {
    pub rows: &'a [Vec<f32>],
    pub labels: &'a [usize],
}

pub(crate) fn fit(
    head: &mut Head,
    mut backbone: Option<&mut Backbone>,
    train: Inputs<'_>,
    validation: Inputs<'_>,
    tc: &TrainConfig,
    oc: &OptimizerConfig,
) -> Result<TrainingHistory> {
    tc.validate()?;
    oc.validate()?;
    let n = train.rows.len();
    if n == 0 {
        return Err(Error::EmptyTrainSplit);
    }
    if tc.batch_size > n {
        return Err(Error::BatchTooLarge { batch: tc.batch_size, train: n });
    }
    let classes = head.output_classes();
    if let Some(&bad) = train.labels.iter().chain(validation.labels).find(|&&y| y >= classes) {
        return Err(Error::InvalidParameter(alloc::format!("label index {bad} >= {classes} classes")));
    }

    let mut shapes: Vec<usize> = head.params_mut().iter().map(|(p, _)| p.len()).collect();
    if let Some(bb) = backbone.as_deref() {
        shapes.push(bb.projection.weight.len());
        shapes.push(bb.projection.bias.len());
    }
    let mut optimizer = Optimizer::new(oc.clone(), &shapes);
    let mut dropout_rng = rng::seeded(rng::derive(tc.seed, "dropout", ""));
    let feat_dim = head.input_dim();

    let mut history = TrainingHistory::default();
    let mut step: u64 = 0;
    let mut order: Vec<usize> = (0..n).collect();
    for epoch in 0..tc.epochs {
        order.sort_unstable();
        order.shuffle(&mut rng::seeded(rng::derive(tc.seed, "shuffle", &alloc::format!("{epoch}"))));
        let epoch_lr = oc.lr_for(step, epoch as u64);
        let mut loss_sum = 0.0f64;
        let mut correct = 0usize;
        for chunk in order.chunks(tc.batch_size) {
            let b = chunk.len();
            let labels: Vec<usize> = chunk.iter().map(|&i| train.labels[i]).collect();
            let mut x = Vec::with_capacity(b * feat_dim);
            for &i in chunk {
                match backbone.as_deref() {
                    Some(bb) => x.extend(bb.pool_relu(&bb.project(&train.rows[i]))),
                    None => x.extend_from_slice(&train.rows[i]),
                }
            }
            let trace = head.forward_train(&x, b, &mut dropout_rng);
            let batch_loss = cross_entropy(&trace.probs, &labels, classes);
            if !batch_loss.is_finite() {
                return Err(Error::NonFiniteLoss { epoch: epoch + 1, step: step as usize });
            }
            loss_sum += batch_loss * b as f64;
            correct += count_correct(&trace.probs, &labels, classes);

            let (mut grads, dx) = head.backward(&trace, &labels, backbone.is_some());
            let lr = oc.lr_for(step, epoch as u64);
            match backbone.as_deref_mut() {
                Some(bb) => {
                    let (dw, db) = projection_grads(bb, &train.rows, chunk, &dx, feat_dim);
                    grads.push(dw);
                    grads.push(db);
                    let mut params = head.params_mut();
                    params.push((&mut bb.projection.weight, true));
                    params.push((&mut bb.projection.bias, false));
                    optimizer.step(params, &grads, lr);
                }
                None => optimizer.step(head.params_mut(), &grads, lr),
            }
            step += 1;
        }

        let (val_loss, val_accuracy) = if validation.rows.is_empty() {
            (None, None)
        } else {
            let probs = predict_rows(head, backbone.as_deref(), validation.rows);
            (
                Some(cross_entropy(&probs, validation.labels, classes)),
                Some(count_correct(&probs, validation.labels, classes) as f64 / validation.rows.len() as f64),
            )
        };
        if let Some(v) = val_loss {
            if !v.is_finite() {
                return Err(Error::NonFiniteLoss { epoch: epoch + 1, step: step as usize });
            }
        }
        history.epochs.push(EpochRecord {
            epoch: epoch + 1,
            train_loss: loss_sum / n as f64,
            train_accuracy: correct as f64 / n as f64,
            val_loss,
            val_accuracy,
            learning_rate: epoch_lr,
        });
        if let Some(p) = tc.overfit_patience {
            if detect_overfit(&history, p) {
                history.stopped_early_at = Some(epoch + 1);
                break;
            }
        }
    }
    Ok(history)
}

fn projection_grads(bb: &Backbone, rows: &[Vec<f32>], chunk: &[usize], dfeat: &[f32], feat_dim: usize) -> (Vec<f32>, Vec<f32>) {
    let p = &bb.projection;
    let mut dw = vec![0.0f32; p.weight.len()];
    let mut db = vec![0.0f32; p.bias.len()];
    let scale = 1.0 / bb.positions_per_cell();
    for (slot, &i) in chunk.iter().enumerate() {
        let stem = &rows[i];
        let z = bb.project(stem);
        let g = &dfeat[slot * feat_dim..(slot + 1) * feat_dim];
        for (pos, x) in stem.chunks_exact(p.input).enumerate() {
            let cell = bb.cell_of(pos);
            for k in 0..p.output {
                if z[pos * p.output + k] <= 0.0 {
                    continue;
                }
                let gk = g[cell * p.output + k] * scale;
                if gk == 0.0 {
                    continue;
                }
                db[k] += gk;
                for (d, &xv) in dw[k * p.input..(k + 1) * p.input].iter_mut().zip(x) {
                    *d += gk * xv;
                }
            }
        }
    }
    (dw, db)
}

pub(crate) fn predict_rows(head: &Head, backbone: Option<&Backbone>, rows: &[Vec<f32>]) -> Vec<f64> {
    let mut out = Vec::with_capacity(rows.len() * head.output_classes());
    for chunk in rows.chunks(64) {
        let mut x = Vec::with_capacity(chunk.len() * head.input_dim());
        for r in chunk {
            match backbone {
                Some(bb) => x.extend(bb.pool_relu(&bb.project(r))),
                None => x.extend_from_slice(r),
            }
        }
        out.extend(head.predict(&x, chunk.len()));
    }
    out
}

fn cross_entropy(probs: &[f64], labels: &[usize], classes: usize) -> f64 {
    let total: f64 = labels
        .iter()
        .enumerate()
        .map(|(b, &y)| -libm::log(probs[b * classes + y].max(1e-300)))
        .sum();
    total / labels.len() as f64
}

fn count_correct(probs: &[f64], labels: &[usize], classes: usize) -> usize {
    labels
        .iter()
        .enumerate()
        .filter(|(b, &y)| argmax(&probs[b * classes..(b + 1) * classes]) == y)
        .count()
}

/// Index of the largest value; the lowest index wins ties.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = i;
        }
    }
    best
}
