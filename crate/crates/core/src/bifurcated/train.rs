use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::Samples;
use crate::error::{Error, Result};
use crate::tensor::{softmax_cross_entropy, Stack, Tensor};

/// Mini-batch SGD settings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub lr: f64,
    pub epochs: usize,
    pub batch: usize,
    pub seed: u64,
    /// L2 penalty on weights (not biases); 0 disables it.
    pub weight_decay: f64,
    /// Learning-rate multiplier applied after every epoch.
    pub lr_decay: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 0.01,
            epochs: 10,
            batch: 32,
            seed: 0,
            weight_decay: 0.0,
            lr_decay: 1.0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return Err(Error::Config(format!("learning rate must be positive, got {}", self.lr)));
        }
        if !(self.weight_decay.is_finite() && self.weight_decay >= 0.0) {
            return Err(Error::Config(format!("weight decay must be non-negative, got {}", self.weight_decay)));
        }
        if !(self.lr_decay.is_finite() && self.lr_decay > 0.0) {
            return Err(Error::Config(format!("learning-rate decay must be positive, got {}", self.lr_decay)));
        }
        if self.epochs == 0 || self.batch == 0 {
            return Err(Error::Config(format!(
                "epochs and batch must be positive, got {} and {}",
                self.epochs, self.batch
            )));
        }
        Ok(())
    }

    /// Learning rate of the 1-based `epoch`.
    pub fn epoch_lr(&self, epoch: usize) -> f64 {
        self.lr * self.lr_decay.powi(epoch as i32 - 1)
    }

    /// Shuffling stream, kept apart from the initialization stream of the
    /// same seed.
    pub(crate) fn shuffle_rng(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(1);
        rng
    }
}

/// Mean loss and running accuracy over one epoch.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub loss: f64,
    pub accuracy: f64,
}

impl std::fmt::Display for EpochLog {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "epoch {} loss {:.6} acc {:.4}", self.epoch, self.loss, self.accuracy)
    }
}

/// Step size and weight shrink factor (`1 - lr * weight_decay`) of one update.
#[derive(Clone, Copy, Debug)]
pub(crate) struct Step {
    pub lr: f32,
    pub shrink: f32,
}

impl Step {
    pub fn new(config: &TrainConfig, epoch: usize) -> Self {
        let lr = config.epoch_lr(epoch);
        Step {
            lr: lr as f32,
            shrink: (1.0 - lr * config.weight_decay) as f32,
        }
    }
}

/// One SGD step on the batch `x`. The head is always updated; the primary
/// only when `update_primary` is set. Returns the summed loss and the number
/// of correct argmax predictions.
pub(crate) fn sgd_batch(
    primary: &mut Stack<f32>,
    head: &mut Stack<f32>,
    x: &Tensor<f32>,
    labels: &[usize],
    step: Step,
    update_primary: bool,
) -> Result<(f64, usize)> {
    let (feat, ptrace) = if update_primary {
        let (f, t) = primary.forward_traced(x)?;
        (f, Some(t))
    } else {
        (primary.forward(x)?, None)
    };
    let (logits, htrace) = head.forward_traced(&feat)?;
    let k = logits.shape()[1];
    let scale = 1.0 / labels.len() as f32;
    let mut grad = Vec::with_capacity(logits.len());
    let (mut loss, mut correct) = (0.0f64, 0);
    for (row, &label) in logits.data().chunks_exact(k).zip(labels) {
        let (l, g) = softmax_cross_entropy(row, label)?;
        if !l.is_finite() {
            return Err(Error::Numeric(format!("non-finite loss {l}")));
        }
        loss += l as f64;
        correct += (argmax(row) == label) as usize;
        grad.extend(g.into_iter().map(|v| v * scale));
    }
    let grad = Tensor::from_vec(logits.shape(), grad)?;
    let gfeat = head.backward_update(&htrace, &grad, update_primary, step.lr, step.shrink)?;
    if let (Some(trace), Some(gfeat)) = (ptrace, gfeat) {
        primary.backward_update(&trace, &gfeat, false, step.lr, step.shrink)?;
    }
    Ok((loss, correct))
}

/// Index of the largest value; ties go to the smaller index.
pub fn argmax(row: &[f32]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Trains `heads[c]` on `data[c]` with mini-batches interleaved round-robin
/// across classes. Each batch of class `c` touches only head `c` and, when
/// `update_primary` is set, the shared primary.
pub(crate) fn train_round_robin(
    primary: &mut Stack<f32>,
    heads: &mut [Stack<f32>],
    data: &[&Samples],
    config: &TrainConfig,
    update_primary: bool,
    on_epoch: &mut dyn FnMut(&EpochLog),
) -> Result<Vec<EpochLog>> {
    config.validate()?;
    if heads.len() != data.len() {
        return Err(Error::Config(format!("{} heads but {} datasets", heads.len(), data.len())));
    }
    if let Some(c) = data.iter().position(|d| d.is_empty()) {
        return Err(Error::Data(format!("training set {c} is empty")));
    }
    let mut rng = config.shuffle_rng();
    let mut logs = Vec::with_capacity(config.epochs);
    for epoch in 1..=config.epochs {
        let step = Step::new(config, epoch);
        let batches: Vec<Vec<Vec<usize>>> = data
            .iter()
            .map(|d| {
                let mut idx: Vec<usize> = (0..d.len()).collect();
                idx.shuffle(&mut rng);
                idx.chunks(config.batch).map(<[usize]>::to_vec).collect()
            })
            .collect();
        let rounds = batches.iter().map(Vec::len).max().unwrap_or(0);
        let (mut loss, mut correct, mut seen) = (0.0, 0, 0);
        for r in 0..rounds {
            for (c, class_batches) in batches.iter().enumerate() {
                let Some(b) = class_batches.get(r) else { continue };
                let labels: Vec<usize> = b.iter().map(|&i| data[c].labels[i]).collect();
                let (l, k) = sgd_batch(primary, &mut heads[c], &data[c].batch(b), &labels, step, update_primary)?;
                loss += l;
                correct += k;
                seen += b.len();
            }
        }
        let log = EpochLog {
            epoch,
            loss: loss / seen as f64,
            accuracy: correct as f64 / seen as f64,
        };
        on_epoch(&log);
        logs.push(log);
    }
    Ok(logs)
}
