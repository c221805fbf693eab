use serde::{Deserialize, Serialize};

use crate::bifurcated::{train_separate, ArchitectureSpec, EpochLog, MergedModel, Network, TrainConfig};
use crate::dataset::Samples;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MnistMode {
    /// One one-vs-rest network per digit.
    Separate,
    /// Separate networks merged into one primary with ten retrained heads.
    Merged,
    /// A single ten-way network.
    Monolithic,
}

impl std::str::FromStr for MnistMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "separate" => Ok(MnistMode::Separate),
            "merged" => Ok(MnistMode::Merged),
            "monolithic" => Ok(MnistMode::Monolithic),
            other => Err(Error::Config(format!(
                "unknown MNIST mode {other:?}, expected separate, merged or monolithic"
            ))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MnistConfig {
    /// Optimizer settings; `train.epochs` applies to the monolithic network.
    pub train: TrainConfig,
    /// Epochs per one-vs-rest network; defaults to `train.epochs`.
    pub separate_epochs: Option<usize>,
    /// Epochs for head retraining in merged mode; defaults to `train.epochs`.
    pub head_epochs: Option<usize>,
    /// Leading training samples used (the rest of the file is ignored).
    pub train_samples: usize,
    /// Negatives kept per positive when retraining merged heads.
    pub balance_ratio: f64,
}

impl Default for MnistConfig {
    fn default() -> Self {
        MnistConfig {
            train: TrainConfig {
                lr: 0.05,
                epochs: 6,
                batch: 8,
                lr_decay: 0.8,
                ..TrainConfig::default()
            },
            separate_epochs: Some(4),
            head_epochs: Some(3),
            train_samples: 50_000,
            balance_ratio: 3.0,
        }
    }
}

impl MnistConfig {
    /// The leading `train_samples` samples of `train`.
    pub fn training_subset(&self, train: &Samples) -> Samples {
        let n = self.train_samples.min(train.len());
        train.subset(&(0..n).collect::<Vec<_>>())
    }

    fn with_epochs(&self, epochs: Option<usize>) -> TrainConfig {
        TrainConfig {
            epochs: epochs.unwrap_or(self.train.epochs),
            ..self.train.clone()
        }
    }
}

/// Labels `digit` as 1 and every other digit as 0.
pub fn one_vs_rest(samples: &Samples, digit: usize) -> Samples {
    samples.relabeled(|l| (l == digit) as usize)
}

fn digit_names() -> Vec<String> {
    (0..10).map(|d| d.to_string()).collect()
}

/// Trains the one-vs-rest network of each digit in `digits` on `train` and
/// returns it with its binary test accuracy.
pub fn mnist_separate(
    train: &Samples,
    test: &Samples,
    digits: &[usize],
    config: &MnistConfig,
    on_epoch: &mut dyn FnMut(usize, &EpochLog),
) -> Result<Vec<(Network, f64)>> {
    let train_cfg = config.with_epochs(config.separate_epochs);
    let mut out = Vec::with_capacity(digits.len());
    for &d in digits {
        if d > 9 {
            return Err(Error::Config(format!("digit {d} out of range")));
        }
        let (net, _) = train_separate(
            &ArchitectureSpec::mnist(),
            &one_vs_rest(train, d),
            vec!["rest".into(), d.to_string()],
            None,
            &train_cfg,
            &mut |e| on_epoch(d, e),
        )?;
        let acc = net.accuracy(&one_vs_rest(test, d))?;
        out.push((net, acc));
    }
    Ok(out)
}

/// Merges the ten digit networks and retrains every head with the shared
/// primary on a balanced one-vs-rest set. A digit head is already a
/// classification head in the sense of the merged model, so both head sets
/// end up identical.
pub fn mnist_merge(
    nets: &[Network],
    train: &Samples,
    config: &MnistConfig,
    on_epoch: &mut dyn FnMut(&EpochLog),
) -> Result<MergedModel> {
    if nets.len() != 10 {
        return Err(Error::Config(format!("merged MNIST needs 10 digit networks, got {}", nets.len())));
    }
    let refs: Vec<&Network> = nets.iter().collect();
    let mut model = MergedModel::from_separate(&refs, digit_names())?;
    let sets = (0..10)
        .map(|d| one_vs_rest(train, d).balanced(config.balance_ratio, config.train.seed.wrapping_add(d as u64)))
        .collect::<Result<Vec<_>>>()?;
    model.train_seg_heads(&sets, &config.with_epochs(config.head_epochs), on_epoch)?;
    model.cls_heads = model.seg_heads.clone();
    model.trained = true;
    Ok(model)
}

/// Digit whose head gives the largest positive-minus-negative logit margin.
pub fn merged_digit_predictions(model: &MergedModel, samples: &Samples) -> Result<Vec<usize>> {
    let idx: Vec<usize> = (0..samples.len()).collect();
    let mut out = Vec::with_capacity(samples.len());
    for chunk in idx.chunks(256) {
        let feat = model.primary.forward(&samples.batch(chunk))?;
        let mut best = vec![(f32::NEG_INFINITY, 0usize); chunk.len()];
        for (d, head) in model.seg_heads.iter().enumerate() {
            let logits = head.forward(&feat)?;
            for (b, row) in best.iter_mut().zip(logits.data().chunks_exact(2)) {
                let margin = row[1] - row[0];
                if margin > b.0 {
                    *b = (margin, d);
                }
            }
        }
        out.extend(best.into_iter().map(|(_, d)| d));
    }
    Ok(out)
}

/// Trains a ten-way network and returns it with its test accuracy.
pub fn mnist_monolithic(
    train: &Samples,
    test: &Samples,
    config: &MnistConfig,
    on_epoch: &mut dyn FnMut(&EpochLog),
) -> Result<(Network, f64)> {
    let (net, _) = train_separate(
        &ArchitectureSpec::mnist().with_outputs(10),
        train,
        digit_names(),
        None,
        &config.train,
        on_epoch,
    )?;
    let acc = net.accuracy(test)?;
    Ok((net, acc))
}

/// Share of `pred` equal to the labels of `samples`.
pub fn digit_accuracy(pred: &[usize], samples: &Samples) -> f64 {
    let hits = pred.iter().zip(&samples.labels).filter(|(p, l)| p == l).count();
    hits as f64 / samples.len().max(1) as f64
}
