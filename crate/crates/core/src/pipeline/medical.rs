use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::bifurcated::{ArchitectureSpec, EpochLog, MergedModel, Network, TrainConfig};
use crate::dataset::{balance, extract_patches, ChannelMode, MaskedDataset, PatchDataset, Samples};
use crate::error::{Error, Result};
use crate::fusion::fuse;
use crate::imaging::largest_connected_component;
use crate::metrics::{seg_scores, ClassStats, ConfusionMatrix, SegScores};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub train: TrainConfig,
    /// Epochs for head retraining; defaults to `train.epochs`.
    pub head_epochs: Option<usize>,
    pub channel_mode: ChannelMode,
    /// Normal patches kept per abnormal patch.
    pub balance_ratio: f64,
    /// Share of each class's images used for training.
    pub train_fraction: f64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            train: TrainConfig::default(),
            head_epochs: None,
            channel_mode: ChannelMode::Wce,
            balance_ratio: 2.0,
            train_fraction: 0.8,
        }
    }
}

impl PipelineConfig {
    pub fn head_config(&self) -> TrainConfig {
        TrainConfig {
            epochs: self.head_epochs.unwrap_or(self.train.epochs),
            ..self.train.clone()
        }
    }
}

fn class_index(ds: &MaskedDataset, class: usize) -> Result<&str> {
    ds.class_names.get(class).map(String::as_str).ok_or(Error::Index {
        what: "class",
        index: class,
        len: ds.class_names.len(),
    })
}

/// Every interior patch of the class-`class` images among `indices`.
pub fn class_patches(ds: &MaskedDataset, indices: &[usize], class: usize, mode: ChannelMode) -> Result<PatchDataset> {
    class_index(ds, class)?;
    let mut out = PatchDataset::new(class);
    for &i in indices.iter().filter(|&&i| ds.images[i].abnormality_id == class) {
        out.extend(&extract_patches(&ds.images[i], mode, i)?)?;
    }
    if out.is_empty() {
        return Err(Error::Data(format!("no training images for class {:?}", ds.class_names[class])));
    }
    Ok(out)
}

fn balance_seed(config: &PipelineConfig, class: usize) -> u64 {
    config.train.seed.wrapping_add(class as u64)
}

/// Balanced abnormal-vs-normal patches of one class.
pub fn seg_training_set(ds: &MaskedDataset, indices: &[usize], class: usize, config: &PipelineConfig) -> Result<PatchDataset> {
    let patches = class_patches(ds, indices, class, config.channel_mode)?;
    balance(&patches, config.balance_ratio, balance_seed(config, class))
}

/// Trains the separate network of one class. All classes start from the
/// same initial weights.
pub fn train_class_network(
    ds: &MaskedDataset,
    indices: &[usize],
    class: usize,
    config: &PipelineConfig,
    on_epoch: &mut dyn FnMut(&EpochLog),
) -> Result<(Network, Vec<EpochLog>)> {
    let name = class_index(ds, class)?.to_string();
    let data = seg_training_set(ds, indices, class, config)?;
    crate::bifurcated::train_separate(
        &ArchitectureSpec::medical(),
        &data.samples,
        vec!["normal".into(), name],
        Some(config.channel_mode),
        &config.train,
        on_epoch,
    )
}

/// Training sets of the classification heads from the unbalanced per-class
/// patches. Head `i` sees every abnormal patch of class `i` as positive and
/// `ratio` times as many negatives, half drawn from the abnormal patches of
/// the other classes and the rest from normal patches of all classes.
pub fn cls_training_sets(per_class: &[PatchDataset], ratio: f64, seed: u64) -> Result<Vec<Samples>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(per_class.len());
    for (i, own) in per_class.iter().enumerate() {
        let positives: Vec<usize> = (0..own.len()).filter(|&p| own.samples.labels[p] == 1).collect();
        if positives.is_empty() {
            return Err(Error::EmptyClass("abnormal"));
        }
        let target = (ratio * positives.len() as f64).round() as usize;
        let mut other_abnormal = Vec::new();
        let mut normal = Vec::new();
        for (c, d) in per_class.iter().enumerate() {
            for p in 0..d.len() {
                match (d.samples.labels[p], c == i) {
                    (1, false) => other_abnormal.push((c, p)),
                    (0, _) => normal.push((c, p)),
                    _ => {}
                }
            }
        }
        let mut picks: Vec<((usize, usize), usize)> = positives.iter().map(|&p| ((i, p), 1)).collect();
        other_abnormal.shuffle(&mut rng);
        other_abnormal.truncate(target / 2);
        let rest = target - other_abnormal.len();
        normal.shuffle(&mut rng);
        normal.truncate(rest);
        picks.extend(other_abnormal.into_iter().chain(normal).map(|cp| (cp, 0)));
        picks.shuffle(&mut rng);
        let mut set = Samples::new(own.samples.dims);
        set.data.reserve(picks.len() * set.sample_len());
        for ((c, p), label) in picks {
            set.push(per_class[c].samples.sample(p), label)?;
        }
        out.push(set);
    }
    Ok(out)
}

/// Merges the separate networks, retrains the segmentation heads with the
/// primary, then trains the classification heads over the frozen primary.
/// Classification heads start from the retrained segmentation heads.
pub fn merge_and_train(
    nets: &[Network],
    ds: &MaskedDataset,
    indices: &[usize],
    config: &PipelineConfig,
    log: &mut dyn FnMut(&str),
) -> Result<MergedModel> {
    if nets.len() != ds.class_names.len() {
        return Err(Error::Config(format!(
            "{} separate networks for {} classes",
            nets.len(),
            ds.class_names.len()
        )));
    }
    let refs: Vec<&Network> = nets.iter().collect();
    let mut model = MergedModel::from_separate(&refs, ds.class_names.clone())?;
    if model.channel_mode != Some(config.channel_mode) {
        return Err(Error::Architecture(format!(
            "separate networks use {:?} input, configuration asks for {}",
            model.channel_mode, config.channel_mode
        )));
    }
    let per_class = (0..nets.len())
        .map(|c| class_patches(ds, indices, c, config.channel_mode))
        .collect::<Result<Vec<_>>>()?;
    let seg_sets = per_class
        .iter()
        .enumerate()
        .map(|(c, p)| balance(p, config.balance_ratio, balance_seed(config, c)).map(|b| b.samples))
        .collect::<Result<Vec<_>>>()?;
    let head_cfg = config.head_config();
    model.train_seg_heads(&seg_sets, &head_cfg, &mut |e| log(&format!("seg {e}")))?;
    drop(seg_sets);
    let cls_sets = cls_training_sets(&per_class, config.balance_ratio, config.train.seed)?;
    drop(per_class);
    model.cls_heads = model.seg_heads.clone();
    model.train_cls_heads(&cls_sets, &head_cfg, &mut |e| log(&format!("cls {e}")))?;
    Ok(model)
}

fn round6(v: f64) -> f64 {
    (v * 1e6).round() / 1e6
}

/// Mean per-image scores of one class.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SegRow {
    pub class: String,
    pub images: usize,
    pub dice: f64,
    pub accuracy: f64,
    pub sensitivity: f64,
    pub specificity: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImageRecord {
    pub name: String,
    pub true_class: usize,
    pub predicted: Option<usize>,
    pub similarities: Vec<f64>,
    /// Dice of the true class's segmentation map after largest-component filtering.
    pub seg_dice: f64,
    /// Dice of the fused output map.
    pub final_dice: f64,
    pub separate_dice: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub class_names: Vec<String>,
    pub dice_protocol: String,
    /// Segmentation branch, true class's head.
    pub segmentation: Vec<SegRow>,
    /// Fused output map.
    pub final_output: Vec<SegRow>,
    /// Separate networks, when supplied.
    pub separate: Option<Vec<SegRow>>,
    pub confusion: ConfusionMatrix,
    pub class_stats: Vec<ClassStats>,
    pub classification_accuracy: f64,
    pub images: Vec<ImageRecord>,
}

fn rows(names: &[String], per_image: &[(usize, SegScores)]) -> Vec<SegRow> {
    names
        .iter()
        .enumerate()
        .map(|(c, name)| {
            let s: Vec<&SegScores> = per_image.iter().filter(|(t, _)| *t == c).map(|(_, s)| s).collect();
            let mean = |f: fn(&SegScores) -> f64| {
                if s.is_empty() {
                    0.0
                } else {
                    round6(s.iter().map(|x| f(x)).sum::<f64>() / s.len() as f64)
                }
            };
            SegRow {
                class: name.clone(),
                images: s.len(),
                dice: mean(|x| x.dice),
                accuracy: mean(|x| x.accuracy),
                sensitivity: mean(|x| x.sensitivity),
                specificity: mean(|x| x.specificity),
            }
        })
        .collect()
}

/// Scores the merged model (and optionally the separate networks) on the
/// images `indices`. Every map is reduced to its largest connected
/// component before scoring.
pub fn evaluate(
    model: &MergedModel,
    separate: Option<&[Network]>,
    ds: &MaskedDataset,
    indices: &[usize],
) -> Result<EvalReport> {
    if indices.is_empty() {
        return Err(Error::Data("evaluation set is empty".into()));
    }
    if ds.class_names != model.class_names {
        return Err(Error::Config(format!(
            "dataset classes {:?} differ from model classes {:?}",
            ds.class_names, model.class_names
        )));
    }
    if let Some(nets) = separate {
        if nets.len() != model.class_count() {
            return Err(Error::Config(format!("{} separate networks for {} classes", nets.len(), model.class_count())));
        }
    }
    let n = model.class_count();
    let mut confusion = ConfusionMatrix::new(n);
    let (mut seg, mut fin, mut sep) = (Vec::new(), Vec::new(), Vec::new());
    let mut images = Vec::with_capacity(indices.len());
    for &i in indices {
        let m = &ds.images[i];
        let t = m.abnormality_id;
        let branch = model.infer(&m.image)?;
        let fused = fuse(&branch)?;
        confusion.add(t, fused.class)?;
        let s = seg_scores(&largest_connected_component(&branch.seg[t]), &m.mask)?;
        let f = seg_scores(&fused.final_map, &m.mask)?;
        seg.push((t, s));
        fin.push((t, f));
        let separate_dice = match separate {
            Some(nets) => {
                let p = seg_scores(&largest_connected_component(&nets[t].segment(&m.image)?), &m.mask)?;
                sep.push((t, p));
                Some(round6(p.dice))
            }
            None => None,
        };
        images.push(ImageRecord {
            name: m.name.clone(),
            true_class: t,
            predicted: fused.class,
            similarities: fused.similarities.iter().map(|&v| round6(v)).collect(),
            seg_dice: round6(s.dice),
            final_dice: round6(f.dice),
            separate_dice,
        });
    }
    Ok(EvalReport {
        class_names: model.class_names.clone(),
        dice_protocol: "per-image Dice after largest-connected-component filtering, averaged per class".into(),
        segmentation: rows(&model.class_names, &seg),
        final_output: rows(&model.class_names, &fin),
        separate: separate.map(|_| rows(&model.class_names, &sep)),
        class_stats: (0..n)
            .map(|c| {
                let s = confusion.class_stats(c);
                ClassStats {
                    sensitivity: round6(s.sensitivity),
                    specificity: round6(s.specificity),
                    accuracy: round6(s.accuracy),
                }
            })
            .collect(),
        classification_accuracy: round6(confusion.accuracy()),
        confusion,
        images,
    })
}

impl EvalReport {
    /// Plain-text tables with the same (rounded) numbers as the JSON form.
    pub fn to_table(&self) -> String {
        use std::fmt::Write;
        let width = self.class_names.iter().map(String::len).max().unwrap_or(5).max(5);
        let mut out = String::new();
        let mut seg_table = |title: &str, rows: &[SegRow]| {
            let _ = writeln!(out, "{title}");
            let _ = writeln!(
                out,
                "{:width$}  {:>6}  {:>8}  {:>8}  {:>11}  {:>11}",
                "class", "images", "dice", "accuracy", "sensitivity", "specificity"
            );
            for r in rows {
                let _ = writeln!(
                    out,
                    "{:width$}  {:>6}  {:>8.6}  {:>8.6}  {:>11.6}  {:>11.6}",
                    r.class, r.images, r.dice, r.accuracy, r.sensitivity, r.specificity
                );
            }
            let _ = writeln!(out);
        };
        seg_table("segmentation branch (merged model)", &self.segmentation);
        seg_table("final classified segmentation", &self.final_output);
        if let Some(rows) = &self.separate {
            seg_table("separate networks", rows);
        }
        let _ = writeln!(out, "confusion matrix (rows: true class, columns: predicted class)");
        let _ = write!(out, "{:width$}", "");
        for name in &self.class_names {
            let _ = write!(out, "  {name:>width$}");
        }
        let _ = writeln!(out, "  {:>width$}", "none");
        for (c, name) in self.class_names.iter().enumerate() {
            let _ = write!(out, "{name:width$}");
            for v in &self.confusion.counts[c] {
                let _ = write!(out, "  {v:>width$}");
            }
            let _ = writeln!(out, "  {:>width$}", self.confusion.rejected[c]);
        }
        let _ = writeln!(out);
        let _ = writeln!(out, "{:width$}  {:>11}  {:>11}  {:>8}", "class", "sensitivity", "specificity", "accuracy");
        for (name, s) in self.class_names.iter().zip(&self.class_stats) {
            let _ = writeln!(
                out,
                "{name:width$}  {:>11.6}  {:>11.6}  {:>8.6}",
                s.sensitivity, s.specificity, s.accuracy
            );
        }
        let _ = writeln!(out, "classification accuracy {:.6}", self.classification_accuracy);
        let _ = writeln!(out, "dice: {}", self.dice_protocol);
        out
    }
}
