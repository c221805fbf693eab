use super::arch::ArchitectureSpec;
use super::merge::merge_primary;
use super::network::{head_maps, Network, INFER_BATCH};
use super::train::{train_round_robin, EpochLog, TrainConfig};
use crate::dataset::{infer_patch_grid, ChannelMode, Samples};
use crate::error::{Error, Result};
use crate::imaging::{BinaryMap, Image};
use crate::tensor::{Stack, Tensor};

/// Shared primary with `n` segmentation heads and `n` classification heads.
#[derive(Clone, Debug, PartialEq)]
pub struct MergedModel {
    pub arch: ArchitectureSpec,
    pub class_names: Vec<String>,
    /// Input planes for image patches; `None` for raw samples such as digits.
    pub channel_mode: Option<ChannelMode>,
    pub primary: Stack<f32>,
    pub seg_heads: Vec<Stack<f32>>,
    pub cls_heads: Vec<Stack<f32>>,
    /// Set once both head sets have been retrained over the shared primary.
    pub trained: bool,
}

/// The per-class maps of both branches for one image.
#[derive(Clone, Debug, PartialEq)]
pub struct BranchOutput {
    pub seg: Vec<BinaryMap>,
    pub cls: Vec<BinaryMap>,
}

impl MergedModel {
    /// Averages the primaries of the separate networks and starts every
    /// segmentation head from the head of the matching separate network.
    /// Classification heads start as copies of the segmentation heads.
    pub fn from_separate(nets: &[&Network], class_names: Vec<String>) -> Result<Self> {
        if nets.len() < 2 {
            return Err(Error::Architecture(format!("merging needs at least 2 networks, got {}", nets.len())));
        }
        if class_names.len() != nets.len() {
            return Err(Error::Config(format!("{} class names for {} networks", class_names.len(), nets.len())));
        }
        let arch = nets[0].arch.clone();
        if let Some(other) = nets.iter().find(|n| n.arch != arch) {
            return Err(Error::Architecture(format!("architecture {:?} differs from {:?}", other.arch, arch)));
        }
        let channel_mode = nets[0].channel_mode;
        if nets.iter().any(|n| n.channel_mode != channel_mode) {
            return Err(Error::Architecture("networks were trained on different input channels".into()));
        }
        let primary = merge_primary(nets)?;
        let seg_heads: Vec<Stack<f32>> = nets.iter().map(|n| n.head.clone()).collect();
        Ok(MergedModel {
            arch,
            class_names,
            channel_mode,
            primary,
            cls_heads: seg_heads.clone(),
            seg_heads,
            trained: false,
        })
    }

    pub fn class_count(&self) -> usize {
        self.class_names.len()
    }

    pub fn param_count(&self) -> usize {
        self.primary.param_count()
            + self.seg_heads.iter().chain(&self.cls_heads).map(Stack::param_count).sum::<usize>()
    }

    /// Parameters of the `2n` standalone networks the heads would otherwise need.
    pub fn standalone_param_count(&self) -> usize {
        2 * self.class_count() * self.arch.network_params()
    }

    fn check_datasets(&self, datasets: &[Samples]) -> Result<()> {
        if datasets.len() != self.class_count() {
            return Err(Error::Config(format!(
                "{} training sets for a model with {} classes",
                datasets.len(),
                self.class_count()
            )));
        }
        Ok(())
    }

    /// Retrains segmentation head `i` on `datasets[i]` while fine-tuning the
    /// shared primary, interleaving classes batch by batch.
    pub fn train_seg_heads(
        &mut self,
        datasets: &[Samples],
        config: &TrainConfig,
        on_epoch: &mut dyn FnMut(&EpochLog),
    ) -> Result<Vec<EpochLog>> {
        self.check_datasets(datasets)?;
        let refs: Vec<&Samples> = datasets.iter().collect();
        train_round_robin(&mut self.primary, &mut self.seg_heads, &refs, config, true, on_epoch)
    }

    /// Trains classification head `i` on `datasets[i]` with the primary
    /// frozen. Primary activations are computed once up front.
    pub fn train_cls_heads(
        &mut self,
        datasets: &[Samples],
        config: &TrainConfig,
        on_epoch: &mut dyn FnMut(&EpochLog),
    ) -> Result<Vec<EpochLog>> {
        self.check_datasets(datasets)?;
        let features = datasets.iter().map(|d| self.features(d)).collect::<Result<Vec<_>>>()?;
        let refs: Vec<&Samples> = features.iter().collect();
        let mut frozen = Stack::default();
        let logs = train_round_robin(&mut frozen, &mut self.cls_heads, &refs, config, false, on_epoch)?;
        self.trained = true;
        Ok(logs)
    }

    /// Primary activations of every sample, labels carried over.
    pub fn features(&self, data: &Samples) -> Result<Samples> {
        let mut out = Samples::new(self.arch.primary_output());
        out.data.reserve(data.len() * self.arch.flatten_size());
        let idx: Vec<usize> = (0..data.len()).collect();
        for chunk in idx.chunks(INFER_BATCH) {
            out.data.extend_from_slice(self.primary.forward(&data.batch(chunk))?.data());
        }
        out.labels = data.labels.clone();
        Ok(out)
    }

    fn require_trained(&self) -> Result<()> {
        if self.trained {
            Ok(())
        } else {
            Err(Error::State("model heads have not been trained".into()))
        }
    }

    /// All `2n` maps, computing the primary once per patch batch.
    pub fn infer(&self, image: &Image) -> Result<BranchOutput> {
        self.require_trained()?;
        let mode = self
            .channel_mode
            .ok_or_else(|| Error::Architecture("model was not trained on image patches".into()))?;
        let grid = infer_patch_grid(image, mode)?;
        let heads: Vec<&Stack<f32>> = self.seg_heads.iter().chain(&self.cls_heads).collect();
        let mut maps = head_maps(&self.primary, &heads, &grid, self.arch.input)?;
        let cls = maps.split_off(self.class_count());
        Ok(BranchOutput { seg: maps, cls })
    }

    /// Standalone network made of the shared primary and one head.
    pub fn standalone(&self, head: &Stack<f32>) -> Network {
        Network {
            arch: self.arch.clone(),
            class_names: vec!["normal".into(), "abnormal".into()],
            channel_mode: self.channel_mode,
            primary: self.primary.clone(),
            head: head.clone(),
        }
    }

    /// Same maps as [`MergedModel::infer`], running each head as its own
    /// full network.
    pub fn infer_standalone(&self, image: &Image) -> Result<BranchOutput> {
        self.require_trained()?;
        let run = |heads: &[Stack<f32>]| {
            heads
                .iter()
                .map(|h| self.standalone(h).segment(image))
                .collect::<Result<Vec<_>>>()
        };
        Ok(BranchOutput {
            seg: run(&self.seg_heads)?,
            cls: run(&self.cls_heads)?,
        })
    }

    /// Logits of segmentation head `head` for a batch.
    pub fn seg_logits(&self, head: usize, x: &Tensor<f32>) -> Result<Tensor<f32>> {
        let h = self.seg_heads.get(head).ok_or(Error::Index {
            what: "segmentation head",
            index: head,
            len: self.seg_heads.len(),
        })?;
        h.forward(&self.primary.forward(x)?)
    }
}
