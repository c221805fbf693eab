use super::arch::ArchitectureSpec;
use super::train::{argmax, train_round_robin, EpochLog, TrainConfig};
use crate::dataset::{infer_patch_grid, ChannelMode, PatchGrid, Samples};
use crate::error::{Error, Result};
use crate::imaging::{BinaryMap, Image};
use crate::tensor::{Stack, Tensor};

/// Samples per forward pass during inference.
pub(crate) const INFER_BATCH: usize = 512;

/// A standalone conv primary plus FC head.
#[derive(Clone, Debug, PartialEq)]
pub struct Network {
    pub arch: ArchitectureSpec,
    /// Name of each output index, e.g. `["normal", "bleeding"]`.
    pub class_names: Vec<String>,
    /// Input planes for image patches; `None` for raw samples such as digits.
    pub channel_mode: Option<ChannelMode>,
    pub primary: Stack<f32>,
    pub head: Stack<f32>,
}

impl Network {
    /// He-initialized network; equal seeds give identical weights.
    pub fn new(
        arch: ArchitectureSpec,
        class_names: Vec<String>,
        channel_mode: Option<ChannelMode>,
        seed: u64,
    ) -> Result<Self> {
        if class_names.len() != arch.outputs {
            return Err(Error::Architecture(format!(
                "{} output names for {} outputs",
                class_names.len(),
                arch.outputs
            )));
        }
        let (primary, head) = arch.init(seed)?;
        Ok(Network {
            arch,
            class_names,
            channel_mode,
            primary,
            head,
        })
    }

    pub fn param_count(&self) -> usize {
        self.primary.param_count() + self.head.param_count()
    }

    /// Logits `[B, outputs]` for a `[B, C, H, W]` batch.
    pub fn forward(&self, x: &Tensor<f32>) -> Result<Tensor<f32>> {
        self.head.forward(&self.primary.forward(x)?)
    }

    /// Row-major `[N, outputs]` logits of every sample.
    pub fn logits(&self, samples: &Samples) -> Result<Vec<f32>> {
        let mut out = Vec::with_capacity(samples.len() * self.arch.outputs);
        let idx: Vec<usize> = (0..samples.len()).collect();
        for chunk in idx.chunks(INFER_BATCH) {
            out.extend_from_slice(self.forward(&samples.batch(chunk))?.data());
        }
        Ok(out)
    }

    pub fn predict(&self, samples: &Samples) -> Result<Vec<usize>> {
        Ok(self.logits(samples)?.chunks_exact(self.arch.outputs).map(argmax).collect())
    }

    pub fn accuracy(&self, samples: &Samples) -> Result<f64> {
        if samples.is_empty() {
            return Err(Error::Data("accuracy of an empty set".into()));
        }
        let pred = self.predict(samples)?;
        let hits = pred.iter().zip(&samples.labels).filter(|(p, l)| p == l).count();
        Ok(hits as f64 / samples.len() as f64)
    }

    /// Trains in place on `data` and returns one log line per epoch.
    pub fn train(
        &mut self,
        data: &Samples,
        config: &TrainConfig,
        on_epoch: &mut dyn FnMut(&EpochLog),
    ) -> Result<Vec<EpochLog>> {
        if data.dims != self.arch.input {
            return Err(Error::dim("Network::train", &self.arch.input, &data.dims));
        }
        let heads = std::slice::from_mut(&mut self.head);
        train_round_robin(&mut self.primary, heads, &[data], config, true, on_epoch)
    }

    /// Per-pixel map of output 1 winning the argmax, over a mirror-padded
    /// patch grid.
    pub fn segment(&self, image: &Image) -> Result<BinaryMap> {
        let mode = self
            .channel_mode
            .ok_or_else(|| Error::Architecture("network was not trained on image patches".into()))?;
        let grid = infer_patch_grid(image, mode)?;
        let mut maps = head_maps(&self.primary, &[&self.head], &grid, self.arch.input)?;
        Ok(maps.remove(0))
    }
}

/// Binary maps of every head over `grid`, evaluating the primary once per
/// batch of patches and sharing it across heads.
pub(crate) fn head_maps(
    primary: &Stack<f32>,
    heads: &[&Stack<f32>],
    grid: &PatchGrid,
    input: [usize; 3],
) -> Result<Vec<BinaryMap>> {
    let (w, h) = (grid.width(), grid.height());
    let mut maps = vec![BinaryMap::empty(w, h); heads.len()];
    let mut buf = Vec::new();
    for start in (0..w * h).step_by(INFER_BATCH) {
        let end = (start + INFER_BATCH).min(w * h);
        grid.fill_batch(start, end, &mut buf);
        let x = Tensor::from_vec(&[end - start, input[0], input[1], input[2]], std::mem::take(&mut buf))?;
        let feat = primary.forward(&x)?;
        for (map, head) in maps.iter_mut().zip(heads) {
            mark_positive(map, start, &head.forward(&feat)?);
        }
        buf = x.into_data();
    }
    Ok(maps)
}

pub(crate) fn mark_positive(map: &mut BinaryMap, start: usize, logits: &Tensor<f32>) {
    let k = logits.shape()[1];
    let w = map.width();
    for (i, row) in logits.data().chunks_exact(k).enumerate() {
        if argmax(row) == 1 {
            let pos = start + i;
            map.set(pos / w, pos % w, true);
        }
    }
}

/// Trains a fresh network of `arch` on `data`.
pub fn train_separate(
    arch: &ArchitectureSpec,
    data: &Samples,
    class_names: Vec<String>,
    channel_mode: Option<ChannelMode>,
    config: &TrainConfig,
    on_epoch: &mut dyn FnMut(&EpochLog),
) -> Result<(Network, Vec<EpochLog>)> {
    if data.is_empty() {
        return Err(Error::Data("cannot train on an empty dataset".into()));
    }
    let mut net = Network::new(arch.clone(), class_names, channel_mode, config.seed)?;
    let logs = net.train(data, config, on_epoch)?;
    Ok((net, logs))
}
