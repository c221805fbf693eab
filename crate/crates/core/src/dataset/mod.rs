//! Training data: MNIST IDX files, masked medical images, patch extraction
//! and balancing, the on-disk dataset layout, and a synthetic generator.

mod layout;
mod mnist;
mod patches;
mod synth;

pub use layout::{load_dataset_dir, save_dataset_dir, split_by_image, MaskedDataset, MaskedImage};
pub use mnist::{load_mnist, load_mnist_dir};
pub use patches::{
    balance, channel_planes, extract_patches, infer_patch_grid, ChannelMode, LabeledPatch, PatchDataset, PatchGrid,
    Provenance, PATCH_CHANNELS, PATCH_HALF, PATCH_SIZE,
};
pub use synth::{synth_generate, SyntheticSpec, MIN_COLOR_SEPARATION};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Contiguous labeled samples of identical `[C, H, W]` shape.
#[derive(Clone, Debug, PartialEq)]
pub struct Samples {
    pub dims: [usize; 3],
    pub data: Vec<f32>,
    pub labels: Vec<usize>,
}

impl Samples {
    pub fn new(dims: [usize; 3]) -> Self {
        Samples {
            dims,
            data: Vec::new(),
            labels: Vec::new(),
        }
    }

    pub fn sample_len(&self) -> usize {
        self.dims.iter().product()
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn sample(&self, i: usize) -> &[f32] {
        let n = self.sample_len();
        &self.data[i * n..(i + 1) * n]
    }

    pub fn push(&mut self, sample: &[f32], label: usize) -> Result<()> {
        if sample.len() != self.sample_len() {
            return Err(Error::dim("Samples::push", &self.dims, &[sample.len()]));
        }
        self.data.extend_from_slice(sample);
        self.labels.push(label);
        Ok(())
    }

    /// Stacks the selected samples into a `[B, C, H, W]` tensor.
    pub fn batch(&self, indices: &[usize]) -> Tensor<f32> {
        let n = self.sample_len();
        let mut data = Vec::with_capacity(indices.len() * n);
        for &i in indices {
            data.extend_from_slice(self.sample(i));
        }
        let [c, h, w] = self.dims;
        Tensor::from_vec(&[indices.len(), c, h, w], data).expect("batch geometry")
    }

    pub fn subset(&self, indices: &[usize]) -> Samples {
        let mut out = Samples::new(self.dims);
        for &i in indices {
            out.data.extend_from_slice(self.sample(i));
            out.labels.push(self.labels[i]);
        }
        out
    }

    /// Copy with every label replaced by `f(label)`.
    pub fn relabeled(&self, f: impl Fn(usize) -> usize) -> Samples {
        Samples {
            dims: self.dims,
            data: self.data.clone(),
            labels: self.labels.iter().map(|&l| f(l)).collect(),
        }
    }

    /// Every label-1 sample plus up to `ratio` times as many label-0 samples,
    /// shuffled by `seed`.
    pub fn balanced(&self, ratio: f64, seed: u64) -> Result<Samples> {
        Ok(self.subset(&patches::balanced_order(&self.labels, ratio, seed)?))
    }

    pub fn extend(&mut self, other: &Samples) -> Result<()> {
        if other.dims != self.dims {
            return Err(Error::dim("Samples::extend", &self.dims, &other.dims));
        }
        self.data.extend_from_slice(&other.data);
        self.labels.extend_from_slice(&other.labels);
        Ok(())
    }
}
