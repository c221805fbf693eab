//! 9x9 patch extraction, balancing and full-image patch grids.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::layout::MaskedImage;
use super::Samples;
use crate::error::{Error, Result};
use crate::imaging::{rgb_to_gray, rgb_to_hsv_s, rgb_to_lab_a, Image, Plane};
use crate::tensor::Tensor;

pub const PATCH_SIZE: usize = 9;
pub const PATCH_HALF: usize = PATCH_SIZE / 2;
pub const PATCH_CHANNELS: usize = 3;

/// How an RGB image becomes the three network input planes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum ChannelMode {
    /// Gray level, HSV saturation and Lab a*.
    #[default]
    Wce,
    /// Normalized R, G, B.
    Rgb,
}

impl std::fmt::Display for ChannelMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            ChannelMode::Wce => "wce",
            ChannelMode::Rgb => "rgb",
        })
    }
}

impl std::str::FromStr for ChannelMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "wce" => Ok(ChannelMode::Wce),
            "rgb" => Ok(ChannelMode::Rgb),
            other => Err(Error::Config(format!("unknown channel mode {other:?}, expected wce or rgb"))),
        }
    }
}

/// The three `[0, 1]` input planes for `image`.
pub fn channel_planes(image: &Image, mode: ChannelMode) -> Result<[Plane; 3]> {
    match mode {
        ChannelMode::Wce => Ok([rgb_to_gray(image)?, rgb_to_hsv_s(image)?, rgb_to_lab_a(image)?]),
        ChannelMode::Rgb => {
            image.require_rgb("rgb planes")?;
            let plane = |c: usize| Plane {
                width: image.width(),
                height: image.height(),
                data: image.pixels().chunks_exact(3).map(|p| p[c] as f32 / 255.0).collect(),
            };
            Ok([plane(0), plane(1), plane(2)])
        }
    }
}

/// Where a patch came from: source image index and center pixel.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub source: usize,
    pub y: usize,
    pub x: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LabeledPatch {
    pub patch: Tensor<f32>,
    pub label: usize,
    pub provenance: Provenance,
}

/// Patches of one abnormality class, labeled 0 (normal) or 1 (abnormal).
#[derive(Clone, Debug, PartialEq)]
pub struct PatchDataset {
    pub abnormality_id: usize,
    pub samples: Samples,
    pub provenance: Vec<Provenance>,
}

impl PatchDataset {
    pub fn new(abnormality_id: usize) -> Self {
        PatchDataset {
            abnormality_id,
            samples: Samples::new([PATCH_CHANNELS, PATCH_SIZE, PATCH_SIZE]),
            provenance: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn get(&self, i: usize) -> LabeledPatch {
        LabeledPatch {
            patch: Tensor::from_vec(&[PATCH_CHANNELS, PATCH_SIZE, PATCH_SIZE], self.samples.sample(i).to_vec())
                .expect("patch geometry"),
            label: self.samples.labels[i],
            provenance: self.provenance[i],
        }
    }

    pub fn count_label(&self, label: usize) -> usize {
        self.samples.labels.iter().filter(|&&l| l == label).count()
    }

    pub fn extend(&mut self, other: &PatchDataset) -> Result<()> {
        self.samples.extend(&other.samples)?;
        self.provenance.extend_from_slice(&other.provenance);
        Ok(())
    }

    fn push(&mut self, patch: &[f32], label: usize, provenance: Provenance) {
        self.samples.data.extend_from_slice(patch);
        self.samples.labels.push(label);
        self.provenance.push(provenance);
    }
}

/// Copies the window centered at `(y, x)` into `out`, reflecting indices
/// that fall outside the plane.
fn window(planes: &[Plane; 3], y: usize, x: usize, out: &mut [f32]) {
    let (h, w) = (planes[0].height, planes[0].width);
    let mut o = 0;
    for plane in planes {
        for dy in 0..PATCH_SIZE {
            let sy = reflect(y as isize + dy as isize - PATCH_HALF as isize, h);
            let row = &plane.data[sy * w..(sy + 1) * w];
            for dx in 0..PATCH_SIZE {
                out[o] = row[reflect(x as isize + dx as isize - PATCH_HALF as isize, w)];
                o += 1;
            }
        }
    }
}

/// Mirror reflection without repeating the edge sample: `-1 -> 1`,
/// `n -> n - 2`. Periodic for offsets beyond one image width.
fn reflect(i: isize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n as isize - 1);
    let m = i.rem_euclid(period);
    (if m < n as isize { m } else { period - m }) as usize
}

/// One labeled patch per interior pixel; `source` is recorded in the
/// provenance of each patch.
pub fn extract_patches(masked: &MaskedImage, mode: ChannelMode, source: usize) -> Result<PatchDataset> {
    let (h, w) = (masked.image.height(), masked.image.width());
    if h < PATCH_SIZE || w < PATCH_SIZE {
        return Err(Error::dim("extract_patches", &[PATCH_SIZE, PATCH_SIZE], &[h, w]));
    }
    let planes = channel_planes(&masked.image, mode)?;
    let mut out = PatchDataset::new(masked.abnormality_id);
    let mut buf = vec![0.0f32; PATCH_CHANNELS * PATCH_SIZE * PATCH_SIZE];
    for y in PATCH_HALF..h - PATCH_HALF {
        for x in PATCH_HALF..w - PATCH_HALF {
            window(&planes, y, x, &mut buf);
            out.push(&buf, masked.mask.get(y, x) as usize, Provenance { source, y, x });
        }
    }
    Ok(out)
}

/// Keeps every abnormal patch, subsamples normals to `ratio` times as many
/// (or keeps all when fewer exist) and shuffles the result.
pub fn balance(dataset: &PatchDataset, ratio: f64, seed: u64) -> Result<PatchDataset> {
    let order = balanced_order(&dataset.samples.labels, ratio, seed)?;
    let mut out = PatchDataset::new(dataset.abnormality_id);
    for i in order {
        out.push(dataset.samples.sample(i), dataset.samples.labels[i], dataset.provenance[i]);
    }
    Ok(out)
}

/// Indices of every label-1 entry plus at most `ratio` times as many label-0
/// entries drawn without replacement, in seeded random order.
pub(crate) fn balanced_order(labels: &[usize], ratio: f64, seed: u64) -> Result<Vec<usize>> {
    if !(ratio.is_finite() && ratio > 0.0) {
        return Err(Error::Config(format!("balance ratio must be positive, got {ratio}")));
    }
    let (positive, mut negative): (Vec<usize>, Vec<usize>) = (0..labels.len()).partition(|&i| labels[i] == 1);
    if positive.is_empty() {
        return Err(Error::EmptyClass("abnormal"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let keep = ((ratio * positive.len() as f64).round() as usize).min(negative.len());
    negative.shuffle(&mut rng);
    negative.truncate(keep);
    let mut order: Vec<usize> = positive.into_iter().chain(negative).collect();
    order.shuffle(&mut rng);
    Ok(order)
}

/// Mirror-padded patches for every pixel of an image, in raster order.
#[derive(Clone, Debug)]
pub struct PatchGrid {
    planes: [Plane; 3],
    next: usize,
}

pub fn infer_patch_grid(image: &Image, mode: ChannelMode) -> Result<PatchGrid> {
    Ok(PatchGrid {
        planes: channel_planes(image, mode)?,
        next: 0,
    })
}

impl PatchGrid {
    pub fn width(&self) -> usize {
        self.planes[0].width
    }

    pub fn height(&self) -> usize {
        self.planes[0].height
    }

    pub fn pixel_count(&self) -> usize {
        self.width() * self.height()
    }

    /// Writes the patch centered at `(y, x)` into `out`
    /// (`PATCH_CHANNELS * PATCH_SIZE * PATCH_SIZE` values).
    pub fn patch_into(&self, y: usize, x: usize, out: &mut [f32]) {
        window(&self.planes, y, x, out);
    }

    /// Stacks the patches of raster positions `start..end` into `out`.
    pub fn fill_batch(&self, start: usize, end: usize, out: &mut Vec<f32>) {
        let n = PATCH_CHANNELS * PATCH_SIZE * PATCH_SIZE;
        out.resize((end - start) * n, 0.0);
        for (slot, pos) in (start..end).enumerate() {
            window(&self.planes, pos / self.width(), pos % self.width(), &mut out[slot * n..(slot + 1) * n]);
        }
    }
}

impl Iterator for PatchGrid {
    type Item = ((usize, usize), Tensor<f32>);

    fn next(&mut self) -> Option<Self::Item> {
        if self.next >= self.pixel_count() {
            return None;
        }
        let (y, x) = (self.next / self.width(), self.next % self.width());
        self.next += 1;
        let mut buf = vec![0.0; PATCH_CHANNELS * PATCH_SIZE * PATCH_SIZE];
        window(&self.planes, y, x, &mut buf);
        let patch = Tensor::from_vec(&[PATCH_CHANNELS, PATCH_SIZE, PATCH_SIZE], buf).expect("patch geometry");
        Some(((y, x), patch))
    }

    fn size_hint(&self) -> (usize, Option<usize>) {
        let rest = self.pixel_count() - self.next;
        (rest, Some(rest))
    }
}

impl ExactSizeIterator for PatchGrid {}
