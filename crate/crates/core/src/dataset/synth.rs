//! Synthetic multi-abnormality images: one colored elliptical blob per image
//! over a textured mucosa-like background.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::layout::{MaskedDataset, MaskedImage};
use crate::error::{Error, Result};
use crate::imaging::{BinaryMap, Image};

/// Minimum Euclidean RGB distance between any two class colors, and between
/// each class color and the background.
pub const MIN_COLOR_SEPARATION: f64 = 80.0;

const DEFAULT_NAMES: [&str; 4] = ["angioectasia", "bleeding", "chylous", "lymphangiectasia"];
const DEFAULT_COLORS: [[u8; 3]; 8] = [
    [220, 200, 50],
    [140, 20, 25],
    [235, 232, 215],
    [150, 165, 205],
    [60, 140, 60],
    [40, 50, 130],
    [30, 30, 30],
    [90, 230, 130],
];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub class_names: Vec<String>,
    /// Mean blob color of each class.
    pub class_colors: Vec<[u8; 3]>,
    /// Per-image uniform shift of the blob color, per channel.
    pub color_jitter: f64,
    /// Standard deviation of per-pixel Gaussian noise.
    pub pixel_noise: f64,
    pub background: [u8; 3],
    /// Peak brightness deviation of the background texture.
    pub texture_amplitude: f64,
    pub width: usize,
    pub height: usize,
    /// Range of the major semi-axis, in pixels.
    pub semi_axis: (f64, f64),
    /// Range of the minor/major axis ratio.
    pub eccentricity: (f64, f64),
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self::with_classes(4).expect("default palette")
    }
}

impl SyntheticSpec {
    /// Default spec with `n` classes drawn from the built-in palette.
    pub fn with_classes(n: usize) -> Result<Self> {
        if n > DEFAULT_COLORS.len() {
            return Err(Error::Config(format!(
                "built-in palette has {} colors, {n} classes requested",
                DEFAULT_COLORS.len()
            )));
        }
        let spec = SyntheticSpec {
            class_names: (0..n)
                .map(|i| DEFAULT_NAMES.get(i).map_or_else(|| format!("class{i}"), |s| s.to_string()))
                .collect(),
            class_colors: DEFAULT_COLORS[..n].to_vec(),
            color_jitter: 10.0,
            pixel_noise: 6.0,
            background: [200, 120, 95],
            texture_amplitude: 15.0,
            width: 48,
            height: 48,
            semi_axis: (8.0, 14.0),
            eccentricity: (0.6, 1.0),
        };
        spec.validate()?;
        Ok(spec)
    }

    /// Upper bound on the distance between a blob's mean color and its class
    /// color: the jitter bound plus three standard errors of the noise mean
    /// over the smallest possible blob, plus rounding.
    pub fn max_mean_color_deviation(&self) -> f64 {
        let min_area = std::f64::consts::PI * self.semi_axis.0 * self.semi_axis.0 * self.eccentricity.0;
        let noise = 3.0 * self.pixel_noise / min_area.sqrt();
        3f64.sqrt() * (self.color_jitter + noise + 0.5)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.class_names.len();
        if n < 2 {
            return Err(Error::Config(format!("synthetic data needs at least 2 classes, got {n}")));
        }
        if self.class_colors.len() != n {
            return Err(Error::Config(format!("{n} class names but {} colors", self.class_colors.len())));
        }
        let dist = |a: [u8; 3], b: [u8; 3]| {
            a.iter().zip(&b).map(|(&x, &y)| (x as f64 - y as f64).powi(2)).sum::<f64>().sqrt()
        };
        for (i, &a) in self.class_colors.iter().enumerate() {
            if dist(a, self.background) < MIN_COLOR_SEPARATION {
                return Err(Error::Config(format!("class {i} color is too close to the background")));
            }
            for (j, &b) in self.class_colors.iter().enumerate().skip(i + 1) {
                if dist(a, b) < MIN_COLOR_SEPARATION {
                    return Err(Error::Config(format!(
                        "class colors {i} and {j} are {:.1} apart, minimum is {MIN_COLOR_SEPARATION}",
                        dist(a, b)
                    )));
                }
            }
        }
        let (lo, hi) = self.semi_axis;
        if !(lo >= 2.0 && lo <= hi && 2.0 * hi + 6.0 <= self.width.min(self.height) as f64) {
            return Err(Error::Config(format!(
                "semi-axis range {lo}..{hi} does not fit a {}x{} image",
                self.width, self.height
            )));
        }
        let (elo, ehi) = self.eccentricity;
        if !(elo > 0.0 && elo <= ehi && ehi <= 1.0) {
            return Err(Error::Config(format!("axis ratio range {elo}..{ehi} must lie in (0, 1]")));
        }
        if !(self.color_jitter >= 0.0 && self.pixel_noise >= 0.0 && self.texture_amplitude >= 0.0) {
            return Err(Error::Config("noise amplitudes must be non-negative".into()));
        }
        Ok(())
    }

    fn render(&self, class: usize, rng: &mut ChaCha8Rng) -> (Image, BinaryMap) {
        let (w, h) = (self.width, self.height);
        let a = rng.gen_range(self.semi_axis.0..=self.semi_axis.1);
        let b = a * rng.gen_range(self.eccentricity.0..=self.eccentricity.1);
        let theta = rng.gen_range(0.0..std::f64::consts::PI);
        let cx = rng.gen_range(a + 2.0..=w as f64 - a - 3.0);
        let cy = rng.gen_range(a + 2.0..=h as f64 - a - 3.0);
        let color: Vec<f64> = self.class_colors[class]
            .iter()
            .map(|&c| c as f64 + rng.gen_range(-self.color_jitter..=self.color_jitter))
            .collect();
        let fx = rng.gen_range(0.15..0.45);
        let fy = rng.gen_range(0.15..0.45);
        let (px, py) = (rng.gen_range(0.0..6.3), rng.gen_range(0.0..6.3));
        let noise = Normal::new(0.0, self.pixel_noise.max(1e-12)).expect("finite std");
        let (sin, cos) = theta.sin_cos();

        let mut mask = BinaryMap::empty(w, h);
        let mut pixels = Vec::with_capacity(w * h * 3);
        for y in 0..h {
            for x in 0..w {
                let (dx, dy) = (x as f64 - cx, y as f64 - cy);
                let u = (dx * cos + dy * sin) / a;
                let v = (-dx * sin + dy * cos) / b;
                let inside = u * u + v * v <= 1.0;
                mask.set(y, x, inside);
                let texture = self.texture_amplitude * (fx * x as f64 + px).sin() * (fy * y as f64 + py).sin();
                for (&c, &bg) in color.iter().zip(&self.background) {
                    let base = if inside { c } else { bg as f64 + texture };
                    let v = base + noise.sample(rng);
                    pixels.push(v.round().clamp(0.0, 255.0) as u8);
                }
            }
        }
        (Image::new(w, h, 3, pixels).expect("synthetic geometry"), mask)
    }
}

/// Generates `per_class` images of every class, class-major, from one seeded
/// stream.
pub fn synth_generate(spec: &SyntheticSpec, per_class: usize, seed: u64) -> Result<MaskedDataset> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut images = Vec::with_capacity(per_class * spec.class_names.len());
    for (class, name) in spec.class_names.iter().enumerate() {
        for i in 0..per_class {
            let (image, mask) = spec.render(class, &mut rng);
            images.push(MaskedImage::new(image, mask, class, format!("{name}/{name}_{i:03}"))?);
        }
    }
    Ok(MaskedDataset {
        class_names: spec.class_names.clone(),
        images,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn three_classes_ten_each() {
        let spec = SyntheticSpec::with_classes(3).unwrap();
        let ds = synth_generate(&spec, 10, 1).unwrap();
        assert_eq!(ds.images.len(), 30);
        assert!(ds.images.iter().all(|m| !m.mask.is_empty()));
        assert_eq!(ds.images[10].abnormality_id, 1);
    }

    #[test]
    fn seeded_generation_is_bit_identical() {
        let spec = SyntheticSpec::default();
        assert_eq!(synth_generate(&spec, 3, 5).unwrap(), synth_generate(&spec, 3, 5).unwrap());
        assert_ne!(synth_generate(&spec, 3, 5).unwrap(), synth_generate(&spec, 3, 6).unwrap());
    }

    #[test]
    fn blob_mean_color_near_class_color() {
        let spec = SyntheticSpec::with_classes(8).unwrap();
        let bound = spec.max_mean_color_deviation();
        for m in synth_generate(&spec, 5, 11).unwrap().images {
            let mut sum = [0.0f64; 3];
            for y in 0..m.image.height() {
                for x in 0..m.image.width() {
                    if m.mask.get(y, x) {
                        for (s, &v) in sum.iter_mut().zip(m.image.pixel(y, x)) {
                            *s += v as f64;
                        }
                    }
                }
            }
            let n = m.mask.count() as f64;
            let target = spec.class_colors[m.abnormality_id];
            let d = (0..3).map(|c| (sum[c] / n - target[c] as f64).powi(2)).sum::<f64>().sqrt();
            assert!(d <= bound, "{}: mean color {d:.2} from class color, bound {bound:.2}", m.name);
        }
    }

    #[test]
    fn validation_rejects_bad_specs() {
        assert!(SyntheticSpec::with_classes(1).is_err());
        assert!(SyntheticSpec::with_classes(9).is_err());
        let mut s = SyntheticSpec::default();
        s.class_colors[1] = [225, 205, 60];
        assert!(s.validate().is_err());
        let s = SyntheticSpec {
            semi_axis: (8.0, 30.0),
            ..SyntheticSpec::default()
        };
        assert!(s.validate().is_err());
    }
}
