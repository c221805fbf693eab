//! The three network input channels for endoscopy images: BT.601 luma, HSV
//! saturation and CIELAB a* (sRGB, D65 white), each scaled to `[0, 1]`.

use std::sync::OnceLock;

use super::{Image, Plane};
use crate::error::Result;

const D65: [f64; 3] = [0.95047, 1.0, 1.08883];

const SRGB_TO_XYZ: [[f64; 3]; 3] = [
    [0.4124564, 0.3575761, 0.1804375],
    [0.2126729, 0.7151522, 0.0721750],
    [0.0193339, 0.1191920, 0.9503041],
];

fn linear_table() -> &'static [f64; 256] {
    static TABLE: OnceLock<[f64; 256]> = OnceLock::new();
    TABLE.get_or_init(|| {
        let mut t = [0.0; 256];
        for (v, out) in t.iter_mut().enumerate() {
            let c = v as f64 / 255.0;
            *out = if c <= 0.04045 {
                c / 12.92
            } else {
                ((c + 0.055) / 1.055).powf(2.4)
            };
        }
        t
    })
}

fn lab_f(t: f64) -> f64 {
    const DELTA: f64 = 6.0 / 29.0;
    if t > DELTA * DELTA * DELTA {
        t.cbrt()
    } else {
        t / (3.0 * DELTA * DELTA) + 4.0 / 29.0
    }
}

/// CIELAB `(L*, a*, b*)` of an 8-bit sRGB triple under D65.
pub fn srgb_to_lab(r: u8, g: u8, b: u8) -> (f64, f64, f64) {
    let lin = linear_table();
    let rgb = [lin[r as usize], lin[g as usize], lin[b as usize]];
    let xyz: Vec<f64> = SRGB_TO_XYZ
        .iter()
        .zip(D65)
        .map(|(row, white)| row.iter().zip(rgb).map(|(m, c)| m * c).sum::<f64>() / white)
        .collect();
    let (fx, fy, fz) = (lab_f(xyz[0]), lab_f(xyz[1]), lab_f(xyz[2]));
    (116.0 * fy - 16.0, 500.0 * (fx - fy), 200.0 * (fy - fz))
}

pub(crate) fn gray_value(r: u8, g: u8, b: u8) -> f32 {
    let v = (0.299 * r as f64 + 0.587 * g as f64 + 0.114 * b as f64) / 255.0;
    v.clamp(0.0, 1.0) as f32
}

pub(crate) fn hsv_s_value(r: u8, g: u8, b: u8) -> f32 {
    let max = r.max(g).max(b);
    if max == 0 {
        return 0.0;
    }
    let min = r.min(g).min(b);
    (max - min) as f32 / max as f32
}

/// a* clamped to `[-128, 127]` and mapped affinely onto `[0, 1]`.
pub(crate) fn lab_a_value(r: u8, g: u8, b: u8) -> f32 {
    let (_, a, _) = srgb_to_lab(r, g, b);
    ((a.clamp(-128.0, 127.0) + 128.0) / 255.0) as f32
}

fn per_pixel(image: &Image, what: &'static str, f: impl Fn(u8, u8, u8) -> f32) -> Result<Plane> {
    image.require_rgb(what)?;
    Ok(Plane {
        width: image.width(),
        height: image.height(),
        data: image.pixels().chunks_exact(3).map(|p| f(p[0], p[1], p[2])).collect(),
    })
}

pub fn rgb_to_gray(image: &Image) -> Result<Plane> {
    per_pixel(image, "rgb_to_gray", gray_value)
}

pub fn rgb_to_hsv_s(image: &Image) -> Result<Plane> {
    per_pixel(image, "rgb_to_hsv_s", hsv_s_value)
}

pub fn rgb_to_lab_a(image: &Image) -> Result<Plane> {
    per_pixel(image, "rgb_to_lab_a", lab_a_value)
}
