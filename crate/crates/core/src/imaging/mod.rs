//! 8-bit images, binary maps, PNM I/O, the color-channel transforms used to
//! build network inputs, and connected-component post-processing.

mod color;
mod components;
mod pnm;

pub use color::{rgb_to_gray, rgb_to_hsv_s, rgb_to_lab_a, srgb_to_lab};
pub use components::largest_connected_component;
pub use pnm::{decode_pnm, encode_pnm, load_pnm, save_pnm};

use crate::error::{Error, Result};

/// Row-major interleaved 8-bit image with 1 or 3 channels.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Image {
    width: usize,
    height: usize,
    channels: usize,
    pixels: Vec<u8>,
}

impl Image {
    pub fn new(width: usize, height: usize, channels: usize, pixels: Vec<u8>) -> Result<Self> {
        if width == 0 || height == 0 || !(channels == 1 || channels == 3) {
            return Err(Error::Data(format!("invalid image geometry {width}x{height}x{channels}")));
        }
        if pixels.len() != width * height * channels {
            return Err(Error::dim("Image::new", &[height, width, channels], &[pixels.len()]));
        }
        Ok(Image {
            width,
            height,
            channels,
            pixels,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    pub fn pixel(&self, y: usize, x: usize) -> &[u8] {
        let i = (y * self.width + x) * self.channels;
        &self.pixels[i..i + self.channels]
    }

    pub(crate) fn require_rgb(&self, what: &'static str) -> Result<()> {
        if self.channels != 3 {
            return Err(Error::Channel {
                what,
                expected: 3,
                got: self.channels,
            });
        }
        Ok(())
    }
}

/// Real-valued single-channel map, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct Plane {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f32>,
}

impl Plane {
    pub fn at(&self, y: usize, x: usize) -> f32 {
        self.data[y * self.width + x]
    }
}

/// Per-pixel boolean map.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct BinaryMap {
    width: usize,
    height: usize,
    bits: Vec<bool>,
}

impl BinaryMap {
    pub fn empty(width: usize, height: usize) -> Self {
        BinaryMap {
            width,
            height,
            bits: vec![false; width * height],
        }
    }

    pub fn from_bits(width: usize, height: usize, bits: Vec<bool>) -> Result<Self> {
        if bits.len() != width * height {
            return Err(Error::dim("BinaryMap::from_bits", &[height, width], &[bits.len()]));
        }
        Ok(BinaryMap { width, height, bits })
    }

    /// Reads a ground-truth mask: any sample `>= 128` is abnormal.
    pub fn from_mask(image: &Image) -> Result<Self> {
        if image.channels() != 1 {
            return Err(Error::Channel {
                what: "ground-truth mask",
                expected: 1,
                got: image.channels(),
            });
        }
        Ok(BinaryMap {
            width: image.width(),
            height: image.height(),
            bits: image.pixels().iter().map(|&v| v >= 128).collect(),
        })
    }

    /// Grayscale rendering: 255 for set pixels, 0 elsewhere.
    pub fn to_image(&self) -> Image {
        let pixels = self.bits.iter().map(|&b| if b { 255 } else { 0 }).collect();
        Image {
            width: self.width,
            height: self.height,
            channels: 1,
            pixels,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn get(&self, y: usize, x: usize) -> bool {
        self.bits[y * self.width + x]
    }

    pub fn set(&mut self, y: usize, x: usize, value: bool) {
        self.bits[y * self.width + x] = value;
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.bits.iter().any(|&b| b)
    }

    pub fn same_dims(&self, other: &BinaryMap) -> bool {
        self.width == other.width && self.height == other.height
    }

    pub(crate) fn check_dims(&self, other: &BinaryMap, op: &'static str) -> Result<()> {
        if !self.same_dims(other) {
            return Err(Error::dim(op, &[self.height, self.width], &[other.height, other.width]));
        }
        Ok(())
    }

    pub fn intersection(&self, other: &BinaryMap) -> Result<BinaryMap> {
        self.check_dims(other, "BinaryMap::intersection")?;
        Ok(BinaryMap {
            width: self.width,
            height: self.height,
            bits: self.bits.iter().zip(&other.bits).map(|(&a, &b)| a && b).collect(),
        })
    }
}
