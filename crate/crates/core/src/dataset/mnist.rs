//! IDX reader for the MNIST handwritten digit files.

use std::path::Path;

use super::Samples;
use crate::error::{Error, Result};

const IMAGE_MAGIC: u32 = 0x0000_0803;
const LABEL_MAGIC: u32 = 0x0000_0801;

fn be_u32(bytes: &[u8], offset: usize) -> Result<u32> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| Error::format(bytes.len(), "truncated IDX header"))
}

fn read(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| Error::io(path, e))
}

/// Parses an IDX image file and label file into `[1, rows, cols]` samples
/// scaled to `[0, 1]`.
pub fn parse_mnist(images: &[u8], labels: &[u8]) -> Result<Samples> {
    let magic = be_u32(images, 0)?;
    if magic != IMAGE_MAGIC {
        return Err(Error::format(0, format!("image file magic {magic:#010x}, expected {IMAGE_MAGIC:#010x}")));
    }
    let count = be_u32(images, 4)? as usize;
    let rows = be_u32(images, 8)? as usize;
    let cols = be_u32(images, 12)? as usize;
    let magic = be_u32(labels, 0)?;
    if magic != LABEL_MAGIC {
        return Err(Error::format(0, format!("label file magic {magic:#010x}, expected {LABEL_MAGIC:#010x}")));
    }
    let label_count = be_u32(labels, 4)? as usize;
    if label_count != count {
        return Err(Error::format(4, format!("{count} images but {label_count} labels")));
    }
    let pixels = images
        .get(16..16 + count * rows * cols)
        .ok_or_else(|| Error::format(images.len(), format!("truncated image payload, need {} bytes", 16 + count * rows * cols)))?;
    let label_bytes = labels
        .get(8..8 + count)
        .ok_or_else(|| Error::format(labels.len(), format!("truncated label payload, need {} bytes", 8 + count)))?;
    Ok(Samples {
        dims: [1, rows, cols],
        data: pixels.iter().map(|&p| p as f32 / 255.0).collect(),
        labels: label_bytes.iter().map(|&l| l as usize).collect(),
    })
}

pub fn load_mnist(images: impl AsRef<Path>, labels: impl AsRef<Path>) -> Result<Samples> {
    parse_mnist(&read(images.as_ref())?, &read(labels.as_ref())?)
}

/// Loads `(train, test)` from a directory holding the four standard files.
pub fn load_mnist_dir(dir: impl AsRef<Path>) -> Result<(Samples, Samples)> {
    let dir = dir.as_ref();
    let train = load_mnist(dir.join("train-images-idx3-ubyte"), dir.join("train-labels-idx1-ubyte"))?;
    let test = load_mnist(dir.join("t10k-images-idx3-ubyte"), dir.join("t10k-labels-idx1-ubyte"))?;
    Ok((train, test))
}
