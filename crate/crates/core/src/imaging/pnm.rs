//! Binary PGM (`P5`) and PPM (`P6`) with maxval 255.

use std::path::Path;

use super::Image;
use crate::error::{Error, Result};

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Cursor<'_> {
    fn skip_space_and_comments(&mut self) {
        while let Some(&b) = self.bytes.get(self.pos) {
            if b == b'#' {
                while let Some(&c) = self.bytes.get(self.pos) {
                    self.pos += 1;
                    if c == b'\n' {
                        break;
                    }
                }
            } else if b.is_ascii_whitespace() {
                self.pos += 1;
            } else {
                break;
            }
        }
    }

    fn number(&mut self, what: &str) -> Result<(usize, usize)> {
        self.skip_space_and_comments();
        let start = self.pos;
        while self.bytes.get(self.pos).is_some_and(u8::is_ascii_digit) {
            self.pos += 1;
        }
        if start == self.pos {
            return Err(Error::format(start, format!("expected {what}")));
        }
        std::str::from_utf8(&self.bytes[start..self.pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .map(|v| (v, start))
            .ok_or_else(|| Error::format(start, format!("{what} out of range")))
    }
}

pub fn decode_pnm(bytes: &[u8]) -> Result<Image> {
    let channels = match bytes.get(..2) {
        Some(b"P5") => 1,
        Some(b"P6") => 3,
        _ => return Err(Error::format(0, "bad magic, expected P5 or P6")),
    };
    let mut cur = Cursor { bytes, pos: 2 };
    let (width, _) = cur.number("width")?;
    let (height, _) = cur.number("height")?;
    let (maxval, maxval_at) = cur.number("maxval")?;
    if maxval != 255 {
        return Err(Error::format(maxval_at, format!("maxval {maxval}, only 255 is supported")));
    }
    if width == 0 || height == 0 {
        return Err(Error::format(2, "zero image dimension"));
    }
    match bytes.get(cur.pos) {
        Some(b) if b.is_ascii_whitespace() => cur.pos += 1,
        _ => return Err(Error::format(cur.pos, "expected a single whitespace before the raster")),
    }
    let need = width * height * channels;
    let raster = &bytes[cur.pos..];
    if raster.len() < need {
        return Err(Error::format(
            bytes.len(),
            format!("truncated raster: {} of {need} bytes", raster.len()),
        ));
    }
    Image::new(width, height, channels, raster[..need].to_vec())
}

pub fn encode_pnm(image: &Image) -> Vec<u8> {
    let magic = if image.channels() == 1 { "P5" } else { "P6" };
    let mut out = format!("{magic}\n{} {}\n255\n", image.width(), image.height()).into_bytes();
    out.extend_from_slice(image.pixels());
    out
}

pub fn load_pnm(path: impl AsRef<Path>) -> Result<Image> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_pnm(&bytes)
}

/// Writes `image`; a `.pgm` path requires one channel and `.ppm` three.
pub fn save_pnm(image: &Image, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let ext = path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase);
    let expected = match ext.as_deref() {
        Some("pgm") => Some(1),
        Some("ppm") => Some(3),
        _ => None,
    };
    if let Some(expected) = expected {
        if expected != image.channels() {
            return Err(Error::Channel {
                what: "PNM save",
                expected,
                got: image.channels(),
            });
        }
    }
    std::fs::write(path, encode_pnm(image)).map_err(|e| Error::io(path, e))
}
