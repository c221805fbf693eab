//! Model files: the 4-byte magic `BFNM`, a little-endian `u32` manifest
//! length, a JSON manifest, then every tensor as raw little-endian `f32`
//! values in manifest order. Tensor offsets count from the end of the
//! manifest.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::arch::ArchitectureSpec;
use super::model::MergedModel;
use super::network::Network;
use crate::dataset::ChannelMode;
use crate::error::{Error, Result};
use crate::tensor::{Layer, Stack};

const MAGIC: &[u8; 4] = b"BFNM";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
enum Kind {
    Network,
    Merged,
}

#[derive(Debug, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
    offset: u64,
    crc32: u32,
}

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    format_version: u32,
    kind: Kind,
    arch: ArchitectureSpec,
    class_names: Vec<String>,
    channel_mode: Option<ChannelMode>,
    trained: bool,
    tensors: Vec<TensorEntry>,
}

/// Either kind of model a file can hold.
#[derive(Clone, Debug, PartialEq)]
pub enum ModelFile {
    Network(Network),
    Merged(MergedModel),
}

fn named_layers<'a>(prefix: &str, stack: &'a Stack<f32>, out: &mut Vec<(String, &'a Layer<f32>)>) {
    for (i, l) in stack.layers.iter().enumerate() {
        out.push((format!("{prefix}.{i}"), l));
    }
}

pub fn encode_model(model: &ModelFile) -> Vec<u8> {
    let mut layers = Vec::new();
    let (kind, arch, class_names, channel_mode, trained) = match model {
        ModelFile::Network(n) => {
            named_layers("primary", &n.primary, &mut layers);
            named_layers("head", &n.head, &mut layers);
            (Kind::Network, &n.arch, &n.class_names, n.channel_mode, true)
        }
        ModelFile::Merged(m) => {
            named_layers("primary", &m.primary, &mut layers);
            for (h, head) in m.seg_heads.iter().enumerate() {
                named_layers(&format!("seg.{h}"), head, &mut layers);
            }
            for (h, head) in m.cls_heads.iter().enumerate() {
                named_layers(&format!("cls.{h}"), head, &mut layers);
            }
            (Kind::Merged, &m.arch, &m.class_names, m.channel_mode, m.trained)
        }
    };
    let mut blob = Vec::new();
    let mut tensors = Vec::new();
    for (name, layer) in layers {
        for (suffix, t) in [("weight", &layer.weights), ("bias", &layer.bias)] {
            let start = blob.len();
            for v in t.data() {
                blob.extend_from_slice(&v.to_le_bytes());
            }
            tensors.push(TensorEntry {
                name: format!("{name}.{suffix}"),
                shape: t.shape().to_vec(),
                offset: start as u64,
                crc32: crc32fast::hash(&blob[start..]),
            });
        }
    }
    let manifest = Manifest {
        format_version: FORMAT_VERSION,
        kind,
        arch: arch.clone(),
        class_names: class_names.clone(),
        channel_mode,
        trained,
        tensors,
    };
    let json = serde_json::to_vec(&manifest).expect("manifest serializes");
    let mut out = Vec::with_capacity(8 + json.len() + blob.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(json.len() as u32).to_le_bytes());
    out.extend_from_slice(&json);
    out.extend_from_slice(&blob);
    out
}

struct Reader<'a> {
    entries: std::slice::Iter<'a, TensorEntry>,
    blob: &'a [u8],
}

impl Reader<'_> {
    fn fill(&mut self, name: &str, layer: &mut Layer<f32>) -> Result<()> {
        for (suffix, t) in [("weight", &mut layer.weights), ("bias", &mut layer.bias)] {
            let want = format!("{name}.{suffix}");
            let entry = self
                .entries
                .next()
                .ok_or_else(|| Error::ModelFormat(format!("manifest ends before tensor `{want}`")))?;
            if entry.name != want || entry.shape != t.shape() {
                return Err(Error::ModelFormat(format!(
                    "expected tensor `{want}` {:?}, manifest has `{}` {:?}",
                    t.shape(),
                    entry.name,
                    entry.shape
                )));
            }
            let start = (entry.offset as usize).min(self.blob.len());
            let end = (start + 4 * t.len()).min(self.blob.len());
            let bytes = &self.blob[start..end];
            if crc32fast::hash(bytes) != entry.crc32 || bytes.len() != 4 * t.len() {
                return Err(Error::Checksum { tensor: want });
            }
            for (v, b) in t.data_mut().iter_mut().zip(bytes.chunks_exact(4)) {
                *v = f32::from_le_bytes([b[0], b[1], b[2], b[3]]);
            }
        }
        Ok(())
    }

    fn stack(&mut self, prefix: &str, mut layers: Vec<Layer<f32>>) -> Result<Stack<f32>> {
        for (i, l) in layers.iter_mut().enumerate() {
            self.fill(&format!("{prefix}.{i}"), l)?;
        }
        Ok(Stack::new(layers))
    }
}

pub fn decode_model(bytes: &[u8]) -> Result<ModelFile> {
    if bytes.len() < 8 || &bytes[..4] != MAGIC {
        return Err(Error::ModelFormat("not a model file (bad magic)".into()));
    }
    let len = u32::from_le_bytes([bytes[4], bytes[5], bytes[6], bytes[7]]) as usize;
    let json = bytes
        .get(8..8 + len)
        .ok_or_else(|| Error::ModelFormat("truncated manifest".into()))?;
    let manifest: Manifest = serde_json::from_slice(json)?;
    if manifest.format_version != FORMAT_VERSION {
        return Err(Error::ModelFormat(format!(
            "format version {} is not supported (expected {FORMAT_VERSION})",
            manifest.format_version
        )));
    }
    manifest.arch.validate()?;
    let arch = manifest.arch;
    let mut r = Reader {
        entries: manifest.tensors.iter(),
        blob: &bytes[8 + len..],
    };
    let primary = r.stack("primary", arch.primary_layers())?;
    let model = match manifest.kind {
        Kind::Network => {
            let head = r.stack("head", arch.head_layers())?;
            ModelFile::Network(Network {
                arch,
                class_names: manifest.class_names,
                channel_mode: manifest.channel_mode,
                primary,
                head,
            })
        }
        Kind::Merged => {
            let n = manifest.class_names.len();
            let seg_heads = (0..n)
                .map(|h| r.stack(&format!("seg.{h}"), arch.head_layers()))
                .collect::<Result<Vec<_>>>()?;
            let cls_heads = (0..n)
                .map(|h| r.stack(&format!("cls.{h}"), arch.head_layers()))
                .collect::<Result<Vec<_>>>()?;
            ModelFile::Merged(MergedModel {
                arch,
                class_names: manifest.class_names,
                channel_mode: manifest.channel_mode,
                primary,
                seg_heads,
                cls_heads,
                trained: manifest.trained,
            })
        }
    };
    if let Some(extra) = r.entries.next() {
        return Err(Error::ModelFormat(format!("unexpected tensor `{}`", extra.name)));
    }
    Ok(model)
}

pub fn save_model(model: &ModelFile, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, encode_model(model)).map_err(|e| Error::io(path, e))
}

pub fn load_model(path: impl AsRef<Path>) -> Result<ModelFile> {
    let path = path.as_ref();
    decode_model(&std::fs::read(path).map_err(|e| Error::io(path, e))?)
}

pub fn load_network(path: impl AsRef<Path>) -> Result<Network> {
    match load_model(path)? {
        ModelFile::Network(n) => Ok(n),
        ModelFile::Merged(_) => Err(Error::ModelFormat("expected a single network, found a merged model".into())),
    }
}

pub fn load_merged(path: impl AsRef<Path>) -> Result<MergedModel> {
    match load_model(path)? {
        ModelFile::Merged(m) => Ok(m),
        ModelFile::Network(_) => Err(Error::ModelFormat("expected a merged model, found a single network".into())),
    }
}
