//! Masked images and the on-disk dataset directory layout:
//! `<root>/<class>/images/<stem>.ppm` paired with `<root>/<class>/masks/<stem>.pgm`.

use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::imaging::{load_pnm, save_pnm, BinaryMap, Image};

/// An RGB image with its ground-truth abnormality mask.
#[derive(Clone, Debug, PartialEq)]
pub struct MaskedImage {
    pub image: Image,
    pub mask: BinaryMap,
    pub abnormality_id: usize,
    pub name: String,
}

impl MaskedImage {
    pub fn new(image: Image, mask: BinaryMap, abnormality_id: usize, name: impl Into<String>) -> Result<Self> {
        if image.width() != mask.width() || image.height() != mask.height() {
            return Err(Error::dim(
                "MaskedImage::new",
                &[image.height(), image.width()],
                &[mask.height(), mask.width()],
            ));
        }
        Ok(MaskedImage {
            image,
            mask,
            abnormality_id,
            name: name.into(),
        })
    }
}

/// Class names and their images, with `abnormality_id` indexing `class_names`.
#[derive(Clone, Debug, PartialEq)]
pub struct MaskedDataset {
    pub class_names: Vec<String>,
    pub images: Vec<MaskedImage>,
}

fn sorted_entries(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for entry in std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        out.push(entry.map_err(|e| Error::io(dir, e))?.path());
    }
    out.sort();
    Ok(out)
}

/// Loads the classes listed in `classes` (in that order), or every class
/// subdirectory in name order when `classes` is `None`.
pub fn load_dataset_dir(root: impl AsRef<Path>, classes: Option<&[String]>) -> Result<MaskedDataset> {
    let root = root.as_ref();
    let class_names: Vec<String> = match classes {
        Some(c) => c.to_vec(),
        None => sorted_entries(root)?
            .into_iter()
            .filter(|p| p.join("images").is_dir())
            .filter_map(|p| p.file_name().map(|n| n.to_string_lossy().into_owned()))
            .collect(),
    };
    if class_names.len() < 2 {
        return Err(Error::Data(format!(
            "{} holds {} class directories, need at least 2",
            root.display(),
            class_names.len()
        )));
    }
    let mut images = Vec::new();
    for (id, class) in class_names.iter().enumerate() {
        let dir = root.join(class);
        let mut count = 0;
        for path in sorted_entries(&dir.join("images"))? {
            if path.extension().and_then(|e| e.to_str()) != Some("ppm") {
                continue;
            }
            let stem = path.file_stem().unwrap_or_default().to_string_lossy().into_owned();
            let mask_path = dir.join("masks").join(format!("{stem}.pgm"));
            if !mask_path.is_file() {
                return Err(Error::Data(format!("{} has no mask {}", path.display(), mask_path.display())));
            }
            let image = load_pnm(&path)?;
            image.require_rgb("dataset image")?;
            let mask = BinaryMap::from_mask(&load_pnm(&mask_path)?)?;
            images.push(MaskedImage::new(image, mask, id, format!("{class}/{stem}"))?);
            count += 1;
        }
        if count == 0 {
            return Err(Error::Data(format!("class {class:?} has no images")));
        }
    }
    Ok(MaskedDataset { class_names, images })
}

/// Writes `dataset` in the directory layout read by [`load_dataset_dir`].
/// Image names may carry a `<class>/` prefix, which is stripped.
pub fn save_dataset_dir(dataset: &MaskedDataset, root: impl AsRef<Path>) -> Result<()> {
    let root = root.as_ref();
    for class in &dataset.class_names {
        for sub in ["images", "masks"] {
            let dir = root.join(class).join(sub);
            std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        }
    }
    for m in &dataset.images {
        let class = dataset.class_names.get(m.abnormality_id).ok_or(Error::Index {
            what: "abnormality id",
            index: m.abnormality_id,
            len: dataset.class_names.len(),
        })?;
        let stem = m.name.rsplit('/').next().unwrap_or(&m.name);
        let dir = root.join(class);
        save_pnm(&m.image, dir.join("images").join(format!("{stem}.ppm")))?;
        save_pnm(&m.mask.to_image(), dir.join("masks").join(format!("{stem}.pgm")))?;
    }
    Ok(())
}

/// Splits image indices into `(train, test)` per class by a seeded shuffle.
/// Each class contributes `round(train_fraction * n)` images to training.
pub fn split_by_image(images: &[MaskedImage], train_fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let classes = images.iter().map(|m| m.abnormality_id + 1).max().unwrap_or(0);
    let (mut train, mut test) = (Vec::new(), Vec::new());
    for class in 0..classes {
        let mut idx: Vec<usize> = (0..images.len()).filter(|&i| images[i].abnormality_id == class).collect();
        idx.shuffle(&mut rng);
        let cut = ((train_fraction * idx.len() as f64).round() as usize).min(idx.len());
        train.extend_from_slice(&idx[..cut]);
        test.extend_from_slice(&idx[cut..]);
    }
    train.sort_unstable();
    test.sort_unstable();
    (train, test)
}
