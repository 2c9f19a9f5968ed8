use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::raster::{
    load_raster, mask_from_raster, rle_encode, save_raster, DEFAULT_MASK_THRESHOLD,
};
use crate::trainer::{hex_sha256, Sample};

pub const IMAGE_DIR: &str = "images";
pub const MASK_DIR: &str = "masks";

pub fn image_path(root: &Path, id: &str) -> PathBuf {
    root.join(IMAGE_DIR).join(format!("{}.ppm", id))
}

pub fn mask_path(root: &Path, id: &str) -> PathBuf {
    root.join(MASK_DIR).join(format!("{}.pgm", id))
}

/// Write `images/<id>.ppm`, `masks/<id>.pgm` and `masks/<id>.rle.json`.
pub fn write_dataset(root: &Path, samples: &[Sample]) -> Result<()> {
    fs::create_dir_all(root.join(IMAGE_DIR))?;
    fs::create_dir_all(root.join(MASK_DIR))?;
    for s in samples {
        save_raster(&s.image, image_path(root, &s.id))?;
        save_raster(&s.mask.to_raster(), mask_path(root, &s.id))?;
        let rle = serde_json::to_string(&rle_encode(&s.mask))?;
        fs::write(
            root.join(MASK_DIR).join(format!("{}.rle.json", s.id)),
            rle + "\n",
        )?;
    }
    Ok(())
}

/// Ids of all images under `root/images`, sorted.
pub fn list_ids(root: &Path) -> Result<Vec<String>> {
    let mut ids = Vec::new();
    for entry in fs::read_dir(root.join(IMAGE_DIR))? {
        let path = entry?.path();
        if path.extension().and_then(|e| e.to_str()) == Some("ppm") {
            if let Some(stem) = path.file_stem().and_then(|s| s.to_str()) {
                ids.push(stem.to_string());
            }
        }
    }
    ids.sort();
    Ok(ids)
}

pub fn load_sample(root: &Path, id: &str) -> Result<Sample> {
    let image = load_raster(image_path(root, id))?;
    let mask = mask_from_raster(&load_raster(mask_path(root, id))?, DEFAULT_MASK_THRESHOLD)?;
    Sample::new(id, image, mask)
}

pub fn load_dataset(root: &Path) -> Result<Vec<Sample>> {
    let ids = list_ids(root)?;
    if ids.is_empty() {
        return Err(Error::Invalid(format!(
            "no images under {}",
            root.join(IMAGE_DIR).display()
        )));
    }
    ids.iter().map(|id| load_sample(root, id)).collect()
}

/// Content hash over ids, pixels and masks.
pub fn dataset_hash(samples: &[Sample]) -> String {
    let mut bytes = Vec::new();
    for s in samples {
        bytes.extend_from_slice(s.id.as_bytes());
        bytes.push(0);
        bytes.extend_from_slice(&s.image.to_pnm_bytes());
        bytes.extend_from_slice(s.mask.bits());
    }
    hex_sha256(&bytes)
}
