//! File formats: sequence manifests, annotation/detection files, PNG
//! frames and masks, and the synthetic scene generator.

pub mod annotations;
pub mod manifest;
pub mod synth;

use std::fs;
use std::path::Path;

use image::GrayImage;
use serde::Serialize;

use crate::background::to_luma;
use crate::error::{Error, Result};

pub use annotations::{AnnotationFile, DetectionFile};
pub use manifest::{
    load_sequence, subsample_positions, uniform_subsample, ManifestFrame, SequenceManifest,
};
pub use synth::{generate_synthetic_scene, SynthSceneConfig};

/// Write `bytes` to a sibling temporary file, then rename it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(value).map_err(|e| Error::json(path, e))?;
    bytes.push(b'\n');
    write_atomic(path, &bytes)
}

pub fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_slice(&bytes).map_err(|e| Error::json(path, e))
}

pub fn write_png(path: &Path, img: &GrayImage) -> Result<()> {
    let mut bytes = Vec::new();
    img.write_to(
        &mut std::io::Cursor::new(&mut bytes),
        image::ImageFormat::Png,
    )
    .map_err(|source| Error::Image {
        path: path.to_path_buf(),
        source,
    })?;
    write_atomic(path, &bytes)
}

/// Decode a frame to single-channel luma.
pub fn load_gray(path: &Path) -> Result<GrayImage> {
    let img = image::open(path).map_err(|source| Error::Image {
        path: path.to_path_buf(),
        source,
    })?;
    Ok(to_luma(&img))
}
