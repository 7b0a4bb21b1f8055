//! Frame-sequence manifests: a JSON list of PNG frames with their ids.
//!
//! ```json
//! {"width": 256, "height": 192, "fps": 25.0, "labels": ["car"],
//!  "frames": [{"id": 0, "path": "frames/000000.png"}]}
//! ```
//!
//! Relative frame paths are resolved against the manifest's directory.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{read_json, write_json};
use crate::error::{Error, Result};
use crate::types::{FrameId, FrameRef, FrameSequence};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestFrame {
    pub id: FrameId,
    pub path: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SequenceManifest {
    pub width: u32,
    pub height: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fps: Option<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub labels: Vec<String>,
    pub frames: Vec<ManifestFrame>,
}

impl SequenceManifest {
    pub fn read(path: &Path) -> Result<Self> {
        read_json(path)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        write_json(path, self)
    }

    /// Frame references with paths resolved against `base`, without
    /// touching the files.
    pub fn frame_refs(&self, base: &Path) -> Vec<FrameRef> {
        self.frames
            .iter()
            .map(|f| FrameRef {
                id: f.id,
                path: base.join(&f.path),
            })
            .collect()
    }
}

fn manifest_dir(path: &Path) -> &Path {
    path.parent().unwrap_or(Path::new("."))
}

/// Load a manifest and check that every frame exists and decodes to the
/// declared size. Frame order is the manifest order.
pub fn load_sequence(manifest_path: &Path) -> Result<FrameSequence> {
    let manifest = SequenceManifest::read(manifest_path)?;
    let refs = manifest.frame_refs(manifest_dir(manifest_path));
    let mut seen = std::collections::HashSet::new();
    for f in &refs {
        if !seen.insert(f.id) {
            return Err(Error::Config(format!(
                "duplicate frame id {} in {}",
                f.id,
                manifest_path.display()
            )));
        }
        if !f.path.is_file() {
            return Err(Error::io(
                &f.path,
                std::io::Error::new(std::io::ErrorKind::NotFound, "frame file not found"),
            ));
        }
        let (w, h) = image::image_dimensions(&f.path).map_err(|source| Error::Image {
            path: f.path.clone(),
            source,
        })?;
        if (w, h) != (manifest.width, manifest.height) {
            return Err(Error::DimensionMismatch {
                frame: f.path.display().to_string(),
                got_w: w,
                got_h: h,
                want_w: manifest.width,
                want_h: manifest.height,
            });
        }
    }
    FrameSequence::new(refs, manifest.width, manifest.height)
}

/// Positions `round(i * (len - 1) / (count - 1))` with ties rounded down.
pub fn subsample_positions(len: usize, count: usize) -> Result<Vec<usize>> {
    if count == 0 || count > len {
        return Err(Error::Config(format!(
            "cannot take {count} frames from a sequence of {len}"
        )));
    }
    if count == 1 {
        return Ok(vec![0]);
    }
    let den = count - 1;
    Ok((0..count)
        .map(|i| {
            let num = i * (len - 1);
            let (q, r) = (num / den, num % den);
            if 2 * r > den {
                q + 1
            } else {
                q
            }
        })
        .collect())
}

pub fn uniform_subsample(seq: &FrameSequence, count: usize) -> Result<FrameSequence> {
    Ok(seq.select(&subsample_positions(seq.len(), count)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn subsample_fixtures() {
        assert_eq!(
            subsample_positions(10, 10).unwrap(),
            (0..10).collect::<Vec<_>>()
        );
        assert_eq!(subsample_positions(10, 3).unwrap(), vec![0, 4, 9]);
        assert_eq!(subsample_positions(10, 1).unwrap(), vec![0]);
        assert!(subsample_positions(10, 0).is_err());
        assert!(subsample_positions(10, 11).is_err());
    }

    proptest! {
        #[test]
        fn subsample_keeps_order_and_endpoints(len in 2usize..500, count in 2usize..500) {
            prop_assume!(count <= len);
            let p = subsample_positions(len, count).unwrap();
            prop_assert_eq!(p.len(), count);
            prop_assert_eq!(p[0], 0);
            prop_assert_eq!(p[count - 1], len - 1);
            prop_assert!(p.windows(2).all(|w| w[0] < w[1]));
        }
    }
}
