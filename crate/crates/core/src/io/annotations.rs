//! Per-frame object lists for ground truth, detections and datasets.
//!
//! ```json
//! {"labels": ["car", "pedestrian"],
//!  "frames": [{"frame": 0, "objects": [{"label": "car", "u": 1, "v": 2, "w": 30, "h": 20}]}]}
//! ```
//!
//! Detection files use the same layout with a `score` on every object.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{read_json, write_json};
use crate::error::{Error, Result};
use crate::geometry::BoundingBox;
use crate::types::{FrameId, GroundTruth, Object, Sample};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameObjects<T> {
    pub frame: FrameId,
    pub objects: Vec<T>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredObject {
    pub label: String,
    pub score: f64,
    #[serde(flatten)]
    pub bbox: BoundingBox,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotationFile {
    #[serde(default)]
    pub labels: Vec<String>,
    pub frames: Vec<FrameObjects<Object>>,
}

impl AnnotationFile {
    pub fn from_ground_truth(labels: Vec<String>, gt: &GroundTruth) -> Self {
        AnnotationFile {
            labels,
            frames: gt
                .iter()
                .map(|(&frame, objects)| FrameObjects {
                    frame,
                    objects: objects.clone(),
                })
                .collect(),
        }
    }

    pub fn ground_truth(&self) -> GroundTruth {
        let mut gt = GroundTruth::new();
        for f in &self.frames {
            gt.entry(f.frame)
                .or_default()
                .extend(f.objects.iter().cloned());
        }
        gt
    }

    /// Labels must come from the declared label space when one is given.
    pub fn validate(&self) -> Result<()> {
        if self.labels.is_empty() {
            return Ok(());
        }
        for f in &self.frames {
            if let Some(o) = f.objects.iter().find(|o| !self.labels.contains(&o.label)) {
                return Err(Error::Config(format!(
                    "frame {}: label {:?} not declared",
                    f.frame, o.label
                )));
            }
        }
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        let file: Self = read_json(path)?;
        file.validate()?;
        Ok(file)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        write_json(path, self)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionFile {
    #[serde(default)]
    pub labels: Vec<String>,
    pub frames: Vec<FrameObjects<ScoredObject>>,
}

impl DetectionFile {
    /// Group samples by frame; every id in `frames` gets an entry, even
    /// when it has no detections.
    pub fn from_samples(
        labels: Vec<String>,
        frames: impl IntoIterator<Item = FrameId>,
        samples: &[Sample],
    ) -> Self {
        let mut by_frame: BTreeMap<FrameId, Vec<ScoredObject>> =
            frames.into_iter().map(|f| (f, Vec::new())).collect();
        for s in samples {
            by_frame.entry(s.frame).or_default().push(ScoredObject {
                label: s.label.clone(),
                score: s.score,
                bbox: s.bbox,
            });
        }
        DetectionFile {
            labels,
            frames: by_frame
                .into_iter()
                .map(|(frame, objects)| FrameObjects { frame, objects })
                .collect(),
        }
    }

    pub fn samples(&self) -> Result<Vec<Sample>> {
        self.frames
            .iter()
            .flat_map(|f| {
                f.objects
                    .iter()
                    .map(move |o| Sample::new(f.frame, o.label.clone(), o.score, o.bbox))
            })
            .collect()
    }

    pub fn read(path: &Path) -> Result<Self> {
        let file: Self = read_json(path)?;
        file.samples()?;
        Ok(file)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        write_json(path, self)
    }
}
