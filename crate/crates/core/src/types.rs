//! Samples, datasets and frame sequences shared by every stage.

use std::collections::{BTreeMap, HashMap};
use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::BoundingBox;

/// Identifier of a frame within its source sequence. Stable under
/// subsampling and splitting.
pub type FrameId = u32;

/// One detection or pseudo-label: position, class and confidence on a frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub frame: FrameId,
    pub label: String,
    pub score: f64,
    #[serde(flatten)]
    pub bbox: BoundingBox,
}

impl Sample {
    pub fn new(
        frame: FrameId,
        label: impl Into<String>,
        score: f64,
        bbox: BoundingBox,
    ) -> Result<Self> {
        if !(0.0..=1.0).contains(&score) {
            return Err(Error::Config(format!("score {score} outside [0,1]")));
        }
        Ok(Sample {
            frame,
            label: label.into(),
            score,
            bbox,
        })
    }

    /// The `(frame, box, label)` identity used by the duplication cap.
    pub fn key(&self) -> (FrameId, BoundingBox, &str) {
        (self.frame, self.bbox, self.label.as_str())
    }
}

/// A labelled box without a score: ground truth or a training target.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Object {
    pub label: String,
    #[serde(flatten)]
    pub bbox: BoundingBox,
}

/// Objects per frame.
pub type GroundTruth = BTreeMap<FrameId, Vec<Object>>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightedSample {
    pub sample: Sample,
    pub weight: f64,
}

/// The resampled pseudo-labelled set produced at one iteration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpecializedDataset {
    pub iteration: usize,
    pub samples: Vec<Sample>,
}

impl SpecializedDataset {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Largest number of exact copies of any `(frame, box, label)` triple.
    pub fn max_multiplicity(&self) -> usize {
        let mut counts: HashMap<_, usize> = HashMap::new();
        for s in &self.samples {
            *counts.entry(s.key()).or_default() += 1;
        }
        counts.into_values().max().unwrap_or(0)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FrameRef {
    pub id: FrameId,
    pub path: PathBuf,
}

/// Ordered frames of one fixed camera, all with the same dimensions.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FrameSequence {
    frames: Vec<FrameRef>,
    width: u32,
    height: u32,
}

impl FrameSequence {
    pub fn new(frames: Vec<FrameRef>, width: u32, height: u32) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::Config(format!(
                "frame size {width}x{height} is empty"
            )));
        }
        Ok(FrameSequence {
            frames,
            width,
            height,
        })
    }

    pub fn frames(&self) -> &[FrameRef] {
        &self.frames
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn get(&self, id: FrameId) -> Option<&FrameRef> {
        self.frames.iter().find(|f| f.id == id)
    }

    pub fn ids(&self) -> impl Iterator<Item = FrameId> + '_ {
        self.frames.iter().map(|f| f.id)
    }

    /// A sequence over the frames at the given positions, in the given order.
    pub fn select(&self, positions: &[usize]) -> FrameSequence {
        FrameSequence {
            frames: positions.iter().map(|&i| self.frames[i].clone()).collect(),
            width: self.width,
            height: self.height,
        }
    }
}
