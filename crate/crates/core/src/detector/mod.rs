//! Detector access: the detect / fine-tune interface, its newline-delimited
//! JSON wire protocol, the built-in mock detector, and anchor machinery.

pub mod anchors;
pub mod mock;
pub mod mock_worker;
pub mod protocol;
pub mod worker;

use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::types::{FrameSequence, Sample, SpecializedDataset};

pub use anchors::{assign_anchor_labels, generate_anchors, Anchor, AnchorLabel, AnchorSpec};
pub use mock::{MockDetector, MockDetectorConfig, ScoreDistribution};
pub use mock_worker::{MockWorker, MockWorkerConfig};
pub use worker::WorkerClient;

/// Free-form fine-tuning hyperparameters forwarded to the worker.
pub type Hyper = BTreeMap<String, serde_json::Value>;

/// SGD settings used for fine-tuning unless overridden.
pub fn default_hyper() -> Hyper {
    let mut h = Hyper::new();
    h.insert("momentum".into(), 0.9.into());
    h.insert("weight_decay".into(), 0.0005.into());
    h
}

/// Something that can run a named model on frames and fine-tune it.
pub trait DetectorBackend: Send + Sync {
    fn detect(
        &self,
        model_id: &str,
        frames: &FrameSequence,
        labels: &[String],
    ) -> Result<Vec<Sample>>;

    /// Returns the id of the newly trained model.
    fn finetune(
        &self,
        model_id: &str,
        frames: &FrameSequence,
        samples: &[Sample],
        hyper: &Hyper,
    ) -> Result<String>;
}

/// A detector backend together with the model currently selected on it.
#[derive(Clone)]
pub struct DetectorHandle {
    backend: Arc<dyn DetectorBackend>,
    model_id: String,
}

impl fmt::Debug for DetectorHandle {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("DetectorHandle")
            .field("model_id", &self.model_id)
            .finish()
    }
}

impl DetectorHandle {
    pub fn new(backend: Arc<dyn DetectorBackend>, model_id: impl Into<String>) -> Self {
        DetectorHandle {
            backend,
            model_id: model_id.into(),
        }
    }

    pub fn model_id(&self) -> &str {
        &self.model_id
    }

    /// The same backend, pointed at another of its models.
    pub fn with_model(&self, model_id: impl Into<String>) -> Self {
        DetectorHandle {
            backend: Arc::clone(&self.backend),
            model_id: model_id.into(),
        }
    }

    /// Proposals on every frame. Boxes are clipped to the frame; labels
    /// outside `label_space` or scores outside `[0,1]` are rejected.
    pub fn detect(&self, frames: &FrameSequence, label_space: &[String]) -> Result<Vec<Sample>> {
        if label_space.is_empty() {
            return Err(Error::Empty("label space"));
        }
        if frames.is_empty() {
            return Err(Error::Empty("frame sequence"));
        }
        let raw = self.backend.detect(&self.model_id, frames, label_space)?;
        let mut out = Vec::with_capacity(raw.len());
        for mut s in raw {
            if !(0.0..=1.0).contains(&s.score) {
                return Err(Error::worker(format!("score {} outside [0,1]", s.score)));
            }
            if !label_space.contains(&s.label) {
                return Err(Error::worker(format!(
                    "label {:?} not in the label space",
                    s.label
                )));
            }
            if frames.get(s.frame).is_none() {
                return Err(Error::worker(format!(
                    "detection on unknown frame {}",
                    s.frame
                )));
            }
            if !s.bbox.fits_in(frames.width(), frames.height()) {
                match s.bbox.rect().clamp_to(frames.width(), frames.height()) {
                    Some(b) => s.bbox = b,
                    None => continue,
                }
            }
            out.push(s);
        }
        Ok(out)
    }

    /// Fine-tune the current model on `dataset`; the returned handle names
    /// the new model.
    pub fn finetune(
        &self,
        frames: &FrameSequence,
        dataset: &SpecializedDataset,
        hyper: &Hyper,
    ) -> Result<DetectorHandle> {
        if dataset.is_empty() {
            return Err(Error::Empty("fine-tuning dataset"));
        }
        if let Some(s) = dataset
            .samples
            .iter()
            .find(|s| frames.get(s.frame).is_none())
        {
            return Err(Error::Config(format!(
                "dataset references frame {} outside the sequence",
                s.frame
            )));
        }
        let model_id = self
            .backend
            .finetune(&self.model_id, frames, &dataset.samples, hyper)?;
        if model_id == self.model_id {
            return Err(Error::worker(format!(
                "fine-tuning returned the same model id {model_id:?}"
            )));
        }
        Ok(self.with_model(model_id))
    }
}
