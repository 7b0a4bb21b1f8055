//! A stochastic stand-in for a deep detector, driven by ground truth.
//!
//! Each ground-truth object is reported with probability equal to the
//! model's recall; false positives arrive per frame as a Poisson process.
//! Fine-tuning sets the recall to
//! `base_recall + recall_gain_per_coverage * coverage`, where coverage is
//! the fraction of ground-truth boxes on the fine-tuning frames that the
//! dataset contains (same label, IoU >= 0.5).
//!
//! Randomness is keyed by `(seed, frame)` only, so two models see the same
//! uniforms and scores: a model with higher recall reports a superset of
//! the true positives of a model with lower recall on every frame.

use std::sync::Mutex;

use rand::Rng;
use rand_distr::{Beta, Distribution, Poisson};
use serde::{Deserialize, Serialize};

use super::{DetectorBackend, Hyper};
use crate::error::{Error, Result};
use crate::geometry::{iou, BoundingBox};
use crate::rng;
use crate::types::{FrameId, FrameSequence, GroundTruth, Sample};

const DETECT_STREAM: u64 = 0xde7e;
const COVERAGE_IOU: f64 = 0.5;

/// Beta distribution parameters for detection scores.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoreDistribution {
    pub alpha: f64,
    pub beta: f64,
}

impl ScoreDistribution {
    fn build(&self) -> Result<Beta<f64>> {
        Beta::new(self.alpha, self.beta)
            .map_err(|e| Error::Config(format!("score distribution {self:?}: {e}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MockDetectorConfig {
    #[serde(default, skip_serializing)]
    pub ground_truth: GroundTruth,
    pub base_recall: f64,
    pub recall_gain_per_coverage: f64,
    /// Expected false positives per frame.
    pub false_positive_rate: f64,
    pub tp_score: ScoreDistribution,
    pub fp_score: ScoreDistribution,
    /// Side-length range `[min, max]` of false-positive boxes, in pixels.
    pub fp_size: [u32; 2],
    pub seed: u64,
}

impl Default for MockDetectorConfig {
    fn default() -> Self {
        MockDetectorConfig {
            ground_truth: GroundTruth::new(),
            base_recall: 0.4,
            recall_gain_per_coverage: 0.5,
            false_positive_rate: 1.0,
            tp_score: ScoreDistribution {
                alpha: 5.0,
                beta: 2.0,
            },
            fp_score: ScoreDistribution {
                alpha: 2.0,
                beta: 5.0,
            },
            fp_size: [12, 40],
            seed: 0,
        }
    }
}

struct Distributions {
    tp: Beta<f64>,
    fp: Beta<f64>,
    fp_count: Option<Poisson<f64>>,
}

pub struct MockDetector {
    config: MockDetectorConfig,
    dists: Distributions,
    /// Recall of each registered model; the model id is `m<index>`.
    models: Mutex<Vec<f64>>,
}

impl MockDetector {
    pub fn new(config: MockDetectorConfig) -> Result<Self> {
        if !(0.0..=1.0).contains(&config.base_recall) {
            return Err(Error::Config(format!(
                "base_recall {} outside [0,1]",
                config.base_recall
            )));
        }
        if !(config.false_positive_rate >= 0.0 && config.false_positive_rate.is_finite()) {
            return Err(Error::Config(
                "false_positive_rate must be non-negative".into(),
            ));
        }
        if config.fp_size[0] == 0 || config.fp_size[0] > config.fp_size[1] {
            return Err(Error::Config(format!(
                "invalid fp_size {:?}",
                config.fp_size
            )));
        }
        let fp_count = if config.false_positive_rate > 0.0 {
            Some(
                Poisson::new(config.false_positive_rate)
                    .map_err(|e| Error::Config(format!("false_positive_rate: {e}")))?,
            )
        } else {
            None
        };
        let dists = Distributions {
            tp: config.tp_score.build()?,
            fp: config.fp_score.build()?,
            fp_count,
        };
        let base = config.base_recall;
        Ok(MockDetector {
            config,
            dists,
            models: Mutex::new(vec![base]),
        })
    }

    pub fn config(&self) -> &MockDetectorConfig {
        &self.config
    }

    /// Id of the never fine-tuned model.
    pub fn generic_model_id(&self) -> &'static str {
        "m0"
    }

    pub fn effective_recall(&self, model_id: &str) -> Result<f64> {
        let index = parse_model_id(model_id)?;
        let models = self.models.lock().expect("mock model registry poisoned");
        models
            .get(index)
            .copied()
            .ok_or_else(|| Error::worker(format!("unknown model {model_id:?}")))
    }

    /// Fraction of ground-truth boxes on `frames` matched by a same-label
    /// sample with IoU >= 0.5.
    pub fn coverage(&self, frames: &FrameSequence, samples: &[Sample]) -> f64 {
        let (mut total, mut covered) = (0usize, 0usize);
        for id in frames.ids() {
            for obj in self.config.ground_truth.get(&id).into_iter().flatten() {
                total += 1;
                let hit = samples.iter().any(|s| {
                    s.frame == id && s.label == obj.label && iou(&s.bbox, &obj.bbox) >= COVERAGE_IOU
                });
                covered += usize::from(hit);
            }
        }
        if total == 0 {
            0.0
        } else {
            covered as f64 / total as f64
        }
    }

    fn detect_frame(
        &self,
        frame: FrameId,
        width: u32,
        height: u32,
        recall: f64,
        labels: &[String],
        out: &mut Vec<Sample>,
    ) {
        let mut rng = rng::stream(self.config.seed, &[DETECT_STREAM, u64::from(frame)]);
        for obj in self.config.ground_truth.get(&frame).into_iter().flatten() {
            // draw both unconditionally so every model consumes the same stream
            let u: f64 = rng.random();
            let score = self.dists.tp.sample(&mut rng);
            if u < recall && labels.contains(&obj.label) {
                out.push(Sample {
                    frame,
                    label: obj.label.clone(),
                    score,
                    bbox: obj.bbox,
                });
            }
        }
        let count = self.dists.fp_count.map_or(0, |p| p.sample(&mut rng) as u64);
        let [lo, hi] = self.config.fp_size;
        for _ in 0..count {
            let w = rng.random_range(lo..=hi).min(width);
            let h = rng.random_range(lo..=hi).min(height);
            let u = rng.random_range(0..=width - w);
            let v = rng.random_range(0..=height - h);
            let label = labels[rng.random_range(0..labels.len())].clone();
            let score = self.dists.fp.sample(&mut rng);
            out.push(Sample {
                frame,
                label,
                score,
                bbox: BoundingBox { u, v, w, h },
            });
        }
    }
}

fn parse_model_id(model_id: &str) -> Result<usize> {
    model_id
        .strip_prefix('m')
        .and_then(|n| n.parse().ok())
        .ok_or_else(|| Error::worker(format!("unknown model {model_id:?}")))
}

impl DetectorBackend for MockDetector {
    fn detect(
        &self,
        model_id: &str,
        frames: &FrameSequence,
        labels: &[String],
    ) -> Result<Vec<Sample>> {
        if labels.is_empty() {
            return Err(Error::Empty("label space"));
        }
        let recall = self.effective_recall(model_id)?;
        let mut out = Vec::new();
        for id in frames.ids() {
            self.detect_frame(
                id,
                frames.width(),
                frames.height(),
                recall,
                labels,
                &mut out,
            );
        }
        Ok(out)
    }

    fn finetune(
        &self,
        model_id: &str,
        frames: &FrameSequence,
        samples: &[Sample],
        _hyper: &Hyper,
    ) -> Result<String> {
        self.effective_recall(model_id)?;
        if samples.is_empty() {
            return Err(Error::Empty("fine-tuning dataset"));
        }
        let coverage = self.coverage(frames, samples);
        let recall = (self.config.base_recall + self.config.recall_gain_per_coverage * coverage)
            .clamp(0.0, 1.0);
        let mut models = self.models.lock().expect("mock model registry poisoned");
        models.push(recall);
        log::debug!("mock fine-tune from {model_id}: coverage {coverage:.4}, recall {recall:.4}");
        Ok(format!("m{}", models.len() - 1))
    }
}
