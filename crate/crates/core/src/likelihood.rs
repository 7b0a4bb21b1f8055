//! Proposal weighting: detector confidence above a dynamic threshold,
//! foreground overlap below it.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::background::{foreground_blobs, Blob, ForegroundMask};
use crate::error::{Error, Result};
use crate::geometry::BoundingBox;
use crate::types::{FrameId, Sample, WeightedSample};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LikelihoodParams {
    /// Initial score threshold.
    pub alpha0: f64,
    /// Minimum overlap score for a low-confidence proposal to keep weight.
    pub alpha_p: f64,
}

impl Default for LikelihoodParams {
    fn default() -> Self {
        LikelihoodParams {
            alpha0: 0.5,
            alpha_p: 0.5,
        }
    }
}

impl LikelihoodParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha0 > 0.0 && self.alpha0 <= 1.0) {
            return Err(Error::Config(format!(
                "alpha0 {} outside (0,1]",
                self.alpha0
            )));
        }
        if !(0.0..=1.0).contains(&self.alpha_p) {
            return Err(Error::Config(format!(
                "alpha_p {} outside [0,1]",
                self.alpha_p
            )));
        }
        Ok(())
    }
}

/// The dynamic score threshold across iterations.
///
/// The first update returns `alpha0` (there is no earlier mean score to
/// compare against); later updates scale the previous threshold by the
/// ratio of consecutive mean scores. The unclamped recursion is carried
/// internally and the reported value is clamped to `(0, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdState {
    pub alpha0: f64,
    pub alpha: f64,
    pub mean_score_history: Vec<f64>,
    raw_alpha: f64,
}

impl ThresholdState {
    pub fn new(alpha0: f64) -> Self {
        ThresholdState {
            alpha0,
            alpha: alpha0,
            mean_score_history: Vec::new(),
            raw_alpha: alpha0,
        }
    }

    /// Record the mean proposal score of the iteration just predicted and
    /// return the threshold to use for it.
    pub fn update(&mut self, mean_score: f64) -> Result<f64> {
        if !(mean_score > 0.0 && mean_score <= 1.0) {
            return Err(Error::DegenerateScore(mean_score));
        }
        self.raw_alpha = match self.mean_score_history.last() {
            None => self.alpha0,
            Some(&previous) => mean_score / previous * self.raw_alpha,
        };
        self.mean_score_history.push(mean_score);
        self.alpha = self.raw_alpha.min(1.0);
        Ok(self.alpha)
    }
}

pub fn mean_score(proposals: &[Sample]) -> f64 {
    if proposals.is_empty() {
        return 0.0;
    }
    proposals.iter().map(|s| s.score).sum::<f64>() / proposals.len() as f64
}

/// Dice overlap between `roi` and the bounding box of the blob whose box
/// intersects it most. `roi` is clipped to the frame first.
pub fn overlap_score_with_blobs(blobs: &[Blob], width: u32, height: u32, roi: &BoundingBox) -> f64 {
    let Some(roi) = roi.rect().clamp_to(width, height) else {
        return 0.0;
    };
    let mut best: Option<(u64, &BoundingBox)> = None;
    for blob in blobs {
        let inter = roi.intersection_area(&blob.bbox);
        if inter > 0 && best.is_none_or(|(b, _)| inter > b) {
            best = Some((inter, &blob.bbox));
        }
    }
    match best {
        None => 0.0,
        Some((inter, fg)) => 2.0 * inter as f64 / (roi.area() + fg.area()) as f64,
    }
}

pub fn overlap_score(mask: &ForegroundMask, roi: &BoundingBox) -> f64 {
    overlap_score_with_blobs(&foreground_blobs(mask), mask.width(), mask.height(), roi)
}

/// Blob lists for each frame's mask, computed once and shared by every
/// proposal on that frame.
#[derive(Debug, Clone, Default)]
pub struct Measurements {
    frames: BTreeMap<FrameId, (u32, u32, Vec<Blob>)>,
}

impl Measurements {
    pub fn from_masks<'a>(masks: impl IntoIterator<Item = (FrameId, &'a ForegroundMask)>) -> Self {
        let frames = masks
            .into_iter()
            .map(|(id, m)| (id, (m.width(), m.height(), foreground_blobs(m))))
            .collect();
        Measurements { frames }
    }

    pub fn overlap(&self, frame: FrameId, roi: &BoundingBox) -> Result<f64> {
        let (w, h, blobs) = self.frames.get(&frame).ok_or(Error::MissingMask(frame))?;
        Ok(overlap_score_with_blobs(blobs, *w, *h, roi))
    }
}

/// Weight of one proposal: its score when at or above the threshold,
/// otherwise its overlap score if that reaches `alpha_p`, otherwise zero.
pub fn weigh(
    sample: &Sample,
    overlap: impl FnOnce() -> Result<f64>,
    alpha: f64,
    alpha_p: f64,
) -> Result<f64> {
    if sample.score >= alpha {
        return Ok(sample.score);
    }
    let lambda = overlap()?;
    Ok(if lambda >= alpha_p { lambda } else { 0.0 })
}

pub fn assign_weights(
    proposals: &[Sample],
    measurements: &Measurements,
    alpha: f64,
    params: &LikelihoodParams,
) -> Result<Vec<WeightedSample>> {
    proposals
        .iter()
        .map(|s| {
            let weight = weigh(
                s,
                || measurements.overlap(s.frame, &s.bbox),
                alpha,
                params.alpha_p,
            )?;
            Ok(WeightedSample {
                sample: s.clone(),
                weight,
            })
        })
        .collect()
}

pub fn normalize_weights(weighted: &[WeightedSample]) -> Result<Vec<WeightedSample>> {
    let total: f64 = weighted.iter().map(|w| w.weight).sum();
    if !(total > 0.0) {
        return Err(Error::AllZeroWeights);
    }
    Ok(weighted
        .iter()
        .map(|w| WeightedSample {
            sample: w.sample.clone(),
            weight: w.weight / total,
        })
        .collect())
}
