//! Sliding-window anchors and their positive/negative/ignore assignment
//! against target boxes.

use serde::{Deserialize, Serialize};

use crate::geometry::{BoundingBox, Rect};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnchorSpec {
    /// Height-to-width ratios.
    pub ratios: Vec<f64>,
    /// Anchor areas in square pixels.
    pub areas: Vec<f64>,
    pub stride: u32,
}

impl Default for AnchorSpec {
    fn default() -> Self {
        AnchorSpec {
            ratios: vec![2.0, 1.0, 0.5],
            areas: vec![128.0 * 128.0, 256.0 * 256.0, 512.0 * 512.0],
            stride: 16,
        }
    }
}

impl AnchorSpec {
    pub fn per_position(&self) -> usize {
        self.ratios.len() * self.areas.len()
    }

    /// `(height, width)` of every anchor shape, ratio-major.
    pub fn shapes(&self) -> Vec<(u32, u32)> {
        let mut out = Vec::with_capacity(self.per_position());
        for &ratio in &self.ratios {
            for &area in &self.areas {
                let h = (area * ratio).sqrt().round().max(1.0) as u32;
                let w = (area / ratio).sqrt().round().max(1.0) as u32;
                out.push((h, w));
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Anchor {
    pub rect: Rect,
    /// Part of the anchor lies outside the image.
    pub cross_boundary: bool,
}

/// One anchor per shape at every window center `stride/2 + i*stride` that
/// falls inside the image. Position-major, then shape order.
pub fn generate_anchors(spec: &AnchorSpec, image_w: u32, image_h: u32) -> Vec<Anchor> {
    let stride = spec.stride.max(1);
    let centers = |extent: u32| {
        (0..)
            .map(move |i| stride / 2 + i * stride)
            .take_while(move |&c| c < extent)
    };
    let shapes = spec.shapes();
    let mut out = Vec::new();
    for cy in centers(image_h) {
        for cx in centers(image_w) {
            for &(h, w) in &shapes {
                let rect = Rect {
                    x: i64::from(cx) - i64::from(w / 2),
                    y: i64::from(cy) - i64::from(h / 2),
                    w,
                    h,
                };
                out.push(Anchor {
                    rect,
                    cross_boundary: rect.crosses_boundary(image_w, image_h),
                });
            }
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AnchorLabel {
    Positive,
    Negative,
    Ignore,
}

/// Label each anchor against `targets`.
///
/// Positive: IoU at least `pos_thresh` with some target, or among the
/// anchors achieving a target's (non-zero) best IoU, ties included.
/// Negative: not positive and best IoU below `neg_thresh`. Everything else
/// is ignored. With no targets every anchor is negative.
pub fn assign_anchor_labels(
    anchors: &[Rect],
    targets: &[BoundingBox],
    pos_thresh: f64,
    neg_thresh: f64,
) -> Vec<AnchorLabel> {
    let targets: Vec<Rect> = targets.iter().map(BoundingBox::rect).collect();
    let mut best_for_target = vec![0.0f64; targets.len()];
    let mut best_for_anchor = vec![0.0f64; anchors.len()];
    let mut table = vec![0.0f64; anchors.len() * targets.len()];
    for (a, anchor) in anchors.iter().enumerate() {
        for (t, target) in targets.iter().enumerate() {
            let iou = anchor.iou(target);
            table[a * targets.len() + t] = iou;
            best_for_anchor[a] = best_for_anchor[a].max(iou);
            best_for_target[t] = best_for_target[t].max(iou);
        }
    }
    (0..anchors.len())
        .map(|a| {
            let row = &table[a * targets.len()..(a + 1) * targets.len()];
            let is_argmax = row
                .iter()
                .zip(&best_for_target)
                .any(|(&iou, &best)| best > 0.0 && iou == best);
            if best_for_anchor[a] >= pos_thresh || is_argmax {
                AnchorLabel::Positive
            } else if best_for_anchor[a] < neg_thresh {
                AnchorLabel::Negative
            } else {
                AnchorLabel::Ignore
            }
        })
        .collect()
}
