//! Detection evaluation: greedy overlap matching, recall/FPPI sweeps and the
//! actual-vs-predicted class confusion matrix.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::iou;
use crate::types::{FrameId, GroundTruth, Object, Sample};

pub const PASCAL_IOU: f64 = 0.5;

#[derive(Debug, Clone, PartialEq, Default)]
pub struct MatchResult {
    pub iou_threshold: f64,
    pub true_positives: Vec<(Sample, Object)>,
    pub false_positives: Vec<Sample>,
    pub false_negatives: Vec<Object>,
}

/// Detection indices in decreasing score order; equal scores keep input order.
fn by_score(dets: &[Sample]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..dets.len()).collect();
    order.sort_by(|&a, &b| dets[b].score.total_cmp(&dets[a].score));
    order
}

/// Per detection (in input order), the index of the ground-truth object it
/// matched, if any.
fn greedy_assignment(
    dets: &[Sample],
    gt: &[Object],
    iou_threshold: f64,
    class_aware: bool,
) -> Vec<Option<usize>> {
    let mut taken = vec![false; gt.len()];
    let mut assignment = vec![None; dets.len()];
    for d in by_score(dets) {
        let mut best: Option<(f64, usize)> = None;
        for (g, obj) in gt.iter().enumerate() {
            if taken[g] || (class_aware && obj.label != dets[d].label) {
                continue;
            }
            let overlap = iou(&dets[d].bbox, &obj.bbox);
            if overlap >= iou_threshold && best.is_none_or(|(b, _)| overlap > b) {
                best = Some((overlap, g));
            }
        }
        if let Some((_, g)) = best {
            taken[g] = true;
            assignment[d] = Some(g);
        }
    }
    assignment
}

/// Match one frame's detections against its ground truth. Detections are
/// taken in decreasing score; each claims the unmatched object with the
/// highest IoU at or above the threshold.
pub fn match_detections(
    dets: &[Sample],
    gt: &[Object],
    iou_threshold: f64,
    class_aware: bool,
) -> MatchResult {
    let assignment = greedy_assignment(dets, gt, iou_threshold, class_aware);
    let mut matched = vec![false; gt.len()];
    let mut result = MatchResult {
        iou_threshold,
        ..Default::default()
    };
    for d in by_score(dets) {
        match assignment[d] {
            Some(g) => {
                matched[g] = true;
                result.true_positives.push((dets[d].clone(), gt[g].clone()));
            }
            None => result.false_positives.push(dets[d].clone()),
        }
    }
    result.false_negatives = gt
        .iter()
        .zip(&matched)
        .filter(|(_, &m)| !m)
        .map(|(o, _)| o.clone())
        .collect();
    result
}

fn group_by_frame(dets: &[Sample]) -> BTreeMap<FrameId, Vec<Sample>> {
    let mut out: BTreeMap<FrameId, Vec<Sample>> = BTreeMap::new();
    for d in dets {
        out.entry(d.frame).or_default().push(d.clone());
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    /// Detections with score at or above this are accepted; `None` for the
    /// empty-detector point.
    pub threshold: Option<f64>,
    pub fppi: f64,
    pub recall: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationCurve {
    pub frames: usize,
    pub total_gt: usize,
    pub points: Vec<CurvePoint>,
}

impl EvaluationCurve {
    /// Highest recall among sweep points with FPPI at or below `fppi`.
    pub fn recall_at(&self, fppi: f64) -> f64 {
        self.points
            .iter()
            .filter(|p| p.fppi <= fppi)
            .map(|p| p.recall)
            .fold(0.0, f64::max)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("threshold,fppi,recall\n");
        for p in &self.points {
            let threshold = p.threshold.map(|t| t.to_string()).unwrap_or_default();
            let _ = writeln!(out, "{threshold},{},{}", p.fppi, p.recall);
        }
        out
    }
}

/// Sweep the score threshold over every distinct detection score.
///
/// Frames counted for FPPI are those present in `gt` (including frames with
/// no objects) plus any frame that only has detections.
pub fn recall_fppi_curve(
    dets: &[Sample],
    gt: &GroundTruth,
    iou_threshold: f64,
) -> Result<EvaluationCurve> {
    let total_gt: usize = gt.values().map(Vec::len).sum();
    if total_gt == 0 {
        return Err(Error::Empty("ground truth (recall undefined)"));
    }
    let by_frame = group_by_frame(dets);
    let frames: BTreeSet<FrameId> = gt.keys().chain(by_frame.keys()).copied().collect();

    let mut outcomes: Vec<(f64, bool)> = Vec::with_capacity(dets.len());
    for (frame, frame_dets) in &by_frame {
        let objects = gt.get(frame).map(Vec::as_slice).unwrap_or(&[]);
        let assignment = greedy_assignment(frame_dets, objects, iou_threshold, true);
        outcomes.extend(
            frame_dets
                .iter()
                .zip(assignment)
                .map(|(d, a)| (d.score, a.is_some())),
        );
    }
    outcomes.sort_by(|a, b| b.0.total_cmp(&a.0));

    let n_frames = frames.len() as f64;
    let mut points = Vec::new();
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut i = 0;
    while i < outcomes.len() {
        let score = outcomes[i].0;
        while i < outcomes.len() && outcomes[i].0 == score {
            if outcomes[i].1 {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        points.push(CurvePoint {
            threshold: Some(score),
            fppi: fp as f64 / n_frames,
            recall: tp as f64 / total_gt as f64,
        });
    }
    if points.is_empty() {
        points.push(CurvePoint {
            threshold: None,
            fppi: 0.0,
            recall: 0.0,
        });
    }
    Ok(EvaluationCurve {
        frames: frames.len(),
        total_gt,
        points,
    })
}

/// Rows are actual classes, columns predicted classes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub classes: Vec<String>,
    pub counts: Vec<Vec<u64>>,
}

impl ConfusionMatrix {
    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn get(&self, actual: &str, predicted: &str) -> u64 {
        let idx = |l: &str| self.classes.iter().position(|c| c == l);
        match (idx(actual), idx(predicted)) {
            (Some(a), Some(p)) => self.counts[a][p],
            _ => 0,
        }
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("actual\\predicted");
        for c in &self.classes {
            let _ = write!(out, ",{c}");
        }
        out.push('\n');
        for (c, row) in self.classes.iter().zip(&self.counts) {
            out.push_str(c);
            for n in row {
                let _ = write!(out, ",{n}");
            }
            out.push('\n');
        }
        out
    }
}

/// Geometric (class-agnostic) matching, then tally `[actual][predicted]`
/// for every matched pair. Labels missing from `classes` are appended in
/// order of appearance.
pub fn confusion_matrix(
    dets: &[Sample],
    gt: &GroundTruth,
    iou_threshold: f64,
    classes: &[String],
) -> ConfusionMatrix {
    let mut classes = classes.to_vec();
    let index =
        |label: &str, classes: &mut Vec<String>| match classes.iter().position(|c| c == label) {
            Some(i) => i,
            None => {
                classes.push(label.to_string());
                classes.len() - 1
            }
        };
    let mut pairs = Vec::new();
    for (frame, frame_dets) in group_by_frame(dets) {
        let objects = gt.get(&frame).map(Vec::as_slice).unwrap_or(&[]);
        let result = match_detections(&frame_dets, objects, iou_threshold, false);
        for (d, o) in result.true_positives {
            pairs.push((index(&o.label, &mut classes), index(&d.label, &mut classes)));
        }
    }
    let mut counts = vec![vec![0u64; classes.len()]; classes.len()];
    for (a, p) in pairs {
        counts[a][p] += 1;
    }
    ConfusionMatrix { classes, counts }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RecallAt {
    pub fppi: f64,
    pub recall: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub iou_threshold: f64,
    pub recall_at: Vec<RecallAt>,
    pub curve: EvaluationCurve,
    pub confusion: ConfusionMatrix,
}

pub fn evaluate(
    dets: &[Sample],
    gt: &GroundTruth,
    iou_threshold: f64,
    fppi_targets: &[f64],
    classes: &[String],
) -> Result<EvaluationReport> {
    if !(iou_threshold > 0.0 && iou_threshold <= 1.0) {
        return Err(Error::Config(format!(
            "IoU threshold {iou_threshold} outside (0,1]"
        )));
    }
    let curve = recall_fppi_curve(dets, gt, iou_threshold)?;
    let recall_at = fppi_targets
        .iter()
        .map(|&fppi| RecallAt {
            fppi,
            recall: curve.recall_at(fppi),
        })
        .collect();
    Ok(EvaluationReport {
        iou_threshold,
        recall_at,
        confusion: confusion_matrix(dets, gt, iou_threshold, classes),
        curve,
    })
}
