//! Scene specialization of object detectors by sequential Monte Carlo
//! self-training.
//!
//! A generic detector proposes boxes on unlabelled frames of a fixed
//! camera; proposals are weighted by confidence and agreement with a
//! background-subtraction foreground mask, resampled into a pseudo-labelled
//! dataset and used to fine-tune the detector, for a fixed number of
//! iterations.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod background;
pub mod detector;
pub mod error;
pub mod eval;
pub mod geometry;
pub mod io;
pub mod likelihood;
pub mod pipeline;
pub mod resampling;
pub mod rng;
pub mod types;

pub use detector::{DetectorBackend, DetectorHandle, MockDetector, MockDetectorConfig};
pub use error::{Error, Result};
pub use geometry::{iou, BoundingBox, Rect};
pub use pipeline::{specialize, IterationReport, RunDir, Specialization, SpecializationConfig};
pub use types::{
    FrameId, FrameRef, FrameSequence, GroundTruth, Object, Sample, SpecializedDataset,
    WeightedSample,
};
