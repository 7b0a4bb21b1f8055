//! The specialization loop: predict proposals with the current model,
//! weight them against the dynamic threshold and foreground masks,
//! resample a capped pseudo-labelled dataset and fine-tune on it.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::background::{burn_in_and_replay, BackgroundParams, ForegroundMask, MaskCleaning};
use crate::detector::{default_hyper, DetectorHandle, Hyper};
use crate::error::{Error, Result};
use crate::io::{load_gray, subsample_positions, write_json, write_png};
use crate::likelihood::{
    assign_weights, mean_score, normalize_weights, LikelihoodParams, Measurements, ThresholdState,
};
use crate::resampling::{importance_resample, ResamplingConfig};
use crate::rng::{self, RNG_ALGORITHM};
use crate::types::{FrameSequence, SpecializedDataset, WeightedSample};

pub const RUN_DIR_ENV: &str = "SMC_RUN_DIR";
const RESAMPLE_STREAM: u64 = 0x5e1ec7;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SpecializationConfig {
    pub iterations: usize,
    pub label_space: Vec<String>,
    pub likelihood: LikelihoodParams,
    /// `seed` is replaced per iteration by one derived from the run seed.
    pub resampling: ResamplingConfig,
    pub background: BackgroundParams,
    pub min_blob_area: u64,
    pub kernel_radius: usize,
    pub hyper: Hyper,
    pub seed: u64,
    /// Leading fraction of the sequence used for specialization; the rest
    /// is held out.
    pub split: f64,
    /// Uniformly subsample the specialization part to this many frames.
    pub frames: Option<usize>,
    pub rng_algorithm: String,
}

impl Default for SpecializationConfig {
    fn default() -> Self {
        SpecializationConfig {
            iterations: 2,
            label_space: Vec::new(),
            likelihood: LikelihoodParams::default(),
            resampling: ResamplingConfig::default(),
            background: BackgroundParams::default(),
            min_blob_area: 100,
            kernel_radius: 1,
            hyper: default_hyper(),
            seed: 0,
            split: 0.5,
            frames: None,
            rng_algorithm: RNG_ALGORITHM.to_string(),
        }
    }
}

impl SpecializationConfig {
    pub fn validate(&self) -> Result<()> {
        if self.label_space.is_empty() {
            return Err(Error::Empty("label space"));
        }
        if self.rng_algorithm != RNG_ALGORITHM {
            return Err(Error::Config(format!(
                "rng_algorithm {:?} is not supported (expected {RNG_ALGORITHM:?})",
                self.rng_algorithm
            )));
        }
        if !(self.split > 0.0 && self.split <= 1.0) {
            return Err(Error::Config(format!("split {} outside (0,1]", self.split)));
        }
        if self.resampling.max_copies == 0 {
            return Err(Error::Config("max_copies must be at least 1".into()));
        }
        self.likelihood.validate()?;
        self.background.validate()
    }

    pub fn cleaning(&self) -> MaskCleaning {
        MaskCleaning {
            kernel_radius: self.kernel_radius,
            min_blob_area: self.min_blob_area,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightSummary {
    pub min: f64,
    pub max: f64,
    pub mean: f64,
    pub zero_fraction: f64,
}

impl WeightSummary {
    fn of(weights: &[f64]) -> Self {
        if weights.is_empty() {
            return WeightSummary {
                min: 0.0,
                max: 0.0,
                mean: 0.0,
                zero_fraction: 0.0,
            };
        }
        let n = weights.len() as f64;
        WeightSummary {
            min: weights.iter().copied().fold(f64::INFINITY, f64::min),
            max: weights.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            mean: weights.iter().sum::<f64>() / n,
            zero_fraction: weights.iter().filter(|&&w| w == 0.0).count() as f64 / n,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationReport {
    pub iteration: usize,
    pub proposal_count: usize,
    pub mean_score: f64,
    pub alpha: f64,
    /// Unnormalized weights.
    pub weights: WeightSummary,
    pub dataset_size: usize,
    pub model_id_before: String,
    pub model_id_after: String,
}

#[derive(Debug, Clone)]
pub struct Specialization {
    pub detector: DetectorHandle,
    pub datasets: Vec<SpecializedDataset>,
    pub reports: Vec<IterationReport>,
}

/// Where a run's artifacts go.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RunDir {
    root: PathBuf,
}

impl RunDir {
    /// Use `path` as the run directory itself.
    pub fn at(path: impl Into<PathBuf>) -> Self {
        RunDir { root: path.into() }
    }

    /// A fresh `<base>/<timestamp>` directory. `base` defaults to
    /// `$SMC_RUN_DIR`, then `run`.
    pub fn timestamped(base: Option<&Path>) -> Result<Self> {
        let base = match base {
            Some(b) => b.to_path_buf(),
            None => std::env::var_os(RUN_DIR_ENV)
                .map(PathBuf::from)
                .unwrap_or_else(|| PathBuf::from("run")),
        };
        let stamp = chrono::Utc::now().format("%Y%m%dT%H%M%S%.3fZ").to_string();
        let mut root = base.join(&stamp);
        let mut n = 1;
        while root.exists() {
            root = base.join(format!("{stamp}-{n}"));
            n += 1;
        }
        std::fs::create_dir_all(&root).map_err(|e| Error::io(&root, e))?;
        Ok(RunDir { root })
    }

    pub fn path(&self) -> &Path {
        &self.root
    }

    pub fn iteration(&self, k: usize) -> PathBuf {
        self.root.join(format!("iter{k}"))
    }

    pub fn masks(&self) -> PathBuf {
        self.root.join("masks")
    }
}

/// Leading `fraction` of the frames (rounded down, at least one) and the
/// remainder.
pub fn split_sequence(
    seq: &FrameSequence,
    fraction: f64,
) -> Result<(FrameSequence, FrameSequence)> {
    if seq.is_empty() {
        return Err(Error::Empty("frame sequence"));
    }
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::Config(format!("split {fraction} outside (0,1]")));
    }
    let head = ((seq.len() as f64 * fraction).floor() as usize).max(1);
    let all: Vec<usize> = (0..seq.len()).collect();
    Ok((seq.select(&all[..head]), seq.select(&all[head..])))
}

/// The specialization part of `seq` under `config` (split, then optional
/// uniform subsampling).
pub fn specialization_frames(
    seq: &FrameSequence,
    config: &SpecializationConfig,
) -> Result<FrameSequence> {
    let (head, _) = split_sequence(seq, config.split)?;
    match config.frames {
        Some(count) => Ok(head.select(&subsample_positions(head.len(), count)?)),
        None => Ok(head),
    }
}

/// Cleaned foreground masks for every frame: the background model learns
/// over the whole sequence once, then the sequence is replayed.
pub fn compute_masks(
    frames: &FrameSequence,
    config: &SpecializationConfig,
) -> Result<Vec<ForegroundMask>> {
    if frames.is_empty() {
        return Err(Error::Empty("frame sequence"));
    }
    burn_in_and_replay(
        frames.width(),
        frames.height(),
        &config.background,
        config.cleaning(),
        || frames.frames().iter().map(|f| load_gray(&f.path)),
    )
}

/// Run `config.iterations` rounds of specialization on `frames`, starting
/// from `generic`. Artifacts are written to `run` as they complete.
pub fn specialize(
    config: &SpecializationConfig,
    generic: DetectorHandle,
    frames: &FrameSequence,
    run: Option<&RunDir>,
) -> Result<Specialization> {
    config.validate()?;
    if frames.is_empty() {
        return Err(Error::Empty("frame sequence"));
    }
    if let Some(run) = run {
        write_json(&run.path().join("config.json"), config)?;
    }
    let mut outcome = Specialization {
        detector: generic,
        datasets: Vec::new(),
        reports: Vec::new(),
    };
    if config.iterations == 0 {
        return Ok(outcome);
    }

    let masks = compute_masks(frames, config)?;
    if let Some(run) = run {
        for (f, m) in frames.frames().iter().zip(&masks) {
            write_png(
                &run.masks().join(format!("mask_{:06}.png", f.id)),
                &m.to_image(),
            )?;
        }
    }
    let measurements = Measurements::from_masks(frames.ids().zip(&masks));
    drop(masks);

    let mut threshold = ThresholdState::new(config.likelihood.alpha0);
    for k in 1..=config.iterations {
        let (dataset, report, next) = iterate(
            config,
            &outcome.detector,
            frames,
            &measurements,
            &mut threshold,
            k,
            run,
        )
        .map_err(|e| e.at_iteration(k))?;
        log::info!(
            "iteration {k}: {} proposals, mean score {:.4}, alpha {:.4}, {} samples, {} -> {}",
            report.proposal_count,
            report.mean_score,
            report.alpha,
            report.dataset_size,
            report.model_id_before,
            report.model_id_after
        );
        outcome.detector = next;
        outcome.datasets.push(dataset);
        outcome.reports.push(report);
    }
    Ok(outcome)
}

fn iterate(
    config: &SpecializationConfig,
    current: &DetectorHandle,
    frames: &FrameSequence,
    measurements: &Measurements,
    threshold: &mut ThresholdState,
    k: usize,
    run: Option<&RunDir>,
) -> Result<(SpecializedDataset, IterationReport, DetectorHandle)> {
    let proposals = current.detect(frames, &config.label_space)?;
    if proposals.is_empty() {
        return Err(Error::Empty("proposal set"));
    }
    let mean = mean_score(&proposals);
    let alpha = threshold.update(mean)?;

    let weighted = assign_weights(&proposals, measurements, alpha, &config.likelihood)?;
    let raw: Vec<f64> = weighted.iter().map(|w| w.weight).collect();
    let normalized: Vec<WeightedSample> = normalize_weights(&weighted)?;
    let dir = run.map(|r| r.iteration(k));
    if let Some(dir) = &dir {
        write_json(&dir.join("weighted.json"), &normalized)?;
    }

    let resampling = ResamplingConfig {
        seed: rng::derive_seed(config.seed, &[RESAMPLE_STREAM, k as u64]),
        ..config.resampling
    };
    let dataset = importance_resample(&normalized, &resampling, k)?;
    if let Some(dir) = &dir {
        write_json(&dir.join("dataset.json"), &dataset)?;
    }

    let next = current.finetune(frames, &dataset, &config.hyper)?;
    let report = IterationReport {
        iteration: k,
        proposal_count: proposals.len(),
        mean_score: mean,
        alpha,
        weights: WeightSummary::of(&raw),
        dataset_size: dataset.len(),
        model_id_before: current.model_id().to_string(),
        model_id_after: next.model_id().to_string(),
    };
    if let Some(dir) = &dir {
        write_json(&dir.join("report.json"), &report)?;
    }
    Ok((dataset, report, next))
}
