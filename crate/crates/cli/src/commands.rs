use std::io;
use std::time::Duration;

use anyhow::{bail, Context, Result};
use serde::Serialize;

use smcdet_core::detector::protocol::serve;
use smcdet_core::detector::{MockWorker, MockWorkerConfig, WorkerClient};
use smcdet_core::eval;
use smcdet_core::io::{
    generate_synthetic_scene, load_sequence, read_json, write_atomic, write_json, write_png,
    AnnotationFile, DetectionFile, SequenceManifest, SynthSceneConfig,
};
use smcdet_core::pipeline::{compute_masks, specialization_frames, split_sequence};
use smcdet_core::{GroundTruth, IterationReport, RunDir, SpecializationConfig};

use crate::{BgsubArgs, EvaluateArgs, MockArgs, SpecializeArgs, SynthArgs};

#[derive(Serialize)]
struct RunSummary<'a> {
    generic_model_id: &'a str,
    final_model_id: &'a str,
    specialization_frames: usize,
    held_out_frames: usize,
    reports: &'a [IterationReport],
}

pub fn specialize(a: SpecializeArgs) -> Result<()> {
    let seq = load_sequence(&a.manifest)?;
    let mut config: SpecializationConfig = match &a.config {
        Some(path) => read_json(path)?,
        None => SpecializationConfig::default(),
    };
    if let Some(v) = a.iterations {
        config.iterations = v;
    }
    if let Some(v) = a.alpha0 {
        config.likelihood.alpha0 = v;
    }
    if let Some(v) = a.alpha_p {
        config.likelihood.alpha_p = v;
    }
    if let Some(v) = a.min_blob {
        config.min_blob_area = v;
    }
    if let Some(v) = a.split {
        config.split = v;
    }
    if let Some(v) = a.frames {
        config.frames = Some(v);
    }
    if let Some(v) = a.seed {
        config.seed = v;
    }
    if let Some(labels) = a.labels {
        config.label_space = labels;
    }
    if config.label_space.is_empty() {
        config.label_space = SequenceManifest::read(&a.manifest)?.labels;
    }
    if config.label_space.is_empty() {
        bail!("no label space: pass --labels or declare labels in the manifest");
    }
    config.validate()?;

    let argv = shlex::split(&a.detector_cmd).context("cannot split --detector-cmd")?;
    let generic = WorkerClient::connect(
        &argv,
        Duration::from_secs(a.timeout),
        &a.model,
        &config.label_space,
    )?;
    let frames = specialization_frames(&seq, &config)?;
    let (_, held) = split_sequence(&seq, config.split)?;
    let run = RunDir::timestamped(a.out.as_deref())?;
    log::info!("run directory {}", run.path().display());

    let result = smcdet_core::specialize(&config, generic.clone(), &frames, Some(&run))?;
    if !held.is_empty() {
        for (name, handle) in [("generic", &generic), ("final", &result.detector)] {
            let dets = handle.detect(&held, &config.label_space)?;
            DetectionFile::from_samples(config.label_space.clone(), held.ids(), &dets)
                .write(&run.path().join("heldout").join(format!("{name}.json")))?;
        }
    }
    write_json(
        &run.path().join("summary.json"),
        &RunSummary {
            generic_model_id: generic.model_id(),
            final_model_id: result.detector.model_id(),
            specialization_frames: frames.len(),
            held_out_frames: held.len(),
            reports: &result.reports,
        },
    )?;
    println!("{}", run.path().display());
    Ok(())
}

pub fn evaluate(a: EvaluateArgs) -> Result<()> {
    let detections = DetectionFile::read(&a.detections)?;
    let annotations = AnnotationFile::read(&a.annotations)?;
    annotations.validate()?;
    let truth = annotations.ground_truth();
    // score only the frames the detection file covers
    let gt: GroundTruth = if detections.frames.is_empty() {
        truth
    } else {
        detections
            .frames
            .iter()
            .map(|f| (f.frame, truth.get(&f.frame).cloned().unwrap_or_default()))
            .collect()
    };
    let classes = if annotations.labels.is_empty() {
        detections.labels.clone()
    } else {
        annotations.labels.clone()
    };
    let report = eval::evaluate(&detections.samples()?, &gt, a.iou, &a.fppi, &classes)?;

    write_atomic(&a.out.join("curve.csv"), report.curve.to_csv().as_bytes())?;
    write_atomic(
        &a.out.join("confusion.csv"),
        report.confusion.to_csv().as_bytes(),
    )?;
    write_json(&a.out.join("summary.json"), &report)?;
    for r in &report.recall_at {
        println!("recall@{}fppi\t{}", r.fppi, r.recall);
    }
    Ok(())
}

pub fn synth(a: SynthArgs) -> Result<()> {
    let config = match &a.config {
        Some(path) => {
            let mut c: SynthSceneConfig = read_json(path)?;
            if let Some(seed) = a.seed {
                c.seed = seed;
            }
            c
        }
        None => SynthSceneConfig::traffic(a.frames, a.seed.unwrap_or(0)),
    };
    let out = generate_synthetic_scene(config, &a.out)?;
    println!("{}", out.manifest_path.display());
    Ok(())
}

pub fn bgsub(a: BgsubArgs) -> Result<()> {
    let seq = load_sequence(&a.manifest)?;
    let config = SpecializationConfig {
        min_blob_area: a.min_blob,
        kernel_radius: a.kernel_radius,
        ..Default::default()
    };
    let masks = compute_masks(&seq, &config)?;
    for (frame, mask) in seq.frames().iter().zip(&masks) {
        write_png(
            &a.out.join(format!("mask_{:06}.png", frame.id)),
            &mask.to_image(),
        )?;
    }
    println!("{} masks written to {}", masks.len(), a.out.display());
    Ok(())
}

pub fn mock_detector(a: MockArgs) -> Result<()> {
    let mut config = match (&a.config, &a.manifest, &a.annotations) {
        (Some(path), _, _) => MockWorkerConfig::read(path)?,
        (None, Some(manifest), Some(annotations)) => MockWorkerConfig {
            manifest: manifest.clone(),
            annotations: annotations.clone(),
            detector: Default::default(),
        },
        _ => bail!("pass --config, or both --manifest and --annotations"),
    };
    if let Some(m) = a.manifest {
        config.manifest = m;
    }
    if let Some(p) = a.annotations {
        config.annotations = p;
    }
    if let Some(v) = a.base_recall {
        config.detector.base_recall = v;
    }
    if let Some(v) = a.gain {
        config.detector.recall_gain_per_coverage = v;
    }
    if let Some(v) = a.fp_rate {
        config.detector.false_positive_rate = v;
    }
    if let Some(v) = a.seed {
        config.detector.seed = v;
    }
    let mut worker = MockWorker::new(config)?;
    serve(&mut worker, io::stdin().lock(), io::stdout().lock()).context("worker i/o")?;
    Ok(())
}
