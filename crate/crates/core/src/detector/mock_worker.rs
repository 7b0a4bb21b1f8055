//! The mock detector behind the worker line protocol, so the pipeline can
//! be driven through a real subprocess.
//!
//! Configured by a JSON file naming the sequence manifest (to map frame
//! paths back to frame ids) and the annotation file the mock reads its
//! ground truth from. Relative paths resolve against the config file.

use std::collections::HashMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::protocol::{WireDetection, WireSample, WorkerBackend};
use super::worker::wire_path;
use super::{DetectorBackend, Hyper, MockDetector, MockDetectorConfig};
use crate::error::{Error, Result};
use crate::geometry::BoundingBox;
use crate::io::{read_json, AnnotationFile, SequenceManifest};
use crate::types::{FrameId, FrameRef, FrameSequence, Sample};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MockWorkerConfig {
    pub manifest: PathBuf,
    pub annotations: PathBuf,
    #[serde(flatten)]
    pub detector: MockDetectorConfig,
}

impl MockWorkerConfig {
    pub fn read(path: &Path) -> Result<Self> {
        let mut config: MockWorkerConfig = read_json(path)?;
        let base = path.parent().unwrap_or(Path::new("."));
        config.manifest = base.join(&config.manifest);
        config.annotations = base.join(&config.annotations);
        Ok(config)
    }
}

pub struct MockWorker {
    detector: MockDetector,
    ids: HashMap<PathBuf, FrameId>,
    width: u32,
    height: u32,
    labels: Vec<String>,
}

impl MockWorker {
    pub fn new(config: MockWorkerConfig) -> Result<Self> {
        let manifest = SequenceManifest::read(&config.manifest)?;
        let base = config.manifest.parent().unwrap_or(Path::new("."));
        let ids = manifest
            .frame_refs(base)
            .into_iter()
            .map(|f| (wire_path(&f.path), f.id))
            .collect();
        let annotations = AnnotationFile::read(&config.annotations)?;
        let mut detector = config.detector;
        detector.ground_truth = annotations.ground_truth();
        Ok(MockWorker {
            detector: MockDetector::new(detector)?,
            ids,
            width: manifest.width,
            height: manifest.height,
            labels: Vec::new(),
        })
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        Self::new(MockWorkerConfig::read(path)?)
    }

    fn sequence(&self, paths: &[PathBuf]) -> Result<FrameSequence> {
        let frames = paths
            .iter()
            .map(|p| {
                let id = self.ids.get(&wire_path(p)).ok_or_else(|| {
                    Error::worker(format!("frame {} is not in the manifest", p.display()))
                })?;
                Ok(FrameRef {
                    id: *id,
                    path: p.clone(),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        FrameSequence::new(frames, self.width, self.height)
    }
}

impl WorkerBackend for MockWorker {
    fn init(&mut self, model: &str, labels: &[String]) -> Result<String> {
        if labels.is_empty() {
            return Err(Error::Empty("label space"));
        }
        let model_id = match model {
            "generic" => self.detector.generic_model_id().to_string(),
            other => {
                self.detector
                    .effective_recall(other)
                    .map_err(|_| Error::worker(format!("model not found: {other}")))?;
                other.to_string()
            }
        };
        self.labels = labels.to_vec();
        Ok(model_id)
    }

    fn detect(&mut self, model_id: &str, frames: &[PathBuf]) -> Result<Vec<WireDetection>> {
        if self.labels.is_empty() {
            return Err(Error::worker("detect before init"));
        }
        let seq = self.sequence(frames)?;
        let samples = self.detector.detect(model_id, &seq, &self.labels)?;
        let mut position: HashMap<FrameId, usize> = HashMap::new();
        for (i, id) in seq.ids().enumerate() {
            position.entry(id).or_insert(i);
        }
        Ok(samples
            .into_iter()
            .map(|s| {
                let b = s.bbox;
                (
                    position[&s.frame],
                    s.label,
                    s.score,
                    i64::from(b.u),
                    i64::from(b.v),
                    i64::from(b.w),
                    i64::from(b.h),
                )
            })
            .collect())
    }

    fn finetune(
        &mut self,
        model_id: &str,
        frames: &[PathBuf],
        samples: &[WireSample],
        hyper: &Hyper,
    ) -> Result<String> {
        let seq = self.sequence(frames)?;
        let samples = samples
            .iter()
            .map(|(index, label, u, v, w, h)| {
                let frame = seq.frames().get(*index).ok_or_else(|| {
                    Error::worker(format!("sample frame index {index} out of range"))
                })?;
                let coord = |x: i64| {
                    u32::try_from(x).map_err(|_| Error::InvalidBox(format!("coordinate {x}")))
                };
                let bbox = BoundingBox::new(coord(*u)?, coord(*v)?, coord(*w)?, coord(*h)?)?;
                Sample::new(frame.id, label.clone(), 1.0, bbox)
            })
            .collect::<Result<Vec<_>>>()?;
        self.detector.finetune(model_id, &seq, &samples, hyper)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::detector::protocol::handle_line;
    use crate::io::{generate_synthetic_scene, SynthSceneConfig};

    fn worker(dir: &Path) -> (MockWorker, Vec<PathBuf>) {
        let out = generate_synthetic_scene(SynthSceneConfig::traffic(6, 3), dir).unwrap();
        let config = MockWorkerConfig {
            manifest: out.manifest_path.clone(),
            annotations: out.annotations_path.clone(),
            detector: MockDetectorConfig {
                base_recall: 1.0,
                false_positive_rate: 0.0,
                ..Default::default()
            },
        };
        let paths = out
            .sequence
            .frames()
            .iter()
            .map(|f| wire_path(&f.path))
            .collect();
        (MockWorker::new(config).unwrap(), paths)
    }

    #[test]
    fn config_paths_resolve_against_the_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("mock.json");
        std::fs::write(&path, r#"{"manifest":"s/manifest.json","annotations":"s/annotations.json","base_recall":0.4,"recall_gain_per_coverage":0.5,"false_positive_rate":1.0,"tp_score":{"alpha":5,"beta":2},"fp_score":{"alpha":2,"beta":5},"fp_size":[12,40],"seed":9}"#).unwrap();
        let config = MockWorkerConfig::read(&path).unwrap();
        assert_eq!(config.manifest, dir.path().join("s/manifest.json"));
        assert_eq!(config.detector.seed, 9);
    }

    #[test]
    fn speaks_the_protocol() {
        let dir = tempfile::tempdir().unwrap();
        let (mut w, paths) = worker(dir.path());
        let frames = serde_json::to_string(&paths).unwrap();

        let r = handle_line(
            &mut w,
            r#"{"id":1,"op":"detect","model_id":"m0","frames":[]}"#,
        );
        assert!(!r.ok);
        let r = handle_line(
            &mut w,
            r#"{"id":2,"op":"init","model":"missing","labels":["car"]}"#,
        );
        assert!(r.error.unwrap().contains("model not found"));
        let r = handle_line(
            &mut w,
            r#"{"id":3,"op":"init","model":"generic","labels":["car","pedestrian","motorbike"]}"#,
        );
        assert_eq!(r.model_id.as_deref(), Some("m0"));

        let r = handle_line(
            &mut w,
            &format!(r#"{{"id":4,"op":"detect","model_id":"m0","frames":{frames}}}"#),
        );
        let dets = r.detections.unwrap();
        assert!(!dets.is_empty());
        assert!(dets
            .iter()
            .all(|d| d.0 < paths.len() && (0.0..=1.0).contains(&d.2)));

        let samples: Vec<WireSample> = dets
            .iter()
            .map(|d| (d.0, d.1.clone(), d.3, d.4, d.5, d.6))
            .collect();
        let line = serde_json::json!({"id": 5, "op": "finetune", "model_id": "m0", "frames": paths, "samples": samples});
        let r = handle_line(&mut w, &line.to_string());
        assert_eq!(r.model_id.as_deref(), Some("m1"));

        let r = handle_line(
            &mut w,
            r#"{"id":6,"op":"detect","model_id":"m0","frames":["/nowhere.png"]}"#,
        );
        assert!(r.error.unwrap().contains("not in the manifest"));
    }

    #[test]
    fn indices_follow_request_order() {
        let dir = tempfile::tempdir().unwrap();
        let (mut w, paths) = worker(dir.path());
        w.init(
            "generic",
            &["car".into(), "pedestrian".into(), "motorbike".into()],
        )
        .unwrap();
        let forward = w.detect("m0", &paths).unwrap();
        let reversed: Vec<PathBuf> = paths.iter().rev().cloned().collect();
        let backward = w.detect("m0", &reversed).unwrap();
        let n = paths.len();
        let mut mapped: Vec<_> = backward
            .into_iter()
            .map(|mut d| {
                d.0 = n - 1 - d.0;
                d
            })
            .collect();
        let mut forward = forward;
        let key = |d: &WireDetection| (d.0, d.3, d.4, d.5, d.6);
        forward.sort_by_key(key);
        mapped.sort_by_key(key);
        assert_eq!(forward, mapped);
    }
}
