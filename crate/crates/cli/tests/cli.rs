//! End-to-end runs of the `smcdet` binary.

use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::process::{Command, Output, Stdio};
use std::sync::Arc;

use serde_json::Value;
use smcdet_core::detector::MockDetectorConfig;
use smcdet_core::io::{generate_synthetic_scene, SynthSceneConfig};
use smcdet_core::pipeline::specialization_frames;
use smcdet_core::{specialize, DetectorHandle, MockDetector, RunDir, SpecializationConfig};

const BIN: &str = env!("CARGO_BIN_EXE_smcdet");

fn smcdet(args: &[&str], cwd: &Path) -> Output {
    Command::new(BIN)
        .args(args)
        .current_dir(cwd)
        .output()
        .unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(smcdet(&["--help"], dir.path()).status.code(), Some(0));
    assert_eq!(smcdet(&["frobnicate"], dir.path()).status.code(), Some(1));
    assert_eq!(
        smcdet(&["evaluate", "--detections", "d.json"], dir.path())
            .status
            .code(),
        Some(1)
    );
    let missing = smcdet(
        &[
            "evaluate",
            "--detections",
            "d.json",
            "--annotations",
            "a.json",
            "--out",
            "o",
        ],
        dir.path(),
    );
    assert_eq!(missing.status.code(), Some(2));
    assert!(stderr(&missing).contains("d.json"), "{}", stderr(&missing));
}

#[test]
fn evaluate_hand_fixture() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(
        dir.path().join("gt.json"),
        r#"{"labels":["p"],"frames":[
            {"frame":0,"objects":[{"label":"p","u":0,"v":0,"w":10,"h":10}]},
            {"frame":1,"objects":[{"label":"p","u":0,"v":0,"w":10,"h":10}]}]}"#,
    )
    .unwrap();
    fs::write(
        dir.path().join("dets.json"),
        r#"{"labels":["p"],"frames":[
            {"frame":0,"objects":[{"label":"p","score":0.9,"u":0,"v":0,"w":10,"h":10},
                                  {"label":"p","score":0.8,"u":50,"v":50,"w":10,"h":10}]},
            {"frame":1,"objects":[{"label":"p","score":0.7,"u":0,"v":0,"w":10,"h":10}]}]}"#,
    )
    .unwrap();
    let o = smcdet(
        &[
            "evaluate",
            "--detections",
            "dets.json",
            "--annotations",
            "gt.json",
            "--fppi",
            "0,0.5",
            "--out",
            "ev",
        ],
        dir.path(),
    );
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert_eq!(stdout(&o), "recall@0fppi\t0.5\nrecall@0.5fppi\t1\n");
    let ev = dir.path().join("ev");
    assert_eq!(
        fs::read_to_string(ev.join("curve.csv")).unwrap(),
        "threshold,fppi,recall\n0.9,0,0.5\n0.8,0.5,0.5\n0.7,0.5,1\n"
    );
    assert_eq!(
        fs::read_to_string(ev.join("confusion.csv")).unwrap(),
        "actual\\predicted,p\np,2\n"
    );
    let summary: Value =
        serde_json::from_str(&fs::read_to_string(ev.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["recall_at"][1]["recall"], 1.0);
}

#[test]
fn mock_detector_speaks_the_protocol() {
    let dir = tempfile::tempdir().unwrap();
    let scene = generate_synthetic_scene(SynthSceneConfig::traffic(4, 2), dir.path()).unwrap();
    let mut child = Command::new(BIN)
        .args([
            "mock-detector",
            "--manifest",
            "manifest.json",
            "--annotations",
            "annotations.json",
        ])
        .current_dir(dir.path())
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .spawn()
        .unwrap();
    let mut input = child.stdin.take().unwrap();
    let mut output = BufReader::new(child.stdout.take().unwrap());
    let mut ask = |line: String| -> Value {
        writeln!(input, "{line}").unwrap();
        input.flush().unwrap();
        let mut reply = String::new();
        output.read_line(&mut reply).unwrap();
        serde_json::from_str(&reply).unwrap()
    };
    let frames: Vec<String> = scene
        .sequence
        .frames()
        .iter()
        .map(|f| f.path.canonicalize().unwrap().display().to_string())
        .collect();
    let frames = serde_json::to_string(&frames).unwrap();

    let r = ask(
        r#"{"id":1,"op":"init","model":"generic","labels":["car","pedestrian","motorbike"]}"#
            .into(),
    );
    assert_eq!(r, serde_json::json!({"id":1,"ok":true,"model_id":"m0"}));
    let r = ask(format!(
        r#"{{"id":2,"op":"detect","model_id":"m0","frames":{frames}}}"#
    ));
    assert_eq!(
        (r["id"].clone(), r["ok"].clone()),
        (Value::from(2), Value::from(true))
    );
    let dets = r["detections"].as_array().unwrap();
    for d in dets {
        let score = d[2].as_f64().unwrap();
        assert!((0.0..=1.0).contains(&score));
        assert!(d[0].as_u64().unwrap() < 4);
    }
    let samples: Vec<Value> = dets
        .iter()
        .map(|d| serde_json::json!([d[0], d[1], d[3], d[4], d[5], d[6]]))
        .collect();
    let r = ask(format!(
        r#"{{"id":3,"op":"finetune","model_id":"m0","frames":{frames},"samples":{},"hyper":{{"momentum":0.9,"weight_decay":0.0005}}}}"#,
        serde_json::to_string(&samples).unwrap()
    ));
    assert_eq!(r["model_id"], "m1");
    let r = ask(r#"{"id":4,"op":"detect","model_id":"m7","frames":[]}"#.into());
    assert_eq!(r["ok"], false);
    assert!(r["error"].as_str().unwrap().contains("m7"));
    drop(input);
    assert!(child.wait().unwrap().success());
}

fn files_under(root: &Path) -> Vec<PathBuf> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in fs::read_dir(dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                out.push(path.strip_prefix(root).unwrap().to_path_buf());
            }
        }
    }
    out.sort();
    out
}

/// The subprocess wire path and the in-process mock produce the same run.
#[test]
fn specialize_over_the_wire_matches_in_process() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    let o = smcdet(
        &["synth", "--seed", "7", "--frames", "120", "--out", "scene"],
        root,
    );
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));

    let detector_cmd = format!(
        "'{BIN}' mock-detector --manifest scene/manifest.json --annotations scene/annotations.json --seed 11"
    );
    let o = smcdet(
        &[
            "specialize",
            "--manifest",
            "scene/manifest.json",
            "--detector-cmd",
            &detector_cmd,
            "--seed",
            "5",
            "--out",
            "runs",
        ],
        root,
    );
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let run = root.join(stdout(&o).trim());
    for f in [
        "config.json",
        "summary.json",
        "iter1/dataset.json",
        "iter2/report.json",
        "heldout/final.json",
    ] {
        assert!(run.join(f).is_file(), "{f} missing");
    }
    let summary: Value =
        serde_json::from_str(&fs::read_to_string(run.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["final_model_id"], "m2");
    assert_eq!(summary["reports"].as_array().unwrap().len(), 2);

    // same experiment in process
    let scene = smcdet_core::io::load_sequence(&root.join("scene/manifest.json")).unwrap();
    let annotations =
        smcdet_core::io::AnnotationFile::read(&root.join("scene/annotations.json")).unwrap();
    let mock = MockDetector::new(MockDetectorConfig {
        ground_truth: annotations.ground_truth(),
        seed: 11,
        ..Default::default()
    })
    .unwrap();
    let config = SpecializationConfig {
        label_space: annotations.labels.clone(),
        seed: 5,
        ..Default::default()
    };
    let frames = specialization_frames(&scene, &config).unwrap();
    let local = RunDir::at(root.join("local"));
    specialize(
        &config,
        DetectorHandle::new(Arc::new(mock), "m0"),
        &frames,
        Some(&local),
    )
    .unwrap();
    let local_files = files_under(local.path());
    assert!(local_files.len() > 6);
    for f in &local_files {
        assert_eq!(
            fs::read(local.path().join(f)).unwrap(),
            fs::read(run.join(f)).unwrap(),
            "{} differs",
            f.display()
        );
    }

    // held-out evaluation through the CLI
    let mut recalls = Vec::new();
    for model in ["generic", "final"] {
        let dets = format!("{}/heldout/{model}.json", run.display());
        let o = smcdet(
            &[
                "evaluate",
                "--detections",
                &dets,
                "--annotations",
                "scene/annotations.json",
                "--fppi",
                "1",
                "--out",
                model,
            ],
            root,
        );
        assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
        let value: f64 = stdout(&o)
            .trim()
            .split('\t')
            .nth(1)
            .unwrap()
            .parse()
            .unwrap();
        recalls.push(value);
    }
    assert!(recalls[1] > recalls[0], "{recalls:?}");
}

#[test]
fn specialize_surfaces_worker_failure() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    assert!(smcdet(&["synth", "--frames", "6", "--out", "scene"], root)
        .status
        .success());
    let o = smcdet(
        &[
            "specialize",
            "--manifest",
            "scene/manifest.json",
            "--detector-cmd",
            "sh -c 'read l; echo \"weights file missing\" >&2; exit 4'",
            "--out",
            "runs",
        ],
        root,
    );
    assert_eq!(o.status.code(), Some(2));
    assert!(
        stderr(&o).contains("weights file missing"),
        "{}",
        stderr(&o)
    );
}

#[test]
fn bgsub_writes_one_mask_per_frame() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    assert!(smcdet(&["synth", "--frames", "12", "--out", "scene"], root)
        .status
        .success());
    let o = smcdet(
        &[
            "bgsub",
            "--manifest",
            "scene/manifest.json",
            "--out",
            "masks",
        ],
        root,
    );
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let masks = files_under(&root.join("masks"));
    assert_eq!(masks.len(), 12);
    assert_eq!(masks[0], PathBuf::from("mask_000000.png"));
}

#[test]
fn synth_config_file_and_seed_override() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    fs::write(
        root.join("scene.json"),
        r#"{"width":64,"height":48,"frames":5,"objects":[
            {"label":"car","u":2,"v":10,"w":20,"h":12,"vx":3,"vy":0,"start":0,"intensity":230}]}"#,
    )
    .unwrap();
    let o = smcdet(
        &[
            "synth",
            "--config",
            "scene.json",
            "--seed",
            "3",
            "--out",
            "s",
        ],
        root,
    );
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let gt: Value =
        serde_json::from_str(&fs::read_to_string(root.join("s/annotations.json")).unwrap())
            .unwrap();
    let us: Vec<i64> = gt["frames"]
        .as_array()
        .unwrap()
        .iter()
        .map(|f| f["objects"][0]["u"].as_i64().unwrap())
        .collect();
    assert_eq!(us, vec![2, 5, 8, 11, 14]);
}
