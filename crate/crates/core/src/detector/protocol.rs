//! Newline-delimited JSON messages exchanged with a detector worker, and a
//! request loop for serving them.
//!
//! Each request and response is a single JSON object on its own line.
//! Frames travel as absolute paths; detections and training samples refer to
//! frames by their position in the request's `frames` array.

use std::io::{BufRead, Write};
use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::Hyper;
use crate::error::Result;

/// `[frame_index, label, score, u, v, w, h]`
pub type WireDetection = (usize, String, f64, i64, i64, i64, i64);

/// `[frame_index, label, u, v, w, h]`
pub type WireSample = (usize, String, i64, i64, i64, i64);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Request {
    pub id: u64,
    #[serde(flatten)]
    pub body: RequestBody,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "lowercase")]
pub enum RequestBody {
    Init {
        model: String,
        labels: Vec<String>,
    },
    Detect {
        model_id: String,
        frames: Vec<PathBuf>,
    },
    Finetune {
        model_id: String,
        frames: Vec<PathBuf>,
        samples: Vec<WireSample>,
        #[serde(default)]
        hyper: Hyper,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Response {
    pub id: Value,
    pub ok: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub detections: Option<Vec<WireDetection>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl Response {
    fn failure(id: Value, error: impl ToString) -> Self {
        Response {
            id,
            ok: false,
            model_id: None,
            detections: None,
            error: Some(error.to_string()),
        }
    }

    fn model(id: Value, model_id: String) -> Self {
        Response {
            id,
            ok: true,
            model_id: Some(model_id),
            detections: None,
            error: None,
        }
    }
}

/// The worker side of the protocol.
pub trait WorkerBackend {
    fn init(&mut self, model: &str, labels: &[String]) -> Result<String>;
    fn detect(&mut self, model_id: &str, frames: &[PathBuf]) -> Result<Vec<WireDetection>>;
    fn finetune(
        &mut self,
        model_id: &str,
        frames: &[PathBuf],
        samples: &[WireSample],
        hyper: &Hyper,
    ) -> Result<String>;
}

/// Answer one request line. Errors become `ok:false` responses; the worker
/// keeps running.
pub fn handle_line(backend: &mut dyn WorkerBackend, line: &str) -> Response {
    let value: Value = match serde_json::from_str(line) {
        Ok(v) => v,
        Err(e) => return Response::failure(Value::Null, format!("malformed request: {e}")),
    };
    let id = value.get("id").cloned().unwrap_or(Value::Null);
    let request: Request = match serde_json::from_value(value) {
        Ok(r) => r,
        Err(e) => return Response::failure(id, format!("malformed request: {e}")),
    };
    let result = match &request.body {
        RequestBody::Init { model, labels } => backend
            .init(model, labels)
            .map(|m| Response::model(id.clone(), m)),
        RequestBody::Detect { model_id, frames } => {
            backend.detect(model_id, frames).map(|d| Response {
                id: id.clone(),
                ok: true,
                model_id: None,
                detections: Some(d),
                error: None,
            })
        }
        RequestBody::Finetune {
            model_id,
            frames,
            samples,
            hyper,
        } => backend
            .finetune(model_id, frames, samples, hyper)
            .map(|m| Response::model(id.clone(), m)),
    };
    result.unwrap_or_else(|e| Response::failure(id, e))
}

/// Serve requests until end of input. Blank lines are skipped.
pub fn serve(
    backend: &mut dyn WorkerBackend,
    input: impl BufRead,
    mut output: impl Write,
) -> std::io::Result<()> {
    for line in input.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let response = handle_line(backend, &line);
        serde_json::to_writer(&mut output, &response)?;
        output.write_all(b"\n")?;
        output.flush()?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::error::Error;

    #[test]
    fn request_wire_format() {
        let r = Request {
            id: 1,
            body: RequestBody::Init {
                model: "generic".into(),
                labels: vec!["car".into(), "pedestrian".into()],
            },
        };
        assert_eq!(
            serde_json::to_string(&r).unwrap(),
            r#"{"id":1,"op":"init","model":"generic","labels":["car","pedestrian"]}"#
        );

        let line = r#"{"id":3,"op":"finetune","model_id":"m0","frames":["/a.png"],"samples":[[0,"car",120,44,60,38]],"hyper":{"momentum":0.9,"weight_decay":0.0005},"extra":true}"#;
        let parsed: Request = serde_json::from_str(line).unwrap();
        match parsed.body {
            RequestBody::Finetune { samples, hyper, .. } => {
                assert_eq!(samples, vec![(0, "car".to_string(), 120, 44, 60, 38)]);
                assert_eq!(hyper["momentum"], 0.9);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn response_wire_format() {
        let ok = Response {
            id: 2.into(),
            ok: true,
            model_id: None,
            detections: Some(vec![(0, "car".into(), 0.91, 120, 44, 60, 38)]),
            error: None,
        };
        assert_eq!(
            serde_json::to_string(&ok).unwrap(),
            r#"{"id":2,"ok":true,"detections":[[0,"car",0.91,120,44,60,38]]}"#
        );
    }

    struct Echo;

    impl WorkerBackend for Echo {
        fn init(&mut self, model: &str, _labels: &[String]) -> Result<String> {
            if model == "missing" {
                return Err(Error::worker("model not found: missing"));
            }
            Ok("m0".into())
        }
        fn detect(&mut self, _model_id: &str, frames: &[PathBuf]) -> Result<Vec<WireDetection>> {
            Ok(frames
                .iter()
                .enumerate()
                .map(|(i, _)| (i, "car".into(), 0.5, 0, 0, 4, 4))
                .collect())
        }
        fn finetune(
            &mut self,
            _: &str,
            _: &[PathBuf],
            _: &[WireSample],
            _: &Hyper,
        ) -> Result<String> {
            Ok("m1".into())
        }
    }

    #[test]
    fn serve_answers_every_line_and_survives_errors() {
        let input = concat!(
            r#"{"id":1,"op":"init","model":"missing","labels":["car"]}"#,
            "\n",
            "not json\n",
            "\n",
            r#"{"id":7,"op":"explode"}"#,
            "\n",
            r#"{"id":8,"op":"detect","model_id":"m0","frames":["/x.png","/y.png"]}"#,
            "\n",
        );
        let mut out = Vec::new();
        serve(&mut Echo, input.as_bytes(), &mut out).unwrap();
        let lines: Vec<Response> = String::from_utf8(out)
            .unwrap()
            .lines()
            .map(|l| serde_json::from_str(l).unwrap())
            .collect();
        assert_eq!(lines.len(), 4);
        assert_eq!((lines[0].id.clone(), lines[0].ok), (Value::from(1), false));
        assert!(lines[0].error.as_deref().unwrap().contains("not found"));
        assert_eq!((lines[1].id.clone(), lines[1].ok), (Value::Null, false));
        assert_eq!((lines[2].id.clone(), lines[2].ok), (Value::from(7), false));
        assert!(lines[3].ok);
        assert_eq!(lines[3].detections.as_ref().unwrap().len(), 2);
    }
}
