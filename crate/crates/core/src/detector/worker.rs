//! Client for an external detector worker speaking the line protocol on its
//! standard input and output.

use std::collections::VecDeque;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::process::{Child, ChildStdin, Command, Stdio};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError};
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::{Duration, Instant};

use super::protocol::{Request, RequestBody, Response, WireSample};
use super::{DetectorBackend, DetectorHandle, Hyper};
use crate::error::{Error, Result};
use crate::geometry::Rect;
use crate::types::{FrameSequence, Sample};

pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(300);
const STDERR_TAIL_LINES: usize = 40;

struct Connection {
    child: Child,
    stdin: Option<ChildStdin>,
    lines: Receiver<std::io::Result<String>>,
    next_id: u64,
}

pub struct WorkerClient {
    conn: Mutex<Connection>,
    stderr_tail: Arc<Mutex<VecDeque<String>>>,
    timeout: Duration,
    command: String,
}

impl WorkerClient {
    /// Start `argv[0]` with the remaining arguments.
    pub fn spawn(argv: &[String], timeout: Duration) -> Result<Self> {
        let (program, args) = argv
            .split_first()
            .ok_or_else(|| Error::Config("empty detector command".into()))?;
        let mut child = Command::new(program)
            .args(args)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::piped())
            .spawn()
            .map_err(|e| Error::worker(format!("cannot start {program:?}: {e}")))?;

        let stdout = child.stdout.take().expect("stdout piped");
        let (tx, lines) = mpsc::channel();
        thread::spawn(move || {
            for line in BufReader::new(stdout).lines() {
                let end = line.is_err();
                if tx.send(line).is_err() || end {
                    break;
                }
            }
        });

        let stderr_tail = Arc::new(Mutex::new(VecDeque::new()));
        let stderr = child.stderr.take().expect("stderr piped");
        let tail = Arc::clone(&stderr_tail);
        thread::spawn(move || {
            for line in BufReader::new(stderr).lines().map_while(|l| l.ok()) {
                let mut tail = tail.lock().expect("stderr tail poisoned");
                if tail.len() == STDERR_TAIL_LINES {
                    tail.pop_front();
                }
                tail.push_back(line);
            }
        });

        let stdin = child.stdin.take();
        Ok(WorkerClient {
            conn: Mutex::new(Connection {
                child,
                stdin,
                lines,
                next_id: 1,
            }),
            stderr_tail,
            timeout,
            command: argv.join(" "),
        })
    }

    /// Spawn the worker, load `model` and return a handle on it.
    pub fn connect(
        argv: &[String],
        timeout: Duration,
        model: &str,
        labels: &[String],
    ) -> Result<DetectorHandle> {
        let client = Arc::new(WorkerClient::spawn(argv, timeout)?);
        let model_id = client.init(model, labels)?;
        Ok(DetectorHandle::new(client, model_id))
    }

    pub fn init(&self, model: &str, labels: &[String]) -> Result<String> {
        let response = self.call(RequestBody::Init {
            model: model.to_string(),
            labels: labels.to_vec(),
        })?;
        response
            .model_id
            .ok_or_else(|| self.failure("init response without model_id"))
    }

    fn failure(&self, message: impl Into<String>) -> Error {
        // give the stderr reader a moment to catch the worker's last words
        thread::sleep(Duration::from_millis(50));
        let tail = self.stderr_tail.lock().expect("stderr tail poisoned");
        Error::Worker {
            message: format!("{} ({})", message.into(), self.command),
            stderr_tail: tail.iter().cloned().collect::<Vec<_>>().join("\n"),
        }
    }

    fn call(&self, body: RequestBody) -> Result<Response> {
        let mut conn = self.conn.lock().expect("worker connection poisoned");
        let id = conn.next_id;
        conn.next_id += 1;
        let mut line = serde_json::to_string(&Request { id, body }).expect("requests serialize");
        line.push('\n');
        let stdin = conn
            .stdin
            .as_mut()
            .ok_or_else(|| self.failure("worker input closed"))?;
        if let Err(e) = stdin.write_all(line.as_bytes()).and_then(|_| stdin.flush()) {
            return Err(self.failure(format!("cannot write request: {e}")));
        }

        let deadline = Instant::now() + self.timeout;
        let reply = loop {
            let left = deadline.saturating_duration_since(Instant::now());
            match conn.lines.recv_timeout(left) {
                Ok(Ok(l)) if l.trim().is_empty() => continue,
                Ok(Ok(l)) => break l,
                Ok(Err(e)) => return Err(self.failure(format!("cannot read response: {e}"))),
                Err(RecvTimeoutError::Timeout) => {
                    return Err(self.failure(format!("no response within {:?}", self.timeout)))
                }
                Err(RecvTimeoutError::Disconnected) => {
                    let status = conn.child.try_wait().ok().flatten();
                    return Err(self.failure(match status {
                        Some(s) => format!("worker exited ({s})"),
                        None => "worker closed its output".to_string(),
                    }));
                }
            }
        };
        let response: Response = serde_json::from_str(&reply)
            .map_err(|e| self.failure(format!("malformed response {reply:?}: {e}")))?;
        if response.id != id {
            return Err(self.failure(format!(
                "response id {} does not match request {id}",
                response.id
            )));
        }
        if !response.ok {
            let msg = response.error.unwrap_or_else(|| "unspecified error".into());
            return Err(self.failure(format!("request {id} failed: {msg}")));
        }
        Ok(response)
    }
}

impl Drop for WorkerClient {
    fn drop(&mut self) {
        let Ok(conn) = self.conn.get_mut() else {
            return;
        };
        drop(conn.stdin.take());
        let deadline = Instant::now() + Duration::from_secs(2);
        while Instant::now() < deadline {
            if let Ok(Some(_)) = conn.child.try_wait() {
                return;
            }
            thread::sleep(Duration::from_millis(10));
        }
        let _ = conn.child.kill();
        let _ = conn.child.wait();
    }
}

/// Absolute form of a frame path, as sent on the wire.
pub fn wire_path(path: &Path) -> PathBuf {
    path.canonicalize()
        .or_else(|_| std::path::absolute(path))
        .unwrap_or_else(|_| path.to_path_buf())
}

fn wire_frames(frames: &FrameSequence) -> Vec<PathBuf> {
    frames.frames().iter().map(|f| wire_path(&f.path)).collect()
}

impl DetectorBackend for WorkerClient {
    fn detect(
        &self,
        model_id: &str,
        frames: &FrameSequence,
        _labels: &[String],
    ) -> Result<Vec<Sample>> {
        let response = self.call(RequestBody::Detect {
            model_id: model_id.to_string(),
            frames: wire_frames(frames),
        })?;
        let detections = response
            .detections
            .ok_or_else(|| self.failure("detect response without detections"))?;
        let mut out = Vec::with_capacity(detections.len());
        for (index, label, score, u, v, w, h) in detections {
            let frame = frames
                .frames()
                .get(index)
                .ok_or_else(|| self.failure(format!("frame index {index} out of range")))?;
            if !(0.0..=1.0).contains(&score) {
                return Err(self.failure(format!("score {score} outside [0,1]")));
            }
            let (Ok(w), Ok(h)) = (u32::try_from(w), u32::try_from(h)) else {
                return Err(self.failure(format!("negative box size {w}x{h}")));
            };
            let rect = Rect::new(u, v, w, h).map_err(|e| self.failure(e.to_string()))?;
            if let Some(bbox) = rect.clamp_to(frames.width(), frames.height()) {
                out.push(Sample {
                    frame: frame.id,
                    label,
                    score,
                    bbox,
                });
            }
        }
        Ok(out)
    }

    fn finetune(
        &self,
        model_id: &str,
        frames: &FrameSequence,
        samples: &[Sample],
        hyper: &Hyper,
    ) -> Result<String> {
        let position = |id| frames.frames().iter().position(|f| f.id == id);
        let samples = samples
            .iter()
            .map(|s| {
                let index = position(s.frame).ok_or_else(|| {
                    Error::Config(format!("sample on frame {} outside the sequence", s.frame))
                })?;
                Ok((
                    index,
                    s.label.clone(),
                    i64::from(s.bbox.u),
                    i64::from(s.bbox.v),
                    i64::from(s.bbox.w),
                    i64::from(s.bbox.h),
                ))
            })
            .collect::<Result<Vec<WireSample>>>()?;
        let response = self.call(RequestBody::Finetune {
            model_id: model_id.to_string(),
            frames: wire_frames(frames),
            samples,
            hyper: hyper.clone(),
        })?;
        response
            .model_id
            .ok_or_else(|| self.failure("finetune response without model_id"))
    }
}
