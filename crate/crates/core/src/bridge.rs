//! Client for an external model process speaking newline-delimited JSON over
//! its standard streams.
//!
//! Requests are `{id, op, params}` and responses `{id, ok, result | error}`.
//! The first exchange is a `handshake` that fixes the session capabilities.
//! Image payloads travel as `{"base64": ...}` or `{"path": ...}`; the client
//! accepts both and sends base64.

use std::collections::HashMap;
use std::io::{BufRead, BufReader, Write};
use std::process::{Child, ChildStdin, Command, Stdio};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError};
use std::sync::Mutex;
use std::thread;
use std::time::Duration;

use base64::Engine;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::error::{Error, Result};
use crate::estimators::VisualAttributeEstimator;
use crate::generator::{Capabilities, GeneratorBackend};
use crate::stylizer::{StyleBackend, StyleEntry};
use crate::types::{AttributeVector, GeneratorVector, ImageHandle};

pub const PROTOCOL_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BridgeOptions {
    pub handshake_timeout: Duration,
    pub request_timeout: Duration,
}

impl Default for BridgeOptions {
    fn default() -> Self {
        Self {
            handshake_timeout: Duration::from_secs(30),
            request_timeout: Duration::from_secs(300),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PayloadMode {
    Base64,
    Path,
}

/// Capabilities the bridge reports at handshake.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Handshake {
    pub protocol_version: u32,
    pub num_classes: usize,
    pub latent_dim: usize,
    pub image_size: u32,
    pub supports_stylize: bool,
    pub max_concurrent: usize,
    #[serde(default = "default_attribute_dim")]
    pub attribute_dim: usize,
    #[serde(default = "default_payload_mode")]
    pub payload_mode: PayloadMode,
    #[serde(default = "default_true")]
    pub deterministic: bool,
    /// Mean and std of the estimator's training targets, if reported.
    #[serde(default)]
    pub attribute_stats: Option<AttributeStats>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttributeStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

fn default_attribute_dim() -> usize {
    2
}

fn default_payload_mode() -> PayloadMode {
    PayloadMode::Base64
}

fn default_true() -> bool {
    true
}

#[derive(Deserialize)]
struct Response {
    id: u64,
    ok: bool,
    #[serde(default)]
    result: Value,
    #[serde(default)]
    error: Option<String>,
}

struct Session {
    stdin: ChildStdin,
    lines: Receiver<std::io::Result<String>>,
    next_id: u64,
    /// Set once the session has been aborted; every later call fails with it.
    dead: Option<Fault>,
}

#[derive(Debug, Clone)]
enum Fault {
    /// The bridge sent something that violates the protocol.
    Protocol(String),
    /// The bridge stopped answering or its pipes failed.
    Transport(String),
}

impl Fault {
    fn to_error(&self) -> Error {
        match self {
            Fault::Protocol(m) => Error::Protocol(format!("session aborted: {m}")),
            Fault::Transport(m) => Error::Backend(format!("bridge unavailable: {m}")),
        }
    }
}

pub struct BridgeClient {
    child: Mutex<Child>,
    session: Mutex<Session>,
    handshake: Handshake,
    options: BridgeOptions,
}

impl std::fmt::Debug for BridgeClient {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("BridgeClient").field("handshake", &self.handshake).finish()
    }
}

enum Outcome {
    Done(Value),
    Failed(String),
}

impl BridgeClient {
    /// Starts `command` through the shell and performs the handshake.
    pub fn spawn(command: &str, options: BridgeOptions) -> Result<Self> {
        let mut cmd = Command::new("sh");
        cmd.arg("-c").arg(command);
        Self::spawn_command(cmd, options)
    }

    pub fn spawn_command(mut cmd: Command, options: BridgeOptions) -> Result<Self> {
        let mut child = cmd
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()
            .map_err(|e| Error::Backend(format!("failed to start bridge: {e}")))?;
        let stdin = child.stdin.take().expect("piped stdin");
        let stdout = child.stdout.take().expect("piped stdout");
        let (tx, rx) = mpsc::channel();
        thread::spawn(move || {
            for line in BufReader::new(stdout).lines() {
                let stop = line.is_err();
                if tx.send(line).is_err() || stop {
                    break;
                }
            }
        });
        let mut session = Session {
            stdin,
            lines: rx,
            next_id: 0,
            dead: None,
        };
        let params = json!({
            "protocol_version": PROTOCOL_VERSION,
            "payload_modes": ["base64", "path"],
        });
        let reply = exchange(&mut session, "handshake", vec![params], 1, options.handshake_timeout)
            .pop()
            .expect("one reply");
        let value = match reply {
            Ok(v) => v,
            Err(e) => {
                let _ = child.kill();
                let _ = child.wait();
                return Err(e);
            }
        };
        let handshake: Handshake = serde_json::from_value(value)
            .map_err(|e| Error::Protocol(format!("invalid handshake: {e}")))?;
        if handshake.protocol_version != PROTOCOL_VERSION {
            let _ = child.kill();
            return Err(Error::Protocol(format!(
                "bridge speaks protocol {}, expected {}",
                handshake.protocol_version, PROTOCOL_VERSION
            )));
        }
        if handshake.max_concurrent == 0 || handshake.num_classes == 0 || handshake.latent_dim == 0 {
            let _ = child.kill();
            return Err(Error::Protocol("handshake declares zero capacity".into()));
        }
        Ok(Self {
            child: Mutex::new(child),
            session: Mutex::new(session),
            handshake,
            options,
        })
    }

    pub fn handshake(&self) -> &Handshake {
        &self.handshake
    }

    /// Sends one request per params value with at most `max_concurrent` in
    /// flight. Results are in input order.
    pub fn call_many(&self, op: &str, params: Vec<Value>) -> Vec<Result<Value>> {
        let mut session = self.session.lock().unwrap_or_else(|p| p.into_inner());
        exchange(
            &mut session,
            op,
            params,
            self.handshake.max_concurrent,
            self.options.request_timeout,
        )
    }

    pub fn call(&self, op: &str, params: Value) -> Result<Value> {
        self.call_many(op, vec![params]).pop().expect("one reply")
    }

    /// Whether the session has been aborted by a protocol or transport fault.
    pub fn is_alive(&self) -> bool {
        self.session.lock().map(|s| s.dead.is_none()).unwrap_or(false)
    }

    fn image_from(&self, result: Value) -> Result<ImageHandle> {
        let payload = decode_payload(result.get("image").unwrap_or(&result))?;
        let dim = |key: &str, fallback: u32| {
            result.get(key).and_then(Value::as_u64).map_or(fallback, |v| v as u32)
        };
        let size = self.handshake.image_size;
        ImageHandle::new(payload, dim("width", size), dim("height", size), dim("channels", 3))
    }
}

impl Drop for BridgeClient {
    fn drop(&mut self) {
        if let Ok(session) = self.session.get_mut() {
            let _ = writeln!(session.stdin, "{}", json!({"id": session.next_id, "op": "shutdown", "params": {}}));
            let _ = session.stdin.flush();
        }
        if let Ok(child) = self.child.get_mut() {
            for _ in 0..20 {
                if let Ok(Some(_)) = child.try_wait() {
                    return;
                }
                thread::sleep(Duration::from_millis(10));
            }
            let _ = child.kill();
            let _ = child.wait();
        }
    }
}

fn exchange(
    session: &mut Session,
    op: &str,
    params: Vec<Value>,
    max_concurrent: usize,
    timeout: Duration,
) -> Vec<Result<Value>> {
    let n = params.len();
    if let Some(fault) = &session.dead {
        return (0..n).map(|_| Err(fault.to_error())).collect();
    }
    let mut outcomes: Vec<Option<Outcome>> = (0..n).map(|_| None).collect();
    let mut inflight: HashMap<u64, usize> = HashMap::new();
    let mut params = params.into_iter().enumerate();
    let mut pending = n;
    let abort = |session: &mut Session, fault: Fault| {
        log::error!("bridge session aborted: {fault:?}");
        session.dead = Some(fault);
    };

    while pending > 0 {
        while inflight.len() < max_concurrent {
            let Some((idx, p)) = params.next() else { break };
            let id = session.next_id;
            session.next_id += 1;
            let line = json!({"id": id, "op": op, "params": p}).to_string();
            if let Err(e) = writeln!(session.stdin, "{line}").and_then(|_| session.stdin.flush()) {
                abort(session, Fault::Transport(format!("write failed: {e}")));
                break;
            }
            inflight.insert(id, idx);
        }
        if session.dead.is_some() {
            break;
        }
        let line = match session.lines.recv_timeout(timeout) {
            Ok(Ok(line)) => line,
            Ok(Err(e)) => {
                abort(session, Fault::Transport(format!("read failed: {e}")));
                break;
            }
            Err(RecvTimeoutError::Timeout) => {
                abort(session, Fault::Transport(format!("no response within {:.1} s", timeout.as_secs_f64())));
                break;
            }
            Err(RecvTimeoutError::Disconnected) => {
                abort(session, Fault::Transport("bridge closed its output".into()));
                break;
            }
        };
        if line.trim().is_empty() {
            continue;
        }
        let response: Response = match serde_json::from_str(&line) {
            Ok(r) => r,
            Err(e) => {
                abort(session, Fault::Protocol(format!("malformed response: {e}")));
                break;
            }
        };
        let Some(idx) = inflight.remove(&response.id) else {
            abort(session, Fault::Protocol(format!("response for unknown request id {}", response.id)));
            break;
        };
        outcomes[idx] = Some(if response.ok {
            Outcome::Done(response.result)
        } else {
            Outcome::Failed(response.error.unwrap_or_else(|| "unspecified error".into()))
        });
        pending -= 1;
    }

    let fault = session.dead.clone();
    outcomes
        .into_iter()
        .map(|o| match o {
            Some(Outcome::Done(v)) => Ok(v),
            Some(Outcome::Failed(msg)) => Err(Error::Backend(format!("{op}: {msg}"))),
            None => Err(fault.as_ref().map_or_else(|| Error::Protocol("no response".into()), Fault::to_error)),
        })
        .collect()
}

fn decode_payload(v: &Value) -> Result<Vec<u8>> {
    if let Some(b64) = v.get("base64").and_then(Value::as_str) {
        return base64::engine::general_purpose::STANDARD
            .decode(b64)
            .map_err(|e| Error::Protocol(format!("bad base64 payload: {e}")));
    }
    if let Some(path) = v.get("path").and_then(Value::as_str) {
        return std::fs::read(path).map_err(|e| Error::Backend(format!("cannot read payload {path}: {e}")));
    }
    Err(Error::Protocol("image payload has neither base64 nor path".into()))
}

fn encode_payload(image: &ImageHandle) -> Value {
    json!({
        "base64": base64::engine::general_purpose::STANDARD.encode(&image.payload),
        "width": image.width,
        "height": image.height,
        "channels": image.channels,
    })
}

impl GeneratorBackend for BridgeClient {
    fn num_classes(&self) -> usize {
        self.handshake.num_classes
    }

    fn latent_dim(&self) -> usize {
        self.handshake.latent_dim
    }

    fn capabilities(&self) -> Capabilities {
        Capabilities {
            supports_stylize: self.handshake.supports_stylize,
            max_concurrent_requests: self.handshake.max_concurrent,
        }
    }

    fn generate(&self, gv: &GeneratorVector) -> Result<ImageHandle> {
        self.generate_batch(std::slice::from_ref(gv)).pop().expect("one reply")
    }

    fn generate_batch(&self, gvs: &[GeneratorVector]) -> Vec<Result<ImageHandle>> {
        let mut out: Vec<Option<Result<ImageHandle>>> = Vec::with_capacity(gvs.len());
        let mut params = Vec::new();
        let mut slots = Vec::new();
        for gv in gvs {
            match gv.validate(self.handshake.num_classes, self.handshake.latent_dim) {
                Ok(()) => {
                    slots.push(out.len());
                    out.push(None);
                    params.push(json!({"class_id": gv.class_id, "latent": gv.latent}));
                }
                Err(e) => out.push(Some(Err(e))),
            }
        }
        for (slot, r) in slots.into_iter().zip(self.call_many("generate_image", params)) {
            out[slot] = Some(r.and_then(|v| self.image_from(v)));
        }
        out.into_iter().map(|r| r.expect("filled")).collect()
    }
}

impl VisualAttributeEstimator for BridgeClient {
    fn attribute_dim(&self) -> usize {
        self.handshake.attribute_dim
    }

    fn is_deterministic(&self) -> bool {
        self.handshake.deterministic
    }

    fn estimate(&self, image: &ImageHandle) -> Result<AttributeVector> {
        self.estimate_batch(std::slice::from_ref(image)).pop().expect("one reply")
    }

    fn estimate_batch(&self, images: &[ImageHandle]) -> Vec<Result<AttributeVector>> {
        let params = images.iter().map(|im| json!({"image": encode_payload(im)})).collect();
        self.call_many("estimate_attributes", params)
            .into_iter()
            .map(|r| {
                let v = r?;
                let values: Vec<f64> = serde_json::from_value(v.get("attributes").cloned().unwrap_or(v))
                    .map_err(|e| Error::Protocol(format!("attributes: {e}")))?;
                if values.len() != self.handshake.attribute_dim {
                    return Err(Error::dim(self.handshake.attribute_dim, values.len()));
                }
                AttributeVector::new(values)
            })
            .collect()
    }
}

impl StyleBackend for BridgeClient {
    fn stylize(&self, image: &ImageHandle, style: &StyleEntry, blend: f64) -> Result<ImageHandle> {
        if !self.handshake.supports_stylize {
            return Err(Error::Backend("bridge does not support stylization".into()));
        }
        let params = json!({
            "image": encode_payload(image),
            "style": {"path": style.path},
            "blend": blend,
        });
        let v = self.call("stylize_image", params)?;
        self.image_from(v)
    }
}
