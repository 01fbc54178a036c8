//! Remote stage providers speaking a small versioned JSON protocol.
//!
//! Every stage is one `POST {endpoint}/v1/{stage}` with a JSON body:
//!
//! ```text
//! { "version": 1, "stage": "describe" | "ground" | "segment",
//!   "image": { "width": W, "height": H, "format": "ppm-base64", "data": "..." },
//!   "prompt": "...",                 // describe, ground
//!   "messages": [ {role, content} ], // describe (chat-completions style)
//!   "box": [x0, y0, x1, y1] }        // segment
//! ```
//!
//! Responses:
//!
//! * describe: `{"choices": [{"message": {"content": "..."}}]}`
//! * ground: `{"boxes": [{"box": [x0, y0, x1, y1], "confidence": c}, ...]}`;
//!   the highest-confidence box is used
//! * segment: `{"mask": "<plain PBM text>"}`

use super::{BBox, BoxGrounder, Describer, GroundingError, ImageRef, Mask, Segmenter, Stage, StageFailure};
use serde_json::{json, Value};
use std::collections::VecDeque;
use std::sync::{Arc, Mutex};
use std::time::Duration;
use thiserror::Error;

pub const PROTOCOL_VERSION: u32 = 1;

const SYSTEM_PROMPT: &str = "You identify the functional part of an object that a robot must manipulate. \
Ignore the robot arm. Distinguish fixed parts from movable parts. \
Describe the functional part in no more than three sentences.";

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("{0}")]
pub struct TransportError(pub String);

/// Blocking request/response channel used by remote providers.
pub trait Transport: Send + Sync {
    fn post_json(&self, url: &str, body: &str, timeout: Duration) -> Result<String, TransportError>;
}

/// HTTP transport over `ureq`; non-2xx statuses are errors.
#[derive(Debug, Clone, Copy, Default)]
pub struct HttpTransport;

impl Transport for HttpTransport {
    fn post_json(&self, url: &str, body: &str, timeout: Duration) -> Result<String, TransportError> {
        let agent: ureq::Agent = ureq::Agent::config_builder().timeout_global(Some(timeout)).http_status_as_error(true).build().into();
        let mut resp = agent.post(url).header("content-type", "application/json").send(body).map_err(|e| TransportError(e.to_string()))?;
        resp.body_mut().read_to_string().map_err(|e| TransportError(e.to_string()))
    }
}

/// Scripted transport for tests: replies are consumed in order, and once
/// they run out every call fails.
#[derive(Debug, Default)]
pub struct MockTransport {
    replies: Mutex<VecDeque<Result<String, TransportError>>>,
    requests: Mutex<Vec<(String, String)>>,
}

impl MockTransport {
    pub fn new(replies: impl IntoIterator<Item = Result<String, TransportError>>) -> Self {
        Self { replies: Mutex::new(replies.into_iter().collect()), requests: Mutex::default() }
    }

    /// `(url, body)` of every call so far.
    pub fn requests(&self) -> Vec<(String, String)> {
        self.requests.lock().expect("mock lock").clone()
    }
}

impl Transport for MockTransport {
    fn post_json(&self, url: &str, body: &str, _timeout: Duration) -> Result<String, TransportError> {
        self.requests.lock().expect("mock lock").push((url.to_string(), body.to_string()));
        self.replies.lock().expect("mock lock").pop_front().unwrap_or_else(|| Err(TransportError("connection refused".into())))
    }
}

#[derive(Clone)]
pub struct RemoteClient {
    endpoint: String,
    timeout: Duration,
    retries: u32,
    transport: Arc<dyn Transport>,
}

impl std::fmt::Debug for RemoteClient {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("RemoteClient").field("endpoint", &self.endpoint).field("timeout", &self.timeout).field("retries", &self.retries).finish()
    }
}

impl RemoteClient {
    pub fn new(endpoint: String, timeout_s: f64, retries: u32, transport: Arc<dyn Transport>) -> Self {
        Self { endpoint, timeout: Duration::from_secs_f64(timeout_s), retries, transport }
    }

    /// Posts `body` to `{endpoint}/v1/{route}`, retrying transport failures
    /// `retries` times. A reply that is not JSON is not retried.
    pub fn request(&self, route: &str, body: &Value) -> Result<Value, RemoteFailure> {
        let url = format!("{}/v{PROTOCOL_VERSION}/{route}", self.endpoint.trim_end_matches('/'));
        let text = body.to_string();
        let attempts = self.retries + 1;
        let mut last = String::new();
        for attempt in 1..=attempts {
            match self.transport.post_json(&url, &text, self.timeout) {
                Ok(reply) => return serde_json::from_str(&reply).map_err(|e| RemoteFailure::InvalidJson(e.to_string())),
                Err(e) => {
                    log::warn!("{route} attempt {attempt}/{attempts} failed: {e}");
                    last = e.0;
                }
            }
        }
        Err(RemoteFailure::Transport { attempts, message: last })
    }

    /// [`RemoteClient::request`] for a grounding stage.
    pub fn call(&self, stage: Stage, body: &Value) -> Result<Value, GroundingError> {
        self.request(stage.name(), body).map_err(|f| {
            let failure = match f {
                RemoteFailure::Transport { attempts, message } => StageFailure::Remote { attempts, message },
                RemoteFailure::InvalidJson(e) => StageFailure::BadResponse(format!("invalid JSON: {e}")),
            };
            GroundingError::stage(stage, failure)
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum RemoteFailure {
    #[error("remote call failed after {attempts} attempts: {message}")]
    Transport { attempts: u32, message: String },
    #[error("invalid JSON reply: {0}")]
    InvalidJson(String),
}

fn image_payload(image: &ImageRef<'_>) -> Value {
    json!({ "width": image.width(), "height": image.height(), "format": "ppm-base64", "data": image.raster_payload() })
}

fn bad(stage: Stage, msg: impl Into<String>) -> GroundingError {
    GroundingError::stage(stage, StageFailure::BadResponse(msg.into()))
}

#[derive(Debug, Clone)]
pub struct RemoteDescriber(pub RemoteClient);

impl Describer for RemoteDescriber {
    fn describe(&self, image: &ImageRef<'_>, task: &str) -> Result<String, GroundingError> {
        let prompt = format!("Task: {task}. Which part of the object must be manipulated, and what does it look like?");
        let body = json!({
            "version": PROTOCOL_VERSION,
            "stage": Stage::Describe,
            "image": image_payload(image),
            "prompt": prompt,
            "messages": [
                { "role": "system", "content": SYSTEM_PROMPT },
                { "role": "user", "content": prompt },
            ],
        });
        let reply = self.0.call(Stage::Describe, &body)?;
        reply["choices"][0]["message"]["content"]
            .as_str()
            .map(str::to_string)
            .ok_or_else(|| bad(Stage::Describe, "missing choices[0].message.content"))
    }
}

#[derive(Debug, Clone)]
pub struct RemoteGrounder(pub RemoteClient);

impl BoxGrounder for RemoteGrounder {
    fn ground(&self, image: &ImageRef<'_>, description: &str) -> Result<BBox, GroundingError> {
        let body = json!({
            "version": PROTOCOL_VERSION,
            "stage": Stage::Ground,
            "image": image_payload(image),
            "prompt": description,
        });
        let reply = self.0.call(Stage::Ground, &body)?;
        let boxes = reply["boxes"].as_array().ok_or_else(|| bad(Stage::Ground, "missing boxes"))?;
        let mut best: Option<(f64, [f64; 4])> = None;
        for b in boxes {
            let conf = b["confidence"].as_f64().ok_or_else(|| bad(Stage::Ground, "box without confidence"))?;
            let coords: Vec<f64> = b["box"].as_array().map(|a| a.iter().filter_map(Value::as_f64).collect()).unwrap_or_default();
            let coords: [f64; 4] = coords.try_into().map_err(|_| bad(Stage::Ground, "box must have four numbers"))?;
            if best.is_none_or(|(c, _)| conf > c) {
                best = Some((conf, coords));
            }
        }
        let (_, [x0, y0, x1, y1]) = best.ok_or(GroundingError::stage(Stage::Ground, StageFailure::PartNotVisible))?;
        let (w, h) = (image.width() as f64, image.height() as f64);
        let clamp = |v: f64, hi: f64| v.clamp(0.0, hi) as u32;
        BBox::new(clamp(x0.floor(), w), clamp(y0.floor(), h), clamp(x1.ceil(), w), clamp(y1.ceil(), h), image.width(), image.height())
            .map_err(|e| bad(Stage::Ground, e.to_string()))
    }
}

#[derive(Debug, Clone)]
pub struct RemoteSegmenter(pub RemoteClient);

impl Segmenter for RemoteSegmenter {
    fn segment(&self, image: &ImageRef<'_>, bbox: BBox) -> Result<Mask, GroundingError> {
        let body = json!({
            "version": PROTOCOL_VERSION,
            "stage": Stage::Segment,
            "image": image_payload(image),
            "box": [bbox.x0, bbox.y0, bbox.x1, bbox.y1],
        });
        let reply = self.0.call(Stage::Segment, &body)?;
        let pbm = reply["mask"].as_str().ok_or_else(|| bad(Stage::Segment, "missing mask"))?;
        Mask::from_pbm(pbm).map_err(|e| bad(Stage::Segment, e.to_string()))
    }
}
