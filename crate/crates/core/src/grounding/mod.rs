//! Part grounding: description, box grounding and mask segmentation behind
//! provider traits, depth back-projection and mask IoU.

mod remote;

pub use remote::{
    HttpTransport, MockTransport, RemoteClient, RemoteDescriber, RemoteFailure, RemoteGrounder, RemoteSegmenter, Transport, TransportError,
    PROTOCOL_VERSION,
};

use crate::affordance::{FrameTag, PartPointCloud, MIN_POINTS};
use crate::geometry::Pt3;
use crate::scene::{ArticulatedObject, ObservationFrame, BACKGROUND_ID};
use base64::Engine;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Describe,
    Ground,
    Segment,
    Backproject,
}

impl Stage {
    pub fn name(self) -> &'static str {
        match self {
            Stage::Describe => "describe",
            Stage::Ground => "ground",
            Stage::Segment => "segment",
            Stage::Backproject => "backproject",
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum StageFailure {
    #[error("part not visible")]
    PartNotVisible,
    #[error("no actionable part pixels inside box")]
    NoActionablePixels,
    #[error("empty description")]
    EmptyDescription,
    #[error("insufficient part points: {got} < {needed}")]
    InsufficientPoints { needed: usize, got: usize },
    #[error("remote call failed after {attempts} attempts: {message}")]
    Remote { attempts: u32, message: String },
    #[error("malformed provider response: {0}")]
    BadResponse(String),
    #[error("empty mask")]
    EmptyMask,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GroundingError {
    #[error("{stage} stage failed: {failure}")]
    Stage { stage: Stage, failure: StageFailure },
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("invalid box ({x0}, {y0}, {x1}, {y1}) for a {width}x{height} image")]
    InvalidBox { x0: u32, y0: u32, x1: u32, y1: u32, width: u32, height: u32 },
    #[error("invalid provider configuration: {0}")]
    InvalidConfig(String),
    #[error("malformed PBM: {0}")]
    Pbm(String),
}

impl GroundingError {
    pub fn stage(stage: Stage, failure: StageFailure) -> Self {
        GroundingError::Stage { stage, failure }
    }

    /// Stage that failed, if the error came from a pipeline stage.
    pub fn failed_stage(&self) -> Option<Stage> {
        match self {
            GroundingError::Stage { stage, .. } => Some(*stage),
            _ => None,
        }
    }
}

/// Simulator metadata attached to an image for offline providers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneMeta {
    pub category: String,
    pub part_names: BTreeMap<u16, String>,
    pub actionable: Vec<u16>,
    pub target: u16,
}

impl SceneMeta {
    pub fn from_object(obj: &ArticulatedObject) -> Self {
        Self {
            category: obj.category.name().replace('_', " "),
            part_names: obj.parts().iter().map(|p| (p.id, p.name.clone())).collect(),
            actionable: obj.actionable_parts().map(|p| p.id).collect(),
            target: obj.target_part().id,
        }
    }

    pub fn target_name(&self) -> &str {
        self.part_names.get(&self.target).map(String::as_str).unwrap_or("part")
    }
}

/// An observation handed to providers.
#[derive(Debug, Clone)]
pub struct ImageRef<'a> {
    pub frame: &'a ObservationFrame,
    pub meta: SceneMeta,
    /// Base64 false-colour PPM for remote providers.
    pub raster: Option<String>,
}

impl<'a> ImageRef<'a> {
    pub fn new(frame: &'a ObservationFrame, meta: SceneMeta) -> Result<Self, GroundingError> {
        let n = frame.camera.pixel_count();
        if frame.depth.len() != n || frame.part_ids.len() != n {
            return Err(GroundingError::DimensionMismatch(format!(
                "{}x{} camera with {} depth and {} id pixels",
                frame.width(),
                frame.height(),
                frame.depth.len(),
                frame.part_ids.len()
            )));
        }
        Ok(Self { frame, meta, raster: None })
    }

    pub fn with_raster(mut self) -> Self {
        self.raster = Some(encode_raster(self.frame));
        self
    }

    pub fn width(&self) -> u32 {
        self.frame.width()
    }

    pub fn height(&self) -> u32 {
        self.frame.height()
    }

    /// Raster payload, encoding it on demand.
    pub fn raster_payload(&self) -> String {
        self.raster.clone().unwrap_or_else(|| encode_raster(self.frame))
    }
}

/// False-colour binary PPM of the part-ID channel, base64 encoded.
pub fn encode_raster(frame: &ObservationFrame) -> String {
    let mut out = format!("P6\n{} {}\n255\n", frame.width(), frame.height()).into_bytes();
    for &id in &frame.part_ids {
        if id == BACKGROUND_ID {
            out.extend_from_slice(&[0, 0, 0]);
        } else {
            let h = (id as u32 + 1).wrapping_mul(2_654_435_761);
            out.extend_from_slice(&[(h >> 24) as u8 | 0x40, (h >> 16) as u8 | 0x40, (h >> 8) as u8 | 0x40]);
        }
    }
    base64::engine::general_purpose::STANDARD.encode(out)
}

/// Pixel rectangle `[x0, x1) × [y0, y1)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct BBox {
    pub x0: u32,
    pub y0: u32,
    pub x1: u32,
    pub y1: u32,
}

impl BBox {
    pub fn new(x0: u32, y0: u32, x1: u32, y1: u32, width: u32, height: u32) -> Result<Self, GroundingError> {
        if x0 < x1 && x1 <= width && y0 < y1 && y1 <= height {
            Ok(Self { x0, y0, x1, y1 })
        } else {
            Err(GroundingError::InvalidBox { x0, y0, x1, y1, width, height })
        }
    }

    pub fn width(&self) -> u32 {
        self.x1 - self.x0
    }

    pub fn height(&self) -> u32 {
        self.y1 - self.y0
    }

    pub fn contains(&self, u: u32, v: u32) -> bool {
        (self.x0..self.x1).contains(&u) && (self.y0..self.y1).contains(&v)
    }

    /// Grows each side by `fraction` of the box extent on that axis
    /// (rounded to whole pixels) and clamps to the image.
    pub fn dilate(&self, fraction: f64, width: u32, height: u32) -> BBox {
        let dx = (fraction * self.width() as f64).round().max(0.0) as u32;
        let dy = (fraction * self.height() as f64).round().max(0.0) as u32;
        BBox { x0: self.x0.saturating_sub(dx), y0: self.y0.saturating_sub(dy), x1: (self.x1 + dx).min(width), y1: (self.y1 + dy).min(height) }
    }
}

/// Binary raster, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mask {
    width: u32,
    height: u32,
    data: Vec<bool>,
}

impl Mask {
    pub fn empty(width: u32, height: u32) -> Self {
        Self { width, height, data: vec![false; width as usize * height as usize] }
    }

    pub fn from_data(width: u32, height: u32, data: Vec<bool>) -> Result<Self, GroundingError> {
        if data.len() != width as usize * height as usize {
            return Err(GroundingError::DimensionMismatch(format!("{} mask values for {width}x{height}", data.len())));
        }
        Ok(Self { width, height, data })
    }

    /// Every pixel showing part `id`.
    pub fn of_part(frame: &ObservationFrame, id: u16) -> Self {
        Self { width: frame.width(), height: frame.height(), data: frame.part_ids.iter().map(|&p| p == id).collect() }
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn data(&self) -> &[bool] {
        &self.data
    }

    pub fn get(&self, u: u32, v: u32) -> bool {
        self.data[v as usize * self.width as usize + u as usize]
    }

    pub fn set(&mut self, u: u32, v: u32, value: bool) {
        self.data[v as usize * self.width as usize + u as usize] = value;
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&b| b).count()
    }

    pub fn is_empty(&self) -> bool {
        self.count() == 0
    }

    /// Tight bounding box of the set pixels.
    pub fn bbox(&self) -> Option<BBox> {
        let mut b: Option<BBox> = None;
        for v in 0..self.height {
            for u in 0..self.width {
                if self.get(u, v) {
                    b = Some(match b {
                        None => BBox { x0: u, y0: v, x1: u + 1, y1: v + 1 },
                        Some(b) => BBox { x0: b.x0.min(u), y0: b.y0.min(v), x1: b.x1.max(u + 1), y1: b.y1.max(v + 1) },
                    });
                }
            }
        }
        b
    }

    /// Keeps a pixel only if its whole 3×3 neighbourhood is set; image
    /// borders count as unset.
    pub fn erode(&self) -> Mask {
        let mut out = Mask::empty(self.width, self.height);
        for v in 1..self.height.saturating_sub(1) {
            for u in 1..self.width.saturating_sub(1) {
                let keep = (v - 1..=v + 1).all(|y| (u - 1..=u + 1).all(|x| self.get(x, y)));
                out.set(u, v, keep);
            }
        }
        out
    }

    /// Plain (`P1`) portable bitmap; `1` marks a set pixel.
    pub fn to_pbm(&self) -> String {
        let mut s = format!("P1\n{} {}\n", self.width, self.height);
        for row in self.data.chunks(self.width.max(1) as usize) {
            let line: Vec<&str> = row.iter().map(|&b| if b { "1" } else { "0" }).collect();
            s.push_str(&line.join(" "));
            s.push('\n');
        }
        s
    }

    pub fn from_pbm(text: &str) -> Result<Mask, GroundingError> {
        let bad = |m: &str| GroundingError::Pbm(m.to_string());
        let body: String = text.lines().map(|l| l.split('#').next().unwrap_or("")).collect::<Vec<_>>().join("\n");
        let mut tokens = body.split_ascii_whitespace();
        if tokens.next() != Some("P1") {
            return Err(bad("missing P1 magic"));
        }
        let mut dim = || -> Result<u32, GroundingError> { tokens.next().and_then(|t| t.parse().ok()).ok_or_else(|| bad("bad dimensions")) };
        let (w, h) = (dim()?, dim()?);
        let bits: Vec<bool> = tokens
            .flat_map(|t| t.chars())
            .map(|c| match c {
                '0' => Ok(false),
                '1' => Ok(true),
                _ => Err(bad("pixel values must be 0 or 1")),
            })
            .collect::<Result<_, _>>()?;
        if bits.len() != w as usize * h as usize {
            return Err(bad(&format!("expected {} pixels, got {}", w as usize * h as usize, bits.len())));
        }
        Ok(Mask { width: w, height: h, data: bits })
    }
}

pub trait Describer: Send + Sync {
    fn describe(&self, image: &ImageRef<'_>, task: &str) -> Result<String, GroundingError>;
}

pub trait BoxGrounder: Send + Sync {
    fn ground(&self, image: &ImageRef<'_>, description: &str) -> Result<BBox, GroundingError>;
}

pub trait Segmenter: Send + Sync {
    fn segment(&self, image: &ImageRef<'_>, bbox: BBox) -> Result<Mask, GroundingError>;
}

/// Keeps at most the first three sentences.
pub fn truncate_sentences(text: &str, max: usize) -> String {
    let mut out = String::new();
    let mut count = 0;
    let mut chars = text.trim().chars().peekable();
    while let Some(c) = chars.next() {
        out.push(c);
        if matches!(c, '.' | '!' | '?') && chars.peek().is_none_or(|n| n.is_whitespace()) {
            count += 1;
            if count == max {
                break;
            }
        }
    }
    out.trim().to_string()
}

pub const MAX_SENTENCES: usize = 3;

pub fn describe_part(provider: &dyn Describer, image: &ImageRef<'_>, task: &str) -> Result<String, GroundingError> {
    let text = truncate_sentences(&provider.describe(image, task)?, MAX_SENTENCES);
    if text.is_empty() {
        return Err(GroundingError::stage(Stage::Describe, StageFailure::EmptyDescription));
    }
    Ok(text)
}

pub fn ground_box(provider: &dyn BoxGrounder, image: &ImageRef<'_>, description: &str) -> Result<BBox, GroundingError> {
    if description.trim().is_empty() {
        return Err(GroundingError::stage(Stage::Ground, StageFailure::EmptyDescription));
    }
    provider.ground(image, description)
}

pub fn segment_mask(provider: &dyn Segmenter, image: &ImageRef<'_>, bbox: BBox) -> Result<Mask, GroundingError> {
    BBox::new(bbox.x0, bbox.y0, bbox.x1, bbox.y1, image.width(), image.height())?;
    let mask = provider.segment(image, bbox)?;
    if mask.width() != image.width() || mask.height() != image.height() {
        return Err(GroundingError::stage(Stage::Segment, StageFailure::BadResponse("mask dimensions differ from image".into())));
    }
    if mask.is_empty() {
        return Err(GroundingError::stage(Stage::Segment, StageFailure::EmptyMask));
    }
    Ok(mask)
}

fn template_description(meta: &SceneMeta) -> String {
    format!("The movable {} on the {}, distinct from fixed parts.", meta.target_name(), meta.category)
}

fn tight_box(image: &ImageRef<'_>, id: u16) -> Result<BBox, GroundingError> {
    Mask::of_part(image.frame, id).bbox().ok_or(GroundingError::stage(Stage::Ground, StageFailure::PartNotVisible))
}

/// Most frequent ID among `candidates` inside the box; ties go to the smaller ID.
fn dominant_id(image: &ImageRef<'_>, bbox: BBox, candidate: impl Fn(u16) -> bool) -> Option<u16> {
    let mut counts: BTreeMap<u16, usize> = BTreeMap::new();
    for v in bbox.y0..bbox.y1 {
        for u in bbox.x0..bbox.x1 {
            let id = image.frame.part_ids[image.frame.index(u, v)];
            if id != BACKGROUND_ID && candidate(id) {
                *counts.entry(id).or_default() += 1;
            }
        }
    }
    // ascending ID order; only a strictly larger count replaces the leader
    counts
        .into_iter()
        .fold(None, |best: Option<(u16, usize)>, (id, n)| match best {
            Some((_, bn)) if bn >= n => best,
            _ => Some((id, n)),
        })
        .map(|(id, _)| id)
}

fn mask_in_box(image: &ImageRef<'_>, bbox: BBox, id: u16) -> Mask {
    let mut m = Mask::empty(image.width(), image.height());
    for v in bbox.y0..bbox.y1 {
        for u in bbox.x0..bbox.x1 {
            if image.frame.part_ids[image.frame.index(u, v)] == id {
                m.set(u, v, true);
            }
        }
    }
    m
}

/// Exact providers reading the simulator's part-ID channel.
#[derive(Debug, Clone, Copy, Default)]
pub struct GroundTruth;

impl Describer for GroundTruth {
    fn describe(&self, image: &ImageRef<'_>, _task: &str) -> Result<String, GroundingError> {
        Ok(template_description(&image.meta))
    }
}

impl BoxGrounder for GroundTruth {
    fn ground(&self, image: &ImageRef<'_>, _description: &str) -> Result<BBox, GroundingError> {
        tight_box(image, image.meta.target)
    }
}

impl Segmenter for GroundTruth {
    fn segment(&self, image: &ImageRef<'_>, bbox: BBox) -> Result<Mask, GroundingError> {
        let actionable = &image.meta.actionable;
        let id =
            dominant_id(image, bbox, |id| actionable.contains(&id)).ok_or(GroundingError::stage(Stage::Segment, StageFailure::NoActionablePixels))?;
        Ok(mask_in_box(image, bbox, id))
    }
}

/// Imprecise providers: the box is dilated by `dilation` per side, the
/// segmenter picks the dominant part of any kind inside the box and erodes
/// the result by one pixel.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Perturbed {
    pub dilation: f64,
}

impl Describer for Perturbed {
    fn describe(&self, image: &ImageRef<'_>, task: &str) -> Result<String, GroundingError> {
        GroundTruth.describe(image, task)
    }
}

impl BoxGrounder for Perturbed {
    fn ground(&self, image: &ImageRef<'_>, _description: &str) -> Result<BBox, GroundingError> {
        Ok(tight_box(image, image.meta.target)?.dilate(self.dilation, image.width(), image.height()))
    }
}

impl Segmenter for Perturbed {
    fn segment(&self, image: &ImageRef<'_>, bbox: BBox) -> Result<Mask, GroundingError> {
        let id = dominant_id(image, bbox, |_| true).ok_or(GroundingError::stage(Stage::Segment, StageFailure::NoActionablePixels))?;
        let eroded = mask_in_box(image, bbox, id).erode();
        if eroded.is_empty() {
            return Err(GroundingError::stage(Stage::Segment, StageFailure::EmptyMask));
        }
        Ok(eroded)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum ProviderKind {
    #[default]
    #[serde(rename = "offline-ground-truth")]
    GroundTruth,
    #[serde(rename = "perturbed-offline")]
    Perturbed,
    #[serde(rename = "remote")]
    Remote,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProviderConfig {
    pub describe: ProviderKind,
    pub ground: ProviderKind,
    pub segment: ProviderKind,
    pub endpoint: Option<String>,
    pub timeout_s: f64,
    pub retries: u32,
    /// Per-side box dilation fraction of the perturbed providers.
    pub noise: f64,
}

impl Default for ProviderConfig {
    fn default() -> Self {
        Self {
            describe: ProviderKind::GroundTruth,
            ground: ProviderKind::GroundTruth,
            segment: ProviderKind::GroundTruth,
            endpoint: None,
            timeout_s: 30.0,
            retries: 2,
            noise: 0.0,
        }
    }
}

impl ProviderConfig {
    /// All three stages on the same provider kind.
    pub fn uniform(kind: ProviderKind) -> Self {
        Self { describe: kind, ground: kind, segment: kind, ..Self::default() }
    }

    pub fn validate(&self) -> Result<(), GroundingError> {
        let remote = [self.describe, self.ground, self.segment].contains(&ProviderKind::Remote);
        if remote && self.endpoint.as_deref().is_none_or(str::is_empty) {
            return Err(GroundingError::InvalidConfig("remote providers require an endpoint".into()));
        }
        if !(self.timeout_s > 0.0 && self.timeout_s.is_finite()) {
            return Err(GroundingError::InvalidConfig(format!("timeout must be positive, got {}", self.timeout_s)));
        }
        if !(self.noise >= 0.0 && self.noise.is_finite()) {
            return Err(GroundingError::InvalidConfig(format!("noise must be non-negative, got {}", self.noise)));
        }
        Ok(())
    }
}

/// One provider per stage.
#[derive(Clone)]
pub struct Providers {
    pub describer: Arc<dyn Describer>,
    pub grounder: Arc<dyn BoxGrounder>,
    pub segmenter: Arc<dyn Segmenter>,
}

impl fmt::Debug for Providers {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("Providers { .. }")
    }
}

impl Providers {
    pub fn ground_truth() -> Self {
        Self { describer: Arc::new(GroundTruth), grounder: Arc::new(GroundTruth), segmenter: Arc::new(GroundTruth) }
    }

    /// Providers for `cfg`; remote stages share one client over `transport`.
    pub fn from_config(cfg: &ProviderConfig, transport: Arc<dyn Transport>) -> Result<Self, GroundingError> {
        cfg.validate()?;
        let perturbed = Perturbed { dilation: cfg.noise };
        let client = cfg.endpoint.as_ref().map(|e| RemoteClient::new(e.clone(), cfg.timeout_s, cfg.retries, transport.clone()));
        let client = || client.clone().expect("validated endpoint");
        let describer: Arc<dyn Describer> = match cfg.describe {
            ProviderKind::GroundTruth => Arc::new(GroundTruth),
            ProviderKind::Perturbed => Arc::new(perturbed),
            ProviderKind::Remote => Arc::new(RemoteDescriber(client())),
        };
        let grounder: Arc<dyn BoxGrounder> = match cfg.ground {
            ProviderKind::GroundTruth => Arc::new(GroundTruth),
            ProviderKind::Perturbed => Arc::new(perturbed),
            ProviderKind::Remote => Arc::new(RemoteGrounder(client())),
        };
        let segmenter: Arc<dyn Segmenter> = match cfg.segment {
            ProviderKind::GroundTruth => Arc::new(GroundTruth),
            ProviderKind::Perturbed => Arc::new(perturbed),
            ProviderKind::Remote => Arc::new(RemoteSegmenter(client())),
        };
        Ok(Self { describer, grounder, segmenter })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroundingOutput {
    pub description: String,
    pub bbox: BBox,
    pub mask: Mask,
}

/// Runs describe → ground → segment; the first failing stage aborts.
pub fn run_chain(providers: &Providers, image: &ImageRef<'_>, task: &str) -> Result<GroundingOutput, GroundingError> {
    let description = describe_part(providers.describer.as_ref(), image, task)?;
    let bbox = ground_box(providers.grounder.as_ref(), image, &description)?;
    let mask = segment_mask(providers.segmenter.as_ref(), image, bbox)?;
    Ok(GroundingOutput { description, bbox, mask })
}

fn check_dims(mask: &Mask, frame: &ObservationFrame) -> Result<(), GroundingError> {
    if mask.width() != frame.width() || mask.height() != frame.height() {
        return Err(GroundingError::DimensionMismatch(format!(
            "mask {}x{} vs frame {}x{}",
            mask.width(),
            mask.height(),
            frame.width(),
            frame.height()
        )));
    }
    Ok(())
}

/// Masked pixels with positive depth as camera-frame points.
pub fn backproject_camera(mask: &Mask, frame: &ObservationFrame) -> Result<PartPointCloud, GroundingError> {
    check_dims(mask, frame)?;
    let cam = &frame.camera;
    let mut points = Vec::new();
    for v in 0..frame.height() {
        for u in 0..frame.width() {
            let d = frame.depth[frame.index(u, v)] as f64;
            if mask.get(u, v) && d > 0.0 {
                points.push(Pt3::new((u as f64 - cam.cx) * d / cam.fx, (v as f64 - cam.cy) * d / cam.fy, d));
            }
        }
    }
    if points.len() < MIN_POINTS {
        return Err(GroundingError::stage(Stage::Backproject, StageFailure::InsufficientPoints { needed: MIN_POINTS, got: points.len() }));
    }
    Ok(PartPointCloud::new(points, FrameTag::Camera))
}

/// Masked pixels with positive depth as world-frame points.
pub fn backproject(mask: &Mask, frame: &ObservationFrame) -> Result<PartPointCloud, GroundingError> {
    let cam = backproject_camera(mask, frame)?;
    let points = cam.points.iter().map(|p| frame.camera.pose * p).collect();
    Ok(PartPointCloud::new(points, FrameTag::World))
}

/// `|a ∩ b| / |a ∪ b|`, 1 when both are empty.
pub fn mask_iou(a: &Mask, b: &Mask) -> Result<f64, GroundingError> {
    if a.width != b.width || a.height != b.height {
        return Err(GroundingError::DimensionMismatch(format!("{}x{} vs {}x{}", a.width, a.height, b.width, b.height)));
    }
    let (mut inter, mut union) = (0usize, 0usize);
    for (&x, &y) in a.data.iter().zip(&b.data) {
        inter += (x && y) as usize;
        union += (x || y) as usize;
    }
    Ok(if union == 0 { 1.0 } else { inter as f64 / union as f64 })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::{build_object, render_observation, CameraModel};
    use nalgebra::Isometry3;

    fn synthetic(width: u32, height: u32, fill: impl Fn(u32, u32) -> (u16, f32)) -> ObservationFrame {
        let camera = CameraModel::new(100.0, 100.0, width as f64 / 2.0, height as f64 / 2.0, width, height, Isometry3::identity()).unwrap();
        let mut depth = Vec::new();
        let mut part_ids = Vec::new();
        for v in 0..height {
            for u in 0..width {
                let (id, d) = fill(u, v);
                part_ids.push(id);
                depth.push(d);
            }
        }
        ObservationFrame { depth, part_ids, camera }
    }

    fn meta(target: u16, actionable: Vec<u16>) -> SceneMeta {
        SceneMeta {
            category: "bottle".into(),
            part_names: [(0, "body".to_string()), (1, "cap".to_string()), (2, "label".to_string())].into_iter().collect(),
            actionable,
            target,
        }
    }

    #[test]
    fn tight_box_of_block() {
        let f = synthetic(64, 64, |u, v| if (10..20).contains(&u) && (30..40).contains(&v) { (1, 1.0) } else { (BACKGROUND_ID, 0.0) });
        let img = ImageRef::new(&f, meta(1, vec![1])).unwrap();
        assert_eq!(GroundTruth.ground(&img, "cap").unwrap(), BBox { x0: 10, y0: 30, x1: 20, y1: 40 });
        let empty = synthetic(8, 8, |_, _| (BACKGROUND_ID, 0.0));
        let img = ImageRef::new(&empty, meta(1, vec![1])).unwrap();
        let err = GroundTruth.ground(&img, "cap").unwrap_err();
        assert_eq!(err, GroundingError::stage(Stage::Ground, StageFailure::PartNotVisible));
        assert!(err.to_string().contains("part not visible"));
    }

    #[test]
    fn dilation_arithmetic() {
        let b = BBox { x0: 45, y0: 45, x1: 55, y1: 55 };
        let d = b.dilate(0.1, 100, 100);
        assert_eq!((d.width(), d.height()), (12, 12));
        let edge = BBox { x0: 0, y0: 0, x1: 10, y1: 10 }.dilate(0.5, 12, 12);
        assert_eq!(edge, BBox { x0: 0, y0: 0, x1: 12, y1: 12 });
    }

    #[test]
    fn dominant_actionable_part() {
        // part 1 has 30 pixels, part 2 has 20, part 0 (not actionable) has 50
        let f = synthetic(10, 10, |_, v| match v {
            0..=2 => (1, 1.0),
            3..=4 => (2, 1.0),
            _ => (0, 1.0),
        });
        let img = ImageRef::new(&f, meta(1, vec![1, 2])).unwrap();
        let full = BBox { x0: 0, y0: 0, x1: 10, y1: 10 };
        let m = GroundTruth.segment(&img, full).unwrap();
        assert_eq!(m, Mask::of_part(&f, 1));
        let lower = BBox { x0: 0, y0: 2, x1: 10, y1: 10 };
        assert_eq!(GroundTruth.segment(&img, lower).unwrap().count(), 20);
        // any-part dominance of the perturbed provider selects the body
        assert_eq!(Perturbed { dilation: 0.0 }.segment(&img, full).unwrap(), Mask::of_part(&f, 0).erode());
        let bg = BBox { x0: 0, y0: 5, x1: 10, y1: 10 };
        assert!(GroundTruth.segment(&img, bg).is_err());
    }

    #[test]
    fn dominant_tie_prefers_smaller_id() {
        let f = synthetic(4, 2, |u, _| if u < 2 { (2, 1.0) } else { (1, 1.0) });
        let img = ImageRef::new(&f, meta(1, vec![1, 2])).unwrap();
        let m = GroundTruth.segment(&img, BBox { x0: 0, y0: 0, x1: 4, y1: 2 }).unwrap();
        assert_eq!(m, Mask::of_part(&f, 1));
    }

    #[test]
    fn template_and_truncation() {
        let obj = build_object("bottle", 3).unwrap();
        let frame = render_observation(&obj, &CameraModel::for_object(&obj));
        let img = ImageRef::new(&frame, SceneMeta::from_object(&obj)).unwrap();
        let text = describe_part(&GroundTruth, &img, "open the bottle").unwrap();
        assert!(text.starts_with("The movable cap on the bottle"), "{text}");
        assert_eq!(truncate_sentences("One. Two! Three? Four. Five.", 3), "One. Two! Three?");
        assert_eq!(truncate_sentences("Version 1.5 works. Next.", 3), "Version 1.5 works. Next.");
    }

    #[test]
    fn ground_truth_chain_is_exact() {
        for cat in crate::scene::Category::ALL {
            let obj = crate::scene::build_object_with(crate::scene::TemplateConfig::builtin(), cat, 1).unwrap();
            let frame = render_observation(&obj, &CameraModel::for_object(&obj));
            let img = ImageRef::new(&frame, SceneMeta::from_object(&obj)).unwrap();
            let out = run_chain(&Providers::ground_truth(), &img, "operate").unwrap();
            let gt = Mask::of_part(&frame, obj.target_part().id);
            assert_eq!(mask_iou(&out.mask, &gt).unwrap(), 1.0, "{cat}");
        }
    }

    #[test]
    fn center_pixel_backprojects_to_axis() {
        let f = synthetic(20, 20, |u, v| if (u, v) == (10, 10) { (1, 1.0) } else { (1, 0.0) });
        let mut m = Mask::empty(20, 20);
        for v in 0..20 {
            for u in 0..20 {
                m.set(u, v, true);
            }
        }
        assert!(matches!(
            backproject_camera(&m, &f),
            Err(GroundingError::Stage { stage: Stage::Backproject, failure: StageFailure::InsufficientPoints { got: 1, .. } })
        ));
        let f = synthetic(20, 20, |u, v| (1, if u.abs_diff(10) <= 1 && v.abs_diff(10) <= 1 { 1.0 } else { 0.0 }));
        let cloud = backproject_camera(&m, &f).unwrap();
        assert_eq!(cloud.len(), 9);
        assert!(cloud.points.contains(&Pt3::new(0.0, 0.0, 1.0)));
    }

    #[test]
    fn plane_backprojection() {
        let f = synthetic(40, 30, |_, _| (1, 2.0));
        let m = Mask::of_part(&f, 1);
        let cloud = backproject(&m, &f).unwrap();
        assert_eq!(cloud.len(), 1200);
        assert!(cloud.points.iter().all(|p| (p.z - 2.0).abs() < 1e-6));
        assert_eq!(cloud.frame, FrameTag::World);
    }

    #[test]
    fn iou_examples() {
        let mut a = Mask::empty(4, 4);
        let mut b = Mask::empty(4, 4);
        assert_eq!(mask_iou(&a, &b).unwrap(), 1.0);
        for u in 0..4 {
            a.set(u, 0, true);
        }
        for u in 2..4 {
            b.set(u, 0, true);
            b.set(u, 1, true);
        }
        assert!((mask_iou(&a, &b).unwrap() - 2.0 / 6.0).abs() < 1e-12);
        assert_eq!(mask_iou(&a, &a).unwrap(), 1.0);
        let mut c = Mask::empty(4, 4);
        c.set(0, 3, true);
        assert_eq!(mask_iou(&a, &c).unwrap(), 0.0);
        assert!(mask_iou(&a, &Mask::empty(3, 4)).is_err());
    }

    #[test]
    fn pbm_round_trip_and_erosion() {
        let mut m = Mask::empty(5, 4);
        for v in 0..3 {
            for u in 0..3 {
                m.set(u + 1, v, true);
            }
        }
        let text = m.to_pbm();
        assert!(text.starts_with("P1\n5 4\n"));
        assert_eq!(Mask::from_pbm(&text).unwrap(), m);
        assert_eq!(Mask::from_pbm("P1\n# c\n2 1\n10\n").unwrap().count(), 1);
        assert!(Mask::from_pbm("P1 2 2 0 1 0").is_err());
        assert!(Mask::from_pbm("P4 1 1 0").is_err());
        let e = m.erode();
        assert_eq!(e.count(), 1);
        assert!(e.get(2, 1));
    }

    #[test]
    fn config_validation() {
        assert!(ProviderConfig::default().validate().is_ok());
        assert!(ProviderConfig::uniform(ProviderKind::Remote).validate().is_err());
        let cfg = ProviderConfig { timeout_s: 0.0, ..Default::default() };
        assert!(cfg.validate().is_err());
        let toml_text = "describe = \"remote\"\nendpoint = \"http://127.0.0.1:9\"\nretries = 1\n";
        let cfg: ProviderConfig = toml::from_str(toml_text).unwrap();
        assert_eq!(cfg.describe, ProviderKind::Remote);
        assert_eq!(cfg.ground, ProviderKind::GroundTruth);
        assert!(cfg.validate().is_ok());
    }

    #[test]
    fn box_validation() {
        assert!(BBox::new(0, 0, 1, 1, 1, 1).is_ok());
        assert!(BBox::new(1, 0, 1, 1, 4, 4).is_err());
        assert!(BBox::new(0, 0, 5, 1, 4, 4).is_err());
    }
}
