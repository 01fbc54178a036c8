//! Part-level affordance: automatic annotation of part clouds, per-point
//! geometric features, a small trainable scorer and the F1 metric.
//!
//! The scorer is a two-layer network over 13 hand-built geometric features
//! per point (see [`extract_features`]) trained with class-weighted binary
//! cross entropy. It stands in for a point-cloud deep encoder; the training
//! contract (binary per-point labels in, actionability scores in `[0, 1]`
//! out) is the same.

mod features;
mod library;
mod model;

pub use features::{extract_features, extract_features_with, FeatureConfig, FeatureDiagnostics, FeatureRow, FEATURE_DIM};
pub use library::{
    generate_part_library, generate_part_library_with, read_dataset, write_dataset, AffordanceDataset, Archetype, DatasetEntry, LibraryConfig,
};
pub use model::{predict_affordance, predict_affordance_with, train_affordance, AffordanceModel, Gradient, Hyperparameters, TrainingReport};

use crate::geometry::{Aabb, Face, Pt3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Minimum point count for any operation fitting centers or neighbourhoods.
pub const MIN_POINTS: usize = 8;
pub const DEFAULT_RADIUS_FACTOR: f64 = 0.5;
pub const DEFAULT_FACE_TOLERANCE: f64 = 1e-3;

#[derive(Debug, Error, PartialEq)]
pub enum AffordanceError {
    #[error("need at least {needed} points, got {got}")]
    TooFewPoints { needed: usize, got: usize },
    #[error("empty affordance surface: no point on face {0:?} within tolerance")]
    EmptySurface(Face),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("dataset must contain both positive and negative labels")]
    SingleClass,
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("non-finite loss at epoch {epoch}: {loss}")]
    NonFiniteLoss { epoch: usize, loss: f64 },
    #[error("unknown archetype `{0}`; valid archetypes: cap, handle-bar, knob, button, lever")]
    UnknownArchetype(String),
    #[error("model feature dimension {got} does not match extractor dimension {expected}")]
    FeatureDimension { expected: usize, got: usize },
    #[error("malformed dataset line {line}: {reason}")]
    MalformedLine { line: usize, reason: String },
    #[error("malformed model file: {0}")]
    MalformedModel(String),
    #[error("i/o: {0}")]
    Io(String),
}

impl From<std::io::Error> for AffordanceError {
    fn from(e: std::io::Error) -> Self {
        AffordanceError::Io(e.to_string())
    }
}

/// Coordinate frame a cloud is expressed in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FrameTag {
    Part,
    Camera,
    World,
}

/// Points of one segmented part.
#[derive(Debug, Clone, PartialEq)]
pub struct PartPointCloud {
    pub points: Vec<Pt3>,
    pub frame: FrameTag,
}

impl PartPointCloud {
    pub fn new(points: Vec<Pt3>, frame: FrameTag) -> Self {
        Self { points, frame }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    fn require(&self, needed: usize) -> Result<(), AffordanceError> {
        if self.points.len() < needed {
            return Err(AffordanceError::TooFewPoints { needed, got: self.points.len() });
        }
        if self.points.iter().any(|p| !p.coords.iter().all(|c| c.is_finite())) {
            return Err(AffordanceError::InvalidParameter("non-finite coordinate".into()));
        }
        Ok(())
    }

    pub fn aabb(&self) -> Option<Aabb> {
        Aabb::from_points(&self.points)
    }
}

/// Which bounding-box face carries the affordance, and how close a point
/// must be to that face to count as on it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SurfaceSpec {
    pub face: Face,
    tolerance: f64,
}

impl SurfaceSpec {
    pub fn new(face: Face, tolerance: f64) -> Result<Self, AffordanceError> {
        if !(tolerance > 0.0) {
            return Err(AffordanceError::InvalidParameter(format!("face tolerance must be positive, got {tolerance}")));
        }
        Ok(Self { face, tolerance })
    }

    pub fn with_default_tolerance(face: Face) -> Self {
        Self { face, tolerance: DEFAULT_FACE_TOLERANCE }
    }

    pub fn tolerance(&self) -> f64 {
        self.tolerance
    }
}

/// One annotated sample `(cloud, point index, label)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AffordanceSample<'a> {
    pub cloud: &'a PartPointCloud,
    pub index: usize,
    pub label: bool,
}

/// Per-point actionability scores aligned with a cloud.
#[derive(Debug, Clone, PartialEq)]
pub struct AffordanceMap {
    scores: Vec<f64>,
}

impl AffordanceMap {
    pub fn new(scores: Vec<f64>) -> Result<Self, AffordanceError> {
        if let Some(s) = scores.iter().find(|s| !(0.0..=1.0).contains(*s)) {
            return Err(AffordanceError::InvalidParameter(format!("score {s} outside [0, 1]")));
        }
        Ok(Self { scores })
    }

    /// Hard labels mapped to scores 0 and 1.
    pub fn from_labels(labels: &[bool]) -> Self {
        Self { scores: labels.iter().map(|&l| if l { 1.0 } else { 0.0 }).collect() }
    }

    pub fn scores(&self) -> &[f64] {
        &self.scores
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }

    pub fn threshold(&self, eps: f64) -> Vec<bool> {
        self.scores.iter().map(|&s| s >= eps).collect()
    }
}

/// Midpoint of the point centroid and the bounding-box centre.
pub fn refined_center(part: &PartPointCloud) -> Result<Pt3, AffordanceError> {
    part.require(MIN_POINTS)?;
    let n = part.points.len() as f64;
    let centroid = Pt3::from(part.points.iter().fold(nalgebra::Vector3::zeros(), |acc, p| acc + p.coords) / n);
    let bbox = part.aabb().expect("non-empty");
    Ok(nalgebra::center(&centroid, &bbox.center()))
}

/// Disc-shaped affordance region on one bounding-box face.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AffordanceRegion {
    pub face: Face,
    /// Coordinate of the face plane along the face axis.
    pub plane: f64,
    pub center: Pt3,
    pub radius: f64,
    pub tolerance: f64,
}

impl AffordanceRegion {
    /// Fits the region for a cloud: face plane from the bounding box, disc
    /// centred on the refined centre with radius `radius_factor` times the
    /// smaller in-face half extent.
    pub fn fit(part: &PartPointCloud, surface: &SurfaceSpec, radius_factor: f64) -> Result<Self, AffordanceError> {
        if !(radius_factor > 0.0 && radius_factor <= 1.0) {
            return Err(AffordanceError::InvalidParameter(format!("radius factor {radius_factor} not in (0, 1]")));
        }
        let center = refined_center(part)?;
        let bbox = part.aabb().expect("non-empty");
        let a = surface.face.axis();
        let plane = if surface.face.is_positive() { bbox.max[a] } else { bbox.min[a] };
        let (u, v) = in_face_axes(surface.face);
        let half = bbox.extent() * 0.5;
        Ok(Self { face: surface.face, plane, center, radius: radius_factor * half[u].min(half[v]), tolerance: surface.tolerance })
    }

    pub fn on_face(&self, p: &Pt3) -> bool {
        (p[self.face.axis()] - self.plane).abs() <= self.tolerance
    }

    pub fn contains(&self, p: &Pt3) -> bool {
        let (u, v) = in_face_axes(self.face);
        self.on_face(p) && (p[u] - self.center[u]).hypot(p[v] - self.center[v]) <= self.radius
    }

    /// Centre of the disc on the face plane.
    pub fn disc_center(&self) -> Pt3 {
        let mut c = self.center;
        c[self.face.axis()] = self.plane;
        c
    }
}

fn in_face_axes(face: Face) -> (usize, usize) {
    let a = face.axis();
    ((a + 1) % 3, (a + 2) % 3)
}

/// Labels a part cloud: positive iff the point lies on the affordance face
/// and inside the disc around the refined centre.
pub fn annotate_part(part: &PartPointCloud, surface: &SurfaceSpec, radius_factor: f64) -> Result<Vec<bool>, AffordanceError> {
    let region = AffordanceRegion::fit(part, surface, radius_factor)?;
    let labels: Vec<bool> = part.points.iter().map(|p| region.contains(p)).collect();
    if !labels.iter().any(|&l| l) {
        return Err(AffordanceError::EmptySurface(surface.face));
    }
    Ok(labels)
}

/// `2·TP / (2·TP + FP + FN)`; 0 when the denominator is 0.
pub fn f1_score(predicted: &[bool], truth: &[bool]) -> Result<f64, AffordanceError> {
    if predicted.len() != truth.len() {
        return Err(AffordanceError::LengthMismatch(predicted.len(), truth.len()));
    }
    let (mut tp, mut fp, mut fne) = (0usize, 0usize, 0usize);
    for (&p, &t) in predicted.iter().zip(truth) {
        match (p, t) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fne += 1,
            (false, false) => {}
        }
    }
    let denom = 2 * tp + fp + fne;
    Ok(if denom == 0 { 0.0 } else { 2.0 * tp as f64 / denom as f64 })
}
