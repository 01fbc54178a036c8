//! Articulated objects with hidden lock mechanisms.
//!
//! An [`ArticulatedObject`] is a list of primitive parts. Actionable parts
//! are driven by exactly one joint and guarded by a [`MechanismState`] the
//! robot cannot observe directly: it only sees whether a push, pull or
//! rotation succeeded.

mod render;
mod templates;

pub use render::{parse_part_id_pgm, render_observation, render_observation_with, CameraModel, FrameImages, ObservationFrame, BACKGROUND_ID};
pub use templates::{build_object, build_object_with, Category, TemplateConfig, DEFAULT_TEMPLATES};

use crate::affordance::SurfaceSpec;
use crate::geometry::{PartShape, Pt3, Vec3};
use nalgebra::{Isometry3, Translation3, Unit, UnitQuaternion};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Rotation needed in the unlock direction for one counter decrement.
pub const UNLOCK_INCREMENT_RAD: f64 = 15.0 * std::f64::consts::PI / 180.0;

const MECH_EPS: f64 = 1e-9;

#[derive(Debug, Clone, Error, PartialEq)]
pub enum SceneError {
    #[error("unknown category `{0}`; valid categories: bottle, pen, pressure_cooker, coffee_machine, window, door, lamp")]
    UnknownCategory(String),
    #[error("part {0} does not exist")]
    NoSuchPart(u16),
    #[error("part {0} is not actionable")]
    NotActionable(u16),
    #[error("invalid joint: {0}")]
    InvalidJoint(String),
    #[error("invalid object: {0}")]
    InvalidObject(String),
    #[error("template config: {0}")]
    Template(String),
    #[error(transparent)]
    Geometry(#[from] crate::geometry::GeometryError),
    #[error("malformed frame data: {0}")]
    FrameFormat(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum JointKind {
    Revolute,
    Prismatic,
    Screw,
}

/// One degree of freedom attaching a part to the object base.
///
/// `value` is in radians for revolute and screw joints and meters for
/// prismatic joints. A screw joint advances `pitch · value` along its axis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JointSpec {
    pub kind: JointKind,
    /// Part the joint is mounted on.
    pub parent: u16,
    /// Actionable part driven by the joint.
    pub child: u16,
    axis: Vec3,
    origin: Pt3,
    limits: [f64; 2],
    value: f64,
    pitch: f64,
    /// Distance from the axis to the driven handle; converts a linear pull
    /// into joint travel for revolute joints.
    lever_radius: f64,
}

impl JointSpec {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        kind: JointKind,
        parent: u16,
        child: u16,
        axis: Vec3,
        origin: Pt3,
        limits: [f64; 2],
        value: f64,
        pitch: f64,
        lever_radius: f64,
    ) -> Result<Self, SceneError> {
        if (axis.norm() - 1.0).abs() > 1e-9 {
            return Err(SceneError::InvalidJoint(format!("axis norm {} is not 1", axis.norm())));
        }
        if !(limits[0] <= value && value <= limits[1]) {
            return Err(SceneError::InvalidJoint(format!("value {value} outside limits {limits:?}")));
        }
        if kind == JointKind::Screw && pitch <= 0.0 {
            return Err(SceneError::InvalidJoint("screw pitch must be positive".into()));
        }
        if kind == JointKind::Revolute && lever_radius <= 0.0 {
            return Err(SceneError::InvalidJoint("revolute lever radius must be positive".into()));
        }
        Ok(Self { kind, parent, child, axis, origin, limits, value, pitch, lever_radius })
    }

    pub fn axis(&self) -> Vec3 {
        self.axis
    }

    pub fn origin(&self) -> Pt3 {
        self.origin
    }

    pub fn limits(&self) -> [f64; 2] {
        self.limits
    }

    pub fn value(&self) -> f64 {
        self.value
    }

    pub fn pitch(&self) -> f64 {
        self.pitch
    }

    pub fn lever_radius(&self) -> f64 {
        self.lever_radius
    }

    /// Meters of handle travel per unit of joint value.
    fn travel_scale(&self) -> f64 {
        match self.kind {
            JointKind::Prismatic => 1.0,
            JointKind::Screw => self.pitch,
            JointKind::Revolute => self.lever_radius,
        }
    }

    /// Rigid motion of the child at the current value, in the object frame.
    pub fn motion(&self) -> Isometry3<f64> {
        self.motion_at(self.value)
    }

    pub fn motion_at(&self, value: f64) -> Isometry3<f64> {
        let axis = Unit::new_unchecked(self.axis);
        let about_origin = |rot: UnitQuaternion<f64>, shift: Vec3| {
            let o = self.origin.coords;
            Isometry3::from_parts(Translation3::from(o + shift), rot) * Isometry3::translation(-o.x, -o.y, -o.z)
        };
        match self.kind {
            JointKind::Prismatic => Isometry3::translation(self.axis.x * value, self.axis.y * value, self.axis.z * value),
            JointKind::Revolute => about_origin(UnitQuaternion::from_axis_angle(&axis, value), Vec3::zeros()),
            JointKind::Screw => about_origin(UnitQuaternion::from_axis_angle(&axis, value), self.axis * (self.pitch * value)),
        }
    }

    pub fn is_open(&self) -> bool {
        self.value >= self.limits[1] - MECH_EPS
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum MechanismKind {
    /// The part itself must be turned before it moves.
    RotateToUnlock,
    /// A separate latch handle must be turned; works on any joint kind.
    Latch,
    Free,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum RotationDir {
    Cw,
    Ccw,
}

impl RotationDir {
    pub fn name(self) -> &'static str {
        match self {
            RotationDir::Cw => "cw",
            RotationDir::Ccw => "ccw",
        }
    }

    /// Sign of the rotation about the outward surface normal (the reverse of
    /// the gripper approach axis).
    pub fn sign(self) -> f64 {
        match self {
            RotationDir::Ccw => 1.0,
            RotationDir::Cw => -1.0,
        }
    }
}

/// Hidden lock state. `unlocked` is true iff `counter == 0`; the counter
/// only ever decreases.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MechanismState {
    kind: MechanismKind,
    counter: u32,
    direction: RotationDir,
    unlocked: bool,
    /// Unlock-direction rotation accumulated toward the next decrement.
    accumulated: f64,
}

impl MechanismState {
    pub fn new(kind: MechanismKind, counter: u32, direction: RotationDir) -> Self {
        let counter = if kind == MechanismKind::Free { 0 } else { counter };
        Self { kind, counter, direction, unlocked: counter == 0, accumulated: 0.0 }
    }

    pub fn kind(&self) -> MechanismKind {
        self.kind
    }

    pub fn counter(&self) -> u32 {
        self.counter
    }

    pub fn direction(&self) -> RotationDir {
        self.direction
    }

    pub fn is_unlocked(&self) -> bool {
        self.unlocked
    }

    fn rotate(&mut self, dir: RotationDir, angle: f64) {
        if self.unlocked || dir != self.direction {
            return;
        }
        self.accumulated += angle;
        while self.counter > 0 && self.accumulated >= UNLOCK_INCREMENT_RAD - MECH_EPS {
            self.accumulated -= UNLOCK_INCREMENT_RAD;
            self.counter -= 1;
        }
        self.accumulated = self.accumulated.max(0.0);
        self.unlocked = self.counter == 0;
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Part {
    pub id: u16,
    pub name: String,
    pub shape: PartShape,
    pub actionable: bool,
    /// Joint whose motion this part follows, if any.
    pub joint: Option<usize>,
    /// Surface carrying the affordance region, in the part frame.
    pub affordance: Option<SurfaceSpec>,
}

/// Suggested camera placement for observing the actionable part.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ViewHint {
    pub eye: Pt3,
    pub target: Pt3,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArticulatedObject {
    pub category: Category,
    pub seed: u64,
    parts: Vec<Part>,
    joints: Vec<JointSpec>,
    /// One per joint, same index.
    mechanisms: Vec<MechanismState>,
    base_pose: Isometry3<f64>,
    pub view: ViewHint,
}

/// Action applied to an actionable part.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum PartAction {
    Rotate {
        direction: RotationDir,
        angle: f64,
    },
    /// Move toward the open limit by a handle displacement in meters.
    Pull {
        distance: f64,
    },
    /// Move toward the closed limit.
    Push {
        distance: f64,
    },
}

/// Feedback of one mechanism step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ActionOutcome {
    pub success: bool,
    /// Achieved handle displacement (m) or rotation (rad).
    pub achieved: f64,
    pub joint_value: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LabeledPoint {
    pub point: Pt3,
    pub part_id: u16,
}

impl ArticulatedObject {
    pub fn new(
        category: Category,
        seed: u64,
        parts: Vec<Part>,
        joints: Vec<JointSpec>,
        mechanisms: Vec<MechanismState>,
        base_pose: Isometry3<f64>,
        view: ViewHint,
    ) -> Result<Self, SceneError> {
        for (i, p) in parts.iter().enumerate() {
            if p.id as usize != i {
                return Err(SceneError::InvalidObject(format!("part ids must be contiguous from 0, found {} at {i}", p.id)));
            }
            if let Some(j) = p.joint {
                if j >= joints.len() {
                    return Err(SceneError::InvalidObject(format!("part {} references missing joint {j}", p.id)));
                }
            }
        }
        if mechanisms.len() != joints.len() {
            return Err(SceneError::InvalidObject("one mechanism per joint required".into()));
        }
        for p in parts.iter().filter(|p| p.actionable) {
            let driving = joints.iter().filter(|j| j.child == p.id).count();
            if driving != 1 || p.joint.is_none_or(|j| joints[j].child != p.id) {
                return Err(SceneError::InvalidObject(format!("actionable part {} needs exactly one joint", p.id)));
            }
        }
        for j in &joints {
            if !parts.get(j.child as usize).is_some_and(|p| p.actionable) {
                return Err(SceneError::InvalidObject(format!("joint child {} is not an actionable part", j.child)));
            }
        }
        Ok(Self { category, seed, parts, joints, mechanisms, base_pose, view })
    }

    pub fn parts(&self) -> &[Part] {
        &self.parts
    }

    pub fn joints(&self) -> &[JointSpec] {
        &self.joints
    }

    pub fn mechanisms(&self) -> &[MechanismState] {
        &self.mechanisms
    }

    pub fn base_pose(&self) -> &Isometry3<f64> {
        &self.base_pose
    }

    pub fn part(&self, id: u16) -> Result<&Part, SceneError> {
        self.parts.get(id as usize).ok_or(SceneError::NoSuchPart(id))
    }

    pub fn actionable_parts(&self) -> impl Iterator<Item = &Part> {
        self.parts.iter().filter(|p| p.actionable)
    }

    /// First actionable part; every template has exactly one.
    pub fn target_part(&self) -> &Part {
        self.actionable_parts().next().expect("templates always carry an actionable part")
    }

    /// World pose of a part's primitive frame.
    pub fn part_pose(&self, id: u16) -> Result<Isometry3<f64>, SceneError> {
        let part = self.part(id)?;
        let motion = part.joint.map(|j| self.joints[j].motion()).unwrap_or_else(Isometry3::identity);
        Ok(self.base_pose * motion * part.shape.pose())
    }

    fn actionable_joint(&self, id: u16) -> Result<usize, SceneError> {
        let part = self.part(id)?;
        if !part.actionable {
            return Err(SceneError::NotActionable(id));
        }
        part.joint.ok_or(SceneError::NotActionable(id))
    }

    pub fn joint_of(&self, id: u16) -> Result<&JointSpec, SceneError> {
        Ok(&self.joints[self.actionable_joint(id)?])
    }

    pub fn mechanism_of(&self, id: u16) -> Result<&MechanismState, SceneError> {
        Ok(&self.mechanisms[self.actionable_joint(id)?])
    }

    /// Overrides the hidden counter. Test and benchmark hook; the counter
    /// is otherwise drawn at build time.
    pub fn set_lock_counter(&mut self, id: u16, counter: u32) -> Result<(), SceneError> {
        let j = self.actionable_joint(id)?;
        let m = &self.mechanisms[j];
        self.mechanisms[j] = MechanismState::new(m.kind, counter, m.direction);
        Ok(())
    }

    /// Goal predicate: every actionable joint sits at its open limit.
    pub fn goal_reached(&self) -> bool {
        self.actionable_parts().all(|p| p.joint.is_some_and(|j| self.joints[j].is_open()))
    }

    /// Applies one action to an actionable part and reports what happened.
    pub fn step_mechanism(&mut self, id: u16, action: PartAction) -> Result<ActionOutcome, SceneError> {
        let j = self.actionable_joint(id)?;
        let joint = &mut self.joints[j];
        let mech = &mut self.mechanisms[j];
        let value = joint.value;
        let outcome = match action {
            PartAction::Rotate { direction, angle } => {
                let blocked = mech.kind != MechanismKind::Latch && joint.kind == JointKind::Prismatic;
                if blocked || angle < 0.0 {
                    ActionOutcome { success: false, achieved: 0.0, joint_value: value }
                } else {
                    mech.rotate(direction, angle);
                    ActionOutcome { success: true, achieved: angle, joint_value: value }
                }
            }
            PartAction::Pull { distance } | PartAction::Push { distance } => {
                let sign = if matches!(action, PartAction::Pull { .. }) { 1.0 } else { -1.0 };
                if !mech.unlocked || distance < 0.0 {
                    ActionOutcome { success: false, achieved: 0.0, joint_value: value }
                } else {
                    let scale = joint.travel_scale();
                    let [lo, hi] = joint.limits;
                    let next = (value + sign * distance / scale).clamp(lo, hi);
                    joint.value = next;
                    let achieved = (next - value).abs() * scale;
                    ActionOutcome { success: achieved >= distance - MECH_EPS, achieved, joint_value: next }
                }
            }
        };
        Ok(outcome)
    }

    /// Uniform surface samples of every part in world coordinates.
    /// Deterministic for a given object.
    pub fn sample_surface_points(&self, density: f64) -> Vec<LabeledPoint> {
        assert!(density > 0.0, "density must be positive");
        let mut out = Vec::new();
        for part in &self.parts {
            out.extend(self.sample_part(part.id, density).into_iter().map(|point| LabeledPoint { point, part_id: part.id }));
        }
        out
    }

    /// Surface samples of one part, in world coordinates.
    pub fn sample_part(&self, id: u16, density: f64) -> Vec<Pt3> {
        let part = &self.parts[id as usize];
        let pose = self.part_pose(id).expect("part id from own list");
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed ^ (0x9E37_79B9_7F4A_7C15u64.wrapping_mul(id as u64 + 1)));
        part.shape.primitive().sample_surface(density, &mut rng).into_iter().map(|p| pose * p).collect()
    }

    /// Distance from a world point to the nearest part surface and that part.
    pub fn nearest_surface(&self, p: &Pt3) -> (u16, f64) {
        let mut best = (0u16, f64::INFINITY);
        for part in &self.parts {
            let pose = self.part_pose(part.id).expect("own part");
            let d = part.shape.primitive().surface_distance(&pose.inverse_transform_point(p));
            if d < best.1 {
                best = (part.id, d);
            }
        }
        best
    }
}
