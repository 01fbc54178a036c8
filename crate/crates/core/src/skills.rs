//! Primitive skills: contact selection, grasp pose, impedance-controlled
//! end-effector motion and the six atomic actions against the simulator.
//!
//! Contact with the object is kinematic: while a part is grasped the
//! end-effector target follows the rigid motion the simulator applies to
//! that part, and a locked mechanism simply reports zero travel.

use crate::affordance::{AffordanceMap, PartPointCloud};
use crate::geometry::{k_nearest, local_pca, Pt3, Vec3};
use crate::scene::{ActionOutcome, ArticulatedObject, JointKind, PartAction, RotationDir, SceneError};
use nalgebra::{Isometry3, Matrix3, Rotation3, Translation3, UnitQuaternion};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Maximum distance between the grasp point and a part surface for the
/// grasp to attach.
pub const GRASP_TOLERANCE: f64 = 0.01;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SkillError {
    #[error("no actionable points at threshold {0}")]
    NoActionablePoints(f64),
    #[error("length mismatch: {0} scores for {1} points")]
    LengthMismatch(usize, usize),
    #[error("need more than {k} points for normal estimation, got {got}")]
    TooFewPoints { k: usize, got: usize },
    #[error("rank-deficient neighbourhood (eigenvalues {0:?})")]
    RankDeficient([f64; 3]),
    #[error("nothing grasped")]
    NothingGrasped,
    #[error("arc motion needs a revolute joint, grasped part has {0:?}")]
    JointMismatch(JointKind),
    #[error("non-finite end-effector state: {0}")]
    NonFinite(String),
    #[error("invalid skill configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Scene(#[from] SceneError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SkillConfig {
    /// Affordance score threshold for contact selection.
    pub eps: f64,
    /// Translation step per push/pull/arc call (m).
    pub step: f64,
    /// Rotation step per rotate call (rad).
    pub rot_step: f64,
    /// Neighbourhood size for normal estimation.
    pub k: usize,
    pub stiffness: f64,
    pub damping: f64,
    pub mass: f64,
    pub dt: f64,
    pub tolerance: f64,
    pub max_steps: usize,
    /// Orientation slerp rate (1/s).
    pub orientation_gain: f64,
    pub angle_tolerance: f64,
}

impl Default for SkillConfig {
    fn default() -> Self {
        Self {
            eps: 0.5,
            step: 0.02,
            rot_step: 15f64.to_radians(),
            k: 16,
            stiffness: 200.0,
            damping: 30.0,
            mass: 1.0,
            dt: 0.01,
            tolerance: 1e-3,
            max_steps: 500,
            orientation_gain: 20.0,
            angle_tolerance: 1e-3,
        }
    }
}

impl SkillConfig {
    pub fn validate(&self) -> Result<(), SkillError> {
        let positive = [
            ("eps", self.eps),
            ("step", self.step),
            ("rot_step", self.rot_step),
            ("stiffness", self.stiffness),
            ("damping", self.damping),
            ("mass", self.mass),
            ("dt", self.dt),
            ("tolerance", self.tolerance),
            ("orientation_gain", self.orientation_gain),
            ("angle_tolerance", self.angle_tolerance),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(SkillError::InvalidConfig(format!("{name} must be positive, got {v}")));
            }
        }
        if self.eps >= 1.0 {
            return Err(SkillError::InvalidConfig(format!("eps must be below 1, got {}", self.eps)));
        }
        if self.k < 3 || self.max_steps == 0 {
            return Err(SkillError::InvalidConfig("k must be at least 3 and max_steps positive".into()));
        }
        if self.damping * self.damping < 4.0 * self.stiffness * self.mass {
            return Err(SkillError::InvalidConfig(format!(
                "gains are underdamped: D² = {} < 4·K·m = {}",
                self.damping * self.damping,
                4.0 * self.stiffness * self.mass
            )));
        }
        Ok(())
    }
}

/// Gripper pose: z is the approach axis, y the finger axis.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GraspPose {
    pub position: Pt3,
    pub orientation: UnitQuaternion<f64>,
}

impl GraspPose {
    pub fn isometry(&self) -> Isometry3<f64> {
        Isometry3::from_parts(Translation3::from(self.position.coords), self.orientation)
    }

    pub fn approach(&self) -> Vec3 {
        self.orientation * Vec3::z()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EndEffectorState {
    pub position: Pt3,
    pub orientation: UnitQuaternion<f64>,
    pub velocity: Vec3,
    pub grasped: Option<u16>,
}

impl EndEffectorState {
    pub fn at(pose: GraspPose) -> Self {
        Self { position: pose.position, orientation: pose.orientation, velocity: Vec3::zeros(), grasped: None }
    }

    pub fn pose(&self) -> GraspPose {
        GraspPose { position: self.position, orientation: self.orientation }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SkillResult {
    pub success: bool,
    pub steps: usize,
    /// Distance to the commanded target when the skill stopped (m).
    pub pose_error: f64,
    pub feedback: Option<ActionOutcome>,
}

/// Indices with `score ≥ eps` and their mean position.
pub fn select_contact(map: &AffordanceMap, cloud: &PartPointCloud, eps: f64) -> Result<(Vec<usize>, Pt3), SkillError> {
    if map.len() != cloud.len() {
        return Err(SkillError::LengthMismatch(map.len(), cloud.len()));
    }
    let idx: Vec<usize> = map.scores().iter().enumerate().filter(|(_, &s)| s >= eps).map(|(i, _)| i).collect();
    if idx.is_empty() {
        return Err(SkillError::NoActionablePoints(eps));
    }
    let sum = idx.iter().fold(Vec3::zeros(), |acc, &i| acc + cloud.points[i].coords);
    Ok((idx.clone(), Pt3::from(sum / idx.len() as f64)))
}

/// Smallest-eigenvector normal of the `k` nearest points, facing against `view_dir`.
pub fn estimate_normal(cloud: &PartPointCloud, at: &Pt3, k: usize, view_dir: &Vec3) -> Result<Vec3, SkillError> {
    if cloud.len() <= k {
        return Err(SkillError::TooFewPoints { k, got: cloud.len() });
    }
    let nb = k_nearest(&cloud.points, at, k);
    let pca = local_pca(&cloud.points, &nb);
    let [l1, l2, _] = pca.eigenvalues;
    if !(l1 > 0.0) || l2 <= 1e-12 * l1 {
        return Err(SkillError::RankDeficient(pca.eigenvalues));
    }
    let n = pca.eigenvectors[2].normalize();
    Ok(if n.dot(view_dir) > 0.0 { -n } else { n })
}

/// Approach along `-normal`, fingers aligned with world up projected into
/// the approach plane (world x when up is nearly parallel to the approach).
pub fn compute_grasp(position: Pt3, normal: &Vec3) -> GraspPose {
    let z = -normal.normalize();
    let up = if Vec3::z().dot(&z).abs() > 0.99 { Vec3::x() } else { Vec3::z() };
    let y = (up - z * up.dot(&z)).normalize();
    let x = y.cross(&z);
    let m = Matrix3::from_columns(&[x, y, z]);
    GraspPose { position, orientation: UnitQuaternion::from_rotation_matrix(&Rotation3::from_matrix_unchecked(m)) }
}

/// Rotation that moves `actual` toward `expected` by `min(φ, gain·φ)`
/// along the geodesic, `φ` being the angle between them.
pub fn orientation_correction(actual: &UnitQuaternion<f64>, expected: &UnitQuaternion<f64>, gain: f64) -> UnitQuaternion<f64> {
    let delta = expected * actual.inverse();
    match delta.axis_angle() {
        None => UnitQuaternion::identity(),
        Some((axis, phi)) => UnitQuaternion::from_axis_angle(&axis, phi * gain.clamp(0.0, 1.0)),
    }
}

/// One explicit-Euler impedance step toward `target`.
pub fn impedance_step(state: &EndEffectorState, target: &GraspPose, cfg: &SkillConfig) -> Result<EndEffectorState, SkillError> {
    let acc = (cfg.stiffness * (target.position - state.position) - cfg.damping * state.velocity) / cfg.mass;
    let velocity = state.velocity + acc * cfg.dt;
    let position = state.position + velocity * cfg.dt;
    let fix = orientation_correction(&state.orientation, &target.orientation, cfg.orientation_gain * cfg.dt);
    let orientation = UnitQuaternion::new_normalize((fix * state.orientation).into_inner());
    if !(position.coords.iter().all(|c| c.is_finite()) && velocity.iter().all(|c| c.is_finite())) {
        return Err(SkillError::NonFinite(format!("position {position:?} velocity {velocity:?}")));
    }
    Ok(EndEffectorState { position, orientation, velocity, grasped: state.grasped })
}

/// Grasp at the center of a part's annotated affordance face, approaching
/// against the face normal. `None` for parts without an annotation.
pub fn face_grasp(object: &ArticulatedObject, id: u16) -> Option<GraspPose> {
    let part = object.part(id).ok()?;
    let face = part.affordance?.face;
    let pose = object.part_pose(id).ok()?;
    let local = Pt3::from(face.normal().component_mul(&part.shape.primitive().half_extents()));
    Some(compute_grasp(pose * local, &(pose.rotation * face.normal())))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TranslateAxis {
    GripperZ,
    ObjectArcY,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Sign {
    Pos,
    Neg,
}

/// One line of the episode log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogRecord {
    /// Index of the skill call within the episode.
    pub step: usize,
    pub skill: String,
    pub params: serde_json::Value,
    pub success: bool,
    pub control_steps: usize,
    pub pose_error: f64,
    pub joint_value: Option<f64>,
}

/// Simulator plus end-effector; one per episode.
#[derive(Debug, Clone)]
pub struct SimHandle {
    pub object: ArticulatedObject,
    pub ee: EndEffectorState,
    pub log: Vec<LogRecord>,
}

impl SimHandle {
    /// End-effector parked at the object's view point, looking at its target.
    pub fn new(object: ArticulatedObject) -> Self {
        let dir = (object.view.target - object.view.eye).normalize();
        let home = compute_grasp(object.view.eye, &-dir);
        Self { object, ee: EndEffectorState::at(home), log: Vec::new() }
    }

    pub fn log_jsonl(&self) -> String {
        self.log.iter().map(|r| serde_json::to_string(r).expect("plain record") + "\n").collect()
    }

    fn record(&mut self, skill: &str, params: serde_json::Value, r: &SkillResult) {
        let step = self.log.len();
        self.log.push(LogRecord {
            step,
            skill: skill.to_string(),
            params,
            success: r.success,
            control_steps: r.steps,
            pose_error: r.pose_error,
            joint_value: r.feedback.map(|f| f.joint_value),
        });
    }

    /// Runs the impedance loop until both position and orientation are within
    /// tolerance; returns `(steps, position error, converged)`.
    fn track(&mut self, target: &GraspPose, cfg: &SkillConfig) -> Result<(usize, f64, bool), SkillError> {
        let within = |s: &EndEffectorState| {
            (target.position - s.position).norm() <= cfg.tolerance && s.orientation.angle_to(&target.orientation) <= cfg.angle_tolerance
        };
        let mut steps = 0;
        while !within(&self.ee) && steps < cfg.max_steps {
            self.ee = impedance_step(&self.ee, target, cfg)?;
            steps += 1;
        }
        let converged = within(&self.ee);
        // the arm settles at the target between skills
        self.ee.velocity = Vec3::zeros();
        Ok((steps, (target.position - self.ee.position).norm(), converged))
    }

    /// Moves to `pose` and attaches to the nearest part if its surface is
    /// within [`GRASP_TOLERANCE`]. Only actionable parts count as a success.
    pub fn grasp(&mut self, pose: GraspPose, cfg: &SkillConfig) -> Result<SkillResult, SkillError> {
        self.ee.grasped = None;
        let (steps, err, converged) = self.track(&pose, cfg)?;
        let (id, dist) = self.object.nearest_surface(&self.ee.position);
        let actionable = self.object.part(id)?.actionable;
        if converged && dist <= GRASP_TOLERANCE && actionable {
            self.ee.grasped = Some(id);
        }
        let r = SkillResult { success: self.ee.grasped.is_some(), steps, pose_error: err, feedback: None };
        let p = pose.position;
        self.record("grasp", serde_json::json!({ "position": [p.x, p.y, p.z], "part": id }), &r);
        Ok(r)
    }

    pub fn release(&mut self) -> SkillResult {
        self.ee.grasped = None;
        let r = SkillResult { success: true, steps: 0, pose_error: 0.0, feedback: None };
        self.record("release", serde_json::json!({}), &r);
        r
    }

    /// Push (`Pos`) or pull (`Neg`) along the gripper axis, or move along the
    /// hinge arc of the grasped part (`Pos` opens).
    pub fn exec_translate(&mut self, axis: TranslateAxis, sign: Sign, cfg: &SkillConfig) -> Result<SkillResult, SkillError> {
        let name = match (axis, sign) {
            (TranslateAxis::GripperZ, Sign::Pos) => "push_part",
            (TranslateAxis::GripperZ, Sign::Neg) => "pull_part",
            (TranslateAxis::ObjectArcY, Sign::Pos) => "move_arc_pos",
            (TranslateAxis::ObjectArcY, Sign::Neg) => "move_arc_neg",
        };
        let params = serde_json::json!({ "distance": cfg.step });
        let Some(id) = self.ee.grasped else {
            if axis == TranslateAxis::GripperZ && sign == Sign::Pos {
                let target = GraspPose { position: self.ee.position + self.ee.pose().approach() * cfg.step, orientation: self.ee.orientation };
                let (steps, err, converged) = self.track(&target, cfg)?;
                let r = SkillResult { success: converged, steps, pose_error: err, feedback: None };
                self.record(name, params, &r);
                return Ok(r);
            }
            return Err(SkillError::NothingGrasped);
        };
        if axis == TranslateAxis::ObjectArcY {
            let kind = self.object.joint_of(id)?.kind;
            if kind != JointKind::Revolute {
                return Err(SkillError::JointMismatch(kind));
            }
        }
        let action = match (axis, sign) {
            (TranslateAxis::GripperZ, Sign::Neg) | (TranslateAxis::ObjectArcY, Sign::Pos) => PartAction::Pull { distance: cfg.step },
            _ => PartAction::Push { distance: cfg.step },
        };
        let before = self.object.part_pose(id)?;
        let outcome = self.object.step_mechanism(id, action)?;
        let motion = self.object.part_pose(id)? * before.inverse();
        let target = GraspPose { position: motion * self.ee.position, orientation: motion.rotation * self.ee.orientation };
        let (steps, err, converged) = self.track(&target, cfg)?;
        let r = SkillResult { success: outcome.success && converged, steps, pose_error: err, feedback: Some(outcome) };
        self.record(name, params, &r);
        Ok(r)
    }

    /// Rotates the gripper by `rot_step` about its approach axis. A grasped
    /// part receives the rotation first; if its mechanism refuses, the
    /// gripper does not move.
    pub fn exec_rotate(&mut self, dir: RotationDir, cfg: &SkillConfig) -> Result<SkillResult, SkillError> {
        let name = match dir {
            RotationDir::Cw => "rotate_cw",
            RotationDir::Ccw => "rotate_ccw",
        };
        let params = serde_json::json!({ "angle": cfg.rot_step });
        let feedback = match self.ee.grasped {
            Some(id) => Some(self.object.step_mechanism(id, PartAction::Rotate { direction: dir, angle: cfg.rot_step })?),
            None => None,
        };
        if feedback.is_some_and(|f| !f.success) {
            let r = SkillResult { success: false, steps: 0, pose_error: 0.0, feedback };
            self.record(name, params, &r);
            return Ok(r);
        }
        let start = self.ee.orientation;
        // positive about the outward normal is negative about the approach axis
        let turn = UnitQuaternion::from_axis_angle(&Vec3::z_axis(), -dir.sign() * cfg.rot_step);
        let target = GraspPose { position: self.ee.position, orientation: start * turn };
        let (steps, err, converged) = self.track(&target, cfg)?;
        let achieved = start.angle_to(&self.ee.orientation);
        let success = converged && achieved >= cfg.rot_step - cfg.angle_tolerance;
        let r = SkillResult { success, steps, pose_error: err, feedback };
        self.record(name, params, &r);
        Ok(r)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::affordance::FrameTag;
    use crate::geometry::angle_between;
    use crate::scene::build_object;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn cfg() -> SkillConfig {
        SkillConfig::default()
    }

    #[test]
    fn config_checks() {
        assert!(cfg().validate().is_ok());
        assert!(SkillConfig { damping: 10.0, ..cfg() }.validate().is_err());
        assert!(SkillConfig { eps: 1.0, ..cfg() }.validate().is_err());
        assert!(SkillConfig { dt: 0.0, ..cfg() }.validate().is_err());
    }

    #[test]
    fn contact_selection() {
        let cloud = PartPointCloud::new((0..4).map(|i| Pt3::new(i as f64, 0.0, 0.0)).collect(), FrameTag::Part);
        let all = AffordanceMap::new(vec![1.0; 4]).unwrap();
        assert_eq!(select_contact(&all, &cloud, 0.5).unwrap().1, Pt3::new(1.5, 0.0, 0.0));
        let one = AffordanceMap::new(vec![0.1, 0.9, 0.2, 0.3]).unwrap();
        assert_eq!(select_contact(&one, &cloud, 0.5).unwrap(), (vec![1], Pt3::new(1.0, 0.0, 0.0)));
        let none = AffordanceMap::new(vec![0.1; 4]).unwrap();
        assert_eq!(select_contact(&none, &cloud, 0.5), Err(SkillError::NoActionablePoints(0.5)));
    }

    #[test]
    fn plane_normal_faces_viewer() {
        let pts = (0..100).map(|i| Pt3::new((i % 10) as f64 * 0.01, (i / 10) as f64 * 0.01, 0.0)).collect();
        let cloud = PartPointCloud::new(pts, FrameTag::World);
        let n = estimate_normal(&cloud, &Pt3::new(0.05, 0.05, 0.0), 16, &-Vec3::z()).unwrap();
        assert!(angle_between(&n, &Vec3::z()).to_degrees() < 2.0);
        let line = PartPointCloud::new((0..30).map(|i| Pt3::new(i as f64, 0.0, 0.0)).collect(), FrameTag::World);
        assert!(matches!(estimate_normal(&line, &Pt3::origin(), 8, &Vec3::z()), Err(SkillError::RankDeficient(_))));
    }

    #[test]
    fn sphere_normals_are_radial() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let pts: Vec<Pt3> = (0..4000)
            .map(|_| {
                let v = Vec3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
                Pt3::from(v.normalize() * 0.1)
            })
            .collect();
        let cloud = PartPointCloud::new(pts.clone(), FrameTag::World);
        for p in pts.iter().take(100) {
            // viewer on the far side of the centre looking outward through p
            let view = -p.coords.normalize();
            let n = estimate_normal(&cloud, p, 16, &view).unwrap();
            assert!(angle_between(&n, &p.coords).to_degrees() < 5.0);
        }
    }

    #[test]
    fn grasp_frames() {
        let g = compute_grasp(Pt3::origin(), &Vec3::x());
        let r = g.orientation.to_rotation_matrix();
        assert!((r * Vec3::z() - Vec3::new(-1.0, 0.0, 0.0)).norm() < 1e-12);
        assert!((r * Vec3::y() - Vec3::z()).norm() < 1e-12);
        let top = compute_grasp(Pt3::origin(), &Vec3::z());
        assert!((top.orientation * Vec3::y() - Vec3::x()).norm() < 1e-12);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..10_000 {
            let n = Vec3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
            if n.norm() < 1e-3 {
                continue;
            }
            let m = compute_grasp(Pt3::origin(), &n.normalize()).orientation.to_rotation_matrix().into_inner();
            assert!((m.transpose() * m - Matrix3::identity()).abs().max() < 1e-9);
            assert!((m.determinant() - 1.0).abs() < 1e-9);
            assert!((m.column(2) + n.normalize()).norm() < 1e-9);
        }
    }

    #[test]
    fn orientation_correction_fractions() {
        let a = UnitQuaternion::identity();
        assert_eq!(orientation_correction(&a, &a, 0.5), UnitQuaternion::identity());
        let b = UnitQuaternion::from_axis_angle(&Vec3::y_axis(), 10f64.to_radians());
        assert!(orientation_correction(&a, &b, 1.0).angle_to(&b) < 1e-12);
        let half = orientation_correction(&a, &b, 0.5);
        assert!((half.angle() - 5f64.to_radians()).abs() < 1e-12);
        assert!((half.axis().unwrap().into_inner() - Vec3::y()).norm() < 1e-12);
    }

    #[test]
    fn impedance_fixed_point_and_monotone() {
        let c = cfg();
        let target = GraspPose { position: Pt3::new(0.1, 0.0, 0.0), orientation: UnitQuaternion::identity() };
        let at = EndEffectorState::at(target);
        assert_eq!(impedance_step(&at, &target, &c).unwrap(), at);
        let mut s = EndEffectorState::at(GraspPose { position: Pt3::origin(), ..target });
        let mut err = 0.1;
        let mut reached = None;
        for i in 0..500 {
            s = impedance_step(&s, &target, &c).unwrap();
            let e = (target.position - s.position).norm();
            // strictly decreasing until the error reaches rounding level
            assert!(e < err || e <= 1e-12, "step {i}: {e} >= {err}");
            err = e;
            if e < 1e-3 && reached.is_none() {
                reached = Some(i);
            }
        }
        let steps = |k: f64, d: f64| {
            let c = SkillConfig { stiffness: k, damping: d, ..cfg() };
            let mut s = EndEffectorState::at(GraspPose { position: Pt3::origin(), ..target });
            (0..500).position(|_| {
                s = impedance_step(&s, &target, &c).unwrap();
                (target.position - s.position).norm() < 1e-3
            })
        };
        let base = steps(200.0, 30.0).unwrap();
        assert_eq!(Some(base), reached);
        let stiff = steps(400.0, 30.0 * 2f64.sqrt()).unwrap();
        assert!(stiff < base, "{stiff} vs {base}");
    }

    fn grasp_target(sim: &SimHandle) -> GraspPose {
        face_grasp(&sim.object, sim.object.target_part().id).unwrap()
    }

    #[test]
    fn bottle_rotate_then_pull() {
        let mut sim = SimHandle::new(build_object("bottle", 2).unwrap());
        let id = sim.object.target_part().id;
        sim.object.set_lock_counter(id, 3).unwrap();
        let c = cfg();
        assert!(sim.exec_rotate(RotationDir::Ccw, &c).unwrap().success);
        assert!(matches!(sim.exec_translate(TranslateAxis::GripperZ, Sign::Neg, &c), Err(SkillError::NothingGrasped)));
        let g = grasp_target(&sim);
        assert!(sim.grasp(g, &c).unwrap().success);
        let locked = sim.exec_translate(TranslateAxis::GripperZ, Sign::Neg, &c).unwrap();
        assert!(!locked.success);
        assert_eq!(locked.feedback.unwrap().achieved, 0.0);
        sim.exec_rotate(RotationDir::Cw, &c).unwrap();
        assert_eq!(sim.object.mechanism_of(id).unwrap().counter(), 3);
        sim.exec_rotate(RotationDir::Ccw, &c).unwrap();
        assert_eq!(sim.object.mechanism_of(id).unwrap().counter(), 2);
        sim.exec_rotate(RotationDir::Ccw, &c).unwrap();
        sim.exec_rotate(RotationDir::Ccw, &c).unwrap();
        let v0 = sim.object.joint_of(id).unwrap().value();
        let p0 = sim.ee.position;
        let r = sim.exec_translate(TranslateAxis::GripperZ, Sign::Neg, &c).unwrap();
        assert!(r.success && r.pose_error <= c.tolerance);
        let j = sim.object.joint_of(id).unwrap();
        assert!(((j.value() - v0) * j.pitch() - 0.02).abs() < 1e-3);
        assert!(((sim.ee.position - p0).norm() - 0.02).abs() < 1e-3 + 1e-9);
        assert_eq!(sim.log.len(), 8);
        assert!(sim.log_jsonl().lines().all(|l| serde_json::from_str::<LogRecord>(l).is_ok()));
    }

    #[test]
    fn door_arc_keeps_radius() {
        let mut sim = SimHandle::new(build_object("door", 5).unwrap());
        let id = sim.object.target_part().id;
        sim.object.set_lock_counter(id, 0).unwrap();
        let c = cfg();
        assert!(sim.grasp(grasp_target(&sim), &c).unwrap().success);
        let joint = sim.object.joint_of(id).unwrap().clone();
        let w = *sim.object.base_pose();
        let radius = |p: &Pt3| {
            let o = w * joint.origin();
            let a = (w.rotation * joint.axis()).normalize();
            let d = p - o;
            (d - a * d.dot(&a)).norm()
        };
        let r0 = radius(&sim.ee.position);
        for _ in 0..5 {
            assert!(sim.exec_translate(TranslateAxis::ObjectArcY, Sign::Pos, &c).unwrap().success);
            assert!((radius(&sim.ee.position) - r0).abs() < 1e-3);
        }
    }

    #[test]
    fn arc_needs_revolute() {
        let mut sim = SimHandle::new(build_object("window", 1).unwrap());
        let c = cfg();
        assert!(sim.grasp(grasp_target(&sim), &c).unwrap().success);
        assert!(matches!(sim.exec_translate(TranslateAxis::ObjectArcY, Sign::Pos, &c), Err(SkillError::JointMismatch(JointKind::Prismatic))));
    }

    #[test]
    fn grasping_fixed_part_fails() {
        let mut sim = SimHandle::new(build_object("bottle", 1).unwrap());
        let body = sim.object.part(0).unwrap().clone();
        let pose = sim.object.part_pose(0).unwrap();
        let side = pose * Pt3::new(body.shape.primitive().half_extents().x, 0.0, 0.0);
        let r = sim.grasp(compute_grasp(side, &(pose.rotation * Vec3::x())), &cfg()).unwrap();
        assert!(!r.success);
        assert_eq!(sim.ee.grasped, None);
    }

    #[test]
    fn free_push_moves_along_approach() {
        let mut sim = SimHandle::new(build_object("lamp", 1).unwrap());
        let p0 = sim.ee.position;
        let r = sim.exec_translate(TranslateAxis::GripperZ, Sign::Pos, &cfg()).unwrap();
        assert!(r.success);
        assert!(((sim.ee.position - p0).norm() - 0.02).abs() <= 1e-3);
        assert!(sim.exec_rotate(RotationDir::Cw, &cfg()).unwrap().feedback.is_none());
    }
}
