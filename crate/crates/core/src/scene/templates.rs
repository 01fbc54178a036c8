use super::{ArticulatedObject, JointKind, JointSpec, MechanismKind, MechanismState, Part, RotationDir, SceneError, ViewHint};
use crate::affordance::SurfaceSpec;
use crate::geometry::{Face, PartShape, Primitive, Pt3, Vec3};
use nalgebra::{Isometry3, Rotation3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;
use std::sync::OnceLock;

/// Built-in template file.
pub const DEFAULT_TEMPLATES: &str = include_str!("../../assets/templates.toml");

const SUPPORTED_VERSION: i64 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Category {
    Bottle,
    Pen,
    PressureCooker,
    CoffeeMachine,
    Window,
    Door,
    Lamp,
}

impl Category {
    pub const ALL: [Category; 7] =
        [Category::Bottle, Category::Pen, Category::PressureCooker, Category::CoffeeMachine, Category::Window, Category::Door, Category::Lamp];

    pub fn name(self) -> &'static str {
        match self {
            Category::Bottle => "bottle",
            Category::Pen => "pen",
            Category::PressureCooker => "pressure_cooker",
            Category::CoffeeMachine => "coffee_machine",
            Category::Window => "window",
            Category::Door => "door",
            Category::Lamp => "lamp",
        }
    }

    /// Human-readable label used in report tables.
    pub fn label(self) -> &'static str {
        match self {
            Category::Bottle => "Bottle",
            Category::Pen => "Pen",
            Category::PressureCooker => "PC",
            Category::CoffeeMachine => "CM",
            Category::Window => "Window",
            Category::Door => "Door",
            Category::Lamp => "Lamp",
        }
    }

    fn salt(self) -> u64 {
        (self as u64 + 1).wrapping_mul(0xD1B5_4A32_D192_ED03)
    }
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Category {
    type Err = SceneError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let norm = s.trim().to_ascii_lowercase().replace([' ', '-'], "_");
        Category::ALL.into_iter().find(|c| c.name() == norm).ok_or_else(|| SceneError::UnknownCategory(s.to_string()))
    }
}

/// Per-category dimension ranges loaded from the template file.
#[derive(Debug, Clone, PartialEq)]
pub struct TemplateConfig {
    pub version: u32,
    ranges: BTreeMap<String, BTreeMap<String, [f64; 2]>>,
}

impl TemplateConfig {
    pub fn parse(text: &str) -> Result<Self, SceneError> {
        let table: toml::Table = text.parse().map_err(|e: toml::de::Error| SceneError::Template(e.to_string()))?;
        let version = table.get("version").and_then(|v| v.as_integer()).ok_or_else(|| SceneError::Template("missing integer `version`".into()))?;
        if version != SUPPORTED_VERSION {
            return Err(SceneError::Template(format!("unsupported template version {version}")));
        }
        let mut ranges = BTreeMap::new();
        for (cat, body) in &table {
            if cat == "version" {
                continue;
            }
            Category::from_str(cat)?;
            let body = body.as_table().ok_or_else(|| SceneError::Template(format!("`{cat}` must be a table")))?;
            let mut entries = BTreeMap::new();
            for (key, value) in body {
                let pair = value
                    .as_array()
                    .filter(|a| a.len() == 2)
                    .and_then(|a| Some([as_f64(&a[0])?, as_f64(&a[1])?]))
                    .ok_or_else(|| SceneError::Template(format!("{cat}.{key} must be a [min, max] pair")))?;
                if pair[0] > pair[1] {
                    return Err(SceneError::Template(format!("{cat}.{key}: min exceeds max")));
                }
                entries.insert(key.clone(), pair);
            }
            ranges.insert(cat.clone(), entries);
        }
        Ok(Self { version: version as u32, ranges })
    }

    pub fn builtin() -> &'static TemplateConfig {
        static CELL: OnceLock<TemplateConfig> = OnceLock::new();
        CELL.get_or_init(|| TemplateConfig::parse(DEFAULT_TEMPLATES).expect("built-in templates parse"))
    }

    pub fn range(&self, category: Category, key: &str) -> Result<[f64; 2], SceneError> {
        self.ranges
            .get(category.name())
            .and_then(|m| m.get(key))
            .copied()
            .ok_or_else(|| SceneError::Template(format!("missing range {}.{key}", category.name())))
    }
}

fn as_f64(v: &toml::Value) -> Option<f64> {
    v.as_float().or_else(|| v.as_integer().map(|i| i as f64))
}

struct Draw<'a> {
    cfg: &'a TemplateConfig,
    category: Category,
    rng: ChaCha8Rng,
}

impl Draw<'_> {
    fn get(&mut self, key: &str) -> Result<f64, SceneError> {
        let [lo, hi] = self.cfg.range(self.category, key)?;
        Ok(if lo == hi { lo } else { self.rng.random_range(lo..=hi) })
    }

    fn counter(&mut self) -> u32 {
        self.rng.random_range(2..=8)
    }

    fn view(&mut self, target: Pt3) -> Result<ViewHint, SceneError> {
        let dist = self.get("camera_distance")?;
        let el = self.get("camera_elevation_deg")?.to_radians();
        let az = self.get("camera_azimuth_deg")?.to_radians();
        let dir = Vec3::new(el.cos() * az.sin(), -el.cos() * az.cos(), el.sin());
        Ok(ViewHint { eye: target + dir * dist, target })
    }
}

fn part(id: u16, name: &str, prim: Primitive, at: Vec3, actionable: bool, joint: Option<usize>, face: Option<Face>) -> Result<Part, SceneError> {
    Ok(Part {
        id,
        name: name.to_string(),
        shape: PartShape::at(prim, at)?,
        actionable,
        joint,
        affordance: face.map(SurfaceSpec::with_default_tolerance),
    })
}

/// Builds the object for `category` with the built-in templates.
pub fn build_object(category: &str, seed: u64) -> Result<ArticulatedObject, SceneError> {
    build_object_with(TemplateConfig::builtin(), category.parse()?, seed)
}

/// Deterministic object for `(category, seed)` drawn from `cfg`.
pub fn build_object_with(cfg: &TemplateConfig, category: Category, seed: u64) -> Result<ArticulatedObject, SceneError> {
    let mut d = Draw { cfg, category, rng: ChaCha8Rng::seed_from_u64(seed ^ category.salt()) };
    let z = Vec3::z();
    let (parts, joints, mechanisms) = match category {
        Category::Bottle | Category::Pen => {
            let (r, h, ratio, hc) = if category == Category::Bottle {
                (d.get("body_radius")?, d.get("body_height")?, d.get("cap_radius_ratio")?, d.get("cap_height")?)
            } else {
                (d.get("barrel_radius")?, d.get("barrel_length")?, d.get("cap_radius_ratio")?, d.get("cap_length")?)
            };
            let pitch = d.get("screw_pitch")?;
            let lift = d.get("lift")?;
            let body_name = if category == Category::Bottle { "body" } else { "barrel" };
            let parts = vec![
                part(0, body_name, Primitive::Cylinder { radius: r, length: h }, Vec3::new(0.0, 0.0, h / 2.0), false, None, None)?,
                part(
                    1,
                    "cap",
                    Primitive::Cylinder { radius: r * ratio, length: hc },
                    Vec3::new(0.0, 0.0, h + hc / 2.0),
                    true,
                    Some(0),
                    Some(Face::PosZ),
                )?,
            ];
            let joint = JointSpec::new(JointKind::Screw, 0, 1, z, Pt3::new(0.0, 0.0, h), [0.0, lift / pitch], 0.0, pitch, 0.0)?;
            let mech = MechanismState::new(MechanismKind::RotateToUnlock, d.counter(), RotationDir::Ccw);
            (parts, vec![joint], vec![mech])
        }
        Category::PressureCooker => {
            let (pr, ph) = (d.get("pot_radius")?, d.get("pot_height")?);
            let (hl, hw, hh) = (d.get("handle_length")?, d.get("handle_width")?, d.get("handle_height")?);
            let lift = d.get("lift")?;
            let side_r = 0.012;
            let side = PartShape::new(
                Primitive::CappedCylinder { radius: side_r, length: 0.06 },
                *Rotation3::from_axis_angle(&Vec3::y_axis(), std::f64::consts::FRAC_PI_2).matrix(),
                Vec3::new(pr + 0.03 + side_r, 0.0, 0.6 * ph),
            )?;
            let parts = vec![
                part(0, "pot", Primitive::Cylinder { radius: pr, length: ph }, Vec3::new(0.0, 0.0, ph / 2.0), false, None, None)?,
                Part { id: 1, name: "side handle".into(), shape: side, actionable: false, joint: None, affordance: None },
                part(2, "lid", Primitive::Cylinder { radius: pr * 1.02, length: 0.015 }, Vec3::new(0.0, 0.0, ph + 0.0075), false, Some(0), None)?,
                part(
                    3,
                    "lid handle",
                    Primitive::Box { size: [hl, hw, hh] },
                    Vec3::new(0.0, 0.0, ph + 0.015 + hh / 2.0),
                    true,
                    Some(0),
                    Some(Face::PosZ),
                )?,
            ];
            let joint = JointSpec::new(JointKind::Prismatic, 0, 3, z, Pt3::new(0.0, 0.0, ph), [0.0, lift], 0.0, 0.0, 0.0)?;
            let mech = MechanismState::new(MechanismKind::Latch, d.counter(), RotationDir::Ccw);
            (parts, vec![joint], vec![mech])
        }
        Category::CoffeeMachine => {
            let (w, dp, hb) = (d.get("body_width")?, d.get("body_depth")?, d.get("body_height")?);
            let (hl, hs) = (d.get("handle_length")?, d.get("handle_size")?);
            let open = d.get("open_angle_rad")?;
            let lid_d = dp * 0.7;
            let handle_y = -lid_d / 2.0 - hs / 2.0;
            let parts = vec![
                part(0, "body", Primitive::Box { size: [w, dp, hb] }, Vec3::new(0.0, 0.0, hb / 2.0), false, None, None)?,
                part(1, "lid", Primitive::Box { size: [w * 0.9, lid_d, 0.02] }, Vec3::new(0.0, 0.0, hb + 0.01), false, Some(0), None)?,
                part(2, "lid handle", Primitive::Box { size: [hl, hs, hs] }, Vec3::new(0.0, handle_y, hb + 0.01), true, Some(0), Some(Face::NegY))?,
            ];
            let hinge = Pt3::new(0.0, lid_d / 2.0, hb);
            let lever = (hinge.y - handle_y).hypot(0.01);
            let joint = JointSpec::new(JointKind::Revolute, 0, 2, -Vec3::x(), hinge, [0.0, open], 0.0, 0.0, lever)?;
            let mech = MechanismState::new(MechanismKind::RotateToUnlock, d.counter(), RotationDir::Cw);
            (parts, vec![joint], vec![mech])
        }
        Category::Window => {
            let (fw, fh) = (d.get("frame_width")?, d.get("frame_height")?);
            let (hl, hd) = (d.get("handle_length")?, d.get("handle_depth")?);
            let slide = d.get("slide")?;
            let sill = 0.8;
            let sash_h = fh / 2.0 - 0.04;
            let sash_top = sill + 0.02 + sash_h;
            let parts = vec![
                part(0, "frame", Primitive::Box { size: [fw, 0.05, fh] }, Vec3::new(0.0, 0.03, sill + fh / 2.0), false, None, None)?,
                part(
                    1,
                    "sash",
                    Primitive::Box { size: [fw - 0.08, 0.02, sash_h] },
                    Vec3::new(0.0, -0.005, sill + 0.02 + sash_h / 2.0),
                    false,
                    Some(0),
                    None,
                )?,
                part(
                    2,
                    "sash handle",
                    Primitive::Box { size: [hl, hd, 0.02] },
                    Vec3::new(0.0, -0.015 - hd / 2.0, sash_top - 0.04),
                    true,
                    Some(0),
                    Some(Face::NegY),
                )?,
            ];
            let joint = JointSpec::new(JointKind::Prismatic, 0, 2, z, Pt3::new(0.0, 0.0, sill), [0.0, slide], 0.0, 0.0, 0.0)?;
            let mech = MechanismState::new(MechanismKind::Latch, d.counter(), RotationDir::Cw);
            (parts, vec![joint], vec![mech])
        }
        Category::Door => {
            let (dw, dh) = (d.get("door_width")?, d.get("door_height")?);
            let (hl, hd, he) = (d.get("handle_length")?, d.get("handle_depth")?, d.get("handle_elevation")?);
            let open = d.get("open_angle_rad")?;
            let hx = dw - 0.12;
            let hy = -0.02 - hd / 2.0;
            let parts = vec![
                part(0, "door post", Primitive::Box { size: [0.1, 0.1, dh] }, Vec3::new(-0.06, 0.0, dh / 2.0), false, None, None)?,
                part(1, "door panel", Primitive::Box { size: [dw, 0.04, dh] }, Vec3::new(dw / 2.0, 0.0, dh / 2.0), false, Some(0), None)?,
                part(2, "door handle", Primitive::Box { size: [hl, hd, 0.025] }, Vec3::new(hx, hy, he), true, Some(0), Some(Face::NegY))?,
            ];
            let joint = JointSpec::new(JointKind::Revolute, 0, 2, -z, Pt3::origin(), [0.0, open], 0.0, 0.0, hx.hypot(hy))?;
            let mech = MechanismState::new(MechanismKind::Latch, d.counter(), RotationDir::Cw);
            (parts, vec![joint], vec![mech])
        }
        Category::Lamp => {
            let (rb, pl) = (d.get("base_radius")?, d.get("pole_length")?);
            let (hlen, hw, hh) = (d.get("head_length")?, d.get("head_width")?, d.get("head_height")?);
            let tilt = d.get("tilt_rad")?;
            let pole_r = 0.012;
            let top = 0.03 + pl + pole_r;
            let parts = vec![
                part(0, "base", Primitive::Cylinder { radius: rb, length: 0.03 }, Vec3::new(0.0, 0.0, 0.015), false, None, None)?,
                part(1, "pole", Primitive::CappedCylinder { radius: pole_r, length: pl }, Vec3::new(0.0, 0.0, 0.03 + pl / 2.0), false, None, None)?,
                part(
                    2,
                    "lamp head",
                    Primitive::Box { size: [hlen, hw, hh] },
                    Vec3::new(hlen / 2.0 + 0.01, 0.0, top + hh / 2.0),
                    true,
                    Some(0),
                    Some(Face::PosZ),
                )?,
            ];
            let joint = JointSpec::new(JointKind::Revolute, 1, 2, -Vec3::y(), Pt3::new(0.0, 0.0, top), [0.0, tilt], 0.0, 0.0, hlen / 2.0 + 0.01)?;
            let mech = MechanismState::new(MechanismKind::Free, 0, RotationDir::Ccw);
            (parts, vec![joint], vec![mech])
        }
    };
    let target_id = parts.iter().find(|p| p.actionable).map(|p| p.id).unwrap_or(0);
    let base = Isometry3::identity();
    let target = Pt3::from(parts[target_id as usize].shape.pose().translation.vector);
    let view = d.view(target)?;
    ArticulatedObject::new(category, seed, parts, joints, mechanisms, base, view)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::PartAction;

    #[test]
    fn deterministic_per_seed() {
        for c in Category::ALL {
            let a = build_object(c.name(), 42).unwrap();
            let b = build_object(c.name(), 42).unwrap();
            assert_eq!(a, b);
            assert_eq!(serde_json::to_vec(&a).unwrap(), serde_json::to_vec(&b).unwrap());
        }
    }

    #[test]
    fn bottle_shape() {
        let obj = build_object("bottle", 42).unwrap();
        let cap = obj.target_part();
        assert_eq!(cap.name, "cap");
        assert_eq!(obj.joint_of(cap.id).unwrap().kind, JointKind::Screw);
        let n = obj.mechanism_of(cap.id).unwrap().counter();
        assert!((2..=8).contains(&n));
        assert_eq!(obj.parts().len(), 2);
    }

    #[test]
    fn seeds_differ() {
        let mut same = 0;
        for s in 0..100u64 {
            let a = build_object("bottle", s).unwrap();
            let b = build_object("bottle", s + 1).unwrap();
            if a.parts() == b.parts() && a.mechanisms() == b.mechanisms() {
                same += 1;
            }
        }
        assert_eq!(same, 0);
    }

    #[test]
    fn counters_cover_range() {
        let mut seen = [false; 9];
        for s in 0..200u64 {
            let obj = build_object("door", s).unwrap();
            seen[obj.mechanism_of(obj.target_part().id).unwrap().counter() as usize] = true;
        }
        assert!(seen[2..=8].iter().all(|&x| x));
        assert!(!seen[0] && !seen[1]);
    }

    #[test]
    fn unknown_category_lists_valid() {
        let err = build_object("toaster", 1).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("toaster") && msg.contains("coffee_machine") && msg.contains("lamp"));
    }

    #[test]
    fn door_latch_replay() {
        // pull only succeeds once exactly `counter` unlock rotations happened
        let obj = build_object("door", 7).unwrap();
        let id = obj.target_part().id;
        let n = obj.mechanism_of(id).unwrap().counter();
        let dir = obj.mechanism_of(id).unwrap().direction();
        for k in 0..=n + 1 {
            let mut o = obj.clone();
            for _ in 0..k {
                o.step_mechanism(id, PartAction::Rotate { direction: dir, angle: super::super::UNLOCK_INCREMENT_RAD }).unwrap();
            }
            let out = o.step_mechanism(id, PartAction::Pull { distance: 0.02 }).unwrap();
            assert_eq!(out.success, k >= n, "k={k} n={n}");
        }
    }

    #[test]
    fn template_parse_errors() {
        assert!(TemplateConfig::parse("version = 2").is_err());
        assert!(TemplateConfig::parse("version = 1\n[toaster]\na = [1, 2]").is_err());
        assert!(TemplateConfig::parse("version = 1\n[bottle]\na = [2, 1]").is_err());
        let cfg = TemplateConfig::parse("version = 1\n[bottle]\na = [1, 2]").unwrap();
        assert!(build_object_with(&cfg, Category::Bottle, 0).is_err());
    }

    #[test]
    fn category_names_parse() {
        for c in Category::ALL {
            assert_eq!(c.name().parse::<Category>().unwrap(), c);
        }
        assert_eq!("Pressure Cooker".parse::<Category>().unwrap(), Category::PressureCooker);
    }
}
