use nalgebra::Matrix3;
use partmanip::geometry::{PartShape, Primitive, Pt3, Vec3};
use partmanip::scene::{
    build_object_with, render_observation, CameraModel, Category, JointKind, PartAction, RotationDir, TemplateConfig, BACKGROUND_ID,
};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn category() -> impl Strategy<Value = Category> {
    (0..7usize).prop_map(|i| Category::ALL[i])
}

fn action() -> impl Strategy<Value = PartAction> {
    prop_oneof![
        (any::<bool>(), 0.0..0.6f64)
            .prop_map(|(cw, angle)| PartAction::Rotate { direction: if cw { RotationDir::Cw } else { RotationDir::Ccw }, angle }),
        (0.0..0.05f64).prop_map(|distance| PartAction::Pull { distance }),
        (0.0..0.05f64).prop_map(|distance| PartAction::Push { distance }),
    ]
}

fn primitive() -> impl Strategy<Value = Primitive> {
    prop_oneof![
        (0.01..1.0f64, 0.01..1.0f64, 0.01..1.0f64).prop_map(|(x, y, z)| Primitive::Box { size: [x, y, z] }),
        (0.01..0.5f64, 0.01..1.0f64).prop_map(|(radius, length)| Primitive::Cylinder { radius, length }),
        (0.01..0.5f64, 0.01..1.0f64).prop_map(|(radius, length)| Primitive::CappedCylinder { radius, length }),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn built_objects_are_well_formed(cat in category(), seed in any::<u64>()) {
        let obj = build_object_with(TemplateConfig::builtin(), cat, seed).unwrap();
        for (i, p) in obj.parts().iter().enumerate() {
            prop_assert_eq!(p.id as usize, i);
            let r: Matrix3<f64> = p.shape.pose().rotation.to_rotation_matrix().into_inner();
            prop_assert!((r.transpose() * r - Matrix3::identity()).abs().max() < 1e-9);
            prop_assert!((r.determinant() - 1.0).abs() < 1e-9);
            let h = p.shape.primitive().half_extents();
            prop_assert!(h.iter().all(|&v| v > 0.0));
            if p.actionable {
                prop_assert!(p.joint.is_some());
                prop_assert!(obj.mechanism_of(p.id).is_ok());
            }
        }
        for j in obj.joints() {
            prop_assert!((j.axis().norm() - 1.0).abs() < 1e-9);
            let [lo, hi] = j.limits();
            prop_assert!(lo <= j.value() && j.value() <= hi);
            if j.kind == JointKind::Screw {
                prop_assert!(j.pitch() > 0.0);
            }
        }
        prop_assert_eq!(&build_object_with(TemplateConfig::builtin(), cat, seed).unwrap(), &obj);
    }

    #[test]
    fn mechanism_invariants_hold_under_any_actions(cat in category(), seed in 0..1000u64, actions in prop::collection::vec(action(), 0..40)) {
        let mut obj = build_object_with(TemplateConfig::builtin(), cat, seed).unwrap();
        let id = obj.target_part().id;
        let mut counter = obj.mechanism_of(id).unwrap().counter();
        for a in actions {
            let before = obj.joint_of(id).unwrap().value();
            let out = obj.step_mechanism(id, a).unwrap();
            let m = obj.mechanism_of(id).unwrap();
            prop_assert!(m.counter() <= counter);
            counter = m.counter();
            prop_assert_eq!(m.is_unlocked(), m.counter() == 0);
            let j = obj.joint_of(id).unwrap();
            let [lo, hi] = j.limits();
            prop_assert!(lo <= j.value() && j.value() <= hi);
            if matches!(a, PartAction::Pull { .. } | PartAction::Push { .. }) && !m.is_unlocked() {
                prop_assert_eq!(j.value(), before);
            }
            if let (true, PartAction::Pull { distance } | PartAction::Push { distance }) = (out.success, a) {
                prop_assert!(out.achieved >= distance - 1e-3);
            }
        }
    }

    #[test]
    fn sampled_points_lie_on_the_surface(prim in primitive(), seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let scale = prim.half_extents().max();
        for _ in 0..50 {
            let p = prim.sample_point(&mut rng);
            prop_assert!(prim.surface_distance(&p) <= 1e-9 * scale.max(1.0), "{:?} off {:?}", p, prim);
            let h = prim.half_extents();
            prop_assert!((0..3).all(|k| p[k].abs() <= h[k] + 1e-12));
        }
    }

    #[test]
    fn depth_is_positive_exactly_on_parts(cat in category(), seed in 0..200u64) {
        let obj = build_object_with(TemplateConfig::builtin(), cat, seed).unwrap();
        let frame = render_observation(&obj, &CameraModel::for_object(&obj));
        prop_assert_eq!(frame.depth.len(), frame.part_ids.len());
        for (&d, &id) in frame.depth.iter().zip(&frame.part_ids) {
            prop_assert_eq!(d > 0.0, id != BACKGROUND_ID);
        }
        prop_assert!(frame.part_ids.iter().any(|&id| id == obj.target_part().id));
    }
}

#[test]
fn shape_rejects_degenerate_primitives() {
    assert!(PartShape::at(Primitive::Box { size: [0.1, 0.0, 0.1] }, Vec3::zeros()).is_err());
    assert!(PartShape::at(Primitive::Cylinder { radius: f64::NAN, length: 1.0 }, Vec3::zeros()).is_err());
    let s = PartShape::at(Primitive::CappedCylinder { radius: 0.1, length: 0.2 }, Vec3::new(1.0, 0.0, 0.0)).unwrap();
    assert_eq!(s.pose() * Pt3::origin(), Pt3::new(1.0, 0.0, 0.0));
}
