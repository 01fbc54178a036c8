use super::{refined_center, AffordanceError, PartPointCloud};
use crate::geometry::{k_nearest, local_pca, Vec3};
use crate::parallel::{map_range, Execution};
use std::sync::atomic::{AtomicUsize, Ordering};

pub const FEATURE_DIM: usize = 13;

pub type FeatureRow = [f64; FEATURE_DIM];

/// Neighbourhood size and viewing axis used for normal orientation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FeatureConfig {
    pub k: usize,
    /// Direction the sensor looks along; normals are flipped to face against it.
    pub view_axis: Vec3,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        Self { k: 16, view_axis: -Vec3::z() }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct FeatureDiagnostics {
    /// Points whose k neighbours were all identical.
    pub degenerate_neighbourhoods: usize,
}

/// Per-point features, in order:
///
/// * `0..3` coordinates normalised to the bounding box (each in `[0, 1]`)
/// * `3` distance to the refined centre over the bounding-box diagonal
/// * `4..7` local PCA ratios `λ2/λ1`, `λ3/λ1`, `λ3/λ2` (0/0 → 0)
/// * `7..10` local normal (smallest eigenvector, facing against the view axis)
/// * `10..13` per-axis rank fractions (share of points with a smaller coordinate)
pub fn extract_features(part: &PartPointCloud, k: usize) -> Result<(Vec<FeatureRow>, FeatureDiagnostics), AffordanceError> {
    extract_features_with(part, &FeatureConfig { k, ..FeatureConfig::default() }, Execution::default())
}

pub fn extract_features_with(
    part: &PartPointCloud,
    cfg: &FeatureConfig,
    exec: Execution,
) -> Result<(Vec<FeatureRow>, FeatureDiagnostics), AffordanceError> {
    let n = part.points.len();
    if cfg.k < 4 {
        return Err(AffordanceError::InvalidParameter(format!("neighbourhood size {} < 4", cfg.k)));
    }
    if n <= cfg.k {
        return Err(AffordanceError::TooFewPoints { needed: cfg.k + 1, got: n });
    }
    let center = refined_center(part)?;
    let bbox = part.aabb().expect("non-empty");
    let ext = bbox.extent();
    let diag = ext.norm();
    let view = cfg.view_axis.normalize();
    let sorted: [Vec<f64>; 3] = std::array::from_fn(|a| {
        let mut v: Vec<f64> = part.points.iter().map(|p| p[a]).collect();
        v.sort_by(|x, y| x.partial_cmp(y).unwrap());
        v
    });
    let degenerate = AtomicUsize::new(0);
    let rows = map_range(exec, n, |i| {
        let p = part.points[i];
        let mut row = [0.0; FEATURE_DIM];
        for a in 0..3 {
            row[a] = if ext[a] > 0.0 { ((p[a] - bbox.min[a]) / ext[a]).clamp(0.0, 1.0) } else { 0.0 };
        }
        row[3] = if diag > 0.0 { (p - center).norm() / diag } else { 0.0 };
        let nb = k_nearest(&part.points, &p, cfg.k);
        let pca = local_pca(&part.points, &nb);
        let [l1, l2, l3] = pca.eigenvalues;
        let ratio = |num: f64, den: f64| if den > 0.0 { num / den } else { 0.0 };
        let normal = if l1 <= f64::EPSILON * f64::EPSILON {
            degenerate.fetch_add(1, Ordering::Relaxed);
            view
        } else {
            row[4] = ratio(l2, l1);
            row[5] = ratio(l3, l1);
            row[6] = ratio(l3, l2);
            let nrm = pca.eigenvectors[2];
            if nrm.dot(&view) > 0.0 {
                -nrm
            } else {
                nrm
            }
        };
        row[7] = normal.x;
        row[8] = normal.y;
        row[9] = normal.z;
        for a in 0..3 {
            row[10 + a] = sorted[a].partition_point(|&c| c < p[a]) as f64 / n as f64;
        }
        row
    });
    Ok((rows, FeatureDiagnostics { degenerate_neighbourhoods: degenerate.into_inner() }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::affordance::FrameTag;
    use crate::geometry::{angle_between, Pt3};

    fn grid(n: usize) -> PartPointCloud {
        let mut pts = Vec::new();
        for i in 0..n {
            for j in 0..n {
                pts.push(Pt3::new(i as f64 * 0.01, j as f64 * 0.01, 0.0));
            }
        }
        // a few points off-plane so the bbox has depth
        pts.push(Pt3::new(0.0, 0.0, -0.05));
        PartPointCloud::new(pts, FrameTag::Part)
    }

    #[test]
    fn corner_is_normalized_to_zero_or_one() {
        let cloud = grid(10);
        let (rows, _) = extract_features(&cloud, 8).unwrap();
        for r in &rows {
            assert!(r[..3].iter().all(|c| (0.0..=1.0).contains(c)));
        }
        let corner = &rows[99]; // (0.09, 0.09, 0)
        assert_eq!(corner[0], 1.0);
        assert_eq!(corner[1], 1.0);
        assert_eq!(corner[2], 1.0);
        let bottom = rows.last().unwrap();
        assert_eq!(bottom[2], 0.0);
    }

    #[test]
    fn planar_neighbourhood() {
        let cloud = grid(12);
        let (rows, diag) = extract_features(&cloud, 8).unwrap();
        assert_eq!(diag.degenerate_neighbourhoods, 0);
        let r = &rows[12 * 6 + 6];
        assert!(r[5] <= 1e-6);
        let n = Vec3::new(r[7], r[8], r[9]);
        assert!(angle_between(&n, &Vec3::z()).to_degrees() < 2.0);
    }

    #[test]
    fn median_rank_fraction() {
        let pts: Vec<Pt3> = (0..101).map(|i| Pt3::new(((i * 37) % 101) as f64, (i % 7) as f64, (i % 3) as f64)).collect();
        let n = pts.len();
        let cloud = PartPointCloud::new(pts.clone(), FrameTag::Part);
        let (rows, _) = extract_features(&cloud, 6).unwrap();
        let median = pts.iter().position(|p| p.x == 50.0).unwrap();
        // direct rank count
        let below = pts.iter().filter(|p| p.x < 50.0).count() as f64 / n as f64;
        assert_eq!(rows[median][10], below);
        assert!((rows[median][10] - 0.5).abs() <= 2.0 / n as f64);
    }

    #[test]
    fn degenerate_neighbourhood_is_flagged() {
        let mut pts = vec![Pt3::new(1.0, 1.0, 1.0); 10];
        pts.extend((0..10).map(|i| Pt3::new(i as f64, 0.0, (i * i) as f64)));
        let cloud = PartPointCloud::new(pts, FrameTag::Part);
        let (rows, diag) = extract_features(&cloud, 5).unwrap();
        assert!(diag.degenerate_neighbourhoods >= 10);
        assert_eq!(&rows[0][4..7], &[0.0, 0.0, 0.0]);
        assert_eq!(&rows[0][7..10], &[0.0, 0.0, -1.0]);
    }

    #[test]
    fn size_checks() {
        let cloud = grid(3);
        assert!(extract_features(&cloud, 3).is_err());
        assert!(matches!(extract_features(&cloud, 20), Err(AffordanceError::TooFewPoints { .. })));
    }

    #[test]
    fn parallel_matches_sequential() {
        let cloud = grid(15);
        let cfg = FeatureConfig::default();
        let a = extract_features_with(&cloud, &cfg, Execution::Sequential).unwrap();
        let b = extract_features_with(&cloud, &cfg, Execution::Parallel).unwrap();
        assert_eq!(a, b);
    }
}
