//! Analytic primitives, rigid poses, ray casting and small point-set tools
//! (bounding boxes, k-nearest neighbours, local PCA).

use nalgebra::{Isometry3, Matrix3, Point3, Rotation3, SymmetricEigen, Translation3, UnitQuaternion, Vector3};
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use thiserror::Error;

pub type Vec3 = Vector3<f64>;
pub type Pt3 = Point3<f64>;

#[derive(Debug, Clone, Error, PartialEq)]
pub enum GeometryError {
    #[error("dimension `{name}` must be strictly positive, got {value}")]
    NonPositiveDimension { name: &'static str, value: f64 },
    #[error("rotation is not orthonormal with determinant +1 (deviation {0:.3e})")]
    InvalidRotation(f64),
}

/// Primitive solid, expressed in its own frame with the long axis on local z
/// and centred at the origin.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Primitive {
    /// Full edge lengths along x, y, z.
    Box { size: [f64; 3] },
    /// Closed cylinder (lateral surface plus two flat discs).
    Cylinder { radius: f64, length: f64 },
    /// Cylinder of `length` with hemispherical end caps (a capsule).
    CappedCylinder { radius: f64, length: f64 },
}

impl Primitive {
    fn validate(&self) -> Result<(), GeometryError> {
        let check = |name, value: f64| {
            if value > 0.0 && value.is_finite() {
                Ok(())
            } else {
                Err(GeometryError::NonPositiveDimension { name, value })
            }
        };
        match *self {
            Primitive::Box { size } => {
                check("size.x", size[0])?;
                check("size.y", size[1])?;
                check("size.z", size[2])
            }
            Primitive::Cylinder { radius, length } | Primitive::CappedCylinder { radius, length } => {
                check("radius", radius)?;
                check("length", length)
            }
        }
    }

    /// Half extents of the local axis-aligned bounding box.
    pub fn half_extents(&self) -> Vec3 {
        match *self {
            Primitive::Box { size } => Vec3::new(size[0], size[1], size[2]) * 0.5,
            Primitive::Cylinder { radius, length } => Vec3::new(radius, radius, length * 0.5),
            Primitive::CappedCylinder { radius, length } => Vec3::new(radius, radius, length * 0.5 + radius),
        }
    }

    pub fn surface_area(&self) -> f64 {
        match *self {
            Primitive::Box { size } => 2.0 * (size[0] * size[1] + size[1] * size[2] + size[0] * size[2]),
            Primitive::Cylinder { radius, length } => 2.0 * PI * radius * length + 2.0 * PI * radius * radius,
            Primitive::CappedCylinder { radius, length } => 2.0 * PI * radius * length + 4.0 * PI * radius * radius,
        }
    }

    /// Unsigned distance from a local-frame point to the surface.
    pub fn surface_distance(&self, p: &Pt3) -> f64 {
        match *self {
            Primitive::Box { size } => {
                let q = Vec3::new(p.x.abs() - size[0] * 0.5, p.y.abs() - size[1] * 0.5, p.z.abs() - size[2] * 0.5);
                if q.x <= 0.0 && q.y <= 0.0 && q.z <= 0.0 {
                    -q.max()
                } else {
                    q.map(|c| c.max(0.0)).norm()
                }
            }
            Primitive::Cylinder { radius, length } => {
                let dr = p.x.hypot(p.y) - radius;
                let dz = p.z.abs() - length * 0.5;
                if dr <= 0.0 && dz <= 0.0 {
                    -dr.max(dz)
                } else {
                    dr.max(0.0).hypot(dz.max(0.0))
                }
            }
            Primitive::CappedCylinder { radius, length } => {
                let hl = length * 0.5;
                let z = p.z.clamp(-hl, hl);
                ((p - Pt3::new(0.0, 0.0, z)).norm() - radius).abs()
            }
        }
    }

    /// Smallest ray parameter `t > 1e-12` where `o + t·d` meets the surface.
    pub fn ray_hit(&self, o: &Pt3, d: &Vec3) -> Option<f64> {
        const EPS: f64 = 1e-12;
        let mut best: Option<f64> = None;
        let mut consider = |t: f64| {
            if t > EPS && best.is_none_or(|b| t < b) {
                best = Some(t);
            }
        };
        match *self {
            Primitive::Box { size } => {
                let mut t_near = f64::NEG_INFINITY;
                let mut t_far = f64::INFINITY;
                for a in 0..3 {
                    let h = size[a] * 0.5;
                    if d[a] == 0.0 {
                        if o[a] < -h || o[a] > h {
                            return None;
                        }
                        continue;
                    }
                    let t1 = (-h - o[a]) / d[a];
                    let t2 = (h - o[a]) / d[a];
                    let (lo, hi) = if t1 < t2 { (t1, t2) } else { (t2, t1) };
                    t_near = t_near.max(lo);
                    t_far = t_far.min(hi);
                }
                if t_near <= t_far {
                    consider(t_near);
                    consider(t_far);
                }
            }
            Primitive::Cylinder { radius, length } => {
                let hl = length * 0.5;
                for t in lateral_hits(o, d, radius) {
                    if (o.z + t * d.z).abs() <= hl {
                        consider(t);
                    }
                }
                if d.z != 0.0 {
                    for zc in [-hl, hl] {
                        let t = (zc - o.z) / d.z;
                        let x = o.x + t * d.x;
                        let y = o.y + t * d.y;
                        if x * x + y * y <= radius * radius {
                            consider(t);
                        }
                    }
                }
            }
            Primitive::CappedCylinder { radius, length } => {
                let hl = length * 0.5;
                for t in lateral_hits(o, d, radius) {
                    if (o.z + t * d.z).abs() <= hl {
                        consider(t);
                    }
                }
                for zc in [-hl, hl] {
                    let c = Pt3::new(0.0, 0.0, zc);
                    for t in sphere_hits(o, d, &c, radius) {
                        let z = o.z + t * d.z;
                        if (zc > 0.0 && z >= hl) || (zc < 0.0 && z <= -hl) {
                            consider(t);
                        }
                    }
                }
            }
        }
        best
    }

    /// One uniform surface sample; faces are chosen in proportion to area.
    pub fn sample_point<R: Rng>(&self, rng: &mut R) -> Pt3 {
        match *self {
            Primitive::Box { size } => {
                let h = Vec3::new(size[0], size[1], size[2]) * 0.5;
                let areas = [size[1] * size[2], size[2] * size[0], size[0] * size[1]];
                let mut t = rng.random_range(0.0..areas.iter().sum::<f64>());
                let mut axis = 2;
                for (a, area) in areas.iter().enumerate() {
                    if t < *area {
                        axis = a;
                        break;
                    }
                    t -= area;
                }
                let (u, v) = ((axis + 1) % 3, (axis + 2) % 3);
                let mut p = Pt3::origin();
                p[axis] = if rng.random::<bool>() { h[axis] } else { -h[axis] };
                p[u] = rng.random_range(-h[u]..=h[u]);
                p[v] = rng.random_range(-h[v]..=h[v]);
                p
            }
            Primitive::Cylinder { radius, length } => {
                let hl = length * 0.5;
                let lateral = 2.0 * PI * radius * length;
                let disc = PI * radius * radius;
                let th = rng.random_range(0.0..2.0 * PI);
                if rng.random_range(0.0..lateral + 2.0 * disc) < lateral {
                    Pt3::new(radius * th.cos(), radius * th.sin(), rng.random_range(-hl..=hl))
                } else {
                    let r = radius * rng.random::<f64>().sqrt();
                    let z = if rng.random::<bool>() { hl } else { -hl };
                    Pt3::new(r * th.cos(), r * th.sin(), z)
                }
            }
            Primitive::CappedCylinder { radius, length } => {
                let hl = length * 0.5;
                let lateral = 2.0 * PI * radius * length;
                let caps = 4.0 * PI * radius * radius;
                let th = rng.random_range(0.0..2.0 * PI);
                if rng.random_range(0.0..lateral + caps) < lateral {
                    Pt3::new(radius * th.cos(), radius * th.sin(), rng.random_range(-hl..=hl))
                } else {
                    let c: f64 = rng.random();
                    let s = (1.0 - c * c).max(0.0).sqrt();
                    let sign = if rng.random::<bool>() { 1.0 } else { -1.0 };
                    Pt3::new(radius * s * th.cos(), radius * s * th.sin(), sign * (hl + radius * c))
                }
            }
        }
    }

    /// Uniform random surface samples, roughly `area × density` in total.
    /// Each face receives `round(face_area × density)` points.
    pub fn sample_surface<R: Rng>(&self, density: f64, rng: &mut R) -> Vec<Pt3> {
        let count = |area: f64| (area * density).round() as usize;
        let mut out = Vec::new();
        match *self {
            Primitive::Box { size } => {
                let h = Vec3::new(size[0], size[1], size[2]) * 0.5;
                for axis in 0..3 {
                    let (u, v) = ((axis + 1) % 3, (axis + 2) % 3);
                    let area = size[u] * size[v];
                    for sign in [-1.0, 1.0] {
                        for _ in 0..count(area) {
                            let mut p = Pt3::origin();
                            p[axis] = sign * h[axis];
                            p[u] = rng.random_range(-h[u]..=h[u]);
                            p[v] = rng.random_range(-h[v]..=h[v]);
                            out.push(p);
                        }
                    }
                }
            }
            Primitive::Cylinder { radius, length } => {
                let hl = length * 0.5;
                for _ in 0..count(2.0 * PI * radius * length) {
                    let th = rng.random_range(0.0..2.0 * PI);
                    out.push(Pt3::new(radius * th.cos(), radius * th.sin(), rng.random_range(-hl..=hl)));
                }
                for zc in [-hl, hl] {
                    for _ in 0..count(PI * radius * radius) {
                        let r = radius * rng.random::<f64>().sqrt();
                        let th = rng.random_range(0.0..2.0 * PI);
                        out.push(Pt3::new(r * th.cos(), r * th.sin(), zc));
                    }
                }
            }
            Primitive::CappedCylinder { radius, length } => {
                let hl = length * 0.5;
                for _ in 0..count(2.0 * PI * radius * length) {
                    let th = rng.random_range(0.0..2.0 * PI);
                    out.push(Pt3::new(radius * th.cos(), radius * th.sin(), rng.random_range(-hl..=hl)));
                }
                for sign in [-1.0, 1.0] {
                    for _ in 0..count(2.0 * PI * radius * radius) {
                        // uniform on a hemisphere: cos(polar) uniform in [0, 1]
                        let c: f64 = rng.random();
                        let s = (1.0 - c * c).max(0.0).sqrt();
                        let th = rng.random_range(0.0..2.0 * PI);
                        out.push(Pt3::new(radius * s * th.cos(), radius * s * th.sin(), sign * (hl + radius * c)));
                    }
                }
            }
        }
        out
    }
}

fn lateral_hits(o: &Pt3, d: &Vec3, radius: f64) -> Vec<f64> {
    let a = d.x * d.x + d.y * d.y;
    if a == 0.0 {
        return Vec::new();
    }
    let b = 2.0 * (o.x * d.x + o.y * d.y);
    let c = o.x * o.x + o.y * o.y - radius * radius;
    solve_quadratic(a, b, c)
}

fn sphere_hits(o: &Pt3, d: &Vec3, center: &Pt3, radius: f64) -> Vec<f64> {
    let oc = o - center;
    solve_quadratic(d.norm_squared(), 2.0 * oc.dot(d), oc.norm_squared() - radius * radius)
}

fn solve_quadratic(a: f64, b: f64, c: f64) -> Vec<f64> {
    let disc = b * b - 4.0 * a * c;
    if disc < 0.0 {
        return Vec::new();
    }
    let sq = disc.sqrt();
    // numerically stable pair
    let q = -0.5 * (b + b.signum() * sq);
    if q == 0.0 {
        return vec![0.0];
    }
    vec![q / a, c / q]
}

/// A primitive placed in its parent frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartShape {
    primitive: Primitive,
    rotation: Matrix3<f64>,
    translation: Vec3,
}

impl PartShape {
    pub fn new(primitive: Primitive, rotation: Matrix3<f64>, translation: Vec3) -> Result<Self, GeometryError> {
        primitive.validate()?;
        let dev = (rotation.transpose() * rotation - Matrix3::identity()).abs().max();
        let det_dev = (rotation.determinant() - 1.0).abs();
        if dev > 1e-9 || det_dev > 1e-9 {
            return Err(GeometryError::InvalidRotation(dev.max(det_dev)));
        }
        Ok(Self { primitive, rotation, translation })
    }

    /// Axis-aligned placement without rotation.
    pub fn at(primitive: Primitive, translation: Vec3) -> Result<Self, GeometryError> {
        Self::new(primitive, Matrix3::identity(), translation)
    }

    pub fn primitive(&self) -> &Primitive {
        &self.primitive
    }

    pub fn pose(&self) -> Isometry3<f64> {
        let rot = UnitQuaternion::from_rotation_matrix(&Rotation3::from_matrix_unchecked(self.rotation));
        Isometry3::from_parts(Translation3::from(self.translation), rot)
    }
}

/// One face of an axis-aligned box: ±x, ±y or ±z.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Face {
    PosX,
    NegX,
    PosY,
    NegY,
    PosZ,
    NegZ,
}

impl Face {
    pub const ALL: [Face; 6] = [Face::PosX, Face::NegX, Face::PosY, Face::NegY, Face::PosZ, Face::NegZ];

    pub fn axis(self) -> usize {
        match self {
            Face::PosX | Face::NegX => 0,
            Face::PosY | Face::NegY => 1,
            Face::PosZ | Face::NegZ => 2,
        }
    }

    pub fn is_positive(self) -> bool {
        matches!(self, Face::PosX | Face::PosY | Face::PosZ)
    }

    pub fn normal(self) -> Vec3 {
        let mut n = Vec3::zeros();
        n[self.axis()] = if self.is_positive() { 1.0 } else { -1.0 };
        n
    }

    /// The face whose outward normal is `n`, if `n` is axis aligned.
    pub fn from_normal(n: &Vec3) -> Option<Face> {
        Face::ALL.into_iter().find(|f| (f.normal() - n).norm() < 1e-9)
    }
}

/// Axis-aligned bounding box of a point set.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Aabb {
    pub min: Pt3,
    pub max: Pt3,
}

impl Aabb {
    pub fn from_points(points: &[Pt3]) -> Option<Aabb> {
        let first = points.first()?;
        let mut min = *first;
        let mut max = *first;
        for p in &points[1..] {
            for a in 0..3 {
                min[a] = min[a].min(p[a]);
                max[a] = max[a].max(p[a]);
            }
        }
        Some(Aabb { min, max })
    }

    pub fn center(&self) -> Pt3 {
        nalgebra::center(&self.min, &self.max)
    }

    pub fn extent(&self) -> Vec3 {
        self.max - self.min
    }
}

/// Indices of the `k` nearest points to `query` (including any point equal
/// to the query). Ties are broken by index so the result is deterministic.
pub fn k_nearest(points: &[Pt3], query: &Pt3, k: usize) -> Vec<usize> {
    let mut d: Vec<(f64, usize)> = points.iter().enumerate().map(|(i, p)| ((p - query).norm_squared(), i)).collect();
    let k = k.min(d.len());
    if k == 0 {
        return Vec::new();
    }
    d.select_nth_unstable_by(k - 1, |a, b| a.partial_cmp(b).unwrap());
    d.truncate(k);
    d.sort_by(|a, b| a.partial_cmp(b).unwrap());
    d.into_iter().map(|(_, i)| i).collect()
}

/// Eigen-decomposition of a neighbourhood covariance, sorted descending.
#[derive(Debug, Clone, Copy)]
pub struct LocalPca {
    pub eigenvalues: [f64; 3],
    /// Eigenvectors matching `eigenvalues`; the last one is the surface normal estimate.
    pub eigenvectors: [Vec3; 3],
}

pub fn local_pca(points: &[Pt3], indices: &[usize]) -> LocalPca {
    let n = indices.len().max(1) as f64;
    let mean = indices.iter().fold(Vec3::zeros(), |acc, &i| acc + points[i].coords) / n;
    let mut cov = Matrix3::zeros();
    for &i in indices {
        let d = points[i].coords - mean;
        cov += d * d.transpose();
    }
    cov /= n;
    let eig = SymmetricEigen::new(cov);
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| eig.eigenvalues[b].partial_cmp(&eig.eigenvalues[a]).unwrap());
    let vals = order.map(|i| eig.eigenvalues[i].max(0.0));
    let vecs = order.map(|i| eig.eigenvectors.column(i).into_owned().normalize());
    LocalPca { eigenvalues: vals, eigenvectors: vecs }
}

/// Angle in radians between two vectors.
pub fn angle_between(a: &Vec3, b: &Vec3) -> f64 {
    a.normalize().dot(&b.normalize()).clamp(-1.0, 1.0).acos()
}
