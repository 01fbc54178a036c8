//! Pinhole ray-cast renderer producing depth and part-ID images.
//!
//! Pixel `(u, v)` is sampled by the ray through image coordinates exactly
//! `(u, v)` (no half-pixel offset), so back-projection with the same
//! intrinsics recovers the hit point.

use super::{ArticulatedObject, SceneError};
use crate::geometry::{Pt3, Vec3};
use crate::parallel::{map_range, Execution};
use nalgebra::{Isometry3, Matrix3, Rotation3, Translation3, UnitQuaternion};
use serde::{Deserialize, Serialize};
use std::fmt::Write as _;

/// Part-ID value of pixels that hit nothing.
pub const BACKGROUND_ID: u16 = 65535;

/// Pinhole intrinsics plus the camera-to-world pose. The camera frame has
/// x right, y down and z along the optical axis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CameraModel {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: u32,
    pub height: u32,
    pub pose: Isometry3<f64>,
}

impl CameraModel {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64, width: u32, height: u32, pose: Isometry3<f64>) -> Result<Self, SceneError> {
        if !(fx > 0.0 && fy > 0.0) {
            return Err(SceneError::InvalidObject(format!("focal lengths must be positive, got {fx}, {fy}")));
        }
        if !(cx > 0.0 && cx < width as f64 && cy > 0.0 && cy < height as f64) {
            return Err(SceneError::InvalidObject(format!("principal point ({cx}, {cy}) outside {width}x{height}")));
        }
        Ok(Self { fx, fy, cx, cy, width, height, pose })
    }

    /// Camera at `eye` looking at `target`, with image "up" close to world +z.
    pub fn look_at(eye: Pt3, target: Pt3, fx: f64, width: u32, height: u32) -> Result<Self, SceneError> {
        let forward = (target - eye).normalize();
        let mut right = forward.cross(&Vec3::z());
        if right.norm() < 1e-9 {
            right = Vec3::x();
        }
        let right = right.normalize();
        let down = forward.cross(&right);
        let rot = Rotation3::from_matrix_unchecked(Matrix3::from_columns(&[right, down, forward]));
        let pose = Isometry3::from_parts(Translation3::from(eye.coords), UnitQuaternion::from_rotation_matrix(&rot));
        Self::new(fx, fx, width as f64 / 2.0, height as f64 / 2.0, width, height, pose)
    }

    /// Default camera for an object's view hint.
    pub fn for_object(obj: &ArticulatedObject) -> Self {
        Self::look_at(obj.view.eye, obj.view.target, 300.0, 320, 240).expect("valid default intrinsics")
    }

    /// World position of the optical centre.
    pub fn eye(&self) -> Pt3 {
        Pt3::from(self.pose.translation.vector)
    }

    /// Optical axis in world coordinates.
    pub fn forward(&self) -> Vec3 {
        self.pose.rotation * Vec3::z()
    }

    /// Ray direction (camera frame, z = 1) through pixel coordinates.
    pub fn pixel_ray(&self, u: f64, v: f64) -> Vec3 {
        Vec3::new((u - self.cx) / self.fx, (v - self.cy) / self.fy, 1.0)
    }

    /// Camera-frame point to (u, v, depth).
    pub fn project(&self, p_cam: &Pt3) -> (f64, f64, f64) {
        (self.fx * p_cam.x / p_cam.z + self.cx, self.fy * p_cam.y / p_cam.z + self.cy, p_cam.z)
    }

    pub fn pixel_count(&self) -> usize {
        self.width as usize * self.height as usize
    }
}

/// Raw images without the camera snapshot, as stored in the binary layout.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameImages {
    pub width: u32,
    pub height: u32,
    pub depth: Vec<f32>,
    pub part_ids: Vec<u16>,
}

/// Depth (meters along the optical axis, 0 = miss) and part-ID images,
/// both row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservationFrame {
    pub depth: Vec<f32>,
    pub part_ids: Vec<u16>,
    pub camera: CameraModel,
}

impl ObservationFrame {
    pub fn width(&self) -> u32 {
        self.camera.width
    }

    pub fn height(&self) -> u32 {
        self.camera.height
    }

    pub fn index(&self, u: u32, v: u32) -> usize {
        v as usize * self.camera.width as usize + u as usize
    }

    /// Flat little-endian layout: `u32 width`, `u32 height`, `width·height`
    /// f32 depths, then `width·height` u16 part-IDs.
    pub fn to_bytes(&self) -> Vec<u8> {
        let n = self.depth.len();
        let mut out = Vec::with_capacity(8 + n * 6);
        out.extend_from_slice(&self.camera.width.to_le_bytes());
        out.extend_from_slice(&self.camera.height.to_le_bytes());
        for d in &self.depth {
            out.extend_from_slice(&d.to_le_bytes());
        }
        for id in &self.part_ids {
            out.extend_from_slice(&id.to_le_bytes());
        }
        out
    }

    pub fn images_from_bytes(bytes: &[u8]) -> Result<FrameImages, SceneError> {
        if bytes.len() < 8 {
            return Err(SceneError::FrameFormat("header truncated".into()));
        }
        let width = u32::from_le_bytes(bytes[0..4].try_into().unwrap());
        let height = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
        let n = width as usize * height as usize;
        if bytes.len() != 8 + n * 6 {
            return Err(SceneError::FrameFormat(format!("expected {} bytes, got {}", 8 + n * 6, bytes.len())));
        }
        let depth = bytes[8..8 + 4 * n].chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect();
        let part_ids = bytes[8 + 4 * n..].chunks_exact(2).map(|c| u16::from_le_bytes(c.try_into().unwrap())).collect();
        Ok(FrameImages { width, height, depth, part_ids })
    }

    /// Rebuilds a frame from its binary layout and the camera it was taken with.
    pub fn from_bytes(bytes: &[u8], camera: CameraModel) -> Result<Self, SceneError> {
        let img = Self::images_from_bytes(bytes)?;
        if img.width != camera.width || img.height != camera.height {
            return Err(SceneError::FrameFormat("camera dimensions do not match image".into()));
        }
        Ok(Self { depth: img.depth, part_ids: img.part_ids, camera })
    }

    /// Lossless 16-bit binary PGM (P5, big-endian samples) of the part-ID image.
    pub fn part_id_pgm(&self) -> Vec<u8> {
        let mut out = format!("P5\n{} {}\n65535\n", self.width(), self.height()).into_bytes();
        for id in &self.part_ids {
            out.extend_from_slice(&id.to_be_bytes());
        }
        out
    }

    /// Plain-text PGM (P2) of depth in whole millimeters, clamped to 65535.
    pub fn depth_pgm_mm(&self) -> String {
        let mut out = format!("P2\n{} {}\n65535\n", self.width(), self.height());
        for row in self.depth.chunks(self.width() as usize) {
            let line: Vec<String> = row.iter().map(|d| ((*d as f64) * 1000.0).round().clamp(0.0, 65535.0).to_string()).collect();
            let _ = writeln!(out, "{}", line.join(" "));
        }
        out
    }
}

/// Parses a 16-bit P5 part-ID dump back into IDs.
pub fn parse_part_id_pgm(bytes: &[u8]) -> Result<FrameImages, SceneError> {
    let text_end = bytes
        .iter()
        .enumerate()
        .filter(|(_, b)| **b == b'\n')
        .map(|(i, _)| i)
        .nth(2)
        .ok_or_else(|| SceneError::FrameFormat("pgm header truncated".into()))?;
    let header = std::str::from_utf8(&bytes[..text_end]).map_err(|e| SceneError::FrameFormat(e.to_string()))?;
    let fields: Vec<&str> = header.split_whitespace().collect();
    if fields.len() != 4 || fields[0] != "P5" || fields[3] != "65535" {
        return Err(SceneError::FrameFormat("expected 16-bit P5 header".into()));
    }
    let parse = |s: &str| s.parse::<u32>().map_err(|e| SceneError::FrameFormat(e.to_string()));
    let (width, height) = (parse(fields[1])?, parse(fields[2])?);
    let body = &bytes[text_end + 1..];
    if body.len() != width as usize * height as usize * 2 {
        return Err(SceneError::FrameFormat("pgm body size mismatch".into()));
    }
    let part_ids = body.chunks_exact(2).map(|c| u16::from_be_bytes([c[0], c[1]])).collect();
    Ok(FrameImages { width, height, depth: Vec::new(), part_ids })
}

/// Renders depth and part-ID images by casting one ray per pixel.
pub fn render_observation(obj: &ArticulatedObject, cam: &CameraModel) -> ObservationFrame {
    render_observation_with(obj, cam, Execution::default())
}

pub fn render_observation_with(obj: &ArticulatedObject, cam: &CameraModel, exec: Execution) -> ObservationFrame {
    let locals: Vec<(u16, Isometry3<f64>)> = obj.parts().iter().map(|p| (p.id, obj.part_pose(p.id).expect("own part").inverse())).collect();
    let eye = cam.eye();
    let w = cam.width as usize;
    let rows = map_range(exec, cam.height as usize, |v| {
        let mut depth = vec![0f32; w];
        let mut ids = vec![BACKGROUND_ID; w];
        for u in 0..w {
            let dir = cam.pose.rotation * cam.pixel_ray(u as f64, v as f64);
            let mut best: Option<(f64, u16)> = None;
            for (id, inv) in &locals {
                let o = inv * eye;
                let d = inv.rotation * dir;
                let part = &obj.parts()[*id as usize];
                if let Some(t) = part.shape.primitive().ray_hit(&o, &d) {
                    if best.is_none_or(|(bt, _)| t < bt) {
                        best = Some((t, *id));
                    }
                }
            }
            if let Some((t, id)) = best {
                depth[u] = t as f32;
                ids[u] = id;
            }
        }
        (depth, ids)
    });
    let mut depth = Vec::with_capacity(cam.pixel_count());
    let mut part_ids = Vec::with_capacity(cam.pixel_count());
    for (d, i) in rows {
        depth.extend(d);
        part_ids.extend(i);
    }
    ObservationFrame { depth, part_ids, camera: cam.clone() }
}
