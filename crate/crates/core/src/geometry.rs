//! Camera geometry shared by the renderer and the back-projection path.
//!
//! World frame is z-up and right-handed, heading 0 looks along +x and
//! headings grow counter-clockwise seen from above. Depth is planar: the
//! distance along the optical axis, not the length of the ray.

use std::f64::consts::{FRAC_PI_2, PI, TAU};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub type Vec3 = nalgebra::Vector3<f64>;

#[derive(Debug, Error, PartialEq)]
pub enum GeometryError {
    #[error("invalid depth {0} (must be positive and finite)")]
    InvalidDepth(f64),
    #[error("pixel ({u}, {v}) outside a {width}x{height} image")]
    PixelOutOfBounds { u: f64, v: f64, width: u32, height: u32 },
    #[error("invalid intrinsics: {0}")]
    InvalidIntrinsics(String),
}

/// Wraps any angle into `[0, 2π)`.
pub fn normalize_heading(heading: f64) -> f64 {
    let h = heading.rem_euclid(TAU);
    // rem_euclid can return TAU itself for tiny negative inputs
    if h >= TAU {
        0.0
    } else {
        h
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    pub position: Vec3,
    pub heading: f64,
    pub elevation: f64,
}

impl Pose {
    pub fn new(position: Vec3, heading: f64, elevation: f64) -> Self {
        Self {
            position,
            heading: normalize_heading(heading),
            elevation: elevation.clamp(-FRAC_PI_2, FRAC_PI_2),
        }
    }

    /// Pose at `from` whose optical axis passes through `to`.
    pub fn looking_at(from: Vec3, to: Vec3) -> Self {
        let d = to - from;
        let horizontal = (d.x * d.x + d.y * d.y).sqrt();
        Self::new(from, d.y.atan2(d.x), d.z.atan2(horizontal))
    }

    pub fn forward(&self) -> Vec3 {
        let (sh, ch) = self.heading.sin_cos();
        let (se, ce) = self.elevation.sin_cos();
        Vec3::new(ce * ch, ce * sh, se)
    }

    pub fn right(&self) -> Vec3 {
        let (sh, ch) = self.heading.sin_cos();
        Vec3::new(sh, -ch, 0.0)
    }

    pub fn up(&self) -> Vec3 {
        let (sh, ch) = self.heading.sin_cos();
        let (se, ce) = self.elevation.sin_cos();
        Vec3::new(-se * ch, -se * sh, ce)
    }
}

/// Pinhole camera with square pixels and the principal point at the image
/// center.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraIntrinsics {
    pub width: u32,
    pub height: u32,
    pub hfov: f64,
}

impl CameraIntrinsics {
    pub fn new(width: u32, height: u32, hfov: f64) -> Result<Self, GeometryError> {
        if width == 0 || height == 0 {
            return Err(GeometryError::InvalidIntrinsics(format!(
                "image size {width}x{height}"
            )));
        }
        if !(hfov > 0.0 && hfov < PI) {
            return Err(GeometryError::InvalidIntrinsics(format!("hfov {hfov}")));
        }
        Ok(Self { width, height, hfov })
    }

    pub fn focal(&self) -> f64 {
        self.width as f64 / 2.0 / (self.hfov / 2.0).tan()
    }

    pub fn principal_point(&self) -> (f64, f64) {
        (self.width as f64 / 2.0, self.height as f64 / 2.0)
    }

    pub fn pixel_count(&self) -> usize {
        self.width as usize * self.height as usize
    }

    /// Normalized image-plane coordinates `(x, y)` of continuous pixel
    /// coordinate `(u, v)`; `x` grows to the right, `y` downward.
    pub fn normalized(&self, u: f64, v: f64) -> (f64, f64) {
        let f = self.focal();
        let (cx, cy) = self.principal_point();
        ((u - cx) / f, (v - cy) / f)
    }

    pub fn contains(&self, u: f64, v: f64) -> bool {
        u >= 0.0 && v >= 0.0 && u < self.width as f64 && v < self.height as f64
    }
}

/// Unnormalized world direction of the ray through `(u, v)`, scaled so that
/// its component along the optical axis is exactly 1. Walking `t` units
/// along it reaches planar depth `t`.
pub fn pixel_ray(u: f64, v: f64, intrinsics: &CameraIntrinsics, pose: &Pose) -> Vec3 {
    let (x, y) = intrinsics.normalized(u, v);
    pose.forward() + pose.right() * x - pose.up() * y
}

pub fn pixel_to_point(
    u: f64,
    v: f64,
    depth: f64,
    intrinsics: &CameraIntrinsics,
    pose: &Pose,
) -> Result<Vec3, GeometryError> {
    if !(depth > 0.0 && depth.is_finite()) {
        return Err(GeometryError::InvalidDepth(depth));
    }
    if !intrinsics.contains(u, v) {
        return Err(GeometryError::PixelOutOfBounds {
            u,
            v,
            width: intrinsics.width,
            height: intrinsics.height,
        });
    }
    Ok(pose.position + pixel_ray(u, v, intrinsics, pose) * depth)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Projection {
    pub u: f64,
    pub v: f64,
    pub depth: f64,
}

/// Projects a world point into the camera. Returns `None` for points at or
/// behind the camera plane; the pixel may still fall outside the image.
pub fn project(point: &Vec3, intrinsics: &CameraIntrinsics, pose: &Pose) -> Option<Projection> {
    let d = point - pose.position;
    let depth = d.dot(&pose.forward());
    if depth <= 1e-12 {
        return None;
    }
    let x = d.dot(&pose.right()) / depth;
    let y = -d.dot(&pose.up()) / depth;
    let f = intrinsics.focal();
    let (cx, cy) = intrinsics.principal_point();
    Some(Projection {
        u: cx + x * f,
        v: cy + y * f,
        depth,
    })
}

/// Axis-aligned box.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Aabb {
    pub min: Vec3,
    pub max: Vec3,
}

impl Aabb {
    pub fn new(min: Vec3, max: Vec3) -> Self {
        Self { min, max }
    }

    pub fn from_center_extent(center: Vec3, extent: Vec3) -> Self {
        Self { min: center - extent / 2.0, max: center + extent / 2.0 }
    }

    pub fn center(&self) -> Vec3 {
        (self.min + self.max) / 2.0
    }

    pub fn extent(&self) -> Vec3 {
        self.max - self.min
    }

    pub fn volume(&self) -> f64 {
        let e = self.extent();
        e.x.max(0.0) * e.y.max(0.0) * e.z.max(0.0)
    }

    pub fn intersection_volume(&self, other: &Aabb) -> f64 {
        let lo = self.min.sup(&other.min);
        let hi = self.max.inf(&other.max);
        let e = hi - lo;
        e.x.max(0.0) * e.y.max(0.0) * e.z.max(0.0)
    }

    pub fn iou(&self, other: &Aabb) -> f64 {
        let inter = self.intersection_volume(other);
        let union = self.volume() + other.volume() - inter;
        if union <= 0.0 {
            0.0
        } else {
            inter / union
        }
    }

    pub fn contains(&self, p: &Vec3) -> bool {
        (0..3).all(|i| p[i] >= self.min[i] && p[i] <= self.max[i])
    }

    pub fn expanded(&self, margin: f64) -> Self {
        let m = Vec3::repeat(margin);
        Self { min: self.min - m, max: self.max + m }
    }

    pub fn union(&self, other: &Aabb) -> Self {
        Self { min: self.min.inf(&other.min), max: self.max.sup(&other.max) }
    }

    pub fn intersects(&self, other: &Aabb) -> bool {
        (0..3).all(|i| self.min[i] < other.max[i] && other.min[i] < self.max[i])
    }

    /// Parameter of the first crossing of `origin + t * dir` into the box
    /// with `t > 0`, by the slab method.
    pub fn ray_entry(&self, origin: &Vec3, dir: &Vec3) -> Option<f64> {
        let mut t0 = f64::NEG_INFINITY;
        let mut t1 = f64::INFINITY;
        for i in 0..3 {
            if dir[i] == 0.0 {
                if origin[i] < self.min[i] || origin[i] > self.max[i] {
                    return None;
                }
                continue;
            }
            let inv = 1.0 / dir[i];
            let (mut a, mut b) = ((self.min[i] - origin[i]) * inv, (self.max[i] - origin[i]) * inv);
            if a > b {
                std::mem::swap(&mut a, &mut b);
            }
            t0 = t0.max(a);
            t1 = t1.min(b);
            if t0 > t1 {
                return None;
            }
        }
        (t0 > 0.0).then_some(t0)
    }
}

pub const PANORAMA_HEADINGS: usize = 12;
pub const PANORAMA_ELEVATIONS: [f64; 3] = [-PI / 6.0, 0.0, PI / 6.0];
pub const PANORAMA_VIEWS: usize = 36;

/// Heading and elevation of canonical panorama view `k`: views are grouped
/// by elevation (looking down, level, up), twelve headings each.
pub fn panorama_view_angles(k: usize) -> (f64, f64) {
    assert!(k < PANORAMA_VIEWS, "view index {k} out of range");
    let heading = (k % PANORAMA_HEADINGS) as f64 * (PI / 6.0);
    let elevation = PANORAMA_ELEVATIONS[k / PANORAMA_HEADINGS];
    (heading, elevation)
}

pub fn panorama_poses(position: Vec3) -> Vec<Pose> {
    (0..PANORAMA_VIEWS)
        .map(|k| {
            let (h, e) = panorama_view_angles(k);
            Pose::new(position, h, e)
        })
        .collect()
}
