//! Synthetic multi-room scenes with exact ground truth, and a ray-cast
//! renderer over them.

mod layout;
mod noise;
mod render;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{Aabb, Vec3};

pub use layout::{generate_scene, SynthParams};
pub use noise::NoiseSpec;
pub use render::{build_panoramas, Hit, RenderedTruth, Renderer};

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid generation parameters: {0}")]
    InvalidParams(String),
    #[error("infeasible layout: {0}")]
    Infeasible(String),
    #[error("position ({x:.3}, {y:.3}, {z:.3}) is not navigable")]
    NotNavigable { x: f64, y: f64, z: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Room {
    pub id: u32,
    pub kind: String,
    pub floor: usize,
    /// Interior floor rectangle (x, y), walls excluded.
    pub min: [f64; 2],
    pub max: [f64; 2],
}

impl Room {
    pub fn contains_xy(&self, x: f64, y: f64) -> bool {
        x >= self.min[0] && x <= self.max[0] && y >= self.min[1] && y <= self.max[1]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruthObject {
    pub id: u32,
    pub class: u16,
    pub center: Vec3,
    /// Full side lengths, not half extents.
    pub extent: Vec3,
    pub room: u32,
}

impl TruthObject {
    pub fn aabb(&self) -> Aabb {
        Aabb::from_center_extent(self.center, self.extent)
    }
}

/// Axis-aligned structural slab (wall, floor or ceiling).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Slab {
    pub class: u16,
    pub min: Vec3,
    pub max: Vec3,
}

impl Slab {
    pub fn aabb(&self) -> Aabb {
        Aabb::new(self.min, self.max)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneTruth {
    pub rooms: Vec<Room>,
    pub objects: Vec<TruthObject>,
    pub walls: Vec<Slab>,
    /// Floor and ceiling slabs.
    #[serde(default)]
    pub surfaces: Vec<Slab>,
    /// Height of each floor's walking surface.
    pub floors: Vec<f64>,
}

impl SceneTruth {
    pub fn object(&self, id: u32) -> Option<&TruthObject> {
        self.objects.iter().find(|o| o.id == id)
    }

    pub fn room_at(&self, p: &Vec3) -> Option<&Room> {
        self.rooms.iter().find(|r| {
            r.contains_xy(p.x, p.y)
                && self.floors.get(r.floor).is_some_and(|&z| p.z >= z - 0.2)
                && self.floors.get(r.floor + 1).is_none_or(|&z| p.z < z - 0.2)
        })
    }

    pub fn validate(&self) -> Result<(), String> {
        let mut ids: Vec<u32> = self.objects.iter().map(|o| o.id).collect();
        ids.sort_unstable();
        if ids.windows(2).any(|w| w[0] == w[1]) {
            return Err("duplicate object id".into());
        }
        for o in &self.objects {
            if o.extent.iter().any(|&e| !(e > 0.0)) {
                return Err(format!("object {} has non-positive extent", o.id));
            }
            let room = self
                .rooms
                .iter()
                .find(|r| r.id == o.room)
                .ok_or_else(|| format!("object {} references unknown room {}", o.id, o.room))?;
            let b = o.aabb();
            let eps = 1e-9;
            if b.min.x < room.min[0] - eps
                || b.max.x > room.max[0] + eps
                || b.min.y < room.min[1] - eps
                || b.max.y > room.max[1] + eps
            {
                return Err(format!("object {} leaves room {}", o.id, room.id));
            }
        }
        Ok(())
    }
}
