//! Scene-level domain types: views, panoramas, the navigability field and
//! the scene bundle that ties them together.

use serde::{Deserialize, Serialize};
use smallvec::SmallVec;

use crate::geometry::{pixel_to_point, CameraIntrinsics, Pose, Vec3, PANORAMA_VIEWS};
use crate::synth::{NoiseSpec, SceneTruth};
use crate::vocab::VOID;

/// Fixed-point scale of stored probabilities.
pub const PROB_SCALE: u32 = 65535;
pub const EMPTY_SLOT: u16 = u16::MAX;
pub const DEFAULT_TOPK: usize = 5;
pub const DEFAULT_MAX_RANGE: f64 = 10.0;

pub fn quantize_prob(p: f64) -> u16 {
    (p.clamp(0.0, 1.0) * PROB_SCALE as f64).round() as u16
}

/// Sparse per-pixel class distribution: `k` slots of (class, fixed-point
/// probability) and an implicit residual on [`VOID`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClassProbs {
    k: usize,
    classes: Vec<u16>,
    quant: Vec<u16>,
}

/// One (class, fixed-point mass) pair.
pub type ProbSlots = SmallVec<[(u16, u32); 4]>;

impl ClassProbs {
    /// All pixels start as pure void.
    pub fn new(k: usize, pixels: usize) -> Self {
        assert!(k >= 1, "top-k must be at least 1");
        Self { k, classes: vec![EMPTY_SLOT; k * pixels], quant: vec![0; k * pixels] }
    }

    pub fn from_raw(k: usize, classes: Vec<u16>, quant: Vec<u16>) -> Option<Self> {
        (k >= 1 && classes.len() == quant.len() && classes.len() % k == 0)
            .then_some(Self { k, classes, quant })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn pixels(&self) -> usize {
        self.classes.len() / self.k
    }

    pub fn raw(&self) -> (&[u16], &[u16]) {
        (&self.classes, &self.quant)
    }

    pub fn set_one_hot(&mut self, pixel: usize, class: u16) {
        let base = pixel * self.k;
        self.classes[base..base + self.k].fill(EMPTY_SLOT);
        self.quant[base..base + self.k].fill(0);
        self.classes[base] = class;
        self.quant[base] = PROB_SCALE as u16;
    }

    /// Stores the `k` most probable classes of a dense distribution; ties go
    /// to the lower class index.
    pub fn set_dense(&mut self, pixel: usize, dense: &[f64]) {
        let mut order: Vec<usize> = (0..dense.len()).collect();
        order.sort_by(|&a, &b| dense[b].total_cmp(&dense[a]).then(a.cmp(&b)));
        let base = pixel * self.k;
        for slot in 0..self.k {
            match order.get(slot) {
                Some(&c) if dense[c] > 0.0 => {
                    self.classes[base + slot] = c as u16;
                    self.quant[base + slot] = quantize_prob(dense[c]);
                }
                _ => {
                    self.classes[base + slot] = EMPTY_SLOT;
                    self.quant[base + slot] = 0;
                }
            }
        }
    }

    /// Occupied slots plus the void residual, in fixed point.
    pub fn slots(&self, pixel: usize) -> ProbSlots {
        let base = pixel * self.k;
        let mut out = ProbSlots::new();
        let mut total = 0u32;
        for s in base..base + self.k {
            let c = self.classes[s];
            if c == EMPTY_SLOT {
                continue;
            }
            let q = self.quant[s] as u32;
            total += q;
            out.push((c, q));
        }
        let residual = PROB_SCALE.saturating_sub(total);
        if residual > 0 {
            match out.iter_mut().find(|(c, _)| *c == VOID) {
                Some(slot) => slot.1 += residual,
                None => out.push((VOID, residual)),
            }
        }
        out
    }

    pub fn dense(&self, pixel: usize, n_classes: usize) -> Vec<f64> {
        let mut v = vec![0.0; n_classes];
        for (c, q) in self.slots(pixel) {
            if let Some(x) = v.get_mut(c as usize) {
                *x += q as f64 / PROB_SCALE as f64;
            }
        }
        v
    }

    pub fn argmax(&self, pixel: usize) -> u16 {
        let mut best = (VOID, 0u32);
        for (c, q) in self.slots(pixel) {
            if q > best.1 || (q == best.1 && c < best.0) {
                best = (c, q);
            }
        }
        best.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ViewObservation {
    pub pose: Pose,
    pub intrinsics: CameraIntrinsics,
    /// Row-major planar depth in meters, 0 marks invalid pixels.
    pub depth: Vec<f32>,
    pub probs: ClassProbs,
    /// Per-view instance ids, 0 for pixels without an instance.
    pub instance_ids: Option<Vec<u32>>,
    /// Pixels at this depth saw nothing within sensor range.
    pub max_range: f32,
}

impl ViewObservation {
    pub fn pixel_index(&self, col: u32, row: u32) -> usize {
        row as usize * self.intrinsics.width as usize + col as usize
    }

    pub fn is_valid(&self, idx: usize) -> bool {
        self.depth[idx] > 0.0
    }

    pub fn is_saturated(&self, idx: usize) -> bool {
        self.depth[idx] >= self.max_range
    }

    pub fn instance(&self, idx: usize) -> u32 {
        self.instance_ids.as_ref().map_or(0, |ids| ids[idx])
    }
}

#[derive(Debug, Clone)]
pub struct LabeledPoint {
    pub position: Vec3,
    pub pixel: u32,
    pub instance: u32,
    pub probs: ProbSlots,
}

/// Back-projects every `stride`-th valid pixel (in both directions) of a
/// view. Saturated pixels carry no surface and are skipped.
pub fn lift_view(view: &ViewObservation, stride: u32) -> Vec<LabeledPoint> {
    let stride = stride.max(1);
    let intr = &view.intrinsics;
    let mut out = Vec::new();
    for row in (0..intr.height).step_by(stride as usize) {
        for col in (0..intr.width).step_by(stride as usize) {
            let idx = view.pixel_index(col, row);
            if !view.is_valid(idx) || view.is_saturated(idx) {
                continue;
            }
            let Ok(position) = pixel_to_point(
                col as f64 + 0.5,
                row as f64 + 0.5,
                view.depth[idx] as f64,
                intr,
                &view.pose,
            ) else {
                continue;
            };
            out.push(LabeledPoint {
                position,
                pixel: idx as u32,
                instance: view.instance(idx),
                probs: view.probs.slots(idx),
            });
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct PanoramaNode {
    pub id: u32,
    pub position: Vec3,
    pub views: Vec<ViewObservation>,
}

impl PanoramaNode {
    pub fn is_complete(&self) -> bool {
        self.views.len() == PANORAMA_VIEWS
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct CellRef {
    pub floor: usize,
    pub x: usize,
    pub y: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FloorGrid {
    pub floor_z: f64,
    pub cell_size: f64,
    /// World (x, y) of the lower-left corner of cell (0, 0).
    pub origin: [f64; 2],
    pub width: usize,
    pub height: usize,
    #[serde(skip)]
    pub navigable: Vec<bool>,
}

impl FloorGrid {
    pub fn index(&self, x: usize, y: usize) -> usize {
        y * self.width + x
    }

    pub fn cell_of(&self, px: f64, py: f64) -> Option<(usize, usize)> {
        let fx = ((px - self.origin[0]) / self.cell_size).floor();
        let fy = ((py - self.origin[1]) / self.cell_size).floor();
        if fx < 0.0 || fy < 0.0 || fx >= self.width as f64 || fy >= self.height as f64 {
            return None;
        }
        Some((fx as usize, fy as usize))
    }

    pub fn cell_center_xy(&self, x: usize, y: usize) -> (f64, f64) {
        (
            self.origin[0] + (x as f64 + 0.5) * self.cell_size,
            self.origin[1] + (y as f64 + 0.5) * self.cell_size,
        )
    }

    pub fn navigable_count(&self) -> usize {
        self.navigable.iter().filter(|&&b| b).count()
    }
}

/// Explicit connection between two floors, e.g. a staircase.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StairLink {
    pub from: CellRef,
    pub to: CellRef,
    pub length: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NavigabilityField {
    pub floors: Vec<FloorGrid>,
    /// Camera height above the floor for nodes placed on this field.
    pub eye_height: f64,
    #[serde(default)]
    pub stairs: Vec<StairLink>,
}

impl NavigabilityField {
    pub fn validate(&self) -> Result<(), String> {
        if self.floors.is_empty() {
            return Err("field has no floors".into());
        }
        for (i, f) in self.floors.iter().enumerate() {
            if !(f.cell_size > 0.0) {
                return Err(format!("floor {i}: cell size {} not positive", f.cell_size));
            }
            if f.navigable.len() != f.width * f.height {
                return Err(format!("floor {i}: mask size mismatch"));
            }
            if f.navigable_count() == 0 {
                return Err(format!("floor {i}: no navigable cell"));
            }
        }
        Ok(())
    }

    /// Floor a point at height `z` stands on: the highest floor at or
    /// below `z`.
    pub fn floor_for_z(&self, z: f64) -> Option<usize> {
        self.floors
            .iter()
            .enumerate()
            .filter(|(_, f)| f.floor_z <= z + 1e-6)
            .max_by(|a, b| a.1.floor_z.total_cmp(&b.1.floor_z))
            .map(|(i, _)| i)
    }

    pub fn locate(&self, p: &Vec3) -> Option<CellRef> {
        let floor = self.floor_for_z(p.z)?;
        let (x, y) = self.floors[floor].cell_of(p.x, p.y)?;
        Some(CellRef { floor, x, y })
    }

    pub fn is_navigable(&self, c: CellRef) -> bool {
        let f = &self.floors[c.floor];
        f.navigable[f.index(c.x, c.y)]
    }

    /// Cell center lifted to eye height.
    pub fn cell_center(&self, c: CellRef) -> Vec3 {
        let f = &self.floors[c.floor];
        let (x, y) = f.cell_center_xy(c.x, c.y);
        Vec3::new(x, y, f.floor_z + self.eye_height)
    }

    pub fn navigable_cells(&self) -> Vec<CellRef> {
        let mut out = Vec::new();
        for (floor, f) in self.floors.iter().enumerate() {
            for y in 0..f.height {
                for x in 0..f.width {
                    if f.navigable[f.index(x, y)] {
                        out.push(CellRef { floor, x, y });
                    }
                }
            }
        }
        out
    }

    pub fn navigable_count(&self) -> usize {
        self.floors.iter().map(FloorGrid::navigable_count).sum()
    }

    pub fn navigable_centroid(&self) -> Vec3 {
        let cells = self.navigable_cells();
        let sum = cells.iter().fold(Vec3::zeros(), |acc, &c| acc + self.cell_center(c));
        sum / cells.len().max(1) as f64
    }

    /// Nearest navigable cell on the same floor by center distance; ties go
    /// to the lowest (y, x).
    pub fn nearest_navigable(&self, c: CellRef) -> Option<CellRef> {
        if self.is_navigable(c) {
            return Some(c);
        }
        let f = &self.floors[c.floor];
        let (cx, cy) = (c.x as i64, c.y as i64);
        let max_r = f.width.max(f.height) as i64;
        let mut best: Option<(i64, CellRef)> = None;
        for r in 1..=max_r {
            if let Some((d2, _)) = best {
                if r * r > d2 {
                    break;
                }
            }
            for y in (cy - r)..=(cy + r) {
                for x in (cx - r)..=(cx + r) {
                    if (y - cy).abs() != r && (x - cx).abs() != r {
                        continue;
                    }
                    if x < 0 || y < 0 || x >= f.width as i64 || y >= f.height as i64 {
                        continue;
                    }
                    if !f.navigable[f.index(x as usize, y as usize)] {
                        continue;
                    }
                    let d2 = (x - cx).pow(2) + (y - cy).pow(2);
                    let cand = CellRef { floor: c.floor, x: x as usize, y: y as usize };
                    let better = match best {
                        None => true,
                        Some((bd, bc)) => d2 < bd || (d2 == bd && (cand.y, cand.x) < (bc.y, bc.x)),
                    };
                    if better {
                        best = Some((d2, cand));
                    }
                }
            }
        }
        best.map(|(_, c)| c)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SensorSpec {
    pub topk: usize,
    pub max_range: f64,
}

impl Default for SensorSpec {
    fn default() -> Self {
        Self { topk: DEFAULT_TOPK, max_range: DEFAULT_MAX_RANGE }
    }
}

/// How panoramas are rendered for a bundle that carries ground truth.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaptureSpec {
    pub intrinsics: CameraIntrinsics,
    pub noise_profile: String,
    pub noise: NoiseSpec,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneBundle {
    pub scene_id: String,
    pub field: NavigabilityField,
    pub nodes: Vec<PanoramaNode>,
    pub class_vocabulary: Vec<String>,
    pub sensor: SensorSpec,
    pub capture: Option<CaptureSpec>,
    pub ground_truth: Option<SceneTruth>,
}

impl SceneBundle {
    pub fn node(&self, id: u32) -> Option<&PanoramaNode> {
        self.nodes.iter().find(|n| n.id == id)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn residual_mass_lands_on_void() {
        let mut p = ClassProbs::new(2, 1);
        p.set_dense(0, &[0.1, 0.2, 0.3, 0.4]);
        let d = p.dense(0, 4);
        assert!((d[3] - 0.4).abs() < 1e-4);
        assert!((d[2] - 0.3).abs() < 1e-4);
        assert!((d[0] - 0.3).abs() < 1e-4, "void gets 0.1 + 0.2 residual");
        assert_eq!(d[1], 0.0);
        assert!((d.iter().sum::<f64>() - 1.0).abs() < 1e-4);
        assert_eq!(p.argmax(0), 3);
    }

    #[test]
    fn argmax_tie_goes_to_lower_class() {
        let mut p = ClassProbs::new(5, 1);
        p.set_dense(0, &[0.0, 0.5, 0.5]);
        assert_eq!(p.argmax(0), 1);
    }

    #[test]
    fn single_class_vocabulary_is_all_void() {
        let mut p = ClassProbs::new(5, 3);
        p.set_dense(1, &[1.0]);
        for px in 0..3 {
            assert_eq!(p.dense(px, 1), vec![1.0]);
        }
    }

    fn view_with(depth: Vec<f32>, w: u32, h: u32) -> ViewObservation {
        let n = depth.len();
        ViewObservation {
            pose: Pose::new(Vec3::new(0.0, 0.0, 1.5), 0.0, 0.0),
            intrinsics: CameraIntrinsics::new(w, h, PI / 3.0).unwrap(),
            depth,
            probs: ClassProbs::new(5, n),
            instance_ids: None,
            max_range: 10.0,
        }
    }

    #[test]
    fn lift_all_invalid_is_empty() {
        let v = view_with(vec![0.0; 16], 4, 4);
        assert!(lift_view(&v, 1).is_empty());
    }

    #[test]
    fn lift_single_pixel_delegates_to_backprojection() {
        let mut depth = vec![0.0; 16];
        depth[6] = 2.5;
        let mut v = view_with(depth, 4, 4);
        v.probs.set_one_hot(6, 7);
        let pts = lift_view(&v, 1);
        assert_eq!(pts.len(), 1);
        let expect = pixel_to_point(2.5, 1.5, 2.5, &v.intrinsics, &v.pose).unwrap();
        assert!((pts[0].position - expect).norm() < 1e-12);
        assert_eq!(pts[0].probs.as_slice(), &[(7, PROB_SCALE)]);
    }

    fn grid(mask: &[&str]) -> FloorGrid {
        let height = mask.len();
        let width = mask[0].len();
        let mut navigable = vec![false; width * height];
        for (y, row) in mask.iter().enumerate() {
            for (x, ch) in row.chars().enumerate() {
                navigable[y * width + x] = ch == '.';
            }
        }
        FloorGrid { floor_z: 0.0, cell_size: 0.5, origin: [0.0, 0.0], width, height, navigable }
    }

    #[test]
    fn nearest_navigable_snaps_by_distance() {
        let field = NavigabilityField {
            floors: vec![grid(&["#####", "#####", "####.", ".####"])],
            eye_height: 1.5,
            stairs: vec![],
        };
        let c = field.nearest_navigable(CellRef { floor: 0, x: 3, y: 2 }).unwrap();
        assert_eq!((c.x, c.y), (4, 2));
        let c = field.nearest_navigable(CellRef { floor: 0, x: 0, y: 1 }).unwrap();
        assert_eq!((c.x, c.y), (0, 3));
        assert!(field.validate().is_ok());
        assert_eq!(field.locate(&Vec3::new(2.1, 1.2, 1.5)), Some(CellRef { floor: 0, x: 4, y: 2 }));
        assert_eq!(field.locate(&Vec3::new(-0.1, 1.2, 1.5)), None);
    }
}
