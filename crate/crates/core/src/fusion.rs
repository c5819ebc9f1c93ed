//! Cross-view semantic fusion: lifted points are averaged in a sparse voxel
//! grid, voxels take their argmax class, and same-class neighbours form 3D
//! object instances.

use std::collections::{BTreeMap, BTreeSet, HashMap, VecDeque};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use smallvec::SmallVec;

use crate::geometry::{Aabb, Vec3};
use crate::scene::{lift_view, LabeledPoint, PanoramaNode, ViewObservation, PROB_SCALE};
use crate::synth::SceneTruth;
use crate::vocab::{default_stuff_classes, VOID};

pub type VoxelKey = [i32; 3];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub enum Connectivity {
    Six,
    Eighteen,
    TwentySix,
}

impl TryFrom<u8> for Connectivity {
    type Error = String;
    fn try_from(v: u8) -> Result<Self, String> {
        match v {
            6 => Ok(Self::Six),
            18 => Ok(Self::Eighteen),
            26 => Ok(Self::TwentySix),
            _ => Err(format!("connectivity must be 6, 18 or 26, got {v}")),
        }
    }
}

impl From<Connectivity> for u8 {
    fn from(c: Connectivity) -> u8 {
        match c {
            Connectivity::Six => 6,
            Connectivity::Eighteen => 18,
            Connectivity::TwentySix => 26,
        }
    }
}

impl Connectivity {
    pub fn offsets(self) -> Vec<[i32; 3]> {
        let mut out = Vec::new();
        for dz in -1..=1 {
            for dy in -1..=1 {
                for dx in -1..=1 {
                    let nonzero = (dx != 0) as u8 + (dy != 0) as u8 + (dz != 0) as u8;
                    let keep = match self {
                        Self::Six => nonzero == 1,
                        Self::Eighteen => (1..=2).contains(&nonzero),
                        Self::TwentySix => nonzero >= 1,
                    };
                    if keep {
                        out.push([dx, dy, dz]);
                    }
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FusionParams {
    pub voxel_size: f64,
    pub connectivity: Connectivity,
    pub min_voxels: usize,
    /// Every `stride`-th pixel in both directions is lifted.
    pub stride: u32,
    pub stuff_classes: Vec<u16>,
    /// Minimum share of a 2D instance's points owned by one object for the
    /// instance to map to it.
    pub map_threshold: f64,
}

impl Default for FusionParams {
    fn default() -> Self {
        Self {
            voxel_size: 0.1,
            connectivity: Connectivity::TwentySix,
            min_voxels: 5,
            stride: 2,
            stuff_classes: default_stuff_classes(),
            map_threshold: 0.3,
        }
    }
}

impl FusionParams {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.voxel_size > 0.0) {
            return Err(format!("voxel_size must be positive, got {}", self.voxel_size));
        }
        if self.stride == 0 {
            return Err("stride must be at least 1".into());
        }
        if !(0.0..=1.0).contains(&self.map_threshold) {
            return Err(format!("map_threshold {} outside [0, 1]", self.map_threshold));
        }
        Ok(())
    }
}

/// Fixed-point probability mass per class, summed over a voxel's points.
/// Integer sums make accumulation exactly order independent.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct VoxelCell {
    mass: SmallVec<[(u16, u64); 4]>,
    count: u32,
}

impl VoxelCell {
    fn add(&mut self, slots: &[(u16, u32)]) {
        for &(c, q) in slots {
            match self.mass.binary_search_by_key(&c, |&(k, _)| k) {
                Ok(i) => self.mass[i].1 += q as u64,
                Err(i) => self.mass.insert(i, (c, q as u64)),
            }
        }
        self.count += 1;
    }

    fn merge(&mut self, other: &VoxelCell) {
        for &(c, m) in &other.mass {
            match self.mass.binary_search_by_key(&c, |&(k, _)| k) {
                Ok(i) => self.mass[i].1 += m,
                Err(i) => self.mass.insert(i, (c, m)),
            }
        }
        self.count += other.count;
    }

    pub fn count(&self) -> u32 {
        self.count
    }

    /// Mean probability of each class with non-zero mass, sorted by class.
    pub fn mean(&self) -> Vec<(u16, f64)> {
        let denom = self.count as f64 * PROB_SCALE as f64;
        self.mass.iter().map(|&(c, m)| (c, m as f64 / denom)).collect()
    }

    /// Class with the largest summed mass; ties go to the lowest index.
    pub fn argmax(&self) -> u16 {
        let mut best = (VOID, 0u64);
        for &(c, m) in &self.mass {
            if m > best.1 {
                best = (c, m);
            }
        }
        best.0
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct SemanticVoxelGrid {
    pub voxel_size: f64,
    cells: HashMap<VoxelKey, VoxelCell>,
}

pub fn voxel_key(p: &Vec3, voxel_size: f64) -> VoxelKey {
    [
        (p.x / voxel_size).floor() as i32,
        (p.y / voxel_size).floor() as i32,
        (p.z / voxel_size).floor() as i32,
    ]
}

pub fn voxel_center(k: VoxelKey, voxel_size: f64) -> Vec3 {
    Vec3::new(
        (k[0] as f64 + 0.5) * voxel_size,
        (k[1] as f64 + 0.5) * voxel_size,
        (k[2] as f64 + 0.5) * voxel_size,
    )
}

pub fn voxel_aabb(keys: &[VoxelKey], voxel_size: f64) -> Aabb {
    let mut lo = [i32::MAX; 3];
    let mut hi = [i32::MIN; 3];
    for k in keys {
        for a in 0..3 {
            lo[a] = lo[a].min(k[a]);
            hi[a] = hi[a].max(k[a] + 1);
        }
    }
    let s = voxel_size;
    Aabb::new(
        Vec3::new(lo[0] as f64 * s, lo[1] as f64 * s, lo[2] as f64 * s),
        Vec3::new(hi[0] as f64 * s, hi[1] as f64 * s, hi[2] as f64 * s),
    )
}

impl SemanticVoxelGrid {
    pub fn new(voxel_size: f64) -> Self {
        Self { voxel_size, cells: HashMap::new() }
    }

    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    pub fn cell(&self, key: &VoxelKey) -> Option<&VoxelCell> {
        self.cells.get(key)
    }

    pub fn keys(&self) -> impl Iterator<Item = &VoxelKey> {
        self.cells.keys()
    }

    pub fn accumulate(&mut self, cloud: &[LabeledPoint]) {
        for p in cloud {
            self.cells.entry(voxel_key(&p.position, self.voxel_size)).or_default().add(&p.probs);
        }
    }

    pub fn merge(&mut self, other: &SemanticVoxelGrid) {
        for (k, c) in &other.cells {
            self.cells.entry(*k).or_default().merge(c);
        }
    }

    /// Lifts and accumulates the views in parallel; partial grids are merged
    /// by summing, which gives the same result as sequential accumulation.
    pub fn from_views<'a, I>(views: I, voxel_size: f64, stride: u32) -> Self
    where
        I: IntoParallelIterator<Item = &'a ViewObservation>,
    {
        views
            .into_par_iter()
            .fold(
                || SemanticVoxelGrid::new(voxel_size),
                |mut g, v| {
                    g.accumulate(&lift_view(v, stride));
                    g
                },
            )
            .reduce(
                || SemanticVoxelGrid::new(voxel_size),
                |mut a, b| {
                    if a.len() < b.len() {
                        let mut b = b;
                        b.merge(&a);
                        return b;
                    }
                    a.merge(&b);
                    a
                },
            )
    }

    /// Per-voxel argmax; void voxels are dropped.
    pub fn finalize_labels(&self) -> BTreeMap<VoxelKey, u16> {
        self.cells
            .iter()
            .map(|(k, c)| (*k, c.argmax()))
            .filter(|&(_, c)| c != VOID)
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Object3D {
    pub id: u32,
    pub class: u16,
    pub center: Vec3,
    pub extent: Vec3,
    pub centroid: Vec3,
    pub n_voxels: usize,
    #[serde(default)]
    pub voxels: Vec<VoxelKey>,
}

impl Object3D {
    fn from_voxels(id: u32, class: u16, mut voxels: Vec<VoxelKey>, voxel_size: f64) -> Self {
        voxels.sort_unstable();
        let b = voxel_aabb(&voxels, voxel_size);
        let sum = voxels.iter().fold(Vec3::zeros(), |acc, &k| acc + voxel_center(k, voxel_size));
        Self {
            id,
            class,
            center: b.center(),
            extent: b.extent(),
            centroid: sum / voxels.len() as f64,
            n_voxels: voxels.len(),
            voxels,
        }
    }

    pub fn aabb(&self) -> Aabb {
        Aabb::from_center_extent(self.center, self.extent)
    }
}

/// Connected components of same-class voxels. Stuff classes are skipped and
/// components smaller than `min_voxels` dropped. Ids follow the order of
/// each component's smallest voxel key.
pub fn extract_instances(labels: &BTreeMap<VoxelKey, u16>, params: &FusionParams) -> Vec<Object3D> {
    let offsets = params.connectivity.offsets();
    let mut seen: BTreeSet<VoxelKey> = BTreeSet::new();
    let mut comps: Vec<(u16, Vec<VoxelKey>)> = Vec::new();
    for (&start, &class) in labels {
        if params.stuff_classes.contains(&class) || seen.contains(&start) {
            continue;
        }
        let mut members = vec![start];
        let mut queue = VecDeque::from([start]);
        seen.insert(start);
        while let Some(k) = queue.pop_front() {
            for o in &offsets {
                let n = [k[0] + o[0], k[1] + o[1], k[2] + o[2]];
                if labels.get(&n) == Some(&class) && seen.insert(n) {
                    members.push(n);
                    queue.push_back(n);
                }
            }
        }
        if members.len() >= params.min_voxels {
            comps.push((class, members));
        }
    }
    comps
        .into_iter()
        .enumerate()
        .map(|(i, (class, voxels))| Object3D::from_voxels(i as u32, class, voxels, params.voxel_size))
        .collect()
}

/// Identifies one 2D instance: panorama node, view index, per-view id.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ViewInstance {
    pub node: u32,
    pub view: u32,
    pub instance: u32,
}

/// Nested `node -> view -> instance -> object id`.
pub type ViewMap = BTreeMap<u32, BTreeMap<u32, BTreeMap<u32, u32>>>;

pub fn view_map_get(map: &ViewMap, vi: ViewInstance) -> Option<u32> {
    map.get(&vi.node)?.get(&vi.view)?.get(&vi.instance).copied()
}

/// Points of each 2D instance in a view, keyed by instance id.
fn instance_points(view: &ViewObservation, stride: u32) -> BTreeMap<u32, Vec<LabeledPoint>> {
    let mut out: BTreeMap<u32, Vec<LabeledPoint>> = BTreeMap::new();
    for p in lift_view(view, stride) {
        if p.instance != 0 {
            out.entry(p.instance).or_default().push(p);
        }
    }
    out
}

/// The single-view baseline: every 2D instance of the view becomes its own
/// object with the argmax of its mean probabilities and the tight voxel box
/// of its points. Instances whose argmax is a stuff class are skipped.
pub fn single_view_objects(view: &ViewObservation, params: &FusionParams) -> Vec<Object3D> {
    let mut out = Vec::new();
    for (_, points) in instance_points(view, params.stride) {
        let mut cell = VoxelCell::default();
        let mut voxels = BTreeSet::new();
        for p in &points {
            cell.add(&p.probs);
            voxels.insert(voxel_key(&p.position, params.voxel_size));
        }
        let class = cell.argmax();
        if class == VOID || params.stuff_classes.contains(&class) {
            continue;
        }
        let id = out.len() as u32;
        out.push(Object3D::from_voxels(id, class, voxels.into_iter().collect(), params.voxel_size));
    }
    out
}

/// Single-view objects of every view of a scene, renumbered in node and
/// view order.
pub fn single_view_scene(nodes: &[PanoramaNode], params: &FusionParams) -> Vec<Object3D> {
    let per_view: Vec<Vec<Object3D>> =
        nodes.par_iter().flat_map_iter(|n| n.views.iter().map(|v| single_view_objects(v, params))).collect();
    let mut out: Vec<Object3D> = per_view.into_iter().flatten().collect();
    for (i, o) in out.iter_mut().enumerate() {
        o.id = i as u32;
    }
    out
}

/// Maps each 2D instance to the fused object owning the plurality of its
/// points' voxels, if that share reaches `map_threshold`. Ties go to the
/// lower object id.
pub fn map_2d_to_3d(nodes: &[PanoramaNode], objects: &[Object3D], params: &FusionParams) -> ViewMap {
    let mut owner: HashMap<VoxelKey, u32> = HashMap::new();
    for o in objects {
        for k in &o.voxels {
            owner.insert(*k, o.id);
        }
    }
    let entries: Vec<(ViewInstance, u32)> = nodes
        .par_iter()
        .flat_map_iter(|node| {
            let owner = &owner;
            node.views.iter().enumerate().flat_map(move |(k, view)| {
                instance_points(view, params.stride).into_iter().filter_map(move |(inst, points)| {
                    let mut votes: BTreeMap<u32, usize> = BTreeMap::new();
                    for p in &points {
                        if let Some(&o) = owner.get(&voxel_key(&p.position, params.voxel_size)) {
                            *votes.entry(o).or_default() += 1;
                        }
                    }
                    let (&best, &n) = votes.iter().max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(a.0)))?;
                    (n as f64 >= params.map_threshold * points.len() as f64)
                        .then_some((ViewInstance { node: node.id, view: k as u32, instance: inst }, best))
                })
            })
        })
        .collect();
    let mut map = ViewMap::new();
    for (vi, o) in entries {
        map.entry(vi.node).or_default().entry(vi.view).or_default().insert(vi.instance, o);
    }
    map
}

#[derive(Debug, Clone)]
pub struct FusionOutput {
    pub objects: Vec<Object3D>,
    pub view_map: ViewMap,
    pub labels: BTreeMap<VoxelKey, u16>,
}

pub fn fuse_scene(nodes: &[PanoramaNode], params: &FusionParams) -> FusionOutput {
    let views: Vec<&ViewObservation> = nodes.iter().flat_map(|n| n.views.iter()).collect();
    let grid = SemanticVoxelGrid::from_views(views, params.voxel_size, params.stride);
    let labels = grid.finalize_labels();
    let objects = extract_instances(&labels, params);
    let view_map = map_2d_to_3d(nodes, &objects, params);
    FusionOutput { objects, view_map, labels }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LabelAccuracy {
    pub accuracy: f64,
    pub correct: usize,
    pub matched: usize,
    pub predicted: usize,
    /// Set when there were no predictions, making the accuracy undefined.
    pub undefined: bool,
}

pub const MATCH_IOU: f64 = 0.1;

/// Each prediction is matched to the ground-truth box with the largest IoU
/// (lowest id on ties) if that IoU reaches [`MATCH_IOU`]; accuracy is the
/// share of matched predictions with the right class.
pub fn label_accuracy(objects: &[Object3D], truth: &SceneTruth) -> LabelAccuracy {
    let mut correct = 0;
    let mut matched = 0;
    for o in objects {
        let b = o.aabb();
        let mut best: Option<(f64, u16)> = None;
        for t in &truth.objects {
            let iou = b.iou(&t.aabb());
            if best.is_none_or(|(bi, _)| iou > bi) {
                best = Some((iou, t.class));
            }
        }
        if let Some((iou, class)) = best {
            if iou >= MATCH_IOU {
                matched += 1;
                correct += (class == o.class) as usize;
            }
        }
    }
    LabelAccuracy {
        accuracy: if matched == 0 { 0.0 } else { correct as f64 / matched as f64 },
        correct,
        matched,
        predicted: objects.len(),
        undefined: objects.is_empty(),
    }
}
