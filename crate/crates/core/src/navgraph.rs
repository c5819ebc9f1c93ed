//! Navigation graph construction over a navigability field.

use std::cmp::Ordering;
use std::collections::{BinaryHeap, HashMap, VecDeque};
use std::f64::consts::SQRT_2;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{pixel_ray, project, CameraIntrinsics, Pose, Vec3};
use crate::scene::{CellRef, NavigabilityField, PanoramaNode};
use crate::synth::Renderer;

#[derive(Debug, Error, PartialEq)]
pub enum GraphError {
    #[error("invalid graph parameters: {0}")]
    InvalidParams(String),
    #[error("position ({x:.3}, {y:.3}, {z:.3}) is outside the field")]
    OutOfBounds { x: f64, y: f64, z: f64 },
    #[error("field has no navigable cell near ({x:.3}, {y:.3}, {z:.3})")]
    NoNavigableCell { x: f64, y: f64, z: f64 },
    #[error("all floors must share one cell size")]
    MixedCellSize,
    #[error("malformed graph: {0}")]
    Malformed(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GraphParams {
    pub sample_count: usize,
    pub min_node_spacing: f64,
    pub max_edge_geodesic: f64,
    pub min_visibility_depth: f64,
    pub coverage_radius: f64,
    /// Side of the square depth window used by the visibility test, radians.
    pub visibility_window: f64,
    /// The window is sampled on a `visibility_samples`² grid.
    pub visibility_samples: u32,
    /// Require the visibility test in both directions.
    pub symmetric_visibility: bool,
}

impl Default for GraphParams {
    fn default() -> Self {
        Self {
            sample_count: 20_000,
            min_node_spacing: 2.0,
            max_edge_geodesic: 3.0,
            min_visibility_depth: 2.0,
            coverage_radius: 2.0,
            visibility_window: 20f64.to_radians(),
            visibility_samples: 9,
            symmetric_visibility: true,
        }
    }
}

impl GraphParams {
    pub fn validate(&self) -> Result<(), GraphError> {
        let positive = [
            ("min_node_spacing", self.min_node_spacing),
            ("max_edge_geodesic", self.max_edge_geodesic),
            ("min_visibility_depth", self.min_visibility_depth),
            ("coverage_radius", self.coverage_radius),
            ("visibility_window", self.visibility_window),
        ];
        for (name, v) in positive {
            if !(v > 0.0) {
                return Err(GraphError::InvalidParams(format!("{name} must be positive, got {v}")));
            }
        }
        if self.sample_count == 0 || self.visibility_samples == 0 {
            return Err(GraphError::InvalidParams("sample counts must be positive".into()));
        }
        if self.min_node_spacing > self.max_edge_geodesic {
            return Err(GraphError::InvalidParams("min_node_spacing exceeds max_edge_geodesic".into()));
        }
        if self.visibility_window >= std::f64::consts::PI {
            return Err(GraphError::InvalidParams("visibility_window must be below pi".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GraphNode {
    pub id: u32,
    pub xyz: Vec3,
}

/// Undirected graph whose node ids are their indices.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NavGraph {
    pub nodes: Vec<GraphNode>,
    /// `(i, j, w)` with `i < j`, sorted.
    pub edges: Vec<(u32, u32, f64)>,
    #[serde(skip)]
    adjacency: Vec<Vec<(u32, f64)>>,
}

impl NavGraph {
    pub fn new(positions: Vec<Vec3>, edges: Vec<(u32, u32, f64)>) -> Result<Self, GraphError> {
        let nodes = positions.into_iter().enumerate().map(|(i, xyz)| GraphNode { id: i as u32, xyz }).collect();
        Self::from_parts(nodes, edges)
    }

    pub fn from_parts(nodes: Vec<GraphNode>, mut edges: Vec<(u32, u32, f64)>) -> Result<Self, GraphError> {
        for (i, n) in nodes.iter().enumerate() {
            if n.id as usize != i {
                return Err(GraphError::Malformed(format!("node at index {i} has id {}", n.id)));
            }
            if n.xyz.iter().any(|c| !c.is_finite()) {
                return Err(GraphError::Malformed(format!("node {i} has a non-finite position")));
            }
        }
        let n = nodes.len() as u32;
        for e in edges.iter_mut() {
            if e.0 == e.1 {
                return Err(GraphError::Malformed(format!("self-loop on node {}", e.0)));
            }
            if e.0 >= n || e.1 >= n {
                return Err(GraphError::Malformed(format!("edge ({}, {}) references a missing node", e.0, e.1)));
            }
            if !(e.2 >= 0.0) || !e.2.is_finite() {
                return Err(GraphError::Malformed(format!("edge ({}, {}) has weight {}", e.0, e.1, e.2)));
            }
            if e.0 > e.1 {
                std::mem::swap(&mut e.0, &mut e.1);
            }
        }
        edges.sort_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)));
        if edges.windows(2).any(|w| (w[0].0, w[0].1) == (w[1].0, w[1].1)) {
            return Err(GraphError::Malformed("duplicate edge".into()));
        }
        let mut g = Self { nodes, edges, adjacency: Vec::new() };
        g.rebuild_adjacency();
        Ok(g)
    }

    fn rebuild_adjacency(&mut self) {
        let mut adj = vec![Vec::new(); self.nodes.len()];
        for &(i, j, w) in &self.edges {
            adj[i as usize].push((j, w));
            adj[j as usize].push((i, w));
        }
        for a in &mut adj {
            a.sort_by_key(|&(j, _)| j);
        }
        self.adjacency = adj;
    }

    pub fn from_json(text: &str) -> Result<Self, GraphError> {
        #[derive(Deserialize)]
        #[serde(deny_unknown_fields)]
        struct Raw {
            nodes: Vec<GraphNode>,
            edges: Vec<(u32, u32, f64)>,
        }
        let raw: Raw = serde_json::from_str(text).map_err(|e| GraphError::Malformed(e.to_string()))?;
        Self::from_parts(raw.nodes, raw.edges)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("graph serializes")
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn position(&self, id: u32) -> Vec3 {
        self.nodes[id as usize].xyz
    }

    pub fn contains(&self, id: u32) -> bool {
        (id as usize) < self.nodes.len()
    }

    /// Neighbours sorted by id, with edge weights.
    pub fn neighbors(&self, id: u32) -> &[(u32, f64)] {
        &self.adjacency[id as usize]
    }

    pub fn edge_weight(&self, a: u32, b: u32) -> Option<f64> {
        if !self.contains(a) {
            return None;
        }
        self.adjacency[a as usize].iter().find(|&&(j, _)| j == b).map(|&(_, w)| w)
    }

    /// Unweighted hop distance from the nearest source, `None` if unreachable.
    pub fn hop_distances(&self, sources: &[u32]) -> Vec<Option<u32>> {
        let mut dist = vec![None; self.len()];
        let mut queue = VecDeque::new();
        for &s in sources {
            if dist[s as usize].is_none() {
                dist[s as usize] = Some(0);
                queue.push_back(s);
            }
        }
        while let Some(u) = queue.pop_front() {
            let d = dist[u as usize].unwrap();
            for &(v, _) in self.neighbors(u) {
                if dist[v as usize].is_none() {
                    dist[v as usize] = Some(d + 1);
                    queue.push_back(v);
                }
            }
        }
        dist
    }

    /// Weighted shortest distances from `source` along graph edges.
    pub fn shortest_distances(&self, source: u32) -> Vec<f64> {
        let mut dist = vec![f64::INFINITY; self.len()];
        let mut heap = BinaryHeap::new();
        dist[source as usize] = 0.0;
        heap.push(MinItem(0.0, source));
        while let Some(MinItem(d, u)) = heap.pop() {
            if d > dist[u as usize] {
                continue;
            }
            for &(v, w) in self.neighbors(u) {
                let nd = d + w;
                if nd < dist[v as usize] {
                    dist[v as usize] = nd;
                    heap.push(MinItem(nd, v));
                }
            }
        }
        dist
    }

    /// Connected components, each sorted, ordered by smallest member.
    pub fn components(&self) -> Vec<Vec<u32>> {
        let mut seen = vec![false; self.len()];
        let mut out = Vec::new();
        for s in 0..self.len() as u32 {
            if seen[s as usize] {
                continue;
            }
            let hops = self.hop_distances(&[s]);
            let comp: Vec<u32> = (0..self.len() as u32).filter(|&v| hops[v as usize].is_some()).collect();
            for &v in &comp {
                seen[v as usize] = true;
            }
            out.push(comp);
        }
        out
    }

    /// Walk length along edges; `None` if two consecutive ids are not adjacent.
    pub fn path_length(&self, path: &[u32]) -> Option<f64> {
        let mut total = 0.0;
        for w in path.windows(2) {
            total += self.edge_weight(w[0], w[1])?;
        }
        Some(total)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct MinItem(f64, u32);

impl Eq for MinItem {}

impl Ord for MinItem {
    fn cmp(&self, other: &Self) -> Ordering {
        other.0.total_cmp(&self.0).then_with(|| other.1.cmp(&self.1))
    }
}

impl PartialOrd for MinItem {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Uniform over navigable area: a navigable cell is drawn uniformly, then
/// the point is jittered uniformly within it. Points sit at eye height.
pub fn sample_navigable<R: Rng + ?Sized>(field: &NavigabilityField, n: usize, rng: &mut R) -> Vec<Vec3> {
    let cells = field.navigable_cells();
    if cells.is_empty() {
        return Vec::new();
    }
    (0..n)
        .map(|_| {
            let c = cells[rng.gen_range(0..cells.len())];
            let f = &field.floors[c.floor];
            let x = f.origin[0] + (c.x as f64 + rng.gen::<f64>()) * f.cell_size;
            let y = f.origin[1] + (c.y as f64 + rng.gen::<f64>()) * f.cell_size;
            Vec3::new(x, y, f.floor_z + field.eye_height)
        })
        .collect()
}

/// Greedy node placement. The seed is the candidate nearest `anchor`; each
/// round discards candidates closer than the spacing to any node and adds
/// the one nearest to the existing nodes. Ties go to the lowest index.
/// Returns candidate indices in insertion order.
pub fn build_nodes(candidates: &[Vec3], anchor: Vec3, min_spacing: f64) -> Vec<usize> {
    if candidates.is_empty() {
        return Vec::new();
    }
    let mut seed = 0;
    let mut best = f64::INFINITY;
    for (i, c) in candidates.iter().enumerate() {
        let d = (c - anchor).norm();
        if d < best {
            best = d;
            seed = i;
        }
    }
    let mut dmin = vec![f64::INFINITY; candidates.len()];
    let mut alive = vec![true; candidates.len()];
    let mut order = vec![seed];
    let mut last = seed;
    loop {
        alive[last] = false;
        let p = candidates[last];
        let mut next: Option<usize> = None;
        for i in 0..candidates.len() {
            if !alive[i] {
                continue;
            }
            let d = (candidates[i] - p).norm();
            if d < dmin[i] {
                dmin[i] = d;
            }
            if dmin[i] < min_spacing {
                alive[i] = false;
                continue;
            }
            if next.is_none_or(|n| dmin[i] < dmin[n]) {
                next = Some(i);
            }
        }
        match next {
            Some(n) => {
                order.push(n);
                last = n;
            }
            None => return order,
        }
    }
}

/// Path cost on the grid lattice: `straight` unit steps, `diagonal` √2 steps
/// and the summed length of stair links. Keeping the counts instead of a
/// running float sum makes the result independent of path order.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
struct LatticeCost {
    straight: u32,
    diagonal: u32,
    stairs: f64,
}

impl LatticeCost {
    fn meters(&self, cell: f64) -> f64 {
        (self.straight as f64 + self.diagonal as f64 * SQRT_2) * cell + self.stairs
    }
}

#[derive(Debug, Clone, Copy)]
struct HeapEntry {
    meters: f64,
    cost: LatticeCost,
    cell: CellRef,
}

impl PartialEq for HeapEntry {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for HeapEntry {}

impl Ord for HeapEntry {
    fn cmp(&self, other: &Self) -> Ordering {
        other.meters.total_cmp(&self.meters).then_with(|| other.cell.cmp(&self.cell))
    }
}

impl PartialOrd for HeapEntry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Grid geodesics on a navigability field: 8-connected, no corner cutting
/// past blocked cells, stairs as extra edges.
pub struct GeodesicGrid<'a> {
    field: &'a NavigabilityField,
    cell: f64,
    stairs: HashMap<CellRef, Vec<(CellRef, f64)>>,
}

impl<'a> GeodesicGrid<'a> {
    pub fn new(field: &'a NavigabilityField) -> Result<Self, GraphError> {
        let cell = field.floors.first().map_or(1.0, |f| f.cell_size);
        if field.floors.iter().any(|f| f.cell_size != cell) {
            return Err(GraphError::MixedCellSize);
        }
        let mut stairs: HashMap<CellRef, Vec<(CellRef, f64)>> = HashMap::new();
        for s in &field.stairs {
            stairs.entry(s.from).or_default().push((s.to, s.length));
            stairs.entry(s.to).or_default().push((s.from, s.length));
        }
        Ok(Self { field, cell, stairs })
    }

    pub fn field(&self) -> &NavigabilityField {
        self.field
    }

    /// Nearest navigable cell to a world position on its floor.
    pub fn snap(&self, p: &Vec3) -> Result<CellRef, GraphError> {
        let oob = GraphError::OutOfBounds { x: p.x, y: p.y, z: p.z };
        let c = self.field.locate(p).ok_or(oob)?;
        self.field.nearest_navigable(c).ok_or(GraphError::NoNavigableCell { x: p.x, y: p.y, z: p.z })
    }

    fn navigable(&self, floor: usize, x: i64, y: i64) -> bool {
        let f = &self.field.floors[floor];
        x >= 0 && y >= 0 && (x as usize) < f.width && (y as usize) < f.height && f.navigable[f.index(x as usize, y as usize)]
    }

    fn for_each_step(&self, c: CellRef, mut visit: impl FnMut(CellRef, LatticeCost)) {
        let (x, y) = (c.x as i64, c.y as i64);
        for dy in -1i64..=1 {
            for dx in -1i64..=1 {
                if dx == 0 && dy == 0 {
                    continue;
                }
                let (nx, ny) = (x + dx, y + dy);
                if !self.navigable(c.floor, nx, ny) {
                    continue;
                }
                let diagonal = dx != 0 && dy != 0;
                if diagonal && !(self.navigable(c.floor, x + dx, y) && self.navigable(c.floor, x, y + dy)) {
                    continue;
                }
                let step = if diagonal {
                    LatticeCost { diagonal: 1, ..Default::default() }
                } else {
                    LatticeCost { straight: 1, ..Default::default() }
                };
                visit(CellRef { floor: c.floor, x: nx as usize, y: ny as usize }, step);
            }
        }
        if let Some(links) = self.stairs.get(&c) {
            for &(to, len) in links {
                visit(to, LatticeCost { stairs: len, ..Default::default() });
            }
        }
    }

    /// Dijkstra from `source`, settling cells whose distance is below
    /// `limit` (all reachable cells for an infinite limit). Stops early once
    /// `target` is settled.
    fn search(&self, source: CellRef, limit: f64, target: Option<CellRef>) -> HashMap<CellRef, f64> {
        let mut best: HashMap<CellRef, LatticeCost> = HashMap::new();
        let mut settled: HashMap<CellRef, f64> = HashMap::new();
        let mut heap = BinaryHeap::new();
        best.insert(source, LatticeCost::default());
        heap.push(HeapEntry { meters: 0.0, cost: LatticeCost::default(), cell: source });
        while let Some(HeapEntry { meters, cost, cell }) = heap.pop() {
            if meters >= limit || settled.contains_key(&cell) {
                if meters >= limit {
                    break;
                }
                continue;
            }
            settled.insert(cell, meters);
            if Some(cell) == target {
                break;
            }
            self.for_each_step(cell, |next, step| {
                if settled.contains_key(&next) {
                    return;
                }
                let nc = LatticeCost {
                    straight: cost.straight + step.straight,
                    diagonal: cost.diagonal + step.diagonal,
                    stairs: cost.stairs + step.stairs,
                };
                let nm = nc.meters(self.cell);
                let improves = best.get(&next).is_none_or(|b| nm < b.meters(self.cell));
                if improves {
                    best.insert(next, nc);
                    heap.push(HeapEntry { meters: nm, cost: nc, cell: next });
                }
            });
        }
        settled
    }

    pub fn distance_between_cells(&self, a: CellRef, b: CellRef) -> Option<f64> {
        self.search(a, f64::INFINITY, Some(b)).get(&b).copied()
    }

    /// Geodesic between two positions, `Ok(None)` when unreachable.
    pub fn distance(&self, a: &Vec3, b: &Vec3) -> Result<Option<f64>, GraphError> {
        let (ca, cb) = (self.snap(a)?, self.snap(b)?);
        Ok(self.distance_between_cells(ca, cb))
    }

    /// Distances from `source` to every cell closer than `limit`.
    pub fn distances_within(&self, source: CellRef, limit: f64) -> HashMap<CellRef, f64> {
        self.search(source, limit, None)
    }
}

pub fn geodesic_distance(field: &NavigabilityField, a: &Vec3, b: &Vec3) -> Result<Option<f64>, GraphError> {
    GeodesicGrid::new(field)?.distance(a, b)
}

/// Anything that can report the mean planar depth seen from one position
/// toward another.
pub trait DepthProbe: Sync {
    /// Mean planar depth over a square `fov` window centred on the bearing
    /// from `from` to `to`, sampled on a `samples`² grid; `None` when the
    /// source cannot observe from `from`.
    fn mean_depth_toward(&self, from: Vec3, to: Vec3, fov: f64, samples: u32) -> Option<f64>;
}

impl DepthProbe for Renderer {
    fn mean_depth_toward(&self, from: Vec3, to: Vec3, fov: f64, samples: u32) -> Option<f64> {
        Some(Renderer::mean_depth_toward(self, from, to, fov, samples))
    }
}

/// Depth probe reading the stored panoramas of a bundle. Observation is
/// only possible from a node position.
pub struct StoredViews<'a> {
    pub nodes: &'a [PanoramaNode],
}

impl StoredViews<'_> {
    fn depth_along(node: &PanoramaNode, dir: &Vec3) -> Option<f64> {
        let mut best: Option<(f64, usize)> = None;
        for (k, v) in node.views.iter().enumerate() {
            let c = dir.dot(&v.pose.forward());
            if c > 0.0 && best.is_none_or(|(b, _)| c > b) {
                best = Some((c, k));
            }
        }
        let (cos, k) = best?;
        let view = &node.views[k];
        let p = project(&(node.position + dir), &view.intrinsics, &view.pose)?;
        let col = (p.u.floor() as i64).clamp(0, view.intrinsics.width as i64 - 1) as u32;
        let row = (p.v.floor() as i64).clamp(0, view.intrinsics.height as i64 - 1) as u32;
        let planar = view.depth[view.pixel_index(col, row)] as f64;
        Some(planar / cos)
    }
}

impl DepthProbe for StoredViews<'_> {
    fn mean_depth_toward(&self, from: Vec3, to: Vec3, fov: f64, samples: u32) -> Option<f64> {
        let node = self.nodes.iter().find(|n| (n.position - from).norm() < 1e-6)?;
        let pose = Pose::looking_at(from, to);
        let intr = CameraIntrinsics { width: samples, height: samples, hfov: fov };
        let mut sum = 0.0;
        for row in 0..samples {
            for col in 0..samples {
                let ray = pixel_ray(col as f64 + 0.5, row as f64 + 0.5, &intr, &pose);
                let len = ray.norm();
                // planar depth in the window camera = range / |ray|
                sum += Self::depth_along(node, &(ray / len))? / len;
            }
        }
        Some(sum / (samples * samples) as f64)
    }
}

pub fn visibility_check(probe: &dyn DepthProbe, a: Vec3, b: Vec3, params: &GraphParams) -> bool {
    let one = |from: Vec3, to: Vec3| {
        probe
            .mean_depth_toward(from, to, params.visibility_window, params.visibility_samples)
            .is_some_and(|d| d > params.min_visibility_depth)
    };
    one(a, b) && (!params.symmetric_visibility || one(b, a))
}

/// Edge `(i, j)` iff the grid geodesic between the nodes' cells is below
/// `max_edge_geodesic` and the visibility test passes.
pub fn connect_edges(
    positions: &[Vec3],
    field: &NavigabilityField,
    probe: &dyn DepthProbe,
    params: &GraphParams,
) -> Result<NavGraph, GraphError> {
    let grid = GeodesicGrid::new(field)?;
    let cells: Vec<CellRef> = positions.iter().map(|p| grid.snap(p)).collect::<Result<_, _>>()?;
    let mut edges: Vec<(u32, u32, f64)> = (0..positions.len())
        .into_par_iter()
        .flat_map_iter(|i| {
            let reach = grid.distances_within(cells[i], params.max_edge_geodesic);
            let mut out = Vec::new();
            for j in i + 1..positions.len() {
                let Some(&d) = reach.get(&cells[j]) else { continue };
                if d < params.max_edge_geodesic && visibility_check(probe, positions[i], positions[j], params) {
                    out.push((i as u32, j as u32, d));
                }
            }
            out
        })
        .collect();
    edges.sort_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)));
    NavGraph::new(positions.to_vec(), edges)
}

/// Fraction of navigable cells whose centre lies within `radius` of a node
/// on the same floor (horizontal distance).
pub fn coverage(graph: &NavGraph, field: &NavigabilityField, radius: f64) -> f64 {
    let total = field.navigable_count();
    if total == 0 || graph.is_empty() {
        return 0.0;
    }
    let mut per_floor: Vec<Vec<(f64, f64)>> = vec![Vec::new(); field.floors.len()];
    for n in &graph.nodes {
        if let Some(f) = field.floor_for_z(n.xyz.z) {
            per_floor[f].push((n.xyz.x, n.xyz.y));
        }
    }
    let r2 = radius * radius;
    let covered: usize = field
        .floors
        .par_iter()
        .enumerate()
        .map(|(fi, f)| {
            let nodes = &per_floor[fi];
            let mut count = 0;
            for y in 0..f.height {
                for x in 0..f.width {
                    if !f.navigable[f.index(x, y)] {
                        continue;
                    }
                    let (cx, cy) = f.cell_center_xy(x, y);
                    if nodes.iter().any(|&(nx, ny)| (nx - cx).powi(2) + (ny - cy).powi(2) <= r2) {
                        count += 1;
                    }
                }
            }
            count
        })
        .sum();
    covered as f64 / total as f64
}

/// Full construction: sample, place nodes greedily from the centre of the
/// navigable area, connect.
pub fn build_graph<R: Rng + ?Sized>(
    field: &NavigabilityField,
    probe: &dyn DepthProbe,
    params: &GraphParams,
    rng: &mut R,
) -> Result<NavGraph, GraphError> {
    params.validate()?;
    field.validate().map_err(GraphError::InvalidParams)?;
    let candidates = sample_navigable(field, params.sample_count, rng);
    let order = build_nodes(&candidates, field.navigable_centroid(), params.min_node_spacing);
    let positions: Vec<Vec3> = order.iter().map(|&i| candidates[i]).collect();
    connect_edges(&positions, field, probe, params)
}
