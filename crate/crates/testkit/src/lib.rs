//! Independent oracles for cross-checking forge-core.
//!
//! Everything here works on plain arrays and is written the slow, obvious
//! way. Nothing is shared with the library under test.

use std::collections::{BTreeMap, BTreeSet};

pub type P3 = [f64; 3];

fn sub(a: P3, b: P3) -> P3 {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

fn dot(a: P3, b: P3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

pub fn dist(a: P3, b: P3) -> f64 {
    dot(sub(a, b), sub(a, b)).sqrt()
}

/// Smallest pairwise distance, with the pair. `None` for fewer than two
/// points.
pub fn min_pairwise(points: &[P3]) -> Option<(f64, usize, usize)> {
    let mut best: Option<(f64, usize, usize)> = None;
    for i in 0..points.len() {
        for j in i + 1..points.len() {
            let d = dist(points[i], points[j]);
            if best.is_none_or(|b| d < b.0) {
                best = Some((d, i, j));
            }
        }
    }
    best
}

#[derive(PartialEq)]
struct Entry(f64, usize);

impl Eq for Entry {}

impl PartialOrd for Entry {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Entry {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        // min-heap on distance
        other.0.partial_cmp(&self.0).unwrap().then(other.1.cmp(&self.1))
    }
}

/// Geodesic on a single-floor grid by textbook Dijkstra over cells,
/// summing float step lengths. 8-connected; a diagonal step needs both
/// orthogonal neighbours free. Cells are `(x, y)`, row-major
/// `navigable[y * w + x]`.
pub fn grid_geodesic(navigable: &[bool], w: usize, h: usize, cell: f64, a: (usize, usize), b: (usize, usize)) -> Option<f64> {
    let idx = |x: usize, y: usize| y * w + x;
    if !navigable[idx(a.0, a.1)] || !navigable[idx(b.0, b.1)] {
        return None;
    }
    let free = |x: i64, y: i64| x >= 0 && y >= 0 && x < w as i64 && y < h as i64 && navigable[idx(x as usize, y as usize)];
    let mut d = vec![f64::INFINITY; w * h];
    let mut heap = std::collections::BinaryHeap::new();
    d[idx(a.0, a.1)] = 0.0;
    heap.push(Entry(0.0, idx(a.0, a.1)));
    while let Some(Entry(du, u)) = heap.pop() {
        if du > d[u] {
            continue;
        }
        if u == idx(b.0, b.1) {
            return Some(du);
        }
        let (ux, uy) = ((u % w) as i64, (u / w) as i64);
        for dy in -1i64..=1 {
            for dx in -1i64..=1 {
                if (dx == 0 && dy == 0) || !free(ux + dx, uy + dy) {
                    continue;
                }
                let diagonal = dx != 0 && dy != 0;
                if diagonal && !(free(ux + dx, uy) && free(ux, uy + dy)) {
                    continue;
                }
                let step = if diagonal { cell * 2f64.sqrt() } else { cell };
                let v = idx((ux + dx) as usize, (uy + dy) as usize);
                if du + step < d[v] {
                    d[v] = du + step;
                    heap.push(Entry(d[v], v));
                }
            }
        }
    }
    None
}

/// Minimum-cost assignment of rows to columns (Kuhn–Munkres with
/// potentials). Rectangular input is padded with zero-cost dummies;
/// returns, for each row, its column or `None` if it got a dummy.
pub fn hungarian(cost: &[Vec<f64>]) -> Vec<Option<usize>> {
    let rows = cost.len();
    let cols = cost.first().map_or(0, Vec::len);
    let n = rows.max(cols);
    let c = |i: usize, j: usize| if i < rows && j < cols { cost[i][j] } else { 0.0 };
    // 1-based arrays, column 0 is the virtual start
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut p = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=n {
                if !used[j] {
                    let cur = c(i0 - 1, j - 1) - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut out = vec![None; rows];
    for j in 1..=n {
        if p[j] >= 1 && p[j] <= rows && j <= cols {
            out[p[j] - 1] = Some(j - 1);
        }
    }
    out
}

/// Intersection over union of two axis-aligned boxes given as min/max.
pub fn box_iou(a: (P3, P3), b: (P3, P3)) -> f64 {
    let vol = |lo: P3, hi: P3| (0..3).map(|k| (hi[k] - lo[k]).max(0.0)).product::<f64>();
    let lo = [a.0[0].max(b.0[0]), a.0[1].max(b.0[1]), a.0[2].max(b.0[2])];
    let hi = [a.1[0].min(b.1[0]), a.1[1].min(b.1[1]), a.1[2].min(b.1[2])];
    let inter = vol(lo, hi);
    let union = vol(a.0, a.1) + vol(b.0, b.1) - inter;
    if union > 0.0 {
        inter / union
    } else {
        0.0
    }
}

/// First positive hit of a ray with a box, by intersecting the six face
/// planes and keeping hits that land on the face.
pub fn ray_box(origin: P3, dir: P3, min: P3, max: P3) -> Option<f64> {
    let inside = |p: P3, skip: usize| (0..3).all(|k| k == skip || (p[k] >= min[k] - 1e-9 && p[k] <= max[k] + 1e-9));
    let mut best: Option<f64> = None;
    for axis in 0..3 {
        if dir[axis] == 0.0 {
            continue;
        }
        for plane in [min[axis], max[axis]] {
            let t = (plane - origin[axis]) / dir[axis];
            if t <= 0.0 {
                continue;
            }
            let p = [origin[0] + t * dir[0], origin[1] + t * dir[1], origin[2] + t * dir[2]];
            if inside(p, axis) && best.is_none_or(|b| t < b) {
                best = Some(t);
            }
        }
    }
    // a ray starting inside the box leaves through a face; that is not an entry
    let start_inside = (0..3).all(|k| origin[k] > min[k] && origin[k] < max[k]);
    if start_inside {
        None
    } else {
        best
    }
}

/// Mean planar depth seen from `from` looking at `to` through a square
/// `samples` x `samples` window of field of view `fov`, by casting every
/// pixel ray against every box. Misses and far hits count as `max_range`.
pub fn mean_depth_window(boxes: &[(P3, P3)], from: P3, to: P3, fov: f64, samples: u32, max_range: f64) -> f64 {
    let d = sub(to, from);
    let heading = d[1].atan2(d[0]);
    let elevation = d[2].atan2((d[0] * d[0] + d[1] * d[1]).sqrt());
    let half = samples as f64 / 2.0;
    let f = half / (fov / 2.0).tan();
    let (se, ce) = elevation.sin_cos();
    let (sh, ch) = heading.sin_cos();
    let mut sum = 0.0;
    for row in 0..samples {
        for col in 0..samples {
            // camera frame (forward 1, left, up), pitched then yawed
            let left = -((col as f64 + 0.5) - half) / f;
            let up = -((row as f64 + 0.5) - half) / f;
            let (fx, fz) = (ce - se * up, se + ce * up);
            let dir = [ch * fx - sh * left, sh * fx + ch * left, fz];
            sum += boxes.iter().filter_map(|b| ray_box(from, dir, b.0, b.1)).fold(max_range, f64::min);
        }
    }
    sum / (samples * samples) as f64
}

/// Pinhole projection with the camera built from explicit rotations: yaw
/// `heading` about +z (0 looks along +x), then pitch `elevation` up.
/// Pixel centres sit at half-integers; returns `(u, v, planar depth)`.
pub fn project(point: P3, cam: P3, heading: f64, elevation: f64, width: u32, height: u32, hfov: f64) -> Option<(f64, f64, f64)> {
    let d = sub(point, cam);
    // undo yaw
    let (s, c) = (-heading).sin_cos();
    let yawed = [c * d[0] - s * d[1], s * d[0] + c * d[1], d[2]];
    // undo pitch (rotation about the camera's left axis, +y after yaw)
    let (s, c) = (-elevation).sin_cos();
    let cam_frame = [c * yawed[0] - s * yawed[2], yawed[1], s * yawed[0] + c * yawed[2]];
    let depth = cam_frame[0];
    if depth <= 1e-12 {
        return None;
    }
    let f = width as f64 / 2.0 / (hfov / 2.0).tan();
    let u = width as f64 / 2.0 - f * cam_frame[1] / depth;
    let v = height as f64 / 2.0 - f * cam_frame[2] / depth;
    Some((u, v, depth))
}

/// World point at planar depth `depth` behind pixel centre `(col, row)`,
/// the inverse of [`project`].
#[allow(clippy::too_many_arguments)]
pub fn unproject(col: u32, row: u32, depth: f64, cam: P3, heading: f64, elevation: f64, width: u32, height: u32, hfov: f64) -> P3 {
    let f = width as f64 / 2.0 / (hfov / 2.0).tan();
    let left = -((col as f64 + 0.5) - width as f64 / 2.0) / f;
    let up = -((row as f64 + 0.5) - height as f64 / 2.0) / f;
    let (se, ce) = elevation.sin_cos();
    let (sh, ch) = heading.sin_cos();
    let (fx, fz) = (ce - se * up, se + ce * up);
    let dir = [ch * fx - sh * left, sh * fx + ch * left, fz];
    [cam[0] + depth * dir[0], cam[1] + depth * dir[1], cam[2] + depth * dir[2]]
}

/// All-pairs shortest path lengths by Floyd–Warshall.
pub fn floyd_warshall(n: usize, edges: &[(u32, u32, f64)]) -> Vec<Vec<f64>> {
    let mut d = vec![vec![f64::INFINITY; n]; n];
    for (i, row) in d.iter_mut().enumerate() {
        row[i] = 0.0;
    }
    for &(a, b, w) in edges {
        let (a, b) = (a as usize, b as usize);
        d[a][b] = d[a][b].min(w);
        d[b][a] = d[b][a].min(w);
    }
    for k in 0..n {
        for i in 0..n {
            for j in 0..n {
                if d[i][k] + d[k][j] < d[i][j] {
                    d[i][j] = d[i][k] + d[k][j];
                }
            }
        }
    }
    d
}

/// All-pairs hop counts by Floyd–Warshall on unit weights.
pub fn all_pairs_hops(n: usize, edges: &[(u32, u32, f64)]) -> Vec<Vec<f64>> {
    let unit: Vec<(u32, u32, f64)> = edges.iter().map(|&(a, b, _)| (a, b, 1.0)).collect();
    floyd_warshall(n, &unit)
}

fn adjacency(n: usize, edges: &[(u32, u32, f64)]) -> Vec<BTreeMap<u32, f64>> {
    let mut adj = vec![BTreeMap::new(); n];
    for &(a, b, w) in edges {
        adj[a as usize].insert(b, w);
        adj[b as usize].insert(a, w);
    }
    adj
}

/// Every simple path from `start` to any of `goals` with at most
/// `max_hops` edges, by depth-first enumeration.
pub fn simple_paths(n: usize, edges: &[(u32, u32, f64)], start: u32, goals: &[u32], max_hops: usize) -> Vec<Vec<u32>> {
    fn go(adj: &[BTreeMap<u32, f64>], path: &mut Vec<u32>, goals: &[u32], max: usize, out: &mut Vec<Vec<u32>>) {
        let last = *path.last().unwrap();
        if goals.contains(&last) {
            out.push(path.clone());
        }
        if path.len() > max {
            return;
        }
        for &next in adj[last as usize].keys() {
            if !path.contains(&next) {
                path.push(next);
                go(adj, path, goals, max, out);
                path.pop();
            }
        }
    }
    let adj = adjacency(n, edges);
    let mut out = Vec::new();
    go(&adj, &mut vec![start], goals, max_hops, &mut out);
    out
}

pub fn path_weight(edges: &[(u32, u32, f64)], path: &[u32]) -> Option<f64> {
    let adj = adjacency(edges.iter().map(|e| e.0.max(e.1) as usize + 1).max().unwrap_or(0), edges);
    path.windows(2).map(|w| adj.get(w[0] as usize).and_then(|m| m.get(&w[1])).copied()).sum()
}

/// The expert path by exhaustive search: fewest hops, then least weight
/// (weights within `eps` count as equal), then lexicographically smallest.
pub fn best_path(n: usize, edges: &[(u32, u32, f64)], start: u32, goals: &[u32], max_hops: usize, eps: f64) -> Option<Vec<u32>> {
    let paths = simple_paths(n, edges, start, goals, max_hops);
    let min_hops = paths.iter().map(Vec::len).min()?;
    let shortest: Vec<&Vec<u32>> = paths.iter().filter(|p| p.len() == min_hops).collect();
    let weights: Vec<f64> = shortest.iter().map(|p| path_weight(edges, p).unwrap()).collect();
    let min_w = weights.iter().cloned().fold(f64::INFINITY, f64::min);
    shortest
        .iter()
        .zip(&weights)
        .filter(|(_, &w)| w <= min_w + eps)
        .map(|(p, _)| (*p).clone())
        .min()
}

/// The node `n != from` minimising `d[from][n] + d[n][goal]`; sums within
/// `eps` of the minimum tie and the lowest id wins.
pub fn two_leg_argmin(d: &[Vec<f64>], from: usize, goal: usize, eps: f64) -> Option<usize> {
    let mut min = f64::INFINITY;
    for n in 0..d.len() {
        if n != from {
            min = min.min(d[from][n] + d[n][goal]);
        }
    }
    if !min.is_finite() {
        return None;
    }
    (0..d.len()).find(|&n| n != from && d[from][n] + d[n][goal] <= min + eps)
}

/// Per-episode metrics computed straight from the definitions.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RefScore {
    pub success: bool,
    pub oracle_success: bool,
    pub spl: f64,
    pub rgs: bool,
    pub rgspl: f64,
}

pub struct RefEpisode<'a> {
    pub positions: &'a [P3],
    pub edges: &'a [(u32, u32, f64)],
    pub expert: &'a [u32],
    pub visited: &'a [u32],
    pub goals: &'a [u32],
    pub grounded: Option<u32>,
    pub target: u32,
    pub radius: f64,
}

pub fn reference_score(e: &RefEpisode) -> RefScore {
    let near = |v: u32| {
        let mut best = f64::INFINITY;
        for &g in e.goals {
            best = best.min(dist(e.positions[v as usize], e.positions[g as usize]));
        }
        best <= e.radius
    };
    let success = near(*e.visited.last().unwrap());
    let mut oracle_success = false;
    for &v in e.visited {
        oracle_success |= near(v);
    }
    let l = path_weight(e.edges, e.expert).unwrap();
    let p = if e.visited.len() == 1 && success { l } else { path_weight(e.edges, e.visited).unwrap() };
    let longer = if p > l { p } else { l };
    let ratio = if longer == 0.0 { 1.0 } else { l / longer };
    let rgs = success && e.grounded == Some(e.target);
    RefScore {
        success,
        oracle_success,
        spl: if success { ratio } else { 0.0 },
        rgs,
        rgspl: if rgs { ratio } else { 0.0 },
    }
}

/// `[sr, osr, spl, rgs, rgspl]` as percentages rounded to two decimals.
pub fn reference_aggregate(scores: &[RefScore]) -> [f64; 5] {
    let n = scores.len() as f64;
    let mut sums = [0.0; 5];
    for s in scores {
        sums[0] += if s.success { 1.0 } else { 0.0 };
        sums[1] += if s.oracle_success { 1.0 } else { 0.0 };
        sums[2] += s.spl;
        sums[3] += if s.rgs { 1.0 } else { 0.0 };
        sums[4] += s.rgspl;
    }
    sums.map(|x| (x / n * 100.0 * 100.0).round() / 100.0)
}

/// Fraction of navigable cell centres within `radius` of some node, by
/// checking every cell against every node. Cells are `(x, y)` centres.
pub fn coverage(cells: &[(f64, f64)], nodes: &[(f64, f64)], radius: f64) -> f64 {
    if cells.is_empty() {
        return 0.0;
    }
    let hit = cells
        .iter()
        .filter(|c| nodes.iter().any(|n| ((n.0 - c.0).powi(2) + (n.1 - c.1).powi(2)).sqrt() <= radius))
        .count();
    hit as f64 / cells.len() as f64
}

/// Standard score of `k` successes in `n` Bernoulli(`p`) trials.
pub fn binomial_z(k: u64, n: u64, p: f64) -> f64 {
    let mean = n as f64 * p;
    let sd = (n as f64 * p * (1.0 - p)).sqrt();
    (k as f64 - mean) / sd
}

/// Pearson chi-square statistic of observed counts against expected
/// probabilities.
pub fn chi_square(observed: &[u64], expected: &[f64]) -> f64 {
    let n: u64 = observed.iter().sum();
    observed
        .iter()
        .zip(expected)
        .filter(|(_, &p)| p > 0.0)
        .map(|(&o, &p)| {
            let e = n as f64 * p;
            (o as f64 - e).powi(2) / e
        })
        .sum()
}

/// Instruction statistics straight from the definitions: lowercase
/// whitespace-separated words stripped of leading and trailing ASCII
/// punctuation; vocabulary counts words seen more than five times.
pub fn reference_stats(scenes: &[&str], objects: &[(String, u32)], instructions: &[&str]) -> (usize, usize, usize, usize, f64) {
    let envs: BTreeSet<&str> = scenes.iter().copied().collect();
    let objs: BTreeSet<&(String, u32)> = objects.iter().collect();
    let mut counts: BTreeMap<String, usize> = BTreeMap::new();
    let mut total = 0usize;
    for text in instructions {
        let lower = text.to_lowercase();
        for raw in lower.split_whitespace() {
            let w: &str = raw.trim_start_matches(|c: char| c.is_ascii_punctuation());
            let w = w.trim_end_matches(|c: char| c.is_ascii_punctuation());
            if w.is_empty() {
                continue;
            }
            *counts.entry(w.to_string()).or_default() += 1;
            total += 1;
        }
    }
    let vocab = counts.values().filter(|&&c| c > 5).count();
    let mean = if instructions.is_empty() { 0.0 } else { total as f64 / instructions.len() as f64 };
    (envs.len(), objs.len(), instructions.len(), vocab, mean)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn geodesic_on_open_grid() {
        let nav = vec![true; 25];
        let d = grid_geodesic(&nav, 5, 5, 1.0, (0, 0), (4, 2)).unwrap();
        assert!((d - (2.0 + 2.0 * 2f64.sqrt())).abs() < 1e-12);
    }

    #[test]
    fn hungarian_small() {
        let cost = vec![vec![4.0, 1.0, 3.0], vec![2.0, 0.0, 5.0], vec![3.0, 2.0, 2.0]];
        assert_eq!(hungarian(&cost), vec![Some(1), Some(0), Some(2)]);
        let wide = vec![vec![5.0, 1.0, 9.0]];
        assert_eq!(hungarian(&wide), vec![Some(1)]);
        let tall = vec![vec![1.0], vec![0.0]];
        assert_eq!(hungarian(&tall), vec![None, Some(0)]);
    }

    #[test]
    fn projection_centre() {
        let (u, v, d) = project([5.0, 0.0, 0.0], [0.0; 3], 0.0, 0.0, 64, 64, 1.0).unwrap();
        assert_eq!((u, v, d), (32.0, 32.0, 5.0));
        let (u, _, _) = project([5.0, 1.0, 0.0], [0.0; 3], 0.0, 0.0, 64, 64, 1.0).unwrap();
        assert!(u < 32.0);
    }

    #[test]
    fn ray_box_faces() {
        let t = ray_box([-1.0, 0.5, 0.5], [1.0, 0.0, 0.0], [0.0; 3], [1.0; 3]).unwrap();
        assert_eq!(t, 1.0);
        assert!(ray_box([0.5; 3], [1.0, 0.0, 0.0], [0.0; 3], [1.0; 3]).is_none());
    }

    #[test]
    fn paths_and_argmin() {
        let edges = [(0, 1, 1.0), (1, 2, 1.0), (0, 3, 1.5), (3, 2, 0.4)];
        assert_eq!(best_path(4, &edges, 0, &[2], 5, 1e-9).unwrap(), vec![0, 3, 2]);
        let d = floyd_warshall(4, &edges);
        assert_eq!(two_leg_argmin(&d, 0, 2, 1e-9), Some(2));
    }

    #[test]
    fn stats_threshold() {
        let six = ["a a a a a a b"];
        let (_, _, _, vocab, mean) = reference_stats(&["s"], &[], &six);
        assert_eq!((vocab, mean), (1, 7.0));
    }
}
