use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Room, SceneTruth, Slab, SynthError, TruthObject};
use crate::geometry::{Aabb, Vec3};
use crate::scene::{FloorGrid, NavigabilityField, SceneBundle, SensorSpec};
use crate::vocab::{self, Placement, RoomType, CEILING, CLASSES, FLOOR, ROOM_TYPES, WALL};

/// Anything whose bottom is below this height above the floor blocks the
/// agent.
const BODY_HEIGHT: f64 = 1.9;
const SLAB_THICKNESS: f64 = 0.1;
/// Free corridor kept in front of each doorway, meters into each room.
const DOOR_CLEARANCE: f64 = 1.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthParams {
    pub rooms: [u32; 2],
    pub objects_per_room: [u32; 2],
    pub floors: u32,
    /// Range of room side lengths, measured between wall center lines.
    pub room_size: [f64; 2],
    pub wall_thickness: f64,
    pub ceiling_height: f64,
    pub door_width: f64,
    /// Chance of a door between adjacent rooms beyond the spanning tree.
    pub extra_door_prob: f64,
    pub agent_radius: f64,
    pub cell_size: f64,
    pub eye_height: f64,
    /// Minimum clearance between any two objects.
    pub object_gap: f64,
}

impl Default for SynthParams {
    fn default() -> Self {
        Self {
            rooms: [8, 12],
            objects_per_room: [4, 7],
            floors: 1,
            room_size: [3.5, 6.0],
            wall_thickness: 0.1,
            ceiling_height: 2.8,
            door_width: 2.0,
            extra_door_prob: 0.3,
            agent_radius: 0.2,
            cell_size: 0.1,
            eye_height: 1.5,
            object_gap: 0.3,
        }
    }
}

impl SynthParams {
    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |m: String| Err(SynthError::InvalidParams(m));
        if self.rooms[0] == 0 || self.rooms[0] > self.rooms[1] {
            return bad(format!("room count range {:?}", self.rooms));
        }
        if self.objects_per_room[0] > self.objects_per_room[1] {
            return bad(format!("object count range {:?}", self.objects_per_room));
        }
        if self.floors == 0 {
            return bad("at least one floor required".into());
        }
        if !(self.room_size[0] > 0.0 && self.room_size[0] <= self.room_size[1]) {
            return bad(format!("room size range {:?}", self.room_size));
        }
        for (name, v) in [
            ("wall_thickness", self.wall_thickness),
            ("ceiling_height", self.ceiling_height),
            ("door_width", self.door_width),
            ("agent_radius", self.agent_radius),
            ("cell_size", self.cell_size),
            ("eye_height", self.eye_height),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return bad(format!("{name} must be positive, got {v}"));
            }
        }
        if !(0.0..=1.0).contains(&self.extra_door_prob) || self.object_gap < 0.0 {
            return bad("extra_door_prob or object_gap out of range".into());
        }
        if self.eye_height >= self.ceiling_height {
            return bad("eye height above ceiling".into());
        }
        if self.door_width <= 2.0 * self.agent_radius {
            return Err(SynthError::Infeasible(format!(
                "door width {} cannot pass an agent of radius {}",
                self.door_width, self.agent_radius
            )));
        }
        if self.room_size[0] < self.door_width + 2.0 * self.wall_thickness + 0.6 {
            return Err(SynthError::Infeasible(format!(
                "rooms of {} m cannot hold a {} m door",
                self.room_size[0], self.door_width
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy)]
struct Rect {
    min: [f64; 2],
    max: [f64; 2],
}

impl Rect {
    fn intersects(&self, o: &Rect) -> bool {
        self.min[0] < o.max[0] && o.min[0] < self.max[0] && self.min[1] < o.max[1] && o.min[1] < self.max[1]
    }

    fn of(b: &Aabb) -> Self {
        Rect { min: [b.min.x, b.min.y], max: [b.max.x, b.max.y] }
    }

    fn contains(&self, x: f64, y: f64) -> bool {
        x >= self.min[0] && x <= self.max[0] && y >= self.min[1] && y <= self.max[1]
    }
}

struct Grid {
    cols: usize,
    rows: usize,
    n: usize,
    xs: Vec<f64>,
    ys: Vec<f64>,
}

impl Grid {
    fn exists(&self, r: usize, c: usize) -> bool {
        r < self.rows && c < self.cols && r * self.cols + c < self.n
    }

    fn slot(&self, r: usize, c: usize) -> usize {
        r * self.cols + c
    }

    fn slot_rect(&self, s: usize) -> Rect {
        let (r, c) = (s / self.cols, s % self.cols);
        Rect { min: [self.xs[c], self.ys[r]], max: [self.xs[c + 1], self.ys[r + 1]] }
    }
}

/// Door graph over room slots: a random spanning tree plus extra doors.
fn door_pairs(grid: &Grid, extra_prob: f64, rng: &mut ChaCha8Rng) -> Vec<(usize, usize)> {
    let mut adjacent = Vec::new();
    for r in 0..grid.rows {
        for c in 0..grid.cols {
            if !grid.exists(r, c) {
                continue;
            }
            if grid.exists(r, c + 1) {
                adjacent.push((grid.slot(r, c), grid.slot(r, c + 1)));
            }
            if grid.exists(r + 1, c) {
                adjacent.push((grid.slot(r, c), grid.slot(r + 1, c)));
            }
        }
    }
    adjacent.shuffle(rng);
    // Kruskal with a random edge order gives a random spanning tree
    let mut parent: Vec<usize> = (0..grid.n).collect();
    fn find(p: &mut [usize], x: usize) -> usize {
        let mut x = x;
        while p[x] != x {
            p[x] = p[p[x]];
            x = p[x];
        }
        x
    }
    let mut doors = Vec::new();
    let mut rest = Vec::new();
    for (a, b) in adjacent {
        let (ra, rb) = (find(&mut parent, a), find(&mut parent, b));
        if ra != rb {
            parent[ra] = rb;
            doors.push((a, b));
        } else {
            rest.push((a, b));
        }
    }
    for pair in rest {
        if rng.gen_bool(extra_prob) {
            doors.push(pair);
        }
    }
    doors.sort_unstable();
    doors
}

struct FloorLayout {
    walls: Vec<Slab>,
    door_zones: Vec<Rect>,
}

fn build_walls(
    grid: &Grid,
    doors: &[(usize, usize)],
    p: &SynthParams,
    z0: f64,
    rng: &mut ChaCha8Rng,
) -> FloorLayout {
    let t = p.wall_thickness;
    let half_door = p.door_width / 2.0;
    let margin = 0.3;
    let mut walls = Vec::new();
    let mut door_zones = Vec::new();
    let has_door = |a: usize, b: usize| doors.binary_search(&(a.min(b), a.max(b))).is_ok();

    // walls along constant x
    for c in 0..=grid.cols {
        let x = grid.xs[c];
        for r in 0..grid.rows {
            let left = c > 0 && grid.exists(r, c - 1);
            let right = grid.exists(r, c);
            if !left && !right {
                continue;
            }
            let (y0, y1) = (grid.ys[r], grid.ys[r + 1]);
            let spans = if left && right && has_door(grid.slot(r, c - 1), grid.slot(r, c)) {
                let yd = rng.gen_range(y0 + t / 2.0 + margin + half_door..=y1 - t / 2.0 - margin - half_door);
                door_zones.push(Rect {
                    min: [x - t / 2.0 - DOOR_CLEARANCE, yd - half_door - 0.2],
                    max: [x + t / 2.0 + DOOR_CLEARANCE, yd + half_door + 0.2],
                });
                vec![(y0 - t / 2.0, yd - half_door), (yd + half_door, y1 + t / 2.0)]
            } else {
                vec![(y0 - t / 2.0, y1 + t / 2.0)]
            };
            for (a, b) in spans {
                walls.push(Slab {
                    class: WALL,
                    min: Vec3::new(x - t / 2.0, a, z0),
                    max: Vec3::new(x + t / 2.0, b, z0 + p.ceiling_height),
                });
            }
        }
    }
    // walls along constant y
    for r in 0..=grid.rows {
        let y = grid.ys[r];
        for c in 0..grid.cols {
            let below = r > 0 && grid.exists(r - 1, c);
            let above = grid.exists(r, c);
            if !below && !above {
                continue;
            }
            let (x0, x1) = (grid.xs[c], grid.xs[c + 1]);
            let spans = if below && above && has_door(grid.slot(r - 1, c), grid.slot(r, c)) {
                let xd = rng.gen_range(x0 + t / 2.0 + margin + half_door..=x1 - t / 2.0 - margin - half_door);
                door_zones.push(Rect {
                    min: [xd - half_door - 0.2, y - t / 2.0 - DOOR_CLEARANCE],
                    max: [xd + half_door + 0.2, y + t / 2.0 + DOOR_CLEARANCE],
                });
                vec![(x0 - t / 2.0, xd - half_door), (xd + half_door, x1 + t / 2.0)]
            } else {
                vec![(x0 - t / 2.0, x1 + t / 2.0)]
            };
            for (a, b) in spans {
                walls.push(Slab {
                    class: WALL,
                    min: Vec3::new(a, y - t / 2.0, z0),
                    max: Vec3::new(b, y + t / 2.0, z0 + p.ceiling_height),
                });
            }
        }
    }
    FloorLayout { walls, door_zones }
}

fn uniform(rng: &mut ChaCha8Rng, (lo, hi): (f64, f64)) -> f64 {
    if hi > lo {
        rng.gen_range(lo..hi)
    } else {
        lo
    }
}

/// Proposes one object box for a room; `None` when the drawn size cannot
/// fit at all.
fn propose(rng: &mut ChaCha8Rng, room: &Room, kind: &RoomType, p: &SynthParams, z0: f64) -> Option<(u16, Aabb)> {
    let name = kind.classes[rng.gen_range(0..kind.classes.len())];
    let class = vocab::class_index(name)?;
    let spec = &CLASSES[class as usize];
    let along = uniform(rng, spec.size[0]);
    let depth = uniform(rng, spec.size[1]);
    let height = uniform(rng, spec.size[2]);
    let (rx0, ry0, rx1, ry1) = (room.min[0], room.min[1], room.max[0], room.max[1]);
    let ceiling = z0 + p.ceiling_height;

    let against_wall = |rng: &mut ChaCha8Rng, along: f64, depth: f64, gap: f64| -> Option<(f64, f64, f64, f64)> {
        let side = rng.gen_range(0..4);
        let (span_lo, span_hi) = if side < 2 { (ry0, ry1) } else { (rx0, rx1) };
        if span_hi - span_lo < along || depth + gap > (if side < 2 { rx1 - rx0 } else { ry1 - ry0 }) {
            return None;
        }
        let a0 = uniform(rng, (span_lo, span_hi - along));
        Some(match side {
            0 => (rx0 + gap, a0, rx0 + gap + depth, a0 + along),
            1 => (rx1 - gap - depth, a0, rx1 - gap, a0 + along),
            2 => (a0, ry0 + gap, a0 + along, ry0 + gap + depth),
            _ => (a0, ry1 - gap - depth, a0 + along, ry1 - gap),
        })
    };

    let b = match spec.placement {
        Placement::Structure => return None,
        Placement::Floor => {
            let (x0, y0, x1, y1) = if rng.gen_bool(0.75) {
                against_wall(rng, along, depth, 0.02)?
            } else {
                let (w, d) = if rng.gen_bool(0.5) { (along, depth) } else { (depth, along) };
                if rx1 - rx0 < w + 1.2 || ry1 - ry0 < d + 1.2 {
                    return None;
                }
                let x = uniform(rng, (rx0 + 0.6, rx1 - 0.6 - w));
                let y = uniform(rng, (ry0 + 0.6, ry1 - 0.6 - d));
                (x, y, x + w, y + d)
            };
            Aabb::new(Vec3::new(x0, y0, z0), Vec3::new(x1, y1, z0 + height))
        }
        Placement::Wall => {
            let (x0, y0, x1, y1) = against_wall(rng, along, depth, 0.0)?;
            let top_room = ceiling - 0.2 - height;
            let bottom = if top_room > z0 + 0.5 {
                uniform(rng, (z0 + 0.5, top_room))
            } else {
                (z0 + 0.05).max(top_room)
            };
            Aabb::new(Vec3::new(x0, y0, bottom), Vec3::new(x1, y1, bottom + height))
        }
        Placement::Ceiling => {
            if rx1 - rx0 < along + 0.6 || ry1 - ry0 < depth + 0.6 {
                return None;
            }
            let x = uniform(rng, (rx0 + 0.3, rx1 - 0.3 - along));
            let y = uniform(rng, (ry0 + 0.3, ry1 - 0.3 - depth));
            Aabb::new(Vec3::new(x, y, ceiling - height), Vec3::new(x + along, y + depth, ceiling))
        }
    };
    Some((class, b))
}

fn blocks_agent(b: &Aabb, z0: f64) -> bool {
    b.min.z < z0 + BODY_HEIGHT
}

/// The room's free floor must stay one 4-connected region.
fn room_stays_connected(room: &Room, boxes: &[Aabb], p: &SynthParams, z0: f64) -> bool {
    let cell = p.cell_size;
    let r = p.agent_radius;
    let w = ((room.max[0] - room.min[0]) / cell).floor() as usize;
    let h = ((room.max[1] - room.min[1]) / cell).floor() as usize;
    if w == 0 || h == 0 {
        return false;
    }
    let obstacles: Vec<Rect> = boxes.iter().filter(|b| blocks_agent(b, z0)).map(Rect::of).collect();
    let mut free = vec![false; w * h];
    for y in 0..h {
        for x in 0..w {
            let cx = room.min[0] + (x as f64 + 0.5) * cell;
            let cy = room.min[1] + (y as f64 + 0.5) * cell;
            let half = cell / 2.0;
            let sq = Rect { min: [cx - half, cy - half], max: [cx + half, cy + half] };
            let near_wall = sq.min[0] - room.min[0] < r
                || room.max[0] - sq.max[0] < r
                || sq.min[1] - room.min[1] < r
                || room.max[1] - sq.max[1] < r;
            free[y * w + x] = !near_wall && obstacles.iter().all(|o| rect_distance(&sq, o) >= r);
        }
    }
    let total = free.iter().filter(|&&f| f).count();
    let Some(start) = free.iter().position(|&f| f) else {
        return false;
    };
    let mut seen = vec![false; w * h];
    let mut stack = vec![start];
    seen[start] = true;
    let mut count = 0;
    while let Some(i) = stack.pop() {
        count += 1;
        let (x, y) = (i % w, i / w);
        let mut push = |j: usize| {
            if free[j] && !seen[j] {
                seen[j] = true;
                stack.push(j);
            }
        };
        if x > 0 {
            push(i - 1);
        }
        if x + 1 < w {
            push(i + 1);
        }
        if y > 0 {
            push(i - w);
        }
        if y + 1 < h {
            push(i + w);
        }
    }
    count == total
}

fn rect_distance(a: &Rect, b: &Rect) -> f64 {
    let dx = (b.min[0] - a.max[0]).max(a.min[0] - b.max[0]).max(0.0);
    let dy = (b.min[1] - a.max[1]).max(a.min[1] - b.max[1]).max(0.0);
    dx.hypot(dy)
}

fn place_objects(
    rng: &mut ChaCha8Rng,
    room: &Room,
    kind: &RoomType,
    count: usize,
    door_zones: &[Rect],
    p: &SynthParams,
    z0: f64,
) -> Result<Vec<(u16, Aabb)>, SynthError> {
    let interior = Rect { min: room.min, max: room.max };
    for _ in 0..30 {
        let mut placed: Vec<(u16, Aabb)> = Vec::with_capacity(count);
        let mut ok = true;
        for _ in 0..count {
            let mut done = false;
            for _ in 0..200 {
                let Some((class, b)) = propose(rng, room, kind, p, z0) else { continue };
                let fp = Rect::of(&b);
                if !(interior.contains(fp.min[0], fp.min[1]) && interior.contains(fp.max[0], fp.max[1])) {
                    continue;
                }
                if placed.iter().any(|(_, o)| b.expanded(p.object_gap).intersects(o)) {
                    continue;
                }
                let hangs = CLASSES[class as usize].placement == Placement::Ceiling;
                if !hangs && door_zones.iter().any(|z| z.intersects(&fp)) {
                    continue;
                }
                let mut boxes: Vec<Aabb> = placed.iter().map(|(_, o)| *o).collect();
                boxes.push(b);
                if !room_stays_connected(room, &boxes, p, z0) {
                    continue;
                }
                placed.push((class, b));
                done = true;
                break;
            }
            if !done {
                ok = false;
                break;
            }
        }
        if ok {
            return Ok(placed);
        }
    }
    Err(SynthError::Infeasible(format!(
        "could not place {count} objects in room {} ({})",
        room.id, kind.name
    )))
}

fn build_field(grid: &Grid, truth: &SceneTruth, p: &SynthParams) -> Result<NavigabilityField, SynthError> {
    let cell = p.cell_size;
    let t = p.wall_thickness;
    let origin = [grid.xs[0] - t, grid.ys[0] - t];
    let width = ((grid.xs[grid.cols] - grid.xs[0] + 2.0 * t) / cell).ceil() as usize;
    let height = ((grid.ys[grid.rows] - grid.ys[0] + 2.0 * t) / cell).ceil() as usize;
    let slots: Vec<Rect> = (0..grid.n).map(|s| grid.slot_rect(s)).collect();
    let in_floor = |x: f64, y: f64| slots.iter().any(|r| r.contains(x, y));
    let mut floors = Vec::new();
    for (fi, &z0) in truth.floors.iter().enumerate() {
        let mut nav = vec![false; width * height];
        for y in 0..height {
            for x in 0..width {
                let x0 = origin[0] + x as f64 * cell;
                let y0 = origin[1] + y as f64 * cell;
                nav[y * width + x] = in_floor(x0, y0)
                    && in_floor(x0 + cell, y0)
                    && in_floor(x0, y0 + cell)
                    && in_floor(x0 + cell, y0 + cell);
            }
        }
        let ceiling = truth.floors.get(fi + 1).copied().unwrap_or(f64::INFINITY);
        let obstacles = truth
            .walls
            .iter()
            .map(Slab::aabb)
            .chain(truth.objects.iter().map(TruthObject::aabb))
            .filter(|b| b.min.z >= z0 - 1e-9 && b.min.z < ceiling && blocks_agent(b, z0));
        for b in obstacles {
            let o = Rect::of(&b);
            let gx0 = (((o.min[0] - p.agent_radius - origin[0]) / cell).floor() - 1.0).max(0.0) as usize;
            let gy0 = (((o.min[1] - p.agent_radius - origin[1]) / cell).floor() - 1.0).max(0.0) as usize;
            let gx1 = ((((o.max[0] + p.agent_radius - origin[0]) / cell).ceil() + 1.0) as usize).min(width);
            let gy1 = ((((o.max[1] + p.agent_radius - origin[1]) / cell).ceil() + 1.0) as usize).min(height);
            for y in gy0..gy1 {
                for x in gx0..gx1 {
                    let x0 = origin[0] + x as f64 * cell;
                    let y0 = origin[1] + y as f64 * cell;
                    let sq = Rect { min: [x0, y0], max: [x0 + cell, y0 + cell] };
                    if rect_distance(&sq, &o) < p.agent_radius {
                        nav[y * width + x] = false;
                    }
                }
            }
        }
        let grid = FloorGrid { floor_z: z0, cell_size: cell, origin, width, height, navigable: nav };
        if grid.navigable_count() == 0 {
            return Err(SynthError::Infeasible(format!("floor {fi} has no navigable cell")));
        }
        floors.push(grid);
    }
    Ok(NavigabilityField { floors, eye_height: p.eye_height, stairs: vec![] })
}

/// Generates a building of axis-aligned rooms, walls and objects. Panorama
/// nodes are not placed here; the returned bundle has none.
pub fn generate_scene(seed: u64, params: &SynthParams) -> Result<SceneBundle, SynthError> {
    params.validate()?;
    let p = params;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.gen_range(p.rooms[0]..=p.rooms[1]) as usize;
    let cols = (n as f64).sqrt().ceil() as usize;
    let rows = n.div_ceil(cols);
    let mut xs = vec![0.0];
    for _ in 0..cols {
        let w = uniform(&mut rng, (p.room_size[0], p.room_size[1]));
        xs.push(xs.last().unwrap() + w);
    }
    let mut ys = vec![0.0];
    for _ in 0..rows {
        let d = uniform(&mut rng, (p.room_size[0], p.room_size[1]));
        ys.push(ys.last().unwrap() + d);
    }
    let grid = Grid { cols, rows, n, xs, ys };
    let doors = door_pairs(&grid, p.extra_door_prob, &mut rng);

    let t = p.wall_thickness;
    let storey = p.ceiling_height + 2.0 * SLAB_THICKNESS;
    let mut truth = SceneTruth { rooms: vec![], objects: vec![], walls: vec![], surfaces: vec![], floors: vec![] };
    for f in 0..p.floors as usize {
        let z0 = f as f64 * storey;
        truth.floors.push(z0);
        let layout = build_walls(&grid, &doors, p, z0, &mut rng);
        for s in 0..grid.n {
            let r = grid.slot_rect(s);
            truth.surfaces.push(Slab {
                class: FLOOR,
                min: Vec3::new(r.min[0], r.min[1], z0 - SLAB_THICKNESS),
                max: Vec3::new(r.max[0], r.max[1], z0),
            });
            truth.surfaces.push(Slab {
                class: CEILING,
                min: Vec3::new(r.min[0], r.min[1], z0 + p.ceiling_height),
                max: Vec3::new(r.max[0], r.max[1], z0 + p.ceiling_height + SLAB_THICKNESS),
            });
        }
        for s in 0..grid.n {
            let r = grid.slot_rect(s);
            let kind = &ROOM_TYPES[rng.gen_range(0..ROOM_TYPES.len())];
            let room = Room {
                id: (f * grid.n + s) as u32,
                kind: kind.name.to_string(),
                floor: f,
                min: [r.min[0] + t / 2.0, r.min[1] + t / 2.0],
                max: [r.max[0] - t / 2.0, r.max[1] - t / 2.0],
            };
            let count = rng.gen_range(p.objects_per_room[0]..=p.objects_per_room[1]) as usize;
            let placed = place_objects(&mut rng, &room, kind, count, &layout.door_zones, p, z0)?;
            for (class, b) in placed {
                truth.objects.push(TruthObject {
                    id: truth.objects.len() as u32,
                    class,
                    center: b.center(),
                    extent: b.extent(),
                    room: room.id,
                });
            }
            truth.rooms.push(room);
        }
        truth.walls.extend(layout.walls);
    }
    truth.validate().map_err(SynthError::Infeasible)?;
    let field = build_field(&grid, &truth, p)?;
    Ok(SceneBundle {
        scene_id: format!("synth_{seed}"),
        field,
        nodes: vec![],
        class_vocabulary: vocab::class_names(),
        sensor: SensorSpec::default(),
        capture: None,
        ground_truth: Some(truth),
    })
}
