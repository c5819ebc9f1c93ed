//! Object-trajectory-instruction triplets, instruction templates, speaker
//! prompts and dataset statistics.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};

use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fusion::{voxel_key, Object3D, ViewMap, VoxelKey};
use crate::geometry::{normalize_heading, pixel_to_point, project, Vec3, PANORAMA_HEADINGS};
use crate::navgraph::NavGraph;
use crate::scene::{PanoramaNode, ViewObservation};
use crate::synth::SceneTruth;
use crate::vocab::{class_spec, VocabError};

#[derive(Debug, Error, PartialEq)]
pub enum TripletError {
    #[error(transparent)]
    Vocab(#[from] VocabError),
    #[error("node {start} cannot reach the goal set")]
    Unreachable { start: u32 },
    #[error("invalid triplet parameters: {0}")]
    InvalidParams(String),
    #[error("cannot mix: {0} is empty")]
    EmptyInput(&'static str),
    #[error("{0}")]
    Merge(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InstructionMode {
    TemplateObj,
    TemplateSent,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GoalDistance {
    Centroid,
    NearestPoint,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TripletParams {
    /// Goal radius around the object in meters; may be infinite.
    pub d_o: f64,
    pub min_hops: u32,
    pub max_hops: u32,
    pub starts_per_object: usize,
    pub mode: InstructionMode,
    pub goal_distance: GoalDistance,
    /// The centroid counts as unoccluded when the stored depth at its pixel
    /// is at least this share of its own depth.
    pub occlusion_ratio: f64,
    /// A goal node needs a view whose target box is filled at least this much.
    pub min_box_fill: f64,
    pub max_other_tokens: usize,
}

impl Default for TripletParams {
    fn default() -> Self {
        Self {
            d_o: 2.0,
            min_hops: 4,
            max_hops: 9,
            starts_per_object: 1,
            mode: InstructionMode::TemplateSent,
            goal_distance: GoalDistance::Centroid,
            occlusion_ratio: 0.9,
            min_box_fill: 0.5,
            max_other_tokens: 20,
        }
    }
}

impl TripletParams {
    pub fn validate(&self) -> Result<(), TripletError> {
        if !(self.d_o > 0.0) {
            return Err(TripletError::InvalidParams(format!("d_o must be positive, got {}", self.d_o)));
        }
        if self.min_hops == 0 || self.min_hops > self.max_hops {
            return Err(TripletError::InvalidParams("need 1 <= min_hops <= max_hops".into()));
        }
        if !(0.0..=1.0).contains(&self.min_box_fill) || !(self.occlusion_ratio > 0.0) {
            return Err(TripletError::InvalidParams("box fill or occlusion ratio out of range".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BoxView {
    pub node: u32,
    pub view: u32,
    /// Inclusive pixel box `[col_min, row_min, col_max, row_max]`.
    pub bbox: [u32; 4],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VlnTriplet {
    pub id: String,
    pub scene_id: String,
    pub instruction: String,
    pub start_node: u32,
    pub start_heading: f64,
    pub expert_path: Vec<u32>,
    pub goal_nodes: Vec<u32>,
    pub target_object: u32,
    pub target_class: u16,
    pub target_bbox_2d: Vec<BoxView>,
}

/// Distance from a node to the object, by centroid or nearest box point.
pub fn object_distance(node: &Vec3, obj: &Object3D, mode: GoalDistance) -> f64 {
    match mode {
        GoalDistance::Centroid => (node - obj.centroid).norm(),
        GoalDistance::NearestPoint => {
            let b = obj.aabb();
            let q = Vec3::new(
                node.x.clamp(b.min.x, b.max.x),
                node.y.clamp(b.min.y, b.max.y),
                node.z.clamp(b.min.z, b.max.z),
            );
            (node - q).norm()
        }
    }
}

/// Whether the object centroid is seen unoccluded in some view of the
/// panorama: it must project inside the view, and the surface at that pixel
/// must lie no closer than `ratio` times the centroid depth or belong to the
/// object's box grown by one voxel.
pub fn centroid_visible(node: &PanoramaNode, obj: &Object3D, voxel_size: f64, ratio: f64) -> bool {
    let grown = obj.aabb().expanded(voxel_size);
    node.views.iter().any(|view| {
        let Some(p) = project(&obj.centroid, &view.intrinsics, &view.pose) else { return false };
        if !view.intrinsics.contains(p.u, p.v) {
            return false;
        }
        let col = (p.u.floor() as u32).min(view.intrinsics.width - 1);
        let row = (p.v.floor() as u32).min(view.intrinsics.height - 1);
        let idx = view.pixel_index(col, row);
        if !view.is_valid(idx) {
            return false;
        }
        let d = view.depth[idx] as f64;
        if d >= ratio * p.depth {
            return true;
        }
        pixel_to_point(col as f64 + 0.5, row as f64 + 0.5, d, &view.intrinsics, &view.pose)
            .is_ok_and(|q| grown.contains(&q))
    })
}

/// Per-pixel object ownership for every view of a scene: for each node and
/// view, the number of pixels whose back-projected point falls in each
/// object's voxels, and the inclusive box around them.
#[derive(Debug, Clone, Default)]
pub struct ObjectPixelIndex {
    views: HashMap<u32, Vec<BTreeMap<u32, (usize, [u32; 4])>>>,
}

impl ObjectPixelIndex {
    pub fn build(panoramas: &[PanoramaNode], objects: &[Object3D], voxel_size: f64) -> Self {
        let mut owner: HashMap<VoxelKey, u32> = HashMap::new();
        for o in objects {
            for k in &o.voxels {
                owner.insert(*k, o.id);
            }
        }
        let views = panoramas
            .par_iter()
            .map(|node| {
                let per_view = node
                    .views
                    .iter()
                    .map(|view| {
                        let mut m: BTreeMap<u32, (usize, [u32; 4])> = BTreeMap::new();
                        let intr = &view.intrinsics;
                        for row in 0..intr.height {
                            for col in 0..intr.width {
                                let Some(p) = pixel_point(view, col, row) else { continue };
                                let Some(&o) = owner.get(&voxel_key(&p, voxel_size)) else { continue };
                                let e = m.entry(o).or_insert((0, [u32::MAX, u32::MAX, 0, 0]));
                                e.0 += 1;
                                e.1 = [e.1[0].min(col), e.1[1].min(row), e.1[2].max(col), e.1[3].max(row)];
                            }
                        }
                        m
                    })
                    .collect();
                (node.id, per_view)
            })
            .collect();
        Self { views }
    }

    /// The view of `node` with the most pixels of `object` among those
    /// whose box is filled at least `min_fill`; ties go to the lower view.
    /// Returns the view index, box and fill.
    pub fn target_box(&self, node: u32, object: u32, min_fill: f64) -> Option<(u32, [u32; 4], f64)> {
        let mut best: Option<(usize, u32, [u32; 4], f64)> = None;
        for (k, m) in self.views.get(&node)?.iter().enumerate() {
            let Some(&(count, b)) = m.get(&object) else { continue };
            let area = ((b[2] - b[0] + 1) * (b[3] - b[1] + 1)) as f64;
            let fill = count as f64 / area;
            if fill >= min_fill && best.is_none_or(|x| count > x.0) {
                best = Some((count, k as u32, b, fill));
            }
        }
        best.map(|(_, k, b, f)| (k, b, f))
    }
}

/// Back-projected surface point of a pixel, if it has one.
pub fn pixel_point(view: &ViewObservation, col: u32, row: u32) -> Option<Vec3> {
    let idx = view.pixel_index(col, row);
    if !view.is_valid(idx) || view.is_saturated(idx) {
        return None;
    }
    pixel_to_point(col as f64 + 0.5, row as f64 + 0.5, view.depth[idx] as f64, &view.intrinsics, &view.pose).ok()
}

/// Goal nodes of an object with their target boxes: nodes within `d_o`
/// that see the centroid unoccluded and hold a sufficiently filled box.
pub fn goal_nodes(
    obj: &Object3D,
    panoramas: &[PanoramaNode],
    index: &ObjectPixelIndex,
    voxel_size: f64,
    params: &TripletParams,
) -> BTreeMap<u32, BoxView> {
    let mut out = BTreeMap::new();
    for node in panoramas {
        if object_distance(&node.position, obj, params.goal_distance) > params.d_o {
            continue;
        }
        if !centroid_visible(node, obj, voxel_size, params.occlusion_ratio) {
            continue;
        }
        if let Some((view, bbox, _)) = index.target_box(node.id, obj.id, params.min_box_fill) {
            out.insert(node.id, BoxView { node: node.id, view, bbox });
        }
    }
    out
}

/// The goal node nearest the object (lowest id on ties). Goal sets grow
/// with `d_o` by adding farther nodes, so this node belongs to every
/// non-empty goal set of the object.
pub fn anchor_goal(goals: &[u32], graph: &NavGraph, obj: &Object3D, mode: GoalDistance) -> Option<u32> {
    goals.iter().copied().min_by(|&a, &b| {
        object_distance(&graph.position(a), obj, mode)
            .total_cmp(&object_distance(&graph.position(b), obj, mode))
            .then(a.cmp(&b))
    })
}

/// Nodes whose hop distance to the goal set lies in `[min_hops, max_hops]`,
/// ascending.
pub fn start_candidates(graph: &NavGraph, goals: &[u32], min_hops: u32, max_hops: u32) -> Vec<u32> {
    let hops = graph.hop_distances(goals);
    (0..graph.len() as u32)
        .filter(|&v| hops[v as usize].is_some_and(|h| (min_hops..=max_hops).contains(&h)))
        .collect()
}

pub fn sample_start<R: Rng + ?Sized>(
    graph: &NavGraph,
    goals: &[u32],
    min_hops: u32,
    max_hops: u32,
    rng: &mut R,
) -> Option<u32> {
    let c = start_candidates(graph, goals, min_hops, max_hops);
    (!c.is_empty()).then(|| c[rng.gen_range(0..c.len())])
}

pub const WEIGHT_EPS: f64 = 1e-9;

/// Minimum-hop path from `start` to the nearest goal. Among those, the
/// smaller total weight wins, then the lexicographically smaller id list.
pub fn expert_path(graph: &NavGraph, start: u32, goals: &[u32]) -> Result<Vec<u32>, TripletError> {
    let hops = graph.hop_distances(goals);
    let h0 = hops[start as usize].ok_or(TripletError::Unreachable { start })?;
    // best[v] = (weight, path from v to a goal) for every v on a layer < h0
    let mut best: HashMap<u32, (f64, Vec<u32>)> = HashMap::new();
    for &g in goals {
        best.insert(g, (0.0, vec![g]));
    }
    for h in 1..=h0 {
        let next: Vec<u32> = if h == h0 {
            vec![start]
        } else {
            (0..graph.len() as u32).filter(|&v| hops[v as usize] == Some(h)).collect()
        };
        for &v in &next {
            let mut choice: Option<(f64, Vec<u32>)> = None;
            for &(u, w) in graph.neighbors(v) {
                if hops[u as usize] != Some(h - 1) {
                    continue;
                }
                let (wu, pu) = &best[&u];
                let total = w + wu;
                let better = match &choice {
                    None => true,
                    Some((cw, cp)) => {
                        total < cw - WEIGHT_EPS || (total <= cw + WEIGHT_EPS && pu.as_slice() < &cp[1..])
                    }
                };
                if better {
                    let mut p = Vec::with_capacity(pu.len() + 1);
                    p.push(v);
                    p.extend_from_slice(pu);
                    choice = Some((total, p));
                }
            }
            best.insert(v, choice.expect("a node on layer h has a neighbour on layer h - 1"));
        }
    }
    Ok(best.remove(&start).expect("start was placed on the last layer").1)
}

pub const SENTENCE_TEMPLATES: [&str; 5] = [
    "go to {room} and {verb} the {object}",
    "walk into the {room} and {verb} the {object}",
    "find the {object} in the {room} and {verb} it",
    "in the {room}, {verb} the {object}",
    "head to the {room} and {verb} the {object} there",
];

pub fn fill_template(template: &str, class: u16, room: &str) -> Result<String, TripletError> {
    let spec = class_spec(class)?;
    Ok(template.replace("{room}", room).replace("{verb}", spec.verb).replace("{object}", spec.name))
}

pub fn make_instruction<R: Rng + ?Sized>(
    mode: InstructionMode,
    class: u16,
    room: &str,
    rng: &mut R,
) -> Result<String, TripletError> {
    match mode {
        InstructionMode::TemplateObj => fill_template("{verb} the {object}", class, room),
        InstructionMode::TemplateSent => {
            let t = SENTENCE_TEMPLATES[rng.gen_range(0..SENTENCE_TEMPLATES.len())];
            fill_template(t, class, room)
        }
    }
}

/// Room label for an object: the synthetic room type containing its
/// centroid, or "room" without ground truth.
pub fn room_label(truth: Option<&SceneTruth>, obj: &Object3D) -> String {
    truth.and_then(|t| t.room_at(&obj.centroid)).map_or_else(|| "room".to_string(), |r| r.kind.clone())
}

/// Triplets for every object of one scene. Start sampling and the expert
/// path are measured to the object's anchor goal, which keeps the number of
/// triplets non-decreasing in `d_o`.
#[allow(clippy::too_many_arguments)]
pub fn generate_triplets<R: Rng + ?Sized>(
    scene_id: &str,
    graph: &NavGraph,
    panoramas: &[PanoramaNode],
    objects: &[Object3D],
    voxel_size: f64,
    truth: Option<&SceneTruth>,
    params: &TripletParams,
    rng: &mut R,
) -> Result<Vec<VlnTriplet>, TripletError> {
    params.validate()?;
    let index = ObjectPixelIndex::build(panoramas, objects, voxel_size);
    let mut out = Vec::new();
    for obj in objects {
        let goals = goal_nodes(obj, panoramas, &index, voxel_size, params);
        let goal_ids: Vec<u32> = goals.keys().copied().collect();
        let Some(anchor) = anchor_goal(&goal_ids, graph, obj, params.goal_distance) else { continue };
        let room = room_label(truth, obj);
        for rep in 0..params.starts_per_object {
            let Some(start) = sample_start(graph, &[anchor], params.min_hops, params.max_hops, rng) else { break };
            let path = expert_path(graph, start, &[anchor])?;
            let heading = rng.gen_range(0..PANORAMA_HEADINGS) as f64 * std::f64::consts::TAU
                / PANORAMA_HEADINGS as f64;
            let instruction = make_instruction(params.mode, obj.class, &room, rng)?;
            out.push(VlnTriplet {
                id: format!("{scene_id}_{}_{rep}", obj.id),
                scene_id: scene_id.to_string(),
                instruction,
                start_node: start,
                start_heading: heading,
                expert_path: path,
                goal_nodes: goal_ids.clone(),
                target_object: obj.id,
                target_class: obj.class,
                target_bbox_2d: goals.values().copied().collect(),
            });
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstructionRecord {
    pub id: String,
    pub instruction: String,
}

/// Replaces instructions with externally generated ones, matched by id.
/// Every triplet must receive exactly one instruction.
pub fn merge_instructions(triplets: &mut [VlnTriplet], records: &[InstructionRecord]) -> Result<(), TripletError> {
    let mut by_id: HashMap<&str, &str> = HashMap::new();
    for r in records {
        if by_id.insert(r.id.as_str(), r.instruction.as_str()).is_some() {
            return Err(TripletError::Merge(format!("duplicate instruction id {}", r.id)));
        }
    }
    for t in triplets.iter_mut() {
        let text = by_id.remove(t.id.as_str()).ok_or_else(|| TripletError::Merge(format!("no instruction for {}", t.id)))?;
        t.instruction = text.to_string();
    }
    if let Some(extra) = by_id.keys().next() {
        return Err(TripletError::Merge(format!("instruction for unknown triplet {extra}")));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectToken {
    pub object: u32,
    pub label: String,
    /// Relative to the final node, in its arrival frame (x forward, y left,
    /// z up).
    pub location: [f64; 3],
    pub size: [f64; 3],
    pub feature: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ViewToken {
    pub view: u32,
    /// Relative to the arrival heading.
    pub heading: f64,
    pub elevation: f64,
    pub feature: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpeakerPrompt {
    pub triplet_id: String,
    pub node: u32,
    pub arrival_heading: f64,
    pub target_token: ObjectToken,
    pub other_tokens: Vec<ObjectToken>,
    pub view_tokens: Vec<ViewToken>,
}

/// Heading of the last step of the path, or 0 for a single-node path.
pub fn arrival_heading(graph: &NavGraph, path: &[u32]) -> f64 {
    match path {
        [.., a, b] => {
            let d = graph.position(*b) - graph.position(*a);
            normalize_heading(d.y.atan2(d.x))
        }
        _ => 0.0,
    }
}

/// World offset rotated into a frame whose +x axis points along `heading`.
pub fn to_node_frame(offset: Vec3, heading: f64) -> [f64; 3] {
    let (s, c) = heading.sin_cos();
    [c * offset.x + s * offset.y, -s * offset.x + c * offset.y, offset.z]
}

fn object_token(scene_id: &str, obj: &Object3D, origin: Vec3, heading: f64) -> ObjectToken {
    ObjectToken {
        object: obj.id,
        label: class_spec(obj.class).map_or_else(|_| format!("class {}", obj.class), |s| s.name.to_string()),
        location: to_node_frame(obj.centroid - origin, heading),
        size: [obj.extent.x, obj.extent.y, obj.extent.z],
        feature: format!("obj:{scene_id}/{}", obj.id),
    }
}

/// Objects the view map places in any view of `node`, ascending.
pub fn objects_seen_at(view_map: &ViewMap, node: u32) -> BTreeSet<u32> {
    view_map.get(&node).map_or_else(BTreeSet::new, |views| views.values().flat_map(|m| m.values().copied()).collect())
}

pub fn export_prompt(
    triplet: &VlnTriplet,
    graph: &NavGraph,
    objects: &[Object3D],
    view_map: &ViewMap,
    panorama: &PanoramaNode,
    max_other: usize,
) -> Option<SpeakerPrompt> {
    let node = *triplet.expert_path.last()?;
    let origin = graph.position(node);
    let heading = arrival_heading(graph, &triplet.expert_path);
    let by_id: HashMap<u32, &Object3D> = objects.iter().map(|o| (o.id, o)).collect();
    let target = by_id.get(&triplet.target_object)?;
    let mut others: Vec<&Object3D> = objects_seen_at(view_map, node)
        .into_iter()
        .filter(|&id| id != triplet.target_object)
        .filter_map(|id| by_id.get(&id).copied())
        .collect();
    others.sort_by(|a, b| (a.centroid - origin).norm().total_cmp(&(b.centroid - origin).norm()).then(a.id.cmp(&b.id)));
    others.truncate(max_other);
    let view_tokens = panorama
        .views
        .iter()
        .enumerate()
        .map(|(k, v)| ViewToken {
            view: k as u32,
            heading: normalize_heading(v.pose.heading - heading),
            elevation: v.pose.elevation,
            feature: format!("view:{}/{node}/{k}", triplet.scene_id),
        })
        .collect();
    Some(SpeakerPrompt {
        triplet_id: triplet.id.clone(),
        node,
        arrival_heading: heading,
        target_token: object_token(&triplet.scene_id, target, origin, heading),
        other_tokens: others.iter().map(|o| object_token(&triplet.scene_id, o, origin, heading)).collect(),
        view_tokens,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DatasetStats {
    pub n_env: usize,
    pub n_objects: usize,
    pub n_instructions: usize,
    pub vocab_size: usize,
    pub mean_instruction_length: f64,
}

pub const VOCAB_MIN_COUNT: usize = 6;

/// Lowercase whitespace-separated words with punctuation trimmed from both
/// ends; tokens that are all punctuation are dropped.
pub fn tokenize(text: &str) -> impl Iterator<Item = String> + '_ {
    text.split_whitespace()
        .map(|w| w.trim_matches(|c: char| c.is_ascii_punctuation()).to_lowercase())
        .filter(|w| !w.is_empty())
}

/// Vocabulary counts [`tokenize`] tokens occurring more than five times;
/// objects are distinct (scene, target) pairs.
pub fn dataset_stats(triplets: &[VlnTriplet]) -> DatasetStats {
    let envs: HashSet<&str> = triplets.iter().map(|t| t.scene_id.as_str()).collect();
    let objects: HashSet<(&str, u32)> = triplets.iter().map(|t| (t.scene_id.as_str(), t.target_object)).collect();
    let mut counts: HashMap<String, usize> = HashMap::new();
    let mut tokens = 0usize;
    for t in triplets {
        for tok in tokenize(&t.instruction) {
            tokens += 1;
            *counts.entry(tok).or_default() += 1;
        }
    }
    DatasetStats {
        n_env: envs.len(),
        n_objects: objects.len(),
        n_instructions: triplets.len(),
        vocab_size: counts.values().filter(|&&c| c >= VOCAB_MIN_COUNT).count(),
        mean_instruction_length: if triplets.is_empty() { 0.0 } else { tokens as f64 / triplets.len() as f64 },
    }
}

fn environments(triplets: &[VlnTriplet]) -> Vec<String> {
    triplets.iter().map(|t| t.scene_id.clone()).collect::<BTreeSet<_>>().into_iter().collect()
}

#[derive(Debug, Clone, PartialEq)]
pub enum EnvSelection {
    Count(usize),
    Ids(Vec<String>),
}

/// Keeps triplets from `k` randomly chosen environments, or from a named
/// list. Order of the input is preserved.
pub fn subset_by_environments<R: Rng + ?Sized>(
    triplets: &[VlnTriplet],
    selection: &EnvSelection,
    rng: &mut R,
) -> Result<Vec<VlnTriplet>, TripletError> {
    let envs = environments(triplets);
    let keep: HashSet<String> = match selection {
        EnvSelection::Count(k) => {
            if *k > envs.len() {
                return Err(TripletError::InvalidParams(format!("{k} environments requested, {} available", envs.len())));
            }
            envs.choose_multiple(rng, *k).cloned().collect()
        }
        EnvSelection::Ids(ids) => {
            if let Some(missing) = ids.iter().find(|id| !envs.contains(id)) {
                return Err(TripletError::InvalidParams(format!("unknown environment {missing}")));
            }
            ids.iter().cloned().collect()
        }
    };
    Ok(triplets.iter().filter(|t| keep.contains(&t.scene_id)).cloned().collect())
}

/// Caps the total count while spanning every environment: one random
/// triplet per environment first, then random fill up to `cap`. Output keeps
/// input order.
pub fn subset_matched_count<R: Rng + ?Sized>(
    triplets: &[VlnTriplet],
    cap: usize,
    rng: &mut R,
) -> Result<Vec<VlnTriplet>, TripletError> {
    let envs = environments(triplets);
    if cap < envs.len() {
        return Err(TripletError::InvalidParams(format!("cap {cap} below environment count {}", envs.len())));
    }
    let mut by_env: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, t) in triplets.iter().enumerate() {
        by_env.entry(t.scene_id.as_str()).or_default().push(i);
    }
    let mut chosen: BTreeSet<usize> = BTreeSet::new();
    for idx in by_env.values() {
        chosen.insert(*idx.choose(rng).expect("environment has a triplet"));
    }
    let mut rest: Vec<usize> = (0..triplets.len()).filter(|i| !chosen.contains(i)).collect();
    rest.shuffle(rng);
    chosen.extend(rest.into_iter().take(cap.saturating_sub(chosen.len())));
    Ok(chosen.into_iter().map(|i| triplets[i].clone()).collect())
}

/// The smaller set is resampled with replacement to the larger set's size,
/// then both are concatenated and shuffled.
pub fn mix_balanced<T: Clone, R: Rng + ?Sized>(a: &[T], b: &[T], rng: &mut R) -> Result<Vec<T>, TripletError> {
    if a.is_empty() {
        return Err(TripletError::EmptyInput("first set"));
    }
    if b.is_empty() {
        return Err(TripletError::EmptyInput("second set"));
    }
    let (small, large) = if a.len() < b.len() { (a, b) } else { (b, a) };
    let mut out: Vec<T> = large.to_vec();
    if small.len() == large.len() {
        out.extend_from_slice(small);
    } else {
        out.extend((0..large.len()).map(|_| small[rng.gen_range(0..small.len())].clone()));
    }
    out.shuffle(rng);
    Ok(out)
}
