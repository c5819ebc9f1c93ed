//! Discrete episodes over a navigation graph, baseline agents, pretraining
//! sample construction and the navigation metrics.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fusion::{Object3D, ViewMap};
use crate::navgraph::NavGraph;
use crate::scene::PanoramaNode;
use crate::triplets::{centroid_visible, objects_seen_at, tokenize, VlnTriplet, WEIGHT_EPS};

#[derive(Debug, Error, PartialEq)]
pub enum EvalError {
    #[error("node {to} is not adjacent to {from}")]
    IllegalMove { from: u32, to: u32 },
    #[error("episode already stopped")]
    AlreadyStopped,
    #[error("episode still running")]
    StillRunning,
    #[error("triplet {0} references nodes outside the graph")]
    UnknownNode(String),
    #[error("no results to aggregate")]
    Empty,
    #[error("target object {object} is not visible at node {node}")]
    TargetNotVisible { object: u32, node: u32 },
    #[error("no replay actions for episode {0}")]
    MissingReplay(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Action {
    MoveTo(u32),
    Stop(Option<u32>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VisibleObject {
    pub id: u32,
    /// World heading from the node to the object centroid.
    pub bearing: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub node: u32,
    pub adjacent: Vec<u32>,
    pub visible_objects: Vec<VisibleObject>,
}

/// Objects and their per-node visibility for one scene.
#[derive(Debug, Clone, Copy)]
pub struct SceneObjects<'a> {
    pub objects: &'a [Object3D],
    pub view_map: &'a ViewMap,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Running,
    Stopped,
}

#[derive(Debug, Clone)]
pub struct Episode<'a> {
    pub triplet: &'a VlnTriplet,
    graph: &'a NavGraph,
    scene: Option<SceneObjects<'a>>,
    pub current: u32,
    pub visited: Vec<u32>,
    pub status: Status,
    pub grounded_object: Option<u32>,
}

impl<'a> Episode<'a> {
    pub fn reset(
        triplet: &'a VlnTriplet,
        graph: &'a NavGraph,
        scene: Option<SceneObjects<'a>>,
    ) -> Result<(Self, Observation), EvalError> {
        let known = std::iter::once(triplet.start_node)
            .chain(triplet.expert_path.iter().copied())
            .chain(triplet.goal_nodes.iter().copied())
            .all(|n| graph.contains(n));
        if !known {
            return Err(EvalError::UnknownNode(triplet.id.clone()));
        }
        let ep = Self {
            triplet,
            graph,
            scene,
            current: triplet.start_node,
            visited: vec![triplet.start_node],
            status: Status::Running,
            grounded_object: None,
        };
        let obs = ep.observe();
        Ok((ep, obs))
    }

    pub fn observe(&self) -> Observation {
        let node = self.current;
        let here = self.graph.position(node);
        let visible_objects = self.scene.map_or_else(Vec::new, |s| {
            let by_id: HashMap<u32, &Object3D> = s.objects.iter().map(|o| (o.id, o)).collect();
            objects_seen_at(s.view_map, node)
                .into_iter()
                .filter_map(|id| by_id.get(&id))
                .map(|o| {
                    let d = o.centroid - here;
                    VisibleObject { id: o.id, bearing: crate::geometry::normalize_heading(d.y.atan2(d.x)) }
                })
                .collect()
        });
        Observation {
            node,
            adjacent: self.graph.neighbors(node).iter().map(|&(j, _)| j).collect(),
            visible_objects,
        }
    }

    pub fn step(&mut self, action: Action) -> Result<Observation, EvalError> {
        if self.status == Status::Stopped {
            return Err(EvalError::AlreadyStopped);
        }
        match action {
            Action::MoveTo(to) => {
                if self.graph.edge_weight(self.current, to).is_none() {
                    return Err(EvalError::IllegalMove { from: self.current, to });
                }
                self.current = to;
                self.visited.push(to);
            }
            Action::Stop(obj) => {
                self.status = Status::Stopped;
                self.grounded_object = obj;
            }
        }
        Ok(self.observe())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScoreParams {
    pub success_distance: f64,
    /// Success requires stopping on a goal node instead of near one.
    pub strict_goal_membership: bool,
}

impl Default for ScoreParams {
    fn default() -> Self {
        Self { success_distance: 3.0, strict_goal_membership: false }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeResult {
    pub id: String,
    pub scene_id: String,
    pub success: bool,
    pub oracle_success: bool,
    pub spl: f64,
    pub rgs: bool,
    pub rgspl: f64,
    pub path_length: f64,
    pub shortest_length: f64,
    pub visited: Vec<u32>,
    pub grounded_object: Option<u32>,
}

fn near_goal(graph: &NavGraph, node: u32, goals: &[u32], params: &ScoreParams) -> bool {
    if params.strict_goal_membership {
        return goals.contains(&node);
    }
    let p = graph.position(node);
    goals.iter().any(|&g| (graph.position(g) - p).norm() <= params.success_distance)
}

/// Scores a finished walk. `l` is the expert path length and `p` the walked
/// length, both summed over edge weights; a successful stop at the start
/// counts `p = l`.
pub fn score(
    triplet: &VlnTriplet,
    visited: &[u32],
    grounded: Option<u32>,
    graph: &NavGraph,
    params: &ScoreParams,
) -> EpisodeResult {
    let last = *visited.last().expect("a walk has at least its start node");
    let success = near_goal(graph, last, &triplet.goal_nodes, params);
    let oracle_success = visited.iter().any(|&v| near_goal(graph, v, &triplet.goal_nodes, params));
    let l = graph.path_length(&triplet.expert_path).unwrap_or(f64::NAN);
    let mut p = graph.path_length(visited).unwrap_or(f64::NAN);
    if success && visited.len() == 1 {
        p = l;
    }
    let ratio = if l.max(p) > 0.0 { l / l.max(p) } else { 1.0 };
    let rgs = success && grounded == Some(triplet.target_object);
    EpisodeResult {
        id: triplet.id.clone(),
        scene_id: triplet.scene_id.clone(),
        success,
        oracle_success,
        spl: if success { ratio } else { 0.0 },
        rgs,
        rgspl: if rgs { ratio } else { 0.0 },
        path_length: p,
        shortest_length: l,
        visited: visited.to_vec(),
        grounded_object: grounded,
    }
}

pub fn score_episode(ep: &Episode, params: &ScoreParams) -> Result<EpisodeResult, EvalError> {
    if ep.status != Status::Stopped {
        return Err(EvalError::StillRunning);
    }
    Ok(score(ep.triplet, &ep.visited, ep.grounded_object, ep.graph, params))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub episodes: usize,
    pub sr: f64,
    pub osr: f64,
    pub spl: f64,
    pub rgs: f64,
    pub rgspl: f64,
}

/// Rounds a percentage to two decimals.
pub fn round2(x: f64) -> f64 {
    (x * 100.0).round() / 100.0
}

/// Means as percentages with two decimals.
pub fn aggregate(results: &[EpisodeResult]) -> Result<Metrics, EvalError> {
    if results.is_empty() {
        return Err(EvalError::Empty);
    }
    let n = results.len() as f64;
    let mean = |f: &dyn Fn(&EpisodeResult) -> f64| round2(100.0 * results.iter().map(f).sum::<f64>() / n);
    Ok(Metrics {
        episodes: results.len(),
        sr: mean(&|r| r.success as u8 as f64),
        osr: mean(&|r| r.oracle_success as u8 as f64),
        spl: mean(&|r| r.spl),
        rgs: mean(&|r| r.rgs as u8 as f64),
        rgspl: mean(&|r| r.rgspl),
    })
}

pub fn aggregate_by_scene(results: &[EpisodeResult]) -> BTreeMap<String, Metrics> {
    let mut groups: BTreeMap<String, Vec<EpisodeResult>> = BTreeMap::new();
    for r in results {
        groups.entry(r.scene_id.clone()).or_default().push(r.clone());
    }
    groups.into_iter().map(|(k, v)| (k, aggregate(&v).expect("group is non-empty"))).collect()
}

/// One replayed episode: the actions an external policy took.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActionLog {
    pub id: String,
    pub actions: Vec<Action>,
}

pub enum Agent<'a, R: Rng> {
    /// Follows the expert path and grounds the target.
    Oracle,
    /// Uniform random walk of `steps` moves, then stops grounding a random
    /// visible object.
    Random { steps: usize, rng: &'a mut R },
    Replay(&'a HashMap<String, ActionLog>),
}

/// Runs one episode to completion. Replayed logs that end without a stop are
/// stopped without grounding.
pub fn run_episode<'a, R: Rng>(
    agent: &mut Agent<R>,
    triplet: &'a VlnTriplet,
    graph: &'a NavGraph,
    scene: Option<SceneObjects<'a>>,
) -> Result<Episode<'a>, EvalError> {
    let (mut ep, mut obs) = Episode::reset(triplet, graph, scene)?;
    match agent {
        Agent::Oracle => {
            for &n in &triplet.expert_path[1..] {
                ep.step(Action::MoveTo(n))?;
            }
            ep.step(Action::Stop(Some(triplet.target_object)))?;
        }
        Agent::Random { steps, rng } => {
            for _ in 0..*steps {
                let Some(&next) = obs.adjacent.choose(*rng) else { break };
                obs = ep.step(Action::MoveTo(next))?;
            }
            let g = obs.visible_objects.choose(*rng).map(|o| o.id);
            ep.step(Action::Stop(g))?;
        }
        Agent::Replay(logs) => {
            let log = logs.get(&triplet.id).ok_or_else(|| EvalError::MissingReplay(triplet.id.clone()))?;
            for &a in &log.actions {
                ep.step(a)?;
                if ep.status == Status::Stopped {
                    break;
                }
            }
            if ep.status == Status::Running {
                ep.step(Action::Stop(None))?;
            }
        }
    }
    Ok(ep)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SapTarget {
    Stop,
    Node(u32),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SapSample {
    pub triplet_id: String,
    pub case: String,
    pub history: Vec<u32>,
    pub target: SapTarget,
}

/// All-pairs distances over the graph, by edge weight or by hop count.
pub fn all_pairs(graph: &NavGraph, hops: bool) -> Vec<Vec<f64>> {
    (0..graph.len() as u32)
        .map(|s| {
            if hops {
                graph.hop_distances(&[s]).into_iter().map(|h| h.map_or(f64::INFINITY, |h| h as f64)).collect()
            } else {
                graph.shortest_distances(s)
            }
        })
        .collect()
}

/// The node `n != from` minimising `d(from, n) + d(n, goal)`; near-ties
/// within [`WEIGHT_EPS`] go to the lowest id. `None` if nothing reaches the
/// goal.
pub fn case_three_target(dist: &[Vec<f64>], from: u32, goal: u32) -> Option<u32> {
    let sums: Vec<(u32, f64)> = (0..dist.len() as u32)
        .filter(|&n| n != from)
        .map(|n| (n, dist[from as usize][n as usize] + dist[n as usize][goal as usize]))
        .filter(|(_, s)| s.is_finite())
        .collect();
    let min = sums.iter().map(|&(_, s)| s).fold(f64::INFINITY, f64::min);
    sums.iter().find(|&&(_, s)| s <= min + WEIGHT_EPS).map(|&(n, _)| n)
}

/// Samples of all three kinds: the full path with STOP, each proper prefix
/// with the next expert node, and `case_three` random starts with the
/// two-leg optimal target.
pub fn sap_samples<R: Rng + ?Sized>(
    triplet: &VlnTriplet,
    graph: &NavGraph,
    dist: &[Vec<f64>],
    case_three: usize,
    rng: &mut R,
) -> Vec<SapSample> {
    let path = &triplet.expert_path;
    let mut out = vec![SapSample {
        triplet_id: triplet.id.clone(),
        case: "i".into(),
        history: path.clone(),
        target: SapTarget::Stop,
    }];
    for t in 1..path.len() {
        out.push(SapSample {
            triplet_id: triplet.id.clone(),
            case: "ii".into(),
            history: path[..t].to_vec(),
            target: SapTarget::Node(path[t]),
        });
    }
    let Some(&goal) = path.last() else { return out };
    if graph.len() < 2 {
        return out;
    }
    for _ in 0..case_three {
        let from = rng.gen_range(0..graph.len() as u32);
        if let Some(n) = case_three_target(dist, from, goal) {
            out.push(SapSample {
                triplet_id: triplet.id.clone(),
                case: "iii".into(),
                history: vec![from],
                target: SapTarget::Node(n),
            });
        }
    }
    out
}

pub const MASK_TOKEN: &str = "[MASK]";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlmSample {
    pub triplet_id: String,
    pub tokens: Vec<String>,
    /// Original token at each masked position, `None` elsewhere.
    pub targets: Vec<Option<String>>,
}

/// Masks each token independently with `mask_prob`; if nothing was masked,
/// one uniformly chosen token is.
pub fn mlm_mask<R: Rng + ?Sized>(tokens: &[String], mask_prob: f64, rng: &mut R) -> (Vec<String>, Vec<Option<String>>) {
    let mut out = tokens.to_vec();
    let mut targets = vec![None; tokens.len()];
    for i in 0..tokens.len() {
        if rng.gen_bool(mask_prob.clamp(0.0, 1.0)) {
            targets[i] = Some(std::mem::replace(&mut out[i], MASK_TOKEN.to_string()));
        }
    }
    if !tokens.is_empty() && targets.iter().all(Option::is_none) {
        let i = rng.gen_range(0..tokens.len());
        targets[i] = Some(std::mem::replace(&mut out[i], MASK_TOKEN.to_string()));
    }
    (out, targets)
}

pub fn mlm_sample<R: Rng + ?Sized>(triplet: &VlnTriplet, mask_prob: f64, rng: &mut R) -> MlmSample {
    let tokens: Vec<String> = tokenize(&triplet.instruction).collect();
    let (tokens, targets) = mlm_mask(&tokens, mask_prob, rng);
    MlmSample { triplet_id: triplet.id.clone(), tokens, targets }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OgSample {
    pub triplet_id: String,
    pub trajectory: Vec<u32>,
    pub candidates: Vec<u32>,
    pub target_index: usize,
}

/// Objects visible at a node: those the 2D-3D map places in its views,
/// plus those whose centroid passes the goal visibility test there.
pub fn visible_objects_at(
    node: &PanoramaNode,
    objects: &[Object3D],
    view_map: &ViewMap,
    voxel_size: f64,
    occlusion_ratio: f64,
) -> BTreeSet<u32> {
    let mut set = objects_seen_at(view_map, node.id);
    for o in objects {
        if centroid_visible(node, o, voxel_size, occlusion_ratio) {
            set.insert(o.id);
        }
    }
    set
}

/// Candidates are shuffled with `rng`; the target index tracks the target.
pub fn og_sample<R: Rng + ?Sized>(
    triplet: &VlnTriplet,
    visible: &BTreeSet<u32>,
    rng: &mut R,
) -> Result<OgSample, EvalError> {
    let node = *triplet.expert_path.last().unwrap_or(&triplet.start_node);
    let mut candidates: Vec<u32> = visible.iter().copied().collect();
    candidates.shuffle(rng);
    let target_index = candidates
        .iter()
        .position(|&c| c == triplet.target_object)
        .ok_or(EvalError::TargetNotVisible { object: triplet.target_object, node })?;
    Ok(OgSample { triplet_id: triplet.id.clone(), trajectory: triplet.expert_path.clone(), candidates, target_index })
}
