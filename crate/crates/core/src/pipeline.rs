//! End-to-end orchestration: configuration, per-scene stages, the dataset
//! layout on disk, run manifests and dataset validation.
//!
//! Dataset layout:
//!
//! ```text
//! <out>/config.toml
//! <out>/scenes/<scene_id>/bundle/      scene bundle (see format.md)
//! <out>/scenes/<scene_id>/graph.json
//! <out>/scenes/<scene_id>/objects.json
//! <out>/scenes/<scene_id>/triplets.jsonl
//! <out>/scenes/<scene_id>/prompts.jsonl
//! <out>/triplets.jsonl                 all scenes, in scene order
//! <out>/prompts.jsonl
//! <out>/stats.json
//! <out>/run_manifest.json
//! ```

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bundle::{load_bundle, save_bundle, sha256_hex, BundleError};
use crate::eval::{visible_objects_at, ScoreParams};
use crate::fusion::{fuse_scene, FusionOutput, FusionParams, Object3D, ViewMap};
use crate::geometry::{CameraIntrinsics, Vec3};
use crate::navgraph::{
    build_graph, build_nodes, connect_edges, coverage, visibility_check, GeodesicGrid, GraphParams, NavGraph,
    StoredViews,
};
use crate::scene::{CaptureSpec, PanoramaNode, SceneBundle};
use crate::seeds::{derive_seed, tag};
use crate::synth::{build_panoramas, generate_scene, NoiseSpec, Renderer, SynthParams};
use crate::triplets::{
    centroid_visible, dataset_stats, export_prompt, generate_triplets, object_distance, DatasetStats,
    ObjectPixelIndex, SpeakerPrompt, TripletParams, VlnTriplet,
};
use crate::vocab::default_stuff_classes;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("stage {stage}{}: {msg}", scene.as_ref().map(|s| format!(" (scene {s})")).unwrap_or_default())]
    Stage { stage: &'static str, scene: Option<String>, msg: String },
    #[error("invalid config: {0}")]
    Config(String),
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{}: {msg}", path.display())]
    Parse { path: PathBuf, msg: String },
}

impl PipelineError {
    pub fn stage(stage: &'static str, scene: Option<&str>, msg: impl ToString) -> Self {
        Self::Stage { stage, scene: scene.map(str::to_string), msg: msg.to_string() }
    }

    /// True when the failure is about reading or writing files.
    pub fn is_io(&self) -> bool {
        match self {
            Self::Io { .. } => true,
            Self::Stage { msg, .. } => msg.starts_with("io:"),
            _ => false,
        }
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> PipelineError + '_ {
    move |source| PipelineError::Io { path: path.to_path_buf(), source }
}

fn bundle_err(stage: &'static str, scene: Option<&str>, e: BundleError) -> PipelineError {
    let msg = match &e {
        BundleError::Missing(_) | BundleError::Io { .. } => format!("io: {e}"),
        _ => e.to_string(),
    };
    PipelineError::stage(stage, scene, msg)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NoiseProfile {
    /// Probability that a thing class is confused with another thing class.
    pub rate: f64,
    pub boundary_jitter: u32,
    pub dropout: f64,
}

impl Default for NoiseProfile {
    fn default() -> Self {
        Self { rate: 0.0, boundary_jitter: 0, dropout: 0.0 }
    }
}

impl NoiseProfile {
    pub fn to_spec(&self, n_classes: usize) -> NoiseSpec {
        let mut spec = NoiseSpec::uniform_confusion(n_classes, self.rate, &default_stuff_classes());
        spec.boundary_jitter = self.boundary_jitter;
        spec.dropout = self.dropout;
        spec
    }
}

/// Profiles available without declaring them in the config file.
pub fn builtin_noise_profile(name: &str) -> Option<NoiseProfile> {
    match name {
        "identity" => Some(NoiseProfile::default()),
        "confusion30" => Some(NoiseProfile { rate: 0.3, ..Default::default() }),
        _ => None,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CaptureConfig {
    pub width: u32,
    pub height: u32,
    pub hfov_deg: f64,
    pub noise_profile: String,
}

impl Default for CaptureConfig {
    fn default() -> Self {
        Self { width: 64, height: 64, hfov_deg: 60.0, noise_profile: "confusion30".into() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProxyConfig {
    pub mask_prob: f64,
    /// Random-start action-prediction samples per triplet.
    pub sap_random_starts: usize,
    /// Measure the two-leg distance in hops instead of meters.
    pub sap_hop_distance: bool,
}

impl Default for ProxyConfig {
    fn default() -> Self {
        Self { mask_prob: 0.15, sap_random_starts: 1, sap_hop_distance: false }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ValidationConfig {
    pub min_coverage: f64,
}

impl Default for ValidationConfig {
    fn default() -> Self {
        Self { min_coverage: 0.85 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub seed: u64,
    /// Synthetic scenes to generate when no input is given.
    pub scenes: usize,
    /// A scene bundle, or a directory of scene bundles. Skips synthesis.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub input: Option<PathBuf>,
    pub output: PathBuf,
    pub synth: SynthParams,
    pub capture: CaptureConfig,
    pub noise_profiles: BTreeMap<String, NoiseProfile>,
    pub graph: GraphParams,
    pub fusion: FusionParams,
    pub triplets: TripletParams,
    pub eval: ScoreParams,
    pub proxy: ProxyConfig,
    pub validation: ValidationConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            seed: 1,
            scenes: 5,
            input: None,
            output: PathBuf::from("dataset"),
            synth: SynthParams::default(),
            capture: CaptureConfig::default(),
            noise_profiles: BTreeMap::new(),
            graph: GraphParams::default(),
            fusion: FusionParams::default(),
            triplets: TripletParams::default(),
            eval: ScoreParams::default(),
            proxy: ProxyConfig::default(),
            validation: ValidationConfig::default(),
        }
    }
}

impl PipelineConfig {
    pub fn from_toml(text: &str) -> Result<Self, PipelineError> {
        let cfg: Self = toml::from_str(text).map_err(|e| PipelineError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, PipelineError> {
        let text = fs::read_to_string(path).map_err(io_err(path))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes to TOML")
    }

    /// The config as stored inside a dataset: the output path is the
    /// dataset root itself, so it is written as `"."`.
    pub fn for_dataset(&self) -> Self {
        Self { output: PathBuf::from("."), ..self.clone() }
    }

    /// Hash of the dataset form, independent of where the output goes.
    pub fn hash(&self) -> String {
        sha256_hex(self.for_dataset().to_toml().as_bytes())
    }

    pub fn noise_profile(&self, name: &str) -> Result<NoiseProfile, PipelineError> {
        self.noise_profiles
            .get(name)
            .cloned()
            .or_else(|| builtin_noise_profile(name))
            .ok_or_else(|| PipelineError::Config(format!("unknown noise profile {name:?}")))
    }

    pub fn intrinsics(&self) -> Result<CameraIntrinsics, PipelineError> {
        CameraIntrinsics::new(self.capture.width, self.capture.height, self.capture.hfov_deg.to_radians())
            .map_err(|e| PipelineError::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        let cfg = |e: String| PipelineError::Config(e);
        self.synth.validate().map_err(|e| cfg(e.to_string()))?;
        self.graph.validate().map_err(|e| cfg(e.to_string()))?;
        self.fusion.validate().map_err(cfg)?;
        self.triplets.validate().map_err(|e| cfg(e.to_string()))?;
        self.intrinsics()?;
        let noise = self.noise_profile(&self.capture.noise_profile)?;
        for (name, p) in self.noise_profiles.iter().chain([(&self.capture.noise_profile, &noise)]) {
            if !(0.0..=1.0).contains(&p.rate) || !(0.0..=1.0).contains(&p.dropout) {
                return Err(cfg(format!("noise profile {name:?}: rate and dropout must lie in [0, 1]")));
            }
        }
        if !(0.0..=1.0).contains(&self.proxy.mask_prob) {
            return Err(cfg("proxy.mask_prob must lie in [0, 1]".into()));
        }
        if self.eval.success_distance.is_nan() || self.eval.success_distance < 0.0 {
            return Err(cfg("eval.success_distance must be non-negative".into()));
        }
        Ok(())
    }
}

/// Seed for one stage of one scene.
pub fn stage_seed(seed: u64, stage: &str, scene_id: &str) -> u64 {
    derive_seed(seed, &[tag(stage), tag(scene_id)])
}

pub fn synth_scene_id(index: usize) -> String {
    format!("synth_{index:04}")
}

/// The `index`-th synthetic scene of a run, with its capture settings.
pub fn synth_scene(cfg: &PipelineConfig, index: usize) -> Result<SceneBundle, PipelineError> {
    let id = synth_scene_id(index);
    let seed = derive_seed(cfg.seed, &[tag("synth"), index as u64]);
    let mut bundle = generate_scene(seed, &cfg.synth).map_err(|e| PipelineError::stage("synth", Some(&id), e))?;
    bundle.scene_id = id;
    let n = bundle.class_vocabulary.len();
    let profile = cfg.noise_profile(&cfg.capture.noise_profile)?;
    bundle.capture = Some(CaptureSpec {
        intrinsics: cfg.intrinsics()?,
        noise_profile: cfg.capture.noise_profile.clone(),
        noise: profile.to_spec(n),
        seed: stage_seed(cfg.seed, "capture", &bundle.scene_id),
    });
    Ok(bundle)
}

/// Builds the graph of a scene. Bundles with ground truth are sampled and
/// probed with the exact renderer; bundles with stored panoramas use the
/// stored node positions as candidates and their depth for visibility.
pub fn graph_stage(bundle: &SceneBundle, params: &GraphParams, seed: u64) -> Result<NavGraph, PipelineError> {
    let id = Some(bundle.scene_id.as_str());
    let err = |e: crate::navgraph::GraphError| PipelineError::stage("graph", id, e);
    if let Some(truth) = &bundle.ground_truth {
        let renderer = Renderer::new(truth, bundle.class_vocabulary.len(), bundle.sensor);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        return build_graph(&bundle.field, &renderer, params, &mut rng).map_err(err);
    }
    if bundle.nodes.is_empty() {
        return Err(PipelineError::stage("graph", id, "bundle has neither ground truth nor panoramas"));
    }
    params.validate().map_err(err)?;
    let candidates: Vec<Vec3> = bundle.nodes.iter().map(|n| n.position).collect();
    let order = build_nodes(&candidates, bundle.field.navigable_centroid(), params.min_node_spacing);
    let positions: Vec<Vec3> = order.iter().map(|&i| candidates[i]).collect();
    connect_edges(&positions, &bundle.field, &StoredViews { nodes: &bundle.nodes }, params).map_err(err)
}

/// Panoramas at the graph nodes, with ids equal to graph node ids: stored
/// views matched by position, or rendered with the bundle's capture spec.
pub fn panoramas_for(bundle: &SceneBundle, graph: &NavGraph) -> Result<Vec<PanoramaNode>, PipelineError> {
    let id = Some(bundle.scene_id.as_str());
    if !bundle.nodes.is_empty() {
        return graph
            .nodes
            .iter()
            .map(|g| {
                let stored = bundle
                    .nodes
                    .iter()
                    .find(|n| (n.position - g.xyz).norm() < 1e-6)
                    .ok_or_else(|| PipelineError::stage("label", id, format!("no stored panorama at node {}", g.id)))?;
                Ok(PanoramaNode { id: g.id, position: g.xyz, views: stored.views.clone() })
            })
            .collect();
    }
    let (Some(truth), Some(capture)) = (&bundle.ground_truth, &bundle.capture) else {
        return Err(PipelineError::stage("label", id, "bundle has no panoramas and no capture spec"));
    };
    let renderer = Renderer::new(truth, bundle.class_vocabulary.len(), bundle.sensor);
    let nodes: Vec<(u32, Vec3)> = graph.nodes.iter().map(|n| (n.id, n.xyz)).collect();
    build_panoramas(&renderer, &bundle.field, &nodes, &capture.intrinsics, &capture.noise, capture.seed)
        .map_err(|e| PipelineError::stage("label", id, e))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectsFile {
    pub objects: Vec<Object3D>,
    pub view_map: ViewMap,
}

impl From<&FusionOutput> for ObjectsFile {
    fn from(f: &FusionOutput) -> Self {
        Self { objects: f.objects.clone(), view_map: f.view_map.clone() }
    }
}

pub fn triplet_stage(
    bundle: &SceneBundle,
    graph: &NavGraph,
    panoramas: &[PanoramaNode],
    objects: &ObjectsFile,
    voxel_size: f64,
    params: &TripletParams,
    seed: u64,
) -> Result<(Vec<VlnTriplet>, Vec<SpeakerPrompt>), PipelineError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let triplets = generate_triplets(
        &bundle.scene_id,
        graph,
        panoramas,
        &objects.objects,
        voxel_size,
        bundle.ground_truth.as_ref(),
        params,
        &mut rng,
    )
    .map_err(|e| PipelineError::stage("triplets", Some(&bundle.scene_id), e))?;
    let by_id: HashMap<u32, &PanoramaNode> = panoramas.iter().map(|p| (p.id, p)).collect();
    let prompts = triplets
        .iter()
        .filter_map(|t| {
            let pano = by_id.get(t.expert_path.last()?)?;
            export_prompt(t, graph, &objects.objects, &objects.view_map, pano, params.max_other_tokens)
        })
        .collect();
    Ok((triplets, prompts))
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T, PipelineError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    serde_json::from_str(&text).map_err(|e| PipelineError::Parse { path: path.to_path_buf(), msg: e.to_string() })
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), PipelineError> {
    let mut text = serde_json::to_string_pretty(value).expect("value serializes to JSON");
    text.push('\n');
    fs::write(path, text).map_err(io_err(path))
}

pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>, PipelineError> {
    let file = fs::File::open(path).map_err(io_err(path))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(io_err(path))?;
        if line.trim().is_empty() {
            continue;
        }
        let v = serde_json::from_str(&line)
            .map_err(|e| PipelineError::Parse { path: path.to_path_buf(), msg: format!("line {}: {e}", i + 1) })?;
        out.push(v);
    }
    Ok(out)
}

pub fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> Result<(), PipelineError> {
    let mut buf = Vec::new();
    for item in items {
        serde_json::to_writer(&mut buf, item).expect("value serializes to JSON");
        buf.push(b'\n');
    }
    let mut f = fs::File::create(path).map_err(io_err(path))?;
    f.write_all(&buf).map_err(io_err(path))
}

pub fn read_graph(path: &Path) -> Result<NavGraph, PipelineError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    NavGraph::from_json(&text).map_err(|e| PipelineError::Parse { path: path.to_path_buf(), msg: e.to_string() })
}

pub fn write_graph(path: &Path, graph: &NavGraph) -> Result<(), PipelineError> {
    let mut text = graph.to_json();
    text.push('\n');
    fs::write(path, text).map_err(io_err(path))
}

/// Bundle directories under `path`: the path itself if it is a bundle,
/// otherwise its immediate sub-directories that hold a manifest, by name.
pub fn find_bundles(path: &Path) -> Result<Vec<PathBuf>, PipelineError> {
    if !path.exists() {
        return Err(PipelineError::stage("graph", None, format!("io: bundle path {} does not exist", path.display())));
    }
    if path.join("manifest.json").is_file() {
        return Ok(vec![path.to_path_buf()]);
    }
    let mut out: Vec<PathBuf> = fs::read_dir(path)
        .map_err(io_err(path))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.join("manifest.json").is_file())
        .collect();
    out.sort();
    if out.is_empty() {
        return Err(PipelineError::stage("graph", None, format!("no scene bundle under {}", path.display())));
    }
    Ok(out)
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct StageTimings {
    pub synth: f64,
    pub graph: f64,
    pub label: f64,
    pub triplets: f64,
    pub stats: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneSummary {
    pub scene_id: String,
    pub nodes: usize,
    pub edges: usize,
    pub coverage: f64,
    pub objects: usize,
    pub triplets: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub config_hash: String,
    pub seed: u64,
    pub jobs: usize,
    pub scenes: Vec<SceneSummary>,
    /// Wall-clock seconds per stage, summed over scenes.
    pub timings: StageTimings,
    pub total_seconds: f64,
    /// SHA-256 of every dataset file, by path relative to the dataset root.
    pub checksums: BTreeMap<String, String>,
    /// SHA-256 over the `path  checksum` lines of `checksums`.
    pub dataset_checksum: String,
}

pub const MANIFEST_FILE: &str = "run_manifest.json";

/// Checksums of every file under `root` except the run manifest.
pub fn dataset_checksums(root: &Path) -> Result<BTreeMap<String, String>, PipelineError> {
    fn walk(root: &Path, dir: &Path, out: &mut BTreeMap<String, String>) -> Result<(), PipelineError> {
        for entry in fs::read_dir(dir).map_err(io_err(dir))? {
            let path = entry.map_err(io_err(dir))?.path();
            if path.is_dir() {
                walk(root, &path, out)?;
                continue;
            }
            let rel = path.strip_prefix(root).expect("walked path is under root");
            let rel = rel.components().map(|c| c.as_os_str().to_string_lossy()).collect::<Vec<_>>().join("/");
            if rel == MANIFEST_FILE {
                continue;
            }
            let bytes = fs::read(&path).map_err(io_err(&path))?;
            out.insert(rel, sha256_hex(&bytes));
        }
        Ok(())
    }
    let mut out = BTreeMap::new();
    walk(root, root, &mut out)?;
    Ok(out)
}

pub fn combined_checksum(checksums: &BTreeMap<String, String>) -> String {
    let text: String = checksums.iter().map(|(p, c)| format!("{p}  {c}\n")).collect();
    sha256_hex(text.as_bytes())
}

struct SceneOutcome {
    summary: SceneSummary,
    triplets: Vec<VlnTriplet>,
    prompts: Vec<SpeakerPrompt>,
    timings: StageTimings,
}

enum SceneSource {
    Synth(usize),
    Bundle(PathBuf),
}

fn process_scene(cfg: &PipelineConfig, source: &SceneSource, staging: &Path) -> Result<SceneOutcome, PipelineError> {
    let mut timings = StageTimings::default();
    let t = Instant::now();
    let bundle = match source {
        SceneSource::Synth(i) => synth_scene(cfg, *i)?,
        SceneSource::Bundle(p) => load_bundle(p).map_err(|e| bundle_err("graph", None, e))?,
    };
    let id = bundle.scene_id.clone();
    let dir = staging.join(&id);
    fs::create_dir_all(&dir).map_err(io_err(&dir))?;
    save_bundle(&bundle, &dir.join("bundle")).map_err(|e| bundle_err("synth", Some(&id), e))?;
    timings.synth = t.elapsed().as_secs_f64();

    let t = Instant::now();
    let graph = graph_stage(&bundle, &cfg.graph, stage_seed(cfg.seed, "graph", &id))?;
    let cov = coverage(&graph, &bundle.field, cfg.graph.coverage_radius);
    write_graph(&dir.join("graph.json"), &graph)?;
    timings.graph = t.elapsed().as_secs_f64();

    let t = Instant::now();
    let panoramas = panoramas_for(&bundle, &graph)?;
    let fused = fuse_scene(&panoramas, &cfg.fusion);
    let objects = ObjectsFile::from(&fused);
    write_json(&dir.join("objects.json"), &objects)?;
    timings.label = t.elapsed().as_secs_f64();

    let t = Instant::now();
    let (triplets, prompts) = triplet_stage(
        &bundle,
        &graph,
        &panoramas,
        &objects,
        cfg.fusion.voxel_size,
        &cfg.triplets,
        stage_seed(cfg.seed, "triplets", &id),
    )?;
    write_jsonl(&dir.join("triplets.jsonl"), &triplets)?;
    write_jsonl(&dir.join("prompts.jsonl"), &prompts)?;
    timings.triplets = t.elapsed().as_secs_f64();

    Ok(SceneOutcome {
        summary: SceneSummary {
            scene_id: id,
            nodes: graph.len(),
            edges: graph.edges.len(),
            coverage: cov,
            objects: objects.objects.len(),
            triplets: triplets.len(),
        },
        triplets,
        prompts,
        timings,
    })
}

/// Runs every stage for every scene with at most `jobs` worker threads.
/// Each scene is written to a staging directory and moved into place when
/// all its stages succeed; a failed scene is moved to `quarantine/` and the
/// run fails with the stage that broke.
pub fn run_pipeline(cfg: &PipelineConfig, jobs: usize) -> Result<RunManifest, PipelineError> {
    cfg.validate()?;
    let start = Instant::now();
    let out = &cfg.output;
    if out.exists() && fs::read_dir(out).map_err(io_err(out))?.next().is_some() {
        return Err(PipelineError::Config(format!("output directory {} is not empty", out.display())));
    }
    let sources: Vec<SceneSource> = match &cfg.input {
        Some(p) => find_bundles(p)?.into_iter().map(SceneSource::Bundle).collect(),
        None => (0..cfg.scenes).map(SceneSource::Synth).collect(),
    };
    let staging = out.join(".staging");
    let scenes_dir = out.join("scenes");
    fs::create_dir_all(&staging).map_err(io_err(&staging))?;
    fs::create_dir_all(&scenes_dir).map_err(io_err(&scenes_dir))?;
    fs::write(out.join("config.toml"), cfg.for_dataset().to_toml()).map_err(io_err(out))?;

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| PipelineError::Config(e.to_string()))?;
    let results: Vec<Result<SceneOutcome, PipelineError>> =
        pool.install(|| sources.par_iter().map(|s| process_scene(cfg, s, &staging)).collect());

    let mut outcomes = Vec::new();
    let mut first_error = None;
    for r in results {
        match r {
            Ok(o) => outcomes.push(o),
            Err(e) => {
                first_error.get_or_insert(e);
            }
        }
    }
    for o in &outcomes {
        let id = &o.summary.scene_id;
        let (from, to) = (staging.join(id), scenes_dir.join(id));
        fs::rename(&from, &to).map_err(io_err(&from))?;
    }
    if let Some(e) = first_error {
        // whatever is left in staging belongs to failed scenes
        let quarantine = out.join("quarantine");
        fs::create_dir_all(&quarantine).map_err(io_err(&quarantine))?;
        for entry in fs::read_dir(&staging).map_err(io_err(&staging))? {
            let p = entry.map_err(io_err(&staging))?.path();
            let to = quarantine.join(p.file_name().expect("staged entry has a name"));
            fs::rename(&p, &to).map_err(io_err(&p))?;
        }
        fs::write(quarantine.join("error.txt"), format!("{e}\n")).map_err(io_err(&quarantine))?;
        let _ = fs::remove_dir(&staging);
        return Err(e);
    }
    fs::remove_dir(&staging).map_err(io_err(&staging))?;

    let mut timings = StageTimings::default();
    for o in &outcomes {
        timings.synth += o.timings.synth;
        timings.graph += o.timings.graph;
        timings.label += o.timings.label;
        timings.triplets += o.timings.triplets;
    }
    let t = Instant::now();
    let all_triplets: Vec<VlnTriplet> = outcomes.iter().flat_map(|o| o.triplets.iter().cloned()).collect();
    let all_prompts: Vec<SpeakerPrompt> = outcomes.iter().flat_map(|o| o.prompts.iter().cloned()).collect();
    write_jsonl(&out.join("triplets.jsonl"), &all_triplets)?;
    write_jsonl(&out.join("prompts.jsonl"), &all_prompts)?;
    write_json(&out.join("stats.json"), &dataset_stats(&all_triplets))?;
    timings.stats = t.elapsed().as_secs_f64();

    let checksums = dataset_checksums(out)?;
    let manifest = RunManifest {
        config_hash: cfg.hash(),
        seed: cfg.seed,
        jobs,
        scenes: outcomes.into_iter().map(|o| o.summary).collect(),
        timings,
        total_seconds: start.elapsed().as_secs_f64(),
        dataset_checksum: combined_checksum(&checksums),
        checksums,
    };
    write_json(&out.join(MANIFEST_FILE), &manifest)?;
    Ok(manifest)
}

pub fn read_stats(path: &Path) -> Result<DatasetStats, PipelineError> {
    read_json(path)
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CheckReport {
    pub name: String,
    pub checked: usize,
    pub violations: usize,
    /// The first violations, described.
    pub details: Vec<String>,
}

const MAX_DETAILS: usize = 50;

impl CheckReport {
    fn new(name: &str) -> Self {
        Self { name: name.to_string(), ..Default::default() }
    }

    fn record(&mut self, ok: bool, detail: impl FnOnce() -> String) {
        self.checked += 1;
        if !ok {
            self.violations += 1;
            if self.details.len() < MAX_DETAILS {
                self.details.push(detail());
            }
        }
    }

    fn absorb(&mut self, other: CheckReport) {
        self.checked += other.checked;
        self.violations += other.violations;
        let room = MAX_DETAILS.saturating_sub(self.details.len());
        self.details.extend(other.details.into_iter().take(room));
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub scenes: usize,
    pub triplets: usize,
    /// Problems that prevented checks from running at all.
    pub structural: Vec<String>,
    pub checks: Vec<CheckReport>,
    pub mean_coverage: Option<f64>,
}

impl ValidationReport {
    pub fn passed(&self) -> bool {
        self.structural.is_empty() && self.checks.iter().all(|c| c.violations == 0)
    }

    pub fn check(&self, name: &str) -> Option<&CheckReport> {
        self.checks.iter().find(|c| c.name == name)
    }
}

pub const CHECK_NAMES: [&str; 6] =
    ["node_spacing", "edge_soundness", "coverage", "triplet_validity", "goal_soundness", "og_consistency"];

struct SceneChecks {
    checks: Vec<CheckReport>,
    coverage: f64,
    triplets: usize,
}

fn validate_scene(dir: &Path, id: &str, cfg: &PipelineConfig) -> Result<SceneChecks, String> {
    let bundle = load_bundle(&dir.join("bundle")).map_err(|e| format!("{id}: {e}"))?;
    let graph = read_graph(&dir.join("graph.json")).map_err(|e| format!("{id}: {e}"))?;
    let objects: ObjectsFile = read_json(&dir.join("objects.json")).map_err(|e| format!("{id}: {e}"))?;
    let triplets: Vec<VlnTriplet> = read_jsonl(&dir.join("triplets.jsonl")).map_err(|e| format!("{id}: {e}"))?;
    let gp = &cfg.graph;
    let tp = &cfg.triplets;
    let mut reports: Vec<CheckReport> = CHECK_NAMES.iter().map(|n| CheckReport::new(n)).collect();

    let n = graph.len();
    for i in 0..n {
        for j in i + 1..n {
            let d = (graph.nodes[i].xyz - graph.nodes[j].xyz).norm();
            reports[0].record(d >= gp.min_node_spacing, || format!("{id}: nodes {i} and {j} are {d:.3} m apart"));
        }
    }

    let grid = GeodesicGrid::new(&bundle.field).map_err(|e| format!("{id}: {e}"))?;
    let renderer = bundle
        .ground_truth
        .as_ref()
        .map(|t| Renderer::new(t, bundle.class_vocabulary.len(), bundle.sensor));
    let stored = StoredViews { nodes: &bundle.nodes };
    let probe: &dyn crate::navgraph::DepthProbe = match &renderer {
        Some(r) => r,
        None => &stored,
    };
    let edge_reports: Vec<CheckReport> = graph
        .edges
        .par_iter()
        .map(|&(i, j, w)| {
            let mut r = CheckReport::new("edge_soundness");
            let (a, b) = (graph.position(i), graph.position(j));
            let geo = grid.distance(&a, &b).ok().flatten();
            let ok = geo.is_some_and(|g| g < gp.max_edge_geodesic && (g - w).abs() <= 1e-6)
                && visibility_check(probe, a, b, gp);
            r.record(ok, || format!("{id}: edge ({i}, {j}) weight {w:.3}, geodesic {geo:?}"));
            r
        })
        .collect();
    for r in edge_reports {
        reports[1].absorb(r);
    }

    let cov = coverage(&graph, &bundle.field, gp.coverage_radius);
    reports[2].record(cov >= cfg.validation.min_coverage, || format!("{id}: coverage {cov:.4}"));

    let by_id: HashMap<u32, &Object3D> = objects.objects.iter().map(|o| (o.id, o)).collect();
    for t in &triplets {
        let path = &t.expert_path;
        let hops = path.len().saturating_sub(1) as u32;
        let nodes_known = path.iter().chain(&t.goal_nodes).all(|&v| graph.contains(v));
        let ok = t.scene_id == id
            && nodes_known
            && path.first() == Some(&t.start_node)
            && path.windows(2).all(|w| graph.edge_weight(w[0], w[1]).is_some())
            && (tp.min_hops..=tp.max_hops).contains(&hops)
            && path.last().is_some_and(|v| t.goal_nodes.contains(v))
            && by_id.get(&t.target_object).is_some_and(|o| o.class == t.target_class);
        reports[3].record(ok, || format!("{}: invalid triplet", t.id));
    }

    if !triplets.is_empty() {
        let panoramas = panoramas_for(&bundle, &graph).map_err(|e| e.to_string())?;
        let pano: HashMap<u32, &PanoramaNode> = panoramas.iter().map(|p| (p.id, p)).collect();
        let index = ObjectPixelIndex::build(&panoramas, &objects.objects, cfg.fusion.voxel_size);
        for t in &triplets {
            let Some(obj) = by_id.get(&t.target_object) else { continue };
            for &g in &t.goal_nodes {
                let ok = pano.get(&g).is_some_and(|p| {
                    object_distance(&p.position, obj, tp.goal_distance) <= tp.d_o
                        && centroid_visible(p, obj, cfg.fusion.voxel_size, tp.occlusion_ratio)
                        && index.target_box(g, obj.id, tp.min_box_fill).is_some()
                });
                reports[4].record(ok, || format!("{}: goal node {g} fails the goal predicate", t.id));
            }
            let last = *t.expert_path.last().unwrap_or(&t.start_node);
            let ok = pano.get(&last).is_some_and(|p| {
                visible_objects_at(p, &objects.objects, &objects.view_map, cfg.fusion.voxel_size, tp.occlusion_ratio)
                    .contains(&obj.id)
            });
            reports[5].record(ok, || format!("{}: target not visible at final node {last}", t.id));
        }
    }
    Ok(SceneChecks { checks: reports, coverage: cov, triplets: triplets.len() })
}

/// Re-checks every invariant of a dataset directory. Problems are report
/// entries, never errors. Parameters come from the dataset's `config.toml`
/// when present.
pub fn validate_dataset(root: &Path) -> ValidationReport {
    let mut report = ValidationReport::default();
    let cfg = match root.join("config.toml") {
        p if p.is_file() => match PipelineConfig::load(&p) {
            Ok(c) => c,
            Err(e) => {
                report.structural.push(format!("config.toml: {e}"));
                return report;
            }
        },
        _ => PipelineConfig::default(),
    };
    let scenes_dir = root.join("scenes");
    let mut ids: Vec<String> = match fs::read_dir(&scenes_dir) {
        Ok(rd) => rd
            .filter_map(|e| e.ok())
            .filter(|e| e.path().is_dir())
            .map(|e| e.file_name().to_string_lossy().into_owned())
            .collect(),
        Err(_) => {
            report.structural.push(format!("{} is missing", scenes_dir.display()));
            return report;
        }
    };
    ids.sort();
    if ids.is_empty() {
        report.structural.push("dataset has no scenes".into());
        return report;
    }
    for required in ["graph.json", "objects.json", "triplets.jsonl", "bundle/manifest.json"] {
        for id in &ids {
            if !scenes_dir.join(id).join(required).is_file() {
                report.structural.push(format!("{id}: {required} is missing"));
            }
        }
    }
    if !report.structural.is_empty() {
        return report;
    }
    let results: Vec<Result<SceneChecks, String>> =
        ids.par_iter().map(|id| validate_scene(&scenes_dir.join(id), id, &cfg)).collect();
    report.scenes = ids.len();
    report.checks = CHECK_NAMES.iter().map(|n| CheckReport::new(n)).collect();
    let mut cov_sum = 0.0;
    for r in results {
        match r {
            Ok(s) => {
                cov_sum += s.coverage;
                report.triplets += s.triplets;
                for (acc, c) in report.checks.iter_mut().zip(s.checks) {
                    acc.absorb(c);
                }
            }
            Err(e) => report.structural.push(e),
        }
    }
    report.mean_coverage = Some(cov_sum / ids.len() as f64);
    report
}
