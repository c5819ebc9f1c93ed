use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use thiserror::Error;

use forge_core::bundle::{load_bundle, save_bundle};
use forge_core::eval::{
    aggregate, aggregate_by_scene, all_pairs, mlm_sample, og_sample, run_episode, sap_samples, score_episode,
    visible_objects_at, ActionLog, Agent, EpisodeResult, Metrics, SceneObjects,
};
use forge_core::fusion::{fuse_scene, label_accuracy, single_view_scene, Connectivity};
use forge_core::navgraph::{coverage, NavGraph};
use forge_core::pipeline::{
    graph_stage, panoramas_for, read_graph, read_json, read_jsonl, run_pipeline, stage_seed, synth_scene,
    triplet_stage, validate_dataset, write_graph, write_json, write_jsonl, ObjectsFile, PipelineConfig, PipelineError,
};
use forge_core::seeds::{derive_seed, tag};
use forge_core::triplets::{dataset_stats, merge_instructions, InstructionMode, InstructionRecord, VlnTriplet};

#[derive(Parser)]
#[command(name = "forge", version, about = "Navigation graphs, object labels and instruction triplets from indoor scenes")]
struct Cli {
    /// Base seed; overrides the config file.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// TOML configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate synthetic scene bundles.
    Synth(SynthArgs),
    /// Build the navigation graph of a bundle.
    Graph(GraphArgs),
    /// Fuse per-view labels into 3D objects.
    Label(LabelArgs),
    /// Generate object-trajectory-instruction triplets.
    Triplets(TripletArgs),
    /// Build pretraining samples.
    Proxy(ProxyArgs),
    /// Run an agent over triplets and score it.
    Eval(EvalArgs),
    /// Dataset statistics of a triplet file.
    Stats(StatsArgs),
    /// Re-check every invariant of a dataset directory.
    Validate(ValidateArgs),
    /// Run every stage end to end.
    Run(RunArgs),
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    scenes: Option<usize>,
    #[arg(long)]
    out: PathBuf,
    /// Named noise profile for the stored capture spec.
    #[arg(long)]
    noise: Option<String>,
}

#[derive(Args)]
struct GraphArgs {
    #[arg(long)]
    bundle: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    samples: Option<usize>,
    #[arg(long)]
    spacing: Option<f64>,
    #[arg(long)]
    edge: Option<f64>,
    #[arg(long)]
    visdepth: Option<f64>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Baseline {
    SingleView,
}

#[derive(Args)]
struct LabelArgs {
    #[arg(long)]
    bundle: PathBuf,
    #[arg(long)]
    graph: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    voxel: Option<f64>,
    /// 6, 18 or 26.
    #[arg(long)]
    connectivity: Option<u8>,
    #[arg(long, value_enum)]
    baseline: Option<Baseline>,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    TemplateObj,
    TemplateSent,
}

#[derive(Args)]
struct TripletArgs {
    #[arg(long)]
    bundle: PathBuf,
    #[arg(long)]
    graph: PathBuf,
    #[arg(long)]
    objects: PathBuf,
    /// Maximum node-object distance for goal nodes; `inf` disables it.
    #[arg(long = "do")]
    d_o: Option<f64>,
    #[arg(long, value_enum)]
    mode: Option<ModeArg>,
    #[arg(long)]
    out: PathBuf,
    /// Speaker prompts (default: prompts.jsonl next to --out).
    #[arg(long)]
    prompts: Option<PathBuf>,
    /// Instructions from an external speaker, merged by triplet id.
    #[arg(long)]
    instructions: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Task {
    Sap,
    Mlm,
    Og,
}

#[derive(Args)]
struct ProxyArgs {
    #[arg(long, value_enum)]
    task: Task,
    #[arg(long)]
    triplets: PathBuf,
    /// Required for sap and og.
    #[arg(long)]
    graph: Option<PathBuf>,
    /// Required for og.
    #[arg(long)]
    bundle: Option<PathBuf>,
    /// Required for og.
    #[arg(long)]
    objects: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum AgentArg {
    Oracle,
    Random,
    Replay,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    triplets: PathBuf,
    /// Graph of a single scene.
    #[arg(long, conflicts_with = "dataset", required_unless_present = "dataset")]
    graph: Option<PathBuf>,
    /// Dataset directory; graphs and objects are read per scene.
    #[arg(long)]
    dataset: Option<PathBuf>,
    /// Objects of a single scene, for observations.
    #[arg(long, conflicts_with = "dataset")]
    objects: Option<PathBuf>,
    #[arg(long, value_enum)]
    agent: AgentArg,
    /// Action logs (JSONL of {id, actions}) for the replay agent.
    #[arg(long, required_if_eq("agent", "replay"))]
    replay: Option<PathBuf>,
    /// Moves made by the random agent before stopping.
    #[arg(long, default_value_t = 20)]
    random_steps: usize,
    /// Count success only when stopping on a goal node.
    #[arg(long)]
    strict: bool,
    #[arg(long)]
    success_distance: Option<f64>,
    #[arg(long)]
    out: PathBuf,
    /// CSV of metrics against the number of environments.
    #[arg(long)]
    plot_data: Option<PathBuf>,
}

#[derive(Args)]
struct StatsArgs {
    /// A triplets.jsonl file or a dataset directory.
    #[arg(long)]
    triplets: PathBuf,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ValidateArgs {
    dir: PathBuf,
    /// Write the full report as JSON.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    scenes: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Scene bundle or directory of bundles; skips synthesis.
    #[arg(long)]
    input: Option<PathBuf>,
}

#[derive(Debug, Error)]
enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Io(String),
    #[error("{0}")]
    Failed(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            Self::Failed(_) => 1,
            Self::Usage(_) => 2,
            Self::Io(_) => 3,
        }
    }
}

impl From<PipelineError> for CliError {
    fn from(e: PipelineError) -> Self {
        match &e {
            PipelineError::Config(_) => Self::Usage(e.to_string()),
            PipelineError::Io { .. } | PipelineError::Parse { .. } => Self::Io(e.to_string()),
            PipelineError::Stage { .. } if e.is_io() => Self::Io(e.to_string()),
            PipelineError::Stage { .. } => Self::Failed(e.to_string()),
        }
    }
}

type Result<T> = std::result::Result<T, CliError>;

fn failed(e: impl ToString) -> CliError {
    CliError::Failed(e.to_string())
}

fn ensure_parent(path: &Path) -> Result<()> {
    match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => {
            fs::create_dir_all(p).map_err(|e| CliError::Io(format!("{}: {e}", p.display())))
        }
        _ => Ok(()),
    }
}

fn print_json<T: Serialize>(value: &T) {
    println!("{}", serde_json::to_string(value).expect("value serializes to JSON"));
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code())
        }
    }
}

fn dispatch(cli: Cli) -> Result<u8> {
    let mut cfg = match &cli.config {
        Some(p) => PipelineConfig::load(p)?,
        None => PipelineConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    let jobs = cli.jobs.unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
    if jobs == 0 {
        return Err(CliError::Usage("--jobs must be at least 1".into()));
    }
    match cli.command {
        Command::Synth(a) => synth(cfg, a),
        Command::Graph(a) => graph(cfg, a),
        Command::Label(a) => label(cfg, a),
        Command::Triplets(a) => triplets(cfg, a),
        Command::Proxy(a) => proxy(cfg, a),
        Command::Eval(a) => eval(cfg, a),
        Command::Stats(a) => stats(a),
        Command::Validate(a) => validate(a),
        Command::Run(a) => run(cfg, a, jobs),
    }
}

fn synth(mut cfg: PipelineConfig, a: SynthArgs) -> Result<u8> {
    if let Some(n) = a.noise {
        cfg.capture.noise_profile = n;
    }
    cfg.validate()?;
    let scenes = a.scenes.unwrap_or(cfg.scenes);
    for i in 0..scenes {
        let bundle = synth_scene(&cfg, i)?;
        let dir = a.out.join(&bundle.scene_id);
        save_bundle(&bundle, &dir).map_err(|e| CliError::Io(e.to_string()))?;
        println!("{}", dir.display());
    }
    Ok(0)
}

fn load(path: &Path, stage: &str) -> Result<forge_core::scene::SceneBundle> {
    load_bundle(path).map_err(|e| match e {
        forge_core::bundle::BundleError::Missing(_) | forge_core::bundle::BundleError::Io { .. } => {
            CliError::Io(format!("stage {stage}: {e}"))
        }
        _ => failed(format!("stage {stage}: {e}")),
    })
}

fn graph(mut cfg: PipelineConfig, a: GraphArgs) -> Result<u8> {
    let g = &mut cfg.graph;
    g.sample_count = a.samples.unwrap_or(g.sample_count);
    g.min_node_spacing = a.spacing.unwrap_or(g.min_node_spacing);
    g.max_edge_geodesic = a.edge.unwrap_or(g.max_edge_geodesic);
    g.min_visibility_depth = a.visdepth.unwrap_or(g.min_visibility_depth);
    cfg.validate()?;
    let bundle = load(&a.bundle, "graph")?;
    let graph = graph_stage(&bundle, &cfg.graph, stage_seed(cfg.seed, "graph", &bundle.scene_id))?;
    ensure_parent(&a.out)?;
    write_graph(&a.out, &graph)?;
    let cov = coverage(&graph, &bundle.field, cfg.graph.coverage_radius);
    print_json(&serde_json::json!({
        "scene_id": bundle.scene_id,
        "nodes": graph.len(),
        "edges": graph.edges.len(),
        "components": graph.components().len(),
        "coverage": cov,
    }));
    Ok(0)
}

fn label(mut cfg: PipelineConfig, a: LabelArgs) -> Result<u8> {
    cfg.fusion.voxel_size = a.voxel.unwrap_or(cfg.fusion.voxel_size);
    if let Some(c) = a.connectivity {
        cfg.fusion.connectivity = match c {
            6 => Connectivity::Six,
            18 => Connectivity::Eighteen,
            26 => Connectivity::TwentySix,
            _ => return Err(CliError::Usage(format!("--connectivity must be 6, 18 or 26, got {c}"))),
        };
    }
    cfg.validate()?;
    let bundle = load(&a.bundle, "label")?;
    let graph = read_graph(&a.graph)?;
    let panoramas = panoramas_for(&bundle, &graph)?;
    let file = match a.baseline {
        None => ObjectsFile::from(&fuse_scene(&panoramas, &cfg.fusion)),
        Some(Baseline::SingleView) => {
            ObjectsFile { objects: single_view_scene(&panoramas, &cfg.fusion), view_map: Default::default() }
        }
    };
    ensure_parent(&a.out)?;
    write_json(&a.out, &file)?;
    let accuracy = bundle.ground_truth.as_ref().map(|t| label_accuracy(&file.objects, t));
    print_json(&serde_json::json!({
        "scene_id": bundle.scene_id,
        "objects": file.objects.len(),
        "label_accuracy": accuracy,
    }));
    Ok(0)
}

fn triplets(mut cfg: PipelineConfig, a: TripletArgs) -> Result<u8> {
    cfg.triplets.d_o = a.d_o.unwrap_or(cfg.triplets.d_o);
    if let Some(m) = a.mode {
        cfg.triplets.mode = match m {
            ModeArg::TemplateObj => InstructionMode::TemplateObj,
            ModeArg::TemplateSent => InstructionMode::TemplateSent,
        };
    }
    cfg.validate()?;
    let bundle = load(&a.bundle, "triplets")?;
    let graph = read_graph(&a.graph)?;
    let objects: ObjectsFile = read_json(&a.objects)?;
    let panoramas = panoramas_for(&bundle, &graph)?;
    let (mut triplets, prompts) = triplet_stage(
        &bundle,
        &graph,
        &panoramas,
        &objects,
        cfg.fusion.voxel_size,
        &cfg.triplets,
        stage_seed(cfg.seed, "triplets", &bundle.scene_id),
    )?;
    if let Some(p) = &a.instructions {
        let records: Vec<InstructionRecord> = read_jsonl(p)?;
        merge_instructions(&mut triplets, &records).map_err(failed)?;
    }
    ensure_parent(&a.out)?;
    write_jsonl(&a.out, &triplets)?;
    let prompts_path = a.prompts.unwrap_or_else(|| a.out.with_file_name("prompts.jsonl"));
    write_jsonl(&prompts_path, &prompts)?;
    print_json(&serde_json::json!({ "scene_id": bundle.scene_id, "triplets": triplets.len() }));
    Ok(0)
}

fn require<'a>(p: &'a Option<PathBuf>, flag: &str, task: &str) -> Result<&'a PathBuf> {
    p.as_ref().ok_or_else(|| CliError::Usage(format!("--{flag} is required for --task {task}")))
}

fn proxy(cfg: PipelineConfig, a: ProxyArgs) -> Result<u8> {
    cfg.validate()?;
    let triplets: Vec<VlnTriplet> = read_jsonl(&a.triplets)?;
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, &[tag("proxy")]));
    ensure_parent(&a.out)?;
    let count = match a.task {
        Task::Sap => {
            let graph = read_graph(require(&a.graph, "graph", "sap")?)?;
            let dist = all_pairs(&graph, cfg.proxy.sap_hop_distance);
            let samples: Vec<_> = triplets
                .iter()
                .flat_map(|t| sap_samples(t, &graph, &dist, cfg.proxy.sap_random_starts, &mut rng))
                .collect();
            write_jsonl(&a.out, &samples)?;
            samples.len()
        }
        Task::Mlm => {
            let samples: Vec<_> = triplets.iter().map(|t| mlm_sample(t, cfg.proxy.mask_prob, &mut rng)).collect();
            write_jsonl(&a.out, &samples)?;
            samples.len()
        }
        Task::Og => {
            let graph = read_graph(require(&a.graph, "graph", "og")?)?;
            let bundle = load(require(&a.bundle, "bundle", "og")?, "proxy")?;
            let objects: ObjectsFile = read_json(require(&a.objects, "objects", "og")?)?;
            let panoramas = panoramas_for(&bundle, &graph)?;
            let by_id: HashMap<u32, _> = panoramas.iter().map(|p| (p.id, p)).collect();
            let mut samples = Vec::new();
            for t in &triplets {
                let last = *t.expert_path.last().unwrap_or(&t.start_node);
                let node = by_id.get(&last).ok_or_else(|| failed(format!("{}: node {last} not in graph", t.id)))?;
                let visible = visible_objects_at(
                    node,
                    &objects.objects,
                    &objects.view_map,
                    cfg.fusion.voxel_size,
                    cfg.triplets.occlusion_ratio,
                );
                samples.push(og_sample(t, &visible, &mut rng).map_err(|e| failed(format!("{}: {e}", t.id)))?);
            }
            write_jsonl(&a.out, &samples)?;
            samples.len()
        }
    };
    print_json(&serde_json::json!({ "samples": count }));
    Ok(0)
}

#[derive(Serialize)]
struct EvalReport {
    aggregate: Metrics,
    by_scene: BTreeMap<String, Metrics>,
    episodes: Vec<EpisodeResult>,
}

struct SceneData {
    graph: NavGraph,
    objects: Option<ObjectsFile>,
}

fn eval(mut cfg: PipelineConfig, a: EvalArgs) -> Result<u8> {
    cfg.eval.strict_goal_membership |= a.strict;
    cfg.eval.success_distance = a.success_distance.unwrap_or(cfg.eval.success_distance);
    cfg.validate()?;
    let triplets: Vec<VlnTriplet> = read_jsonl(&a.triplets)?;
    let mut scenes: BTreeMap<String, SceneData> = BTreeMap::new();
    if let Some(g) = &a.graph {
        let ids: std::collections::BTreeSet<&String> = triplets.iter().map(|t| &t.scene_id).collect();
        if ids.len() > 1 {
            return Err(CliError::Usage("triplets span several scenes; use --dataset".into()));
        }
        if let Some(id) = ids.into_iter().next() {
            let data = SceneData { graph: read_graph(g)?, objects: a.objects.as_deref().map(read_json).transpose()? };
            scenes.insert(id.clone(), data);
        }
    } else if let Some(root) = &a.dataset {
        for t in &triplets {
            if scenes.contains_key(&t.scene_id) {
                continue;
            }
            let dir = root.join("scenes").join(&t.scene_id);
            let data = SceneData { graph: read_graph(&dir.join("graph.json"))?, objects: Some(read_json(&dir.join("objects.json"))?) };
            scenes.insert(t.scene_id.clone(), data);
        }
    }
    let logs: HashMap<String, ActionLog> = match &a.replay {
        Some(p) => read_jsonl::<ActionLog>(p)?.into_iter().map(|l| (l.id.clone(), l)).collect(),
        None => HashMap::new(),
    };
    let mut results = Vec::with_capacity(triplets.len());
    for t in &triplets {
        let data = &scenes[&t.scene_id];
        let scene = data.objects.as_ref().map(|o| SceneObjects { objects: &o.objects, view_map: &o.view_map });
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, &[tag("eval"), tag(&t.id)]));
        let mut agent = match a.agent {
            AgentArg::Oracle => Agent::Oracle,
            AgentArg::Random => Agent::Random { steps: a.random_steps, rng: &mut rng },
            AgentArg::Replay => Agent::Replay(&logs),
        };
        let ep = run_episode(&mut agent, t, &data.graph, scene).map_err(|e| failed(format!("{}: {e}", t.id)))?;
        results.push(score_episode(&ep, &cfg.eval).map_err(failed)?);
    }
    let report = EvalReport {
        aggregate: aggregate(&results).map_err(failed)?,
        by_scene: aggregate_by_scene(&results),
        episodes: results,
    };
    ensure_parent(&a.out)?;
    write_json(&a.out, &report)?;
    if let Some(p) = &a.plot_data {
        ensure_parent(p)?;
        fs::write(p, environment_curve(&report.episodes)).map_err(|e| CliError::Io(format!("{}: {e}", p.display())))?;
    }
    print_json(&report.aggregate);
    Ok(0)
}

/// Metrics over the first k environments (by id) for k = 1, 2, 4, ... and
/// the full set.
fn environment_curve(results: &[EpisodeResult]) -> String {
    let envs: Vec<&String> = results.iter().map(|r| &r.scene_id).collect::<std::collections::BTreeSet<_>>().into_iter().collect();
    let mut ks: Vec<usize> = std::iter::successors(Some(1usize), |k| Some(k * 2)).take_while(|&k| k < envs.len()).collect();
    ks.push(envs.len());
    let mut csv = String::from("environments,episodes,sr,osr,spl,rgs,rgspl\n");
    for k in ks {
        let keep: std::collections::BTreeSet<&String> = envs[..k].iter().copied().collect();
        let subset: Vec<EpisodeResult> = results.iter().filter(|r| keep.contains(&r.scene_id)).cloned().collect();
        if let Ok(m) = aggregate(&subset) {
            csv.push_str(&format!("{k},{},{},{},{},{},{}\n", m.episodes, m.sr, m.osr, m.spl, m.rgs, m.rgspl));
        }
    }
    csv
}

fn stats(a: StatsArgs) -> Result<u8> {
    let path = if a.triplets.is_dir() { a.triplets.join("triplets.jsonl") } else { a.triplets };
    let triplets: Vec<VlnTriplet> = read_jsonl(&path)?;
    let s = dataset_stats(&triplets);
    if let Some(out) = &a.out {
        ensure_parent(out)?;
        write_json(out, &s)?;
    }
    print_json(&s);
    Ok(0)
}

fn validate(a: ValidateArgs) -> Result<u8> {
    let report = validate_dataset(&a.dir);
    for s in &report.structural {
        println!("STRUCTURE {s}");
    }
    for c in &report.checks {
        let status = if c.violations == 0 { "PASS" } else { "FAIL" };
        println!("{status} {} checked={} violations={}", c.name, c.checked, c.violations);
        for d in &c.details {
            println!("  {d}");
        }
    }
    if let Some(cov) = report.mean_coverage {
        println!("scenes={} triplets={} mean_coverage={cov:.4}", report.scenes, report.triplets);
    }
    if let Some(out) = &a.out {
        ensure_parent(out)?;
        write_json(out, &report)?;
    }
    Ok(if report.passed() { 0 } else { 1 })
}

fn run(mut cfg: PipelineConfig, a: RunArgs, jobs: usize) -> Result<u8> {
    cfg.scenes = a.scenes.unwrap_or(cfg.scenes);
    if let Some(o) = a.out {
        cfg.output = o;
    }
    if let Some(i) = a.input {
        cfg.input = Some(i);
    }
    let manifest = run_pipeline(&cfg, jobs)?;
    let triplets: usize = manifest.scenes.iter().map(|s| s.triplets).sum();
    print_json(&serde_json::json!({
        "output": cfg.output,
        "scenes": manifest.scenes.len(),
        "triplets": triplets,
        "dataset_checksum": manifest.dataset_checksum,
        "seconds": manifest.total_seconds,
    }));
    Ok(0)
}
