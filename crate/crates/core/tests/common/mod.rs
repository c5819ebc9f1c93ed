#![allow(dead_code)]

use forge_core::geometry::Vec3;
use forge_core::navgraph::NavGraph;
use forge_core::pipeline::{graph_stage, panoramas_for, stage_seed, synth_scene, PipelineConfig};
use forge_core::scene::{PanoramaNode, SceneBundle};

pub fn p3(v: &Vec3) -> [f64; 3] {
    [v.x, v.y, v.z]
}

pub fn config(noise: &str) -> PipelineConfig {
    let mut cfg = PipelineConfig::default();
    cfg.capture.noise_profile = noise.to_string();
    cfg
}

pub fn scene(cfg: &PipelineConfig, index: usize) -> (SceneBundle, NavGraph) {
    let bundle = synth_scene(cfg, index).unwrap();
    let graph = graph_stage(&bundle, &cfg.graph, stage_seed(cfg.seed, "graph", &bundle.scene_id)).unwrap();
    (bundle, graph)
}

pub fn scene_with_views(cfg: &PipelineConfig, index: usize) -> (SceneBundle, NavGraph, Vec<PanoramaNode>) {
    let (bundle, graph) = scene(cfg, index);
    let panoramas = panoramas_for(&bundle, &graph).unwrap();
    (bundle, graph, panoramas)
}

pub fn edge_list(graph: &NavGraph) -> Vec<(u32, u32, f64)> {
    graph.edges.clone()
}
