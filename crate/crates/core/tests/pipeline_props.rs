mod common;

use std::fs;
use std::path::Path;

use forge_core::bundle::{load_bundle, save_bundle};
use forge_core::navgraph::geodesic_distance;
use forge_core::pipeline::{
    read_graph, read_jsonl, run_pipeline, synth_scene, validate_dataset, write_graph, PipelineConfig, PipelineError,
    CHECK_NAMES,
};
use forge_core::triplets::VlnTriplet;

fn cfg_at(out: &Path, scenes: usize) -> PipelineConfig {
    PipelineConfig { scenes, output: out.to_path_buf(), ..Default::default() }
}

fn triplet_count(out: &Path) -> usize {
    read_jsonl::<VlnTriplet>(&out.join("triplets.jsonl")).unwrap().len()
}

#[test]
fn runs_are_reproducible_across_job_counts() {
    let tmp = tempfile::tempdir().unwrap();
    let a = run_pipeline(&cfg_at(&tmp.path().join("a"), 2), 1).unwrap();
    let b = run_pipeline(&cfg_at(&tmp.path().join("b"), 2), 2).unwrap();
    assert_eq!(a.dataset_checksum, b.dataset_checksum);
    assert_eq!(a.checksums, b.checksums);
    assert_eq!(a.config_hash, b.config_hash);
    assert!(a.checksums.keys().any(|k| k.ends_with("graph.json")));

    // a fresh dataset validates clean
    let report = validate_dataset(&tmp.path().join("a"));
    assert!(report.passed(), "{report:?}");
    assert_eq!(report.scenes, 2);
    for name in CHECK_NAMES {
        assert!(report.check(name).unwrap().checked > 0, "{name} checked nothing");
    }

    // a second run into a used directory is refused
    assert!(matches!(run_pipeline(&cfg_at(&tmp.path().join("a"), 2), 1), Err(PipelineError::Config(_))));
}

#[test]
fn larger_goal_radius_never_loses_triplets() {
    let tmp = tempfile::tempdir().unwrap();
    let mut counts = Vec::new();
    for (k, d_o) in [2.0, 3.0].into_iter().enumerate() {
        let mut cfg = cfg_at(&tmp.path().join(format!("d{k}")), 2);
        cfg.triplets.d_o = d_o;
        run_pipeline(&cfg, 1).unwrap();
        counts.push(triplet_count(&cfg.output));
    }
    assert!(counts[0] <= counts[1], "{counts:?}");
}

#[test]
fn one_corrupted_edge_is_one_violation() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("ds");
    run_pipeline(&cfg_at(&out, 1), 1).unwrap();
    let scene = out.join("scenes/synth_0000");
    let bundle = load_bundle(&scene.join("bundle")).unwrap();
    let graph = read_graph(&scene.join("graph.json")).unwrap();
    // a non-adjacent pair about 5 m apart along the floor
    let mut pick = None;
    'outer: for i in 0..graph.len() as u32 {
        for j in i + 1..graph.len() as u32 {
            if graph.edge_weight(i, j).is_some() {
                continue;
            }
            let g = geodesic_distance(&bundle.field, &graph.position(i), &graph.position(j)).unwrap();
            if let Some(g) = g.filter(|g| (4.5..5.5).contains(g)) {
                pick = Some((i, j, g));
                break 'outer;
            }
        }
    }
    let (i, j, g) = pick.expect("scene has a pair about 5 m apart");
    let mut edges = graph.edges.clone();
    edges.push((i, j, g));
    let corrupted = forge_core::navgraph::NavGraph::from_parts(graph.nodes.clone(), edges).unwrap();
    write_graph(&scene.join("graph.json"), &corrupted).unwrap();
    let report = validate_dataset(&out);
    let edge = report.check("edge_soundness").unwrap();
    assert_eq!(edge.violations, 1, "{:?}", edge.details);
    assert!(!report.passed());
}

#[test]
fn empty_directory_is_a_structural_error() {
    let tmp = tempfile::tempdir().unwrap();
    let report = validate_dataset(tmp.path());
    assert!(!report.structural.is_empty());
    assert!(!report.passed());
    let missing = validate_dataset(&tmp.path().join("nope"));
    assert!(!missing.structural.is_empty());
}

#[test]
fn missing_input_names_the_stage() {
    let tmp = tempfile::tempdir().unwrap();
    let mut cfg = cfg_at(&tmp.path().join("out"), 1);
    cfg.input = Some(tmp.path().join("no_such_bundles"));
    let err = run_pipeline(&cfg, 1).unwrap_err();
    assert!(matches!(&err, PipelineError::Stage { stage: "graph", .. }), "{err}");
    assert!(err.is_io());
    assert!(err.to_string().contains("graph"), "{err}");
}

#[test]
fn failed_scene_is_quarantined() {
    let tmp = tempfile::tempdir().unwrap();
    let input = tmp.path().join("bundles");
    let cfg = cfg_at(&tmp.path().join("out"), 2);
    let good = synth_scene(&cfg, 0).unwrap();
    let mut bad = synth_scene(&cfg, 1).unwrap();
    bad.ground_truth = None;
    bad.capture = None;
    save_bundle(&good, &input.join("a")).unwrap();
    save_bundle(&bad, &input.join("b")).unwrap();
    let cfg = PipelineConfig { input: Some(input), ..cfg };
    let err = run_pipeline(&cfg, 1).unwrap_err();
    assert!(matches!(&err, PipelineError::Stage { stage: "graph", .. }), "{err}");
    let out = &cfg.output;
    assert!(out.join("quarantine").join(&bad.scene_id).is_dir());
    assert!(fs::read_to_string(out.join("quarantine/error.txt")).unwrap().contains(&bad.scene_id));
    assert!(out.join("scenes").join(&good.scene_id).join("triplets.jsonl").is_file());
    assert!(!out.join(".staging").exists());
    assert!(!out.join("run_manifest.json").exists());
}
