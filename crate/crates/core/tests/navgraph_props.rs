mod common;

use forge_core::geometry::Vec3;
use forge_core::navgraph::{
    coverage, sample_navigable, visibility_check, GeodesicGrid, GraphNode, GraphParams, NavGraph,
};
use forge_core::pipeline::{graph_stage, stage_seed};
use forge_core::scene::{CellRef, FloorGrid, NavigabilityField};
use forge_core::synth::{Renderer, SceneTruth};
use forge_testkit as tk;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn field_from(nav: Vec<bool>, w: usize, h: usize) -> NavigabilityField {
    NavigabilityField {
        floors: vec![FloorGrid { floor_z: 0.0, cell_size: 0.1, origin: [0.0, 0.0], width: w, height: h, navigable: nav }],
        eye_height: 1.5,
        stairs: vec![],
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn geodesic_matches_brute_dijkstra(
        w in 2usize..14, h in 2usize..14, seed in any::<u64>(), density in 0.0f64..0.45,
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let nav: Vec<bool> = (0..w * h).map(|_| !rng.gen_bool(density)).collect();
        let free: Vec<usize> = (0..w * h).filter(|&i| nav[i]).collect();
        prop_assume!(free.len() >= 2);
        let a = free[rng.gen_range(0..free.len())];
        let b = free[rng.gen_range(0..free.len())];
        let field = field_from(nav.clone(), w, h);
        let grid = GeodesicGrid::new(&field).unwrap();
        let ours = grid.distance_between_cells(
            CellRef { floor: 0, x: a % w, y: a / w },
            CellRef { floor: 0, x: b % w, y: b / w },
        );
        let oracle = tk::grid_geodesic(&nav, w, h, 0.1, (a % w, a / w), (b % w, b / w));
        match (ours, oracle) {
            (Some(x), Some(y)) => prop_assert!((x - y).abs() < 1e-9, "{} vs {}", x, y),
            (None, None) => {}
            (x, y) => prop_assert!(false, "{:?} vs {:?}", x, y),
        }
    }

    #[test]
    fn coverage_is_monotone_in_nodes(seed in any::<u64>(), n in 1usize..8) {
        let field = field_from(vec![true; 60 * 40], 60, 40);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let pts = sample_navigable(&field, n + 1, &mut rng);
        let graph = |k: usize| NavGraph::new(pts[..k].to_vec(), vec![]).unwrap();
        let before = coverage(&graph(n), &field, 1.0);
        let after = coverage(&graph(n + 1), &field, 1.0);
        prop_assert!(after >= before);
        prop_assert_eq!(coverage(&graph(1), &field, f64::INFINITY), 1.0);
    }
}

#[test]
fn u_shaped_wall_detour_matches_oracle() {
    // 20 x 20 cells with a U of obstacles opening downward around the target
    let (w, h) = (20, 20);
    let mut nav = vec![true; w * h];
    for x in 5..15 {
        nav[15 * w + x] = false;
    }
    for y in 6..16 {
        nav[y * w + 5] = false;
        nav[y * w + 14] = false;
    }
    let field = field_from(nav.clone(), w, h);
    let grid = GeodesicGrid::new(&field).unwrap();
    let (a, b) = ((10, 18), (10, 10));
    let ours = grid.distance_between_cells(CellRef { floor: 0, x: a.0, y: a.1 }, CellRef { floor: 0, x: b.0, y: b.1 }).unwrap();
    let oracle = tk::grid_geodesic(&nav, w, h, 0.1, a, b).unwrap();
    assert!((ours - oracle).abs() < 1e-9);
    // straight line is 0.8 m; the detour must go around the U
    assert!(ours > 1.5);
}

#[test]
fn two_equal_floors_split_samples_evenly() {
    let floor = |z: f64| FloorGrid { floor_z: z, cell_size: 0.1, origin: [0.0, 0.0], width: 30, height: 30, navigable: vec![true; 900] };
    let field = NavigabilityField { floors: vec![floor(0.0), floor(3.0)], eye_height: 1.5, stairs: vec![] };
    let n = 20_000;
    let pts = sample_navigable(&field, n, &mut ChaCha8Rng::seed_from_u64(5));
    let lower = pts.iter().filter(|p| p.z < 2.0).count() as u64;
    assert!(tk::binomial_z(lower, n as u64, 0.5).abs() < 3.0);
}

/// Every box of the scene as min/max corners.
fn scene_boxes(truth: &SceneTruth) -> Vec<(tk::P3, tk::P3)> {
    truth
        .walls
        .iter()
        .chain(truth.surfaces.iter())
        .map(|s| (common::p3(&s.min), common::p3(&s.max)))
        .chain(truth.objects.iter().map(|o| {
            let b = o.aabb();
            (common::p3(&b.min), common::p3(&b.max))
        }))
        .collect()
}

fn oracle_mean_depth(boxes: &[(tk::P3, tk::P3)], from: Vec3, to: Vec3, fov: f64, samples: u32, max_range: f64) -> f64 {
    tk::mean_depth_window(boxes, common::p3(&from), common::p3(&to), fov, samples, max_range)
}

#[test]
fn visibility_matches_raycast_oracle() {
    let cfg = common::config("identity");
    let (bundle, _) = common::scene(&cfg, 2);
    let truth = bundle.ground_truth.as_ref().unwrap();
    let boxes = scene_boxes(truth);
    let r = Renderer::new(truth, bundle.class_vocabulary.len(), bundle.sensor);
    let p = GraphParams::default();
    let pts = sample_navigable(&bundle.field, 4000, &mut ChaCha8Rng::seed_from_u64(3));
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let (mut compared, mut visible) = (0, 0);
    while compared < 100 {
        let a = pts[rng.gen_range(0..pts.len())];
        let b = pts[rng.gen_range(0..pts.len())];
        let dist = (a - b).norm();
        if !(1.0..4.0).contains(&dist) {
            continue;
        }
        let m = |x, y| oracle_mean_depth(&boxes, x, y, p.visibility_window, p.visibility_samples, bundle.sensor.max_range);
        let (ab, ba) = (m(a, b), m(b, a));
        if (ab - p.min_visibility_depth).abs() < 1e-6 || (ba - p.min_visibility_depth).abs() < 1e-6 {
            continue;
        }
        let oracle = ab > p.min_visibility_depth && ba > p.min_visibility_depth;
        assert_eq!(visibility_check(&r, a, b, &p), oracle, "{a:?} {b:?}");
        compared += 1;
        visible += oracle as usize;
    }
    // both outcomes occur
    assert!(visible > 5 && visible < 95, "{visible}");
}

#[test]
fn seeded_scenes_pass_brute_force_recheck() {
    let cfg = common::config("identity");
    let p = &cfg.graph;
    for i in 0..10 {
        let (bundle, graph) = common::scene(&cfg, i);
        let boxes = scene_boxes(bundle.ground_truth.as_ref().unwrap());
        let pts: Vec<[f64; 3]> = graph.nodes.iter().map(|n| common::p3(&n.xyz)).collect();
        if let Some((d, a, b)) = tk::min_pairwise(&pts) {
            assert!(d >= p.min_node_spacing, "scene {i}: nodes {a},{b} at {d}");
        }
        let f = &bundle.field.floors[0];
        for &(a, b, w) in &graph.edges {
            let cell = |v: u32| f.cell_of(graph.position(v).x, graph.position(v).y).unwrap();
            let geo = tk::grid_geodesic(&f.navigable, f.width, f.height, f.cell_size, cell(a), cell(b)).unwrap();
            assert!(geo < p.max_edge_geodesic && (geo - w).abs() < 1e-9, "scene {i} edge {a}-{b}: {geo} vs {w}");
            let (pa, pb) = (graph.position(a), graph.position(b));
            let m = |x, y| oracle_mean_depth(&boxes, x, y, p.visibility_window, p.visibility_samples, bundle.sensor.max_range);
            assert!(m(pa, pb) > p.min_visibility_depth && m(pb, pa) > p.min_visibility_depth);
        }
        // coverage against the all-pairs oracle
        let cells: Vec<(f64, f64)> = (0..f.height)
            .flat_map(|y| (0..f.width).map(move |x| (x, y)))
            .filter(|&(x, y)| f.navigable[f.index(x, y)])
            .map(|(x, y)| f.cell_center_xy(x, y))
            .collect();
        let nodes: Vec<(f64, f64)> = graph.nodes.iter().map(|n| (n.xyz.x, n.xyz.y)).collect();
        let ours = coverage(&graph, &bundle.field, p.coverage_radius);
        assert!((ours - tk::coverage(&cells, &nodes, p.coverage_radius)).abs() < 1e-12);
        // same inputs, same graph
        let again = graph_stage(&bundle, p, stage_seed(cfg.seed, "graph", &bundle.scene_id)).unwrap();
        assert_eq!(again, graph);
    }
}

#[test]
fn graph_file_round_trip() {
    let nodes = vec![GraphNode { id: 0, xyz: Vec3::new(0.1, 0.2, 1.5) }, GraphNode { id: 1, xyz: Vec3::new(2.6, 0.2, 1.5) }];
    let g = NavGraph::from_parts(nodes, vec![(1, 0, 2.5)]).unwrap();
    let text = g.to_json();
    let v: serde_json::Value = serde_json::from_str(&text).unwrap();
    assert_eq!(v["edges"][0], serde_json::json!([0, 1, 2.5]));
    assert_eq!(v["nodes"][1]["id"], 1);
    assert_eq!(NavGraph::from_json(&text).unwrap(), g);
}
