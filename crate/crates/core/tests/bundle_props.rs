mod common;

use forge_core::bundle::{load_bundle, save_bundle};
use forge_core::geometry::{panorama_poses, CameraIntrinsics, Pose, Vec3};
use forge_core::scene::{ClassProbs, PanoramaNode, SceneBundle, ViewObservation, PROB_SCALE};
use forge_core::synth::{generate_scene, SynthParams};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn tiny(seed: u64) -> SceneBundle {
    let p = SynthParams { rooms: [2, 2], objects_per_room: [1, 2], ..Default::default() };
    generate_scene(seed, &p).unwrap()
}

fn random_view(rng: &mut ChaCha8Rng, n_classes: usize, topk: usize) -> (ViewObservation, Vec<Vec<f64>>) {
    let intr = CameraIntrinsics::new(8, 6, 1.0).unwrap();
    let n = intr.pixel_count();
    let mut probs = ClassProbs::new(topk, n);
    let mut dense = Vec::new();
    for i in 0..n {
        let mut d: Vec<f64> = (0..n_classes).map(|_| if rng.gen_bool(0.5) { rng.gen::<f64>() } else { 0.0 }).collect();
        let s: f64 = d.iter().sum();
        if s == 0.0 {
            d[0] = 1.0;
        } else {
            d.iter_mut().for_each(|x| *x /= s);
        }
        probs.set_dense(i, &d);
        dense.push(d);
    }
    let depth = (0..n).map(|_| if rng.gen_bool(0.1) { 0.0 } else { rng.gen_range(0.1f32..10.0) }).collect();
    let view = ViewObservation {
        pose: Pose::new(Vec3::new(1.0, 2.0, 1.5), rng.gen_range(0.0..6.28), rng.gen_range(-0.5..0.5)),
        intrinsics: intr,
        depth,
        probs,
        instance_ids: Some((0..n).map(|_| rng.gen_range(0..4)).collect()),
        max_range: 10.0,
    };
    (view, dense)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn quantized_probabilities_survive_save_and_load(seed in any::<u64>(), n_classes in 1usize..12) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut b = tiny(seed % 5);
        b.class_vocabulary = (0..n_classes).map(|i| format!("c{i}")).collect();
        b.ground_truth = None;
        b.capture = None;
        let (view, dense) = random_view(&mut rng, n_classes, b.sensor.topk);
        b.nodes = vec![PanoramaNode { id: 0, position: Vec3::new(1.0, 2.0, 1.5), views: vec![view] }];
        let dir = tempfile::tempdir().unwrap();
        save_bundle(&b, dir.path()).unwrap();
        let back = load_bundle(dir.path()).unwrap();
        prop_assert_eq!(&back, &b);
        let v = &back.nodes[0].views[0];
        for (i, d) in dense.iter().enumerate() {
            let got = v.probs.dense(i, n_classes);
            prop_assert!((got.iter().sum::<f64>() - 1.0).abs() < 1e-3);
            prop_assert!(got.iter().all(|&x| (0.0..=1.0).contains(&x)));
            // kept classes within one quantization step
            let mut order: Vec<usize> = (0..n_classes).collect();
            order.sort_by(|&a, &c| d[c].total_cmp(&d[a]).then(a.cmp(&c)));
            for &c in order.iter().take(b.sensor.topk).filter(|&&c| c != 0 && d[c] > 0.0) {
                prop_assert!((got[c] - d[c]).abs() <= 1.0 / PROB_SCALE as f64);
            }
            if n_classes == 1 {
                prop_assert_eq!(got[0], 1.0);
            }
        }
    }
}

#[test]
fn generated_panoramas_round_trip_field_by_field() {
    let cfg = common::config("confusion30");
    let (mut bundle, _, panoramas) = common::scene_with_views(&cfg, 0);
    bundle.nodes = panoramas.into_iter().take(3).collect();
    let dir = tempfile::tempdir().unwrap();
    save_bundle(&bundle, dir.path()).unwrap();
    let back = load_bundle(dir.path()).unwrap();
    assert_eq!(back.field, bundle.field);
    assert_eq!(back.ground_truth, bundle.ground_truth);
    assert_eq!(back.capture, bundle.capture);
    for (a, b) in back.nodes.iter().zip(&bundle.nodes) {
        assert_eq!(a.position, b.position);
        for (va, vb) in a.views.iter().zip(&b.views) {
            assert_eq!(va.depth, vb.depth);
            assert_eq!(va.pose, vb.pose);
            assert_eq!(va.instance_ids, vb.instance_ids);
            assert_eq!(va.probs.raw(), vb.probs.raw());
        }
    }
    assert_eq!(back, bundle);
}

#[test]
fn panorama_headings_partition_the_circle() {
    let poses = panorama_poses(Vec3::new(0.0, 0.0, 1.5));
    assert_eq!(poses.len(), 36);
    for (k, p) in poses.iter().enumerate() {
        let want = (k % 12) as f64 * std::f64::consts::PI / 6.0;
        assert!((p.heading - want).abs() < 1e-12);
    }
    let ring: Vec<f64> = poses[..12].iter().map(|p| p.heading).collect();
    let steps: f64 = ring.windows(2).map(|w| w[1] - w[0]).sum::<f64>() + (std::f64::consts::TAU - ring[11]);
    assert!((steps - std::f64::consts::TAU).abs() < 1e-12);
}
