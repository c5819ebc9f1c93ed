use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::{NoiseSpec, SceneTruth, SynthError};
use crate::geometry::{panorama_poses, pixel_ray, Aabb, CameraIntrinsics, Pose, Vec3};
use crate::scene::{ClassProbs, NavigabilityField, PanoramaNode, SensorSpec, ViewObservation};
use crate::seeds::derive_seed;
use crate::vocab::VOID;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Hit {
    /// Ray parameter of the hit; planar depth for camera rays.
    pub t: f64,
    pub class: u16,
    pub object: Option<u32>,
}

#[derive(Debug, Clone)]
struct RenderBox {
    aabb: Aabb,
    class: u16,
    object: Option<u32>,
}

/// Noise-free per-pixel render result.
#[derive(Debug, Clone, PartialEq)]
pub struct RenderedTruth {
    /// Planar depth, clamped to the sensor range.
    pub depth: Vec<f64>,
    pub class: Vec<u16>,
    pub object: Vec<Option<u32>>,
}

/// Exact ray caster over the boxes of a [`SceneTruth`].
#[derive(Debug, Clone)]
pub struct Renderer {
    boxes: Vec<RenderBox>,
    n_classes: usize,
    sensor: SensorSpec,
}

impl Renderer {
    pub fn new(truth: &SceneTruth, n_classes: usize, sensor: SensorSpec) -> Self {
        let mut boxes: Vec<RenderBox> = truth
            .walls
            .iter()
            .chain(truth.surfaces.iter())
            .map(|s| RenderBox { aabb: s.aabb(), class: s.class, object: None })
            .collect();
        boxes.extend(truth.objects.iter().map(|o| RenderBox {
            aabb: o.aabb(),
            class: o.class,
            object: Some(o.id),
        }));
        Self { boxes, n_classes, sensor }
    }

    pub fn sensor(&self) -> SensorSpec {
        self.sensor
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    /// `subset` holds box indices sorted by their distance from `origin`,
    /// which bounds the ray parameter of any hit from below and lets the
    /// scan stop early.
    fn cast_in(&self, subset: &[(usize, f64)], origin: &Vec3, dir: &Vec3, max_t: f64) -> Option<Hit> {
        let len = dir.norm();
        let mut best: Option<Hit> = None;
        for &(i, dist) in subset {
            if let Some(h) = best {
                if dist / len > h.t + 1e-9 {
                    break;
                }
            }
            let b = &self.boxes[i];
            let Some(t) = b.aabb.ray_entry(origin, dir) else { continue };
            if t > max_t {
                continue;
            }
            let better = match best {
                None => true,
                // coincident faces: objects win over structure
                Some(h) => t < h.t - 1e-12 || (t <= h.t + 1e-12 && b.object.is_some() && h.object.is_none()),
            };
            if better {
                best = Some(Hit { t, class: b.class, object: b.object });
            }
        }
        best
    }

    fn sorted_by_distance(&self, origin: &Vec3, indices: impl Iterator<Item = usize>) -> Vec<(usize, f64)> {
        let mut out: Vec<(usize, f64)> = indices
            .map(|i| {
                let b = &self.boxes[i].aabb;
                let q = Vec3::new(
                    origin.x.clamp(b.min.x, b.max.x),
                    origin.y.clamp(b.min.y, b.max.y),
                    origin.z.clamp(b.min.z, b.max.z),
                );
                (i, (q - origin).norm())
            })
            .collect();
        out.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
        out
    }

    /// Nearest hit of `origin + t * dir` with `0 < t <= max_t`.
    pub fn cast(&self, origin: &Vec3, dir: &Vec3, max_t: f64) -> Option<Hit> {
        let all = self.sorted_by_distance(origin, 0..self.boxes.len());
        self.cast_in(&all, origin, dir, max_t)
    }

    /// Boxes with at least one corner in front of the camera plane.
    fn in_front(&self, pose: &Pose) -> Vec<(usize, f64)> {
        let f = pose.forward();
        let o = pose.position;
        let kept = (0..self.boxes.len()).filter(|&i| {
                let b = &self.boxes[i].aabb;
                (0..8).any(|k| {
                    let c = Vec3::new(
                        if k & 1 == 0 { b.min.x } else { b.max.x },
                        if k & 2 == 0 { b.min.y } else { b.max.y },
                        if k & 4 == 0 { b.min.z } else { b.max.z },
                    );
                    (c - o).dot(&f) > 0.0
                })
            });
        self.sorted_by_distance(&o, kept)
    }

    pub fn render_truth(&self, pose: &Pose, intr: &CameraIntrinsics) -> RenderedTruth {
        let subset = self.in_front(pose);
        let n = intr.pixel_count();
        let max_range = self.sensor.max_range;
        let mut out = RenderedTruth { depth: vec![max_range; n], class: vec![VOID; n], object: vec![None; n] };
        for row in 0..intr.height {
            for col in 0..intr.width {
                let dir = pixel_ray(col as f64 + 0.5, row as f64 + 0.5, intr, pose);
                let idx = row as usize * intr.width as usize + col as usize;
                if let Some(h) = self.cast_in(&subset, &pose.position, &dir, max_range) {
                    out.depth[idx] = h.t;
                    out.class[idx] = h.class;
                    out.object[idx] = h.object;
                }
            }
        }
        out
    }

    /// Mean planar depth over a square window of `fov` radians centered on
    /// the direction from `from` to `to`, sampled on a `samples`² grid.
    pub fn mean_depth_toward(&self, from: Vec3, to: Vec3, fov: f64, samples: u32) -> f64 {
        let pose = Pose::looking_at(from, to);
        let intr = CameraIntrinsics { width: samples, height: samples, hfov: fov };
        let r = self.render_truth(&pose, &intr);
        r.depth.iter().sum::<f64>() / r.depth.len() as f64
    }

    /// Renders one view and returns it with the table from its local
    /// instance ids (index = id - 1) to ground-truth object ids.
    pub fn render_view_with_truth<R: Rng + ?Sized>(
        &self,
        pose: &Pose,
        intr: &CameraIntrinsics,
        noise: &NoiseSpec,
        rng: &mut R,
    ) -> (ViewObservation, RenderedTruth, Vec<u32>) {
        let truth = self.render_truth(pose, intr);
        let n = truth.depth.len();
        let max_range = self.sensor.max_range;

        // local ids in order of first appearance
        let mut local: HashMap<u32, u32> = HashMap::new();
        let mut local_to_object = Vec::new();
        let mut instance_ids = vec![0u32; n];
        for (i, obj) in truth.object.iter().enumerate() {
            if let Some(o) = obj {
                let id = *local.entry(*o).or_insert_with(|| {
                    local_to_object.push(*o);
                    local_to_object.len() as u32
                });
                instance_ids[i] = id;
            }
        }

        // one predicted label per region (object instance or stuff class)
        let mut region_label: HashMap<(bool, u32), u16> = HashMap::new();
        let mut labels = vec![VOID; n];
        for i in 0..n {
            if truth.depth[i] >= max_range {
                continue;
            }
            let key = match truth.object[i] {
                Some(o) => (true, o),
                None => (false, truth.class[i] as u32),
            };
            let class = truth.class[i];
            labels[i] = *region_label.entry(key).or_insert_with(|| noise.sample_label(class, rng));
        }

        if noise.boundary_jitter > 0 {
            let j = noise.boundary_jitter as i64;
            let (w, h) = (intr.width as i64, intr.height as i64);
            let src = labels.clone();
            for i in 0..n {
                if truth.depth[i] >= max_range {
                    continue;
                }
                let (x, y) = (i as i64 % w, i as i64 / w);
                let nx = (x + rng.gen_range(-j..=j)).clamp(0, w - 1);
                let ny = (y + rng.gen_range(-j..=j)).clamp(0, h - 1);
                labels[i] = src[(ny * w + nx) as usize];
            }
        }
        if noise.dropout > 0.0 {
            for (i, label) in labels.iter_mut().enumerate() {
                if truth.depth[i] < max_range && rng.gen_bool(noise.dropout) {
                    *label = rng.gen_range(0..self.n_classes) as u16;
                }
            }
        }

        let mut probs = ClassProbs::new(self.sensor.topk, n);
        for (i, &l) in labels.iter().enumerate() {
            probs.set_one_hot(i, l);
        }
        let view = ViewObservation {
            pose: *pose,
            intrinsics: *intr,
            depth: truth.depth.iter().map(|&d| d as f32).collect(),
            probs,
            instance_ids: Some(instance_ids),
            max_range: max_range as f32,
        };
        (view, truth, local_to_object)
    }

    pub fn render_view<R: Rng + ?Sized>(
        &self,
        pose: &Pose,
        intr: &CameraIntrinsics,
        noise: &NoiseSpec,
        rng: &mut R,
    ) -> ViewObservation {
        self.render_view_with_truth(pose, intr, noise, rng).0
    }
}

/// Renders the 36 canonical views at each node. Every view draws its noise
/// from its own stream derived from `(seed, node id, view index)`, so the
/// result does not depend on scheduling.
pub fn build_panoramas(
    renderer: &Renderer,
    field: &NavigabilityField,
    nodes: &[(u32, Vec3)],
    intrinsics: &CameraIntrinsics,
    noise: &NoiseSpec,
    seed: u64,
) -> Result<Vec<PanoramaNode>, SynthError> {
    for (_, p) in nodes {
        let ok = field.locate(p).is_some_and(|c| field.is_navigable(c));
        if !ok {
            return Err(SynthError::NotNavigable { x: p.x, y: p.y, z: p.z });
        }
    }
    Ok(nodes
        .par_iter()
        .map(|&(id, position)| {
            let views = panorama_poses(position)
                .into_par_iter()
                .enumerate()
                .map(|(k, pose)| {
                    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &[id as u64, k as u64]));
                    renderer.render_view(&pose, intrinsics, noise, &mut rng)
                })
                .collect();
            PanoramaNode { id, position, views }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{Room, Slab, TruthObject};
    use crate::vocab::{self, WALL};
    use std::f64::consts::PI;

    fn truth_with(objects: Vec<TruthObject>, walls: Vec<Slab>) -> SceneTruth {
        SceneTruth {
            rooms: vec![Room { id: 0, kind: "bedroom".into(), floor: 0, min: [-20.0, -20.0], max: [20.0, 20.0] }],
            objects,
            walls,
            surfaces: vec![],
            floors: vec![0.0],
        }
    }

    fn unit_box_ahead() -> SceneTruth {
        truth_with(
            vec![TruthObject {
                id: 0,
                class: 10,
                center: Vec3::new(3.0, 0.0, 1.5),
                extent: Vec3::new(1.0, 1.0, 1.0),
                room: 0,
            }],
            vec![],
        )
    }

    #[test]
    fn principal_pixel_hits_box_face() {
        let r = Renderer::new(&unit_box_ahead(), 40, SensorSpec::default());
        let pose = Pose::new(Vec3::new(0.0, 0.0, 1.5), 0.0, 0.0);
        let intr = CameraIntrinsics::new(9, 9, PI / 3.0).unwrap();
        let t = r.render_truth(&pose, &intr);
        assert!((t.depth[4 * 9 + 4] - 2.5).abs() < 1e-12);
        assert_eq!(t.class[4 * 9 + 4], 10);
        assert_eq!(t.object[4 * 9 + 4], Some(0));
    }

    #[test]
    fn empty_space_is_void_at_max_range() {
        let r = Renderer::new(&truth_with(vec![], vec![]), 40, SensorSpec::default());
        let pose = Pose::new(Vec3::new(0.0, 0.0, 1.5), 1.0, 0.2);
        let intr = CameraIntrinsics::new(6, 4, 1.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let v = r.render_view(&pose, &intr, &NoiseSpec::identity(40), &mut rng);
        assert!(v.depth.iter().all(|&d| d == 10.0));
        assert!((0..v.depth.len()).all(|i| v.probs.argmax(i) == VOID && v.is_saturated(i)));
    }

    #[test]
    fn identity_noise_equals_clean_render() {
        let truth = unit_box_ahead();
        let r = Renderer::new(&truth, 40, SensorSpec::default());
        let pose = Pose::new(Vec3::new(0.0, 0.3, 1.4), 0.1, 0.0);
        let intr = CameraIntrinsics::new(16, 16, PI / 3.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let (v, t, table) = r.render_view_with_truth(&pose, &intr, &NoiseSpec::identity(40), &mut rng);
        assert_eq!(table, vec![0]);
        for i in 0..t.class.len() {
            assert_eq!(v.probs.argmax(i), t.class[i]);
            assert_eq!(v.instance_ids.as_ref().unwrap()[i] != 0, t.object[i].is_some());
        }
    }

    #[test]
    fn noisy_labels_are_constant_per_instance() {
        let truth = unit_box_ahead();
        let r = Renderer::new(&truth, 40, SensorSpec::default());
        let noise = NoiseSpec::uniform_confusion(40, 0.9, &vocab::default_stuff_classes());
        let pose = Pose::new(Vec3::new(0.0, 0.0, 1.5), 0.0, 0.0);
        let intr = CameraIntrinsics::new(16, 16, PI / 3.0).unwrap();
        for seed in 0..20 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let v = r.render_view(&pose, &intr, &noise, &mut rng);
            let ids = v.instance_ids.as_ref().unwrap();
            let labels: std::collections::BTreeSet<u16> =
                (0..ids.len()).filter(|&i| ids[i] == 1).map(|i| v.probs.argmax(i)).collect();
            assert_eq!(labels.len(), 1);
        }
    }

    #[test]
    fn wall_blocks_object_behind_it() {
        let mut truth = unit_box_ahead();
        truth.walls.push(Slab { class: WALL, min: Vec3::new(1.0, -5.0, 0.0), max: Vec3::new(1.1, 5.0, 3.0) });
        let r = Renderer::new(&truth, 40, SensorSpec::default());
        let hit = r.cast(&Vec3::new(0.0, 0.0, 1.5), &Vec3::new(1.0, 0.0, 0.0), 10.0).unwrap();
        assert_eq!(hit.class, WALL);
        assert!((hit.t - 1.0).abs() < 1e-12);
    }
}
