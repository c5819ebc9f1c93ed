//! Reading and writing scene bundle directories. `format.md` at the
//! repository root is the normative description of the layout.

use std::fs;
use std::io::Cursor;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::geometry::{CameraIntrinsics, Pose, Vec3};
use crate::scene::{
    CaptureSpec, ClassProbs, FloorGrid, EMPTY_SLOT, NavigabilityField, PanoramaNode, SceneBundle, SensorSpec, StairLink,
    ViewObservation,
};
use crate::synth::SceneTruth;

pub const BUNDLE_FORMAT: &str = "forge-scene-bundle";
pub const BUNDLE_VERSION: u32 = 1;
const PROBS_MAGIC: &[u8; 4] = b"FPRB";
const PROBS_VERSION: u16 = 1;

#[derive(Debug, Error)]
pub enum BundleError {
    #[error("missing file {0}")]
    Missing(PathBuf),
    #[error("I/O error on {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("cannot parse {path}: {msg}")]
    Parse { path: PathBuf, msg: String },
    #[error("unsupported bundle version {found} (expected {expected})")]
    Version { found: u64, expected: u32 },
    #[error("checksum mismatch for {0}")]
    Checksum(PathBuf),
    #[error("malformed {path}: {msg}")]
    Format { path: PathBuf, msg: String },
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Manifest {
    format: String,
    version: u32,
    scene_id: String,
    class_vocabulary: Vec<String>,
    sensor: SensorSpec,
    eye_height: f64,
    floors: Vec<FloorEntry>,
    #[serde(default)]
    stairs: Vec<StairLink>,
    #[serde(default)]
    capture: Option<CaptureSpec>,
    #[serde(default)]
    truth: Option<FileRef>,
    nodes: Vec<NodeEntry>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileRef {
    path: String,
    sha256: String,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct FloorEntry {
    mask: FileRef,
    meta: FileRef,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct NodeEntry {
    id: u32,
    xyz: Vec3,
    views: Vec<ViewEntry>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ViewEntry {
    pose: Pose,
    intrinsics: CameraIntrinsics,
    depth: FileRef,
    probs: FileRef,
    #[serde(default)]
    instances: Option<FileRef>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> BundleError + '_ {
    move |source| BundleError::Io { path: path.to_path_buf(), source }
}

fn write_file(root: &Path, rel: &str, bytes: &[u8]) -> Result<FileRef, BundleError> {
    let path = root.join(rel);
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(io_err(parent))?;
    }
    fs::write(&path, bytes).map_err(io_err(&path))?;
    Ok(FileRef { path: rel.to_string(), sha256: sha256_hex(bytes) })
}

fn read_file(root: &Path, r: &FileRef) -> Result<Vec<u8>, BundleError> {
    let path = root.join(&r.path);
    if !path.exists() {
        return Err(BundleError::Missing(path));
    }
    let bytes = fs::read(&path).map_err(io_err(&path))?;
    if sha256_hex(&bytes) != r.sha256 {
        return Err(BundleError::Checksum(path));
    }
    Ok(bytes)
}

fn encode_mask(grid: &FloorGrid) -> Vec<u8> {
    let mut out = Vec::new();
    {
        let mut enc = png::Encoder::new(&mut out, grid.width as u32, grid.height as u32);
        enc.set_color(png::ColorType::Grayscale);
        enc.set_depth(png::BitDepth::Eight);
        let mut w = enc.write_header().expect("png header into memory");
        let data: Vec<u8> = grid.navigable.iter().map(|&b| if b { 255 } else { 0 }).collect();
        w.write_image_data(&data).expect("png data into memory");
    }
    out
}

fn decode_mask(path: &Path, bytes: &[u8], meta: &FloorGrid) -> Result<Vec<bool>, BundleError> {
    let bad = |msg: String| BundleError::Format { path: path.to_path_buf(), msg };
    let decoder = png::Decoder::new(Cursor::new(bytes));
    let mut reader = decoder.read_info().map_err(|e| bad(e.to_string()))?;
    let size = reader.output_buffer_size().ok_or_else(|| bad("image too large".into()))?;
    let mut buf = vec![0; size];
    let info = reader.next_frame(&mut buf).map_err(|e| bad(e.to_string()))?;
    if info.color_type != png::ColorType::Grayscale || info.bit_depth != png::BitDepth::Eight {
        return Err(bad("mask must be 8-bit grayscale".into()));
    }
    if info.width as usize != meta.width || info.height as usize != meta.height {
        return Err(bad(format!(
            "mask is {}x{}, sidecar says {}x{}",
            info.width, info.height, meta.width, meta.height
        )));
    }
    Ok(buf[..meta.width * meta.height].iter().map(|&v| v >= 128).collect())
}

fn encode_probs(view: &ViewObservation) -> Vec<u8> {
    let probs = &view.probs;
    let k = probs.k();
    let (classes, quant) = probs.raw();
    let mut out = Vec::with_capacity(16 + classes.len() * 4);
    out.extend_from_slice(PROBS_MAGIC);
    out.extend_from_slice(&PROBS_VERSION.to_le_bytes());
    out.extend_from_slice(&(k as u16).to_le_bytes());
    out.extend_from_slice(&view.intrinsics.width.to_le_bytes());
    out.extend_from_slice(&view.intrinsics.height.to_le_bytes());
    for px in 0..probs.pixels() {
        for s in 0..k {
            out.extend_from_slice(&classes[px * k + s].to_le_bytes());
        }
        for s in 0..k {
            out.extend_from_slice(&quant[px * k + s].to_le_bytes());
        }
    }
    out
}

fn decode_probs(path: &Path, bytes: &[u8], intr: &CameraIntrinsics) -> Result<ClassProbs, BundleError> {
    let bad = |msg: &str| BundleError::Format { path: path.to_path_buf(), msg: msg.to_string() };
    if bytes.len() < 16 || &bytes[..4] != PROBS_MAGIC {
        return Err(bad("bad magic"));
    }
    let u16_at = |o: usize| u16::from_le_bytes([bytes[o], bytes[o + 1]]);
    let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap());
    if u16_at(4) != PROBS_VERSION {
        return Err(bad("unsupported probs version"));
    }
    let k = u16_at(6) as usize;
    let (w, h) = (u32_at(8), u32_at(12));
    if k == 0 || w != intr.width || h != intr.height {
        return Err(bad("header does not match view"));
    }
    let pixels = w as usize * h as usize;
    if bytes.len() != 16 + pixels * k * 4 {
        return Err(bad("truncated payload"));
    }
    let mut classes = Vec::with_capacity(pixels * k);
    let mut quant = Vec::with_capacity(pixels * k);
    for px in 0..pixels {
        let base = 16 + px * k * 4;
        for s in 0..k {
            classes.push(u16_at(base + s * 2));
        }
        for s in 0..k {
            quant.push(u16_at(base + k * 2 + s * 2));
        }
    }
    if classes.iter().zip(&quant).any(|(&c, &q)| c == EMPTY_SLOT && q != 0) {
        return Err(bad("empty slot with nonzero probability"));
    }
    ClassProbs::from_raw(k, classes, quant).ok_or_else(|| bad("inconsistent slots"))
}

fn floats_le(v: &[f32]) -> Vec<u8> {
    v.iter().flat_map(|f| f.to_le_bytes()).collect()
}

fn u32s_le(v: &[u32]) -> Vec<u8> {
    v.iter().flat_map(|f| f.to_le_bytes()).collect()
}

fn parse_le<T, const N: usize>(
    path: &Path,
    bytes: &[u8],
    count: usize,
    f: impl Fn([u8; N]) -> T,
) -> Result<Vec<T>, BundleError> {
    if bytes.len() != count * N {
        return Err(BundleError::Format {
            path: path.to_path_buf(),
            msg: format!("expected {} bytes, found {}", count * N, bytes.len()),
        });
    }
    Ok(bytes.chunks_exact(N).map(|c| f(c.try_into().unwrap())).collect())
}

fn json_bytes<T: Serialize>(value: &T) -> Vec<u8> {
    let mut v = serde_json::to_vec_pretty(value).expect("bundle types serialize");
    v.push(b'\n');
    v
}

pub fn save_bundle(bundle: &SceneBundle, dir: &Path) -> Result<(), BundleError> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let mut floors = Vec::new();
    for (i, grid) in bundle.field.floors.iter().enumerate() {
        let mask = write_file(dir, &format!("field/floor{i}.png"), &encode_mask(grid))?;
        let meta = write_file(dir, &format!("field/floor{i}.json"), &json_bytes(grid))?;
        floors.push(FloorEntry { mask, meta });
    }
    let mut nodes = Vec::new();
    for node in &bundle.nodes {
        let mut views = Vec::new();
        for (k, view) in node.views.iter().enumerate() {
            let base = format!("nodes/{}/view{k}", node.id);
            let depth = write_file(dir, &format!("{base}.depth"), &floats_le(&view.depth))?;
            let probs = write_file(dir, &format!("{base}.probs"), &encode_probs(view))?;
            let instances = match &view.instance_ids {
                Some(ids) => Some(write_file(dir, &format!("{base}.inst"), &u32s_le(ids))?),
                None => None,
            };
            views.push(ViewEntry { pose: view.pose, intrinsics: view.intrinsics, depth, probs, instances });
        }
        nodes.push(NodeEntry { id: node.id, xyz: node.position, views });
    }
    let truth = match &bundle.ground_truth {
        Some(t) => Some(write_file(dir, "truth.json", &json_bytes(t))?),
        None => None,
    };
    let manifest = Manifest {
        format: BUNDLE_FORMAT.to_string(),
        version: BUNDLE_VERSION,
        scene_id: bundle.scene_id.clone(),
        class_vocabulary: bundle.class_vocabulary.clone(),
        sensor: bundle.sensor,
        eye_height: bundle.field.eye_height,
        floors,
        stairs: bundle.field.stairs.clone(),
        capture: bundle.capture.clone(),
        truth,
        nodes,
    };
    // manifest last: a bundle without one is incomplete
    write_file(dir, "manifest.json", &json_bytes(&manifest))?;
    Ok(())
}

pub fn load_bundle(dir: &Path) -> Result<SceneBundle, BundleError> {
    let manifest_path = dir.join("manifest.json");
    if !manifest_path.exists() {
        return Err(BundleError::Missing(manifest_path));
    }
    let text = fs::read_to_string(&manifest_path).map_err(io_err(&manifest_path))?;
    let parse_err = |msg: String| BundleError::Parse { path: manifest_path.clone(), msg };
    let raw: serde_json::Value = serde_json::from_str(&text).map_err(|e| parse_err(e.to_string()))?;
    match raw.get("version").and_then(|v| v.as_u64()) {
        Some(v) if v == BUNDLE_VERSION as u64 => {}
        Some(v) => return Err(BundleError::Version { found: v, expected: BUNDLE_VERSION }),
        None => return Err(parse_err("missing version".into())),
    }
    let m: Manifest = serde_json::from_value(raw).map_err(|e| parse_err(e.to_string()))?;
    if m.format != BUNDLE_FORMAT {
        return Err(parse_err(format!("unknown format tag {:?}", m.format)));
    }

    let mut floors = Vec::new();
    for entry in &m.floors {
        let meta_path = dir.join(&entry.meta.path);
        let meta_bytes = read_file(dir, &entry.meta)?;
        let mut grid: FloorGrid = serde_json::from_slice(&meta_bytes)
            .map_err(|e| BundleError::Parse { path: meta_path, msg: e.to_string() })?;
        let mask_bytes = read_file(dir, &entry.mask)?;
        grid.navigable = decode_mask(&dir.join(&entry.mask.path), &mask_bytes, &grid)?;
        floors.push(grid);
    }
    let field = NavigabilityField { floors, eye_height: m.eye_height, stairs: m.stairs };

    let mut nodes = Vec::new();
    for n in &m.nodes {
        let mut views = Vec::new();
        for v in &n.views {
            let pixels = v.intrinsics.pixel_count();
            let depth_path = dir.join(&v.depth.path);
            let depth = parse_le(&depth_path, &read_file(dir, &v.depth)?, pixels, f32::from_le_bytes)?;
            if depth.iter().any(|d| d.is_nan() || *d < 0.0) {
                return Err(BundleError::Format { path: depth_path, msg: "negative or NaN depth".into() });
            }
            let probs = decode_probs(&dir.join(&v.probs.path), &read_file(dir, &v.probs)?, &v.intrinsics)?;
            let instance_ids = match &v.instances {
                Some(r) => Some(parse_le(&dir.join(&r.path), &read_file(dir, r)?, pixels, u32::from_le_bytes)?),
                None => None,
            };
            views.push(ViewObservation {
                pose: v.pose,
                intrinsics: v.intrinsics,
                depth,
                probs,
                instance_ids,
                max_range: m.sensor.max_range as f32,
            });
        }
        nodes.push(PanoramaNode { id: n.id, position: n.xyz, views });
    }
    let ground_truth = match &m.truth {
        Some(r) => {
            let bytes = read_file(dir, r)?;
            let t: SceneTruth = serde_json::from_slice(&bytes)
                .map_err(|e| BundleError::Parse { path: dir.join(&r.path), msg: e.to_string() })?;
            Some(t)
        }
        None => None,
    };
    Ok(SceneBundle {
        scene_id: m.scene_id,
        field,
        nodes,
        class_vocabulary: m.class_vocabulary,
        sensor: m.sensor,
        capture: m.capture,
        ground_truth,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{generate_scene, SynthParams};

    fn tiny() -> SceneBundle {
        let p = SynthParams { rooms: [2, 2], objects_per_room: [1, 2], ..Default::default() };
        generate_scene(4, &p).unwrap()
    }

    #[test]
    fn round_trip_without_views() {
        let b = tiny();
        let dir = tempfile::tempdir().unwrap();
        save_bundle(&b, dir.path()).unwrap();
        assert_eq!(load_bundle(dir.path()).unwrap(), b);
    }

    #[test]
    fn truncated_manifest_is_a_parse_error() {
        let dir = tempfile::tempdir().unwrap();
        save_bundle(&tiny(), dir.path()).unwrap();
        let path = dir.path().join("manifest.json");
        let text = fs::read_to_string(&path).unwrap();
        fs::write(&path, &text[..text.len() / 2]).unwrap();
        assert!(matches!(load_bundle(dir.path()), Err(BundleError::Parse { .. })));
    }

    #[test]
    fn version_mismatch_is_reported() {
        let dir = tempfile::tempdir().unwrap();
        save_bundle(&tiny(), dir.path()).unwrap();
        let path = dir.path().join("manifest.json");
        let text = fs::read_to_string(&path).unwrap().replacen("\"version\": 1", "\"version\": 9", 1);
        fs::write(&path, text).unwrap();
        assert!(matches!(load_bundle(dir.path()), Err(BundleError::Version { found: 9, .. })));
    }

    #[test]
    fn corrupted_and_missing_files() {
        let dir = tempfile::tempdir().unwrap();
        save_bundle(&tiny(), dir.path()).unwrap();
        fs::write(dir.path().join("truth.json"), b"{}").unwrap();
        assert!(matches!(load_bundle(dir.path()), Err(BundleError::Checksum(_))));
        fs::remove_file(dir.path().join("field/floor0.png")).unwrap();
        assert!(matches!(load_bundle(dir.path()), Err(BundleError::Missing(_))));
        let empty = tempfile::tempdir().unwrap();
        assert!(matches!(load_bundle(empty.path()), Err(BundleError::Missing(_))));
    }
}
