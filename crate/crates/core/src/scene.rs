//! Synthetic scenes: a uv-unwrapped icosphere rig with two sinusoidal
//! blendshapes and three rotational pose axes, rendered from oracle
//! Gaussians (one per triangle) with the crate's own rasterizer.
//!
//! Bundle directory layout:
//!
//! ```text
//! scene.toml      metadata and pose axes
//! mesh.obj        rest mesh with per-corner uvs
//! arrays.dgva     psi [F,K], theta [F,P], cameras [F,18], blendshapes [K,V,3]
//! gt.dgva         gt [F,H,W,3]
//! gt/NNN.png      8-bit previews
//! ```

use std::collections::HashMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::fusion::GlobalGaussians;
use crate::geometry::{bind_to_global, deform, triangle_frames_lenient, BlendshapeRig, GaussianCloud, PoseAxis, TriMesh};
use crate::io::{write_atomic, Tensor, TensorFile};
use crate::obj::{read_obj, to_obj_string};
use crate::raster::{render, Camera, Image};

pub const DEFAULT_FRAMES: usize = 40;
pub const DEFAULT_IMAGE_SIZE: usize = 64;
/// Fraction of frames, taken from the end, held out for testing.
pub const TEST_FRACTION: f64 = 0.3;
const CAMERA_DISTANCE: f64 = 3.2;
const FOCAL: f64 = 80.0;
const ORACLE_OPACITY: f64 = 0.9;
const ORACLE_LOCAL_SCALE: f64 = 0.5;
const BLENDSHAPE_AMPLITUDE: f64 = 0.08;
const POSE_AMPLITUDE: f64 = 0.15;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Preset {
    /// Rest pose, constant colors; only the camera moves.
    Static,
    /// Blendshape and pose motion, constant colors.
    Linear,
    /// As `Linear`, plus a wrinkle texture gated by `max(0, ψ₁ψ₂)`.
    Nonlinear,
}

impl FromStr for Preset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "static" => Ok(Preset::Static),
            "linear" => Ok(Preset::Linear),
            "nonlinear" => Ok(Preset::Nonlinear),
            other => Err(Error::UnknownPreset(other.to_string())),
        }
    }
}

impl fmt::Display for Preset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Preset::Static => "static",
            Preset::Linear => "linear",
            Preset::Nonlinear => "nonlinear",
        })
    }
}

/// Wrinkle gate of the nonlinear preset.
pub fn wrinkle_gate(preset: Preset, psi: &[f64]) -> f64 {
    match preset {
        Preset::Nonlinear => (psi[0] * psi[1]).max(0.0),
        _ => 0.0,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    pub psi: Vec<f64>,
    pub theta: Vec<f64>,
    pub camera: Camera,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneBundle {
    pub preset: Preset,
    pub seed: u64,
    pub rig: BlendshapeRig,
    pub frames: Vec<Frame>,
    pub gt: Vec<Image>,
    pub train: Vec<usize>,
    pub test: Vec<usize>,
    pub background: [f64; 3],
}

impl SceneBundle {
    pub fn width(&self) -> usize {
        self.gt.first().map_or(0, |g| g.width)
    }

    pub fn height(&self) -> usize {
        self.gt.first().map_or(0, |g| g.height)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SceneMeta {
    preset: Preset,
    seed: u64,
    width: usize,
    height: usize,
    num_frames: usize,
    test_start: usize,
    background: [f64; 3],
    pose_axes: Vec<PoseAxis>,
}

/// Per-triangle color textures of the oracle.
#[derive(Debug, Clone, PartialEq)]
pub struct OracleTextures {
    pub base: Vec<[f64; 3]>,
    pub wrinkle: Vec<[f64; 3]>,
}

/// Unit icosphere after `levels` midpoint subdivisions, outward-facing.
pub fn icosphere(levels: usize) -> (Vec<Vector3<f64>>, Vec<[usize; 3]>) {
    let t = (1.0 + 5f64.sqrt()) / 2.0;
    let mut verts: Vec<Vector3<f64>> = [
        [-1.0, t, 0.0],
        [1.0, t, 0.0],
        [-1.0, -t, 0.0],
        [1.0, -t, 0.0],
        [0.0, -1.0, t],
        [0.0, 1.0, t],
        [0.0, -1.0, -t],
        [0.0, 1.0, -t],
        [t, 0.0, -1.0],
        [t, 0.0, 1.0],
        [-t, 0.0, -1.0],
        [-t, 0.0, 1.0],
    ]
    .iter()
    .map(|p| Vector3::from(*p).normalize())
    .collect();
    let mut faces: Vec<[usize; 3]> = vec![
        [0, 11, 5],
        [0, 5, 1],
        [0, 1, 7],
        [0, 7, 10],
        [0, 10, 11],
        [1, 5, 9],
        [5, 11, 4],
        [11, 10, 2],
        [10, 7, 6],
        [7, 1, 8],
        [3, 9, 4],
        [3, 4, 2],
        [3, 2, 6],
        [3, 6, 8],
        [3, 8, 9],
        [4, 9, 5],
        [2, 4, 11],
        [6, 2, 10],
        [8, 6, 7],
        [9, 8, 1],
    ];
    for _ in 0..levels {
        let mut cache: HashMap<(usize, usize), usize> = HashMap::new();
        let mut midpoint = |a: usize, b: usize, verts: &mut Vec<Vector3<f64>>| -> usize {
            let key = (a.min(b), a.max(b));
            *cache.entry(key).or_insert_with(|| {
                verts.push(((verts[a] + verts[b]) / 2.0).normalize());
                verts.len() - 1
            })
        };
        let mut next = Vec::with_capacity(faces.len() * 4);
        for [a, b, c] in faces {
            let ab = midpoint(a, b, &mut verts);
            let bc = midpoint(b, c, &mut verts);
            let ca = midpoint(c, a, &mut verts);
            next.extend_from_slice(&[[a, ab, ca], [b, bc, ab], [c, ca, bc], [ab, bc, ca]]);
        }
        faces = next;
    }
    (verts, faces)
}

/// Packs one right-triangle chart per face, two faces per square cell of a
/// regular grid, with a gap between all charts.
pub fn pair_packed_uvs(num_faces: usize) -> Vec<[[f64; 2]; 3]> {
    let cells = num_faces.div_ceil(2);
    let side = (cells as f64).sqrt().ceil() as usize;
    let c = 1.0 / side as f64;
    let m = 0.08 * c;
    let g = 0.06 * c;
    (0..num_faces)
        .map(|f| {
            let cell = f / 2;
            let (x0, y0) = ((cell % side) as f64 * c, (cell / side) as f64 * c);
            if f % 2 == 0 {
                [[x0 + m, y0 + m], [x0 + c - m - g, y0 + m], [x0 + m, y0 + c - m - g]]
            } else {
                [
                    [x0 + c - m, y0 + c - m],
                    [x0 + m + g, y0 + c - m],
                    [x0 + c - m, y0 + m + g],
                ]
            }
        })
        .collect()
}

/// Icosphere rig with `K = 2` sinusoidal radial blendshapes and rotations
/// about the x, y and z axes.
pub fn build_rig() -> Result<BlendshapeRig> {
    let (verts, faces) = icosphere(2);
    let uvs = pair_packed_uvs(faces.len());
    let shapes = [(Vector3::new(1.0, 0.0, 0.0), 0.0), (Vector3::new(0.0, 1.0, 0.3).normalize(), 0.7)];
    let deltas = shapes
        .iter()
        .map(|(dir, phase)| {
            verts
                .iter()
                .map(|v| v * (BLENDSHAPE_AMPLITUDE * (3.0 * dir.dot(v) + phase).sin()))
                .collect()
        })
        .collect();
    let axes = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]]
        .into_iter()
        .map(|axis| PoseAxis {
            axis,
            translation: [0.0; 3],
        })
        .collect();
    BlendshapeRig::new(TriMesh::new(verts, faces, uvs)?, deltas, axes)
}

pub fn oracle_textures(rest: &TriMesh, seed: u64) -> OracleTextures {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let base = (0..rest.triangles.len())
        .map(|_| [0.0; 3].map(|_: f64| rng.gen_range(0.25..0.75)))
        .collect();
    let wrinkle = (0..rest.triangles.len())
        .map(|t| {
            let [a, b, c] = rest.corners(t);
            let p = (a + b + c) / 3.0;
            let stripe = 0.5 + 0.5 * (9.0 * p.y + 2.0 * p.x).sin();
            [-0.5 * stripe, -0.45 * stripe, -0.4 * stripe]
        })
        .collect();
    OracleTextures { base, wrinkle }
}

/// Per-triangle oracle colors for condition `psi`.
pub fn oracle_colors(preset: Preset, textures: &OracleTextures, psi: &[f64]) -> Vec<[f64; 3]> {
    let g = wrinkle_gate(preset, psi);
    textures
        .base
        .iter()
        .zip(&textures.wrinkle)
        .map(|(b, w)| [0, 1, 2].map(|k| (b[k] + w[k] * g).clamp(0.02, 0.98)))
        .collect()
}

pub fn oracle_gaussians(rig: &BlendshapeRig, frame: &Frame, colors: &[[f64; 3]]) -> Result<GlobalGaussians> {
    let mesh = deform(rig, &frame.psi, &frame.theta)?;
    let frames = triangle_frames_lenient(&mesh, None);
    let mut cloud = GaussianCloud::one_per_triangle(mesh.triangles.len());
    cloud.log_s_l.fill(Vector3::repeat(ORACLE_LOCAL_SCALE.ln()));
    let geo = bind_to_global(&cloud, &frames);
    Ok(GlobalGaussians {
        color: colors.to_vec(),
        opacity: vec![ORACLE_OPACITY; colors.len()],
        mu: geo.mu,
        scale: geo.scale,
        rot: geo.rot,
    })
}

fn frame_params(preset: Preset, i: usize, phases: &[f64; 5], size: usize) -> Frame {
    let fi = i as f64;
    let azimuth = 0.2 * (2.399_963 * fi).sin();
    let elevation = 0.1 * (1.7 * fi + 0.3).cos();
    let eye = Vector3::new(
        azimuth.sin() * elevation.cos(),
        elevation.sin(),
        azimuth.cos() * elevation.cos(),
    ) * CAMERA_DISTANCE;
    let camera = Camera::look_at(eye, Vector3::zeros(), Vector3::new(0.0, 1.0, 0.0), FOCAL, size, size);
    let (psi, theta) = match preset {
        Preset::Static => (vec![0.0; 2], vec![0.0; 3]),
        Preset::Linear | Preset::Nonlinear => (
            vec![(0.9 * fi + phases[0]).sin(), (1.37 * fi + phases[1]).sin()],
            (0..3)
                .map(|p| POSE_AMPLITUDE * (0.53 * (p + 1) as f64 * fi + phases[2 + p]).sin())
                .collect(),
        ),
    };
    Frame { psi, theta, camera }
}

/// Generates a scene in memory. Deterministic in `(preset, seed, frames, size)`.
pub fn gen_scene(preset: Preset, seed: u64, num_frames: usize, size: usize) -> Result<SceneBundle> {
    if num_frames < 10 {
        return Err(Error::Config(format!("a scene needs at least 10 frames, got {num_frames}")));
    }
    if size < 16 {
        return Err(Error::Config(format!("image size must be at least 16, got {size}")));
    }
    let rig = build_rig()?;
    let textures = oracle_textures(&rig.rest, seed);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5ce7e);
    let phases: [f64; 5] = [0.0; 5].map(|_: f64| rng.gen_range(0.0..std::f64::consts::TAU));
    let frames: Vec<Frame> = (0..num_frames).map(|i| frame_params(preset, i, &phases, size)).collect();
    let background = [0.0; 3];
    let gt = frames
        .par_iter()
        .map(|f| {
            let g = oracle_gaussians(&rig, f, &oracle_colors(preset, &textures, &f.psi))?;
            Ok(render(&g, &f.camera, background)?.0)
        })
        .collect::<Result<Vec<Image>>>()?;
    let test_start = split_point(num_frames);
    Ok(SceneBundle {
        preset,
        seed,
        rig,
        frames,
        gt,
        train: (0..test_start).collect(),
        test: (test_start..num_frames).collect(),
        background,
    })
}

/// First test frame: the last 30% (rounded up) are held out.
pub fn split_point(num_frames: usize) -> usize {
    num_frames - (num_frames as f64 * TEST_FRACTION).ceil() as usize
}

fn flat_frames(frames: &[Frame], f: impl Fn(&Frame) -> Vec<f64>) -> Vec<f64> {
    frames.iter().flat_map(f).collect()
}

/// Writes the bundle into `dir`, replacing any previous bundle there. The
/// directory is assembled next to `dir` and renamed into place.
pub fn write_bundle(scene: &SceneBundle, dir: &Path) -> Result<()> {
    let parent = match dir.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    let staging = tempfile::Builder::new()
        .prefix(".scene-")
        .tempdir_in(parent)
        .map_err(|e| Error::io(parent, e))?;
    let root = staging.path();
    let (w, h) = (scene.width(), scene.height());
    let meta = SceneMeta {
        preset: scene.preset,
        seed: scene.seed,
        width: w,
        height: h,
        num_frames: scene.frames.len(),
        test_start: scene.test.first().copied().unwrap_or(scene.frames.len()),
        background: scene.background,
        pose_axes: scene.rig.pose_axes.clone(),
    };
    let text = toml::to_string(&meta).map_err(|e| Error::Config(e.to_string()))?;
    write_atomic(&root.join("scene.toml"), text.as_bytes())?;
    write_atomic(&root.join("mesh.obj"), to_obj_string(&scene.rig.rest).as_bytes())?;

    let f = scene.frames.len();
    let (k, p, v) = (scene.rig.num_shapes(), scene.rig.num_pose(), scene.rig.rest.vertices.len());
    let mut arrays = TensorFile::new();
    arrays.push("psi", Tensor::new(vec![f, k], flat_frames(&scene.frames, |fr| fr.psi.clone())));
    arrays.push("theta", Tensor::new(vec![f, p], flat_frames(&scene.frames, |fr| fr.theta.clone())));
    arrays.push(
        "cameras",
        Tensor::new(vec![f, 18], flat_frames(&scene.frames, |fr| fr.camera.to_array().to_vec())),
    );
    let shapes: Vec<f64> = scene
        .rig
        .shape_deltas
        .iter()
        .flat_map(|d| d.iter().flat_map(|x| [x.x, x.y, x.z]))
        .collect();
    arrays.push("blendshapes", Tensor::new(vec![k, v, 3], shapes));
    arrays.save(&root.join("arrays.dgva"))?;

    let mut gt = TensorFile::new();
    gt.push(
        "gt",
        Tensor::new(vec![f, h, w, 3], scene.gt.iter().flat_map(|i| i.data.iter().copied()).collect()),
    );
    gt.save(&root.join("gt.dgva"))?;
    let png_dir = root.join("gt");
    std::fs::create_dir(&png_dir).map_err(|e| Error::io(&png_dir, e))?;
    for (i, img) in scene.gt.iter().enumerate() {
        img.save_png(&png_dir.join(format!("{i:03}.png")))?;
    }

    if dir.exists() {
        std::fs::remove_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let staged = staging.keep();
    std::fs::rename(&staged, dir).map_err(|e| Error::io(dir, e))?;
    Ok(())
}

pub fn read_bundle(dir: &Path) -> Result<SceneBundle> {
    let meta_path = dir.join("scene.toml");
    let text = std::fs::read_to_string(&meta_path).map_err(|e| Error::io(&meta_path, e))?;
    let meta: SceneMeta = toml::from_str(&text).map_err(|e| Error::format(&meta_path, e.to_string()))?;
    let rest = read_obj(&dir.join("mesh.obj"))?;
    let arrays = TensorFile::load(&dir.join("arrays.dgva"))?;
    let f = meta.num_frames;
    let v = rest.vertices.len();
    let shapes = arrays.require("blendshapes")?;
    if shapes.dims.len() != 3 || shapes.dims[1] != v || shapes.dims[2] != 3 {
        return Err(Error::format(dir, format!("blendshapes have shape {:?}", shapes.dims)));
    }
    let k = shapes.dims[0];
    let deltas = shapes
        .data
        .chunks(v * 3)
        .map(|s| s.chunks(3).map(|x| Vector3::new(x[0], x[1], x[2])).collect())
        .collect();
    let rig = BlendshapeRig::new(rest, deltas, meta.pose_axes.clone())?;
    let p = rig.num_pose();
    let psi = arrays.require("psi")?;
    let theta = arrays.require("theta")?;
    let cams = arrays.require("cameras")?;
    check_len("psi array", f * k, psi.data.len())?;
    check_len("theta array", f * p, theta.data.len())?;
    check_len("camera array", f * 18, cams.data.len())?;
    let frames = (0..f)
        .map(|i| {
            Ok(Frame {
                psi: psi.data[i * k..(i + 1) * k].to_vec(),
                theta: theta.data[i * p..(i + 1) * p].to_vec(),
                camera: Camera::from_slice(&cams.data[i * 18..(i + 1) * 18])?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let gt_file = TensorFile::load(&dir.join("gt.dgva"))?;
    let gt_t = gt_file.require("gt")?;
    let (w, h) = (meta.width, meta.height);
    check_len("ground-truth array", f * h * w * 3, gt_t.data.len())?;
    let gt = gt_t
        .data
        .chunks(h * w * 3)
        .map(|c| Image::from_data(w, h, c.to_vec()))
        .collect::<Result<Vec<_>>>()?;
    if meta.test_start > f {
        return Err(Error::format(&meta_path, "test split starts past the last frame"));
    }
    Ok(SceneBundle {
        preset: meta.preset,
        seed: meta.seed,
        rig,
        frames,
        gt,
        train: (0..meta.test_start).collect(),
        test: (meta.test_start..f).collect(),
        background: meta.background,
    })
}
