//! C ABI over the `uvsplat` crate.
//!
//! Objects cross the boundary as opaque handles that the caller frees with
//! the matching `*_free` function. Every entry point returns a
//! [`UvsStatus`]; on failure a message is available from
//! [`uvs_last_error`] on the same thread. Panics never unwind into C.

#![allow(clippy::missing_safety_doc)]

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;

use uvsplat::config::ProjectConfig;
use uvsplat::fusion::FusionMode;
use uvsplat::gradcheck;
use uvsplat::pipeline::{render_frame, Pipeline, RenderPath};
use uvsplat::scene::{gen_scene, read_bundle, write_bundle, Preset, SceneBundle};
use uvsplat::training::{Checkpoint, Trainer};
use uvsplat::Error;

/// Result code of every call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UvsStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Io = 3,
    Format = 4,
    Config = 5,
    Numeric = 6,
    Diverged = 7,
    Geometry = 8,
    Panic = 9,
}

/// Which assembly a render uses.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UvsRenderPath {
    /// Base appearance on the stage-1 geometry.
    Base = 0,
    /// Base plus residual with geometric deltas.
    Fused = 1,
    /// Fused, with the residual sampled at the undeformed uv.
    FusedNoResample = 2,
    /// Residual field alone (single-stage ablation).
    ResidualOnly = 3,
}

/// A synthetic scene: rig, frames and ground-truth images.
pub struct UvsScene {
    inner: SceneBundle,
}

/// A trained or loaded avatar together with its configuration.
pub struct UvsAvatar {
    ckpt: Checkpoint,
    pipeline: Pipeline,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> UvsStatus {
    match e {
        Error::Io { .. } | Error::Image(_) => UvsStatus::Io,
        Error::Format { .. } | Error::MissingTensor(_) => UvsStatus::Format,
        Error::Config(_) | Error::UnknownPreset(_) | Error::Resolution { .. } | Error::Dimension { .. } => {
            UvsStatus::Config
        }
        Error::NonFinite(_) | Error::NanGradient(_) | Error::SingularCovariance(_) => UvsStatus::Numeric,
        Error::Diverged { .. } => UvsStatus::Diverged,
        Error::InvalidMesh(_)
        | Error::DegenerateTriangle { .. }
        | Error::DegenerateChart(_)
        | Error::OverlappingCharts { .. }
        | Error::DegenerateRotation { .. } => UvsStatus::Geometry,
        Error::NoForwardRecord => UvsStatus::InvalidArgument,
    }
}

/// Internal failure: status plus message.
struct Fail(UvsStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(status_of(&e), e.to_string())
    }
}

/// Runs `f`, recording any error or panic for [`uvs_last_error`].
fn guard(f: impl FnOnce() -> Result<(), Fail>) -> UvsStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => UvsStatus::Ok,
        Ok(Err(Fail(status, msg))) => {
            set_error(msg);
            status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| (*s).to_owned())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_error(format!("panic: {msg}"));
            UvsStatus::Panic
        }
    }
}

fn null(what: &str) -> Fail {
    Fail(UvsStatus::NullPointer, format!("{what} is null"))
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, Fail> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Fail(UvsStatus::InvalidArgument, format!("{what} is not valid UTF-8")))
}

unsafe fn ref_arg<'a, T>(p: *const T, what: &str) -> Result<&'a T, Fail> {
    p.as_ref().ok_or_else(|| null(what))
}

unsafe fn out_arg<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, Fail> {
    p.as_mut().ok_or_else(|| null(what))
}

/// Message of the last failed call on this thread, or null. The pointer is
/// valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn uvs_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(std::ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn uvs_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Generates a synthetic scene. `preset` is "static", "linear" or "nonlinear".
#[no_mangle]
pub unsafe extern "C" fn uvs_scene_generate(
    preset: *const c_char,
    seed: u64,
    num_frames: usize,
    image_size: usize,
    out: *mut *mut UvsScene,
) -> UvsStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        let preset: Preset = str_arg(preset, "preset")?.parse()?;
        let inner = gen_scene(preset, seed, num_frames, image_size)?;
        *out = Box::into_raw(Box::new(UvsScene { inner }));
        Ok(())
    })
}

/// Reads a scene bundle directory.
#[no_mangle]
pub unsafe extern "C" fn uvs_scene_load(dir: *const c_char, out: *mut *mut UvsScene) -> UvsStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        let inner = read_bundle(&PathBuf::from(str_arg(dir, "dir")?))?;
        *out = Box::into_raw(Box::new(UvsScene { inner }));
        Ok(())
    })
}

/// Writes a scene bundle directory.
#[no_mangle]
pub unsafe extern "C" fn uvs_scene_save(scene: *const UvsScene, dir: *const c_char) -> UvsStatus {
    guard(|| {
        let scene = ref_arg(scene, "scene")?;
        write_bundle(&scene.inner, &PathBuf::from(str_arg(dir, "dir")?))?;
        Ok(())
    })
}

/// Frame count and image size of a scene. Any output pointer may be null.
#[no_mangle]
pub unsafe extern "C" fn uvs_scene_info(
    scene: *const UvsScene,
    num_frames: *mut usize,
    width: *mut usize,
    height: *mut usize,
) -> UvsStatus {
    guard(|| {
        let s = &ref_arg(scene, "scene")?.inner;
        for (p, v) in [(num_frames, s.frames.len()), (width, s.width()), (height, s.height())] {
            if let Some(p) = p.as_mut() {
                *p = v;
            }
        }
        Ok(())
    })
}

/// Copies the ground-truth image of `frame` (row-major RGB, `w*h*3` values).
#[no_mangle]
pub unsafe extern "C" fn uvs_scene_ground_truth(
    scene: *const UvsScene,
    frame: usize,
    rgb: *mut f64,
    len: usize,
) -> UvsStatus {
    guard(|| {
        let s = &ref_arg(scene, "scene")?.inner;
        let img = s
            .gt
            .get(frame)
            .ok_or_else(|| Fail(UvsStatus::InvalidArgument, format!("frame {frame} out of range")))?;
        copy_out(&img.data, rgb, len)
    })
}

#[no_mangle]
pub unsafe extern "C" fn uvs_scene_free(scene: *mut UvsScene) {
    if !scene.is_null() {
        drop(Box::from_raw(scene));
    }
}

unsafe fn copy_out(src: &[f64], dst: *mut f64, len: usize) -> Result<(), Fail> {
    if dst.is_null() {
        return Err(null("output buffer"));
    }
    if len != src.len() {
        return Err(Fail(
            UvsStatus::InvalidArgument,
            format!("output buffer holds {len} values, need {}", src.len()),
        ));
    }
    std::ptr::copy_nonoverlapping(src.as_ptr(), dst, len);
    Ok(())
}

fn avatar_from(ckpt: Checkpoint, scene: &SceneBundle) -> Result<UvsAvatar, Fail> {
    let pipeline = Pipeline::new(&scene.rig, ckpt.config.model.uv_res)?;
    if pipeline.num_triangles() != ckpt.num_triangles || pipeline.cond_dim() != ckpt.cond_dim {
        return Err(Fail(UvsStatus::Config, "checkpoint does not match the scene rig".into()));
    }
    Ok(UvsAvatar { ckpt, pipeline })
}

/// Trains an avatar on `scene`. `config_toml` is a project configuration;
/// its `scene` and `output` paths are ignored. Runs stage 1 and then stage 2.
#[no_mangle]
pub unsafe extern "C" fn uvs_train(
    scene: *const UvsScene,
    config_toml: *const c_char,
    out: *mut *mut UvsAvatar,
) -> UvsStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        let scene = &ref_arg(scene, "scene")?.inner;
        let cfg = ProjectConfig::parse(str_arg(config_toml, "config_toml")?)?;
        let mut t = Trainer::new(scene, cfg)?;
        t.run_stage1()?;
        t.run_stage2()?;
        *out = Box::into_raw(Box::new(avatar_from(t.checkpoint(), scene)?));
        Ok(())
    })
}

/// Loads a checkpoint for rendering frames of `scene`.
#[no_mangle]
pub unsafe extern "C" fn uvs_avatar_load(
    path: *const c_char,
    scene: *const UvsScene,
    out: *mut *mut UvsAvatar,
) -> UvsStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        let scene = &ref_arg(scene, "scene")?.inner;
        let ckpt = Checkpoint::load(&PathBuf::from(str_arg(path, "path")?))?;
        *out = Box::into_raw(Box::new(avatar_from(ckpt, scene)?));
        Ok(())
    })
}

/// Writes the avatar as a checkpoint.
#[no_mangle]
pub unsafe extern "C" fn uvs_avatar_save(avatar: *const UvsAvatar, path: *const c_char) -> UvsStatus {
    guard(|| {
        let a = ref_arg(avatar, "avatar")?;
        a.ckpt.save(&PathBuf::from(str_arg(path, "path")?))?;
        Ok(())
    })
}

/// Number of Gaussians in the avatar's cloud.
#[no_mangle]
pub unsafe extern "C" fn uvs_avatar_num_gaussians(avatar: *const UvsAvatar, out: *mut usize) -> UvsStatus {
    guard(|| {
        *out_arg(out, "out")? = ref_arg(avatar, "avatar")?.ckpt.state.avatar.cloud.len();
        Ok(())
    })
}

/// Renders `frame` of `scene` into `rgb` (row-major RGB, `w*h*3` values).
#[no_mangle]
pub unsafe extern "C" fn uvs_avatar_render(
    avatar: *const UvsAvatar,
    scene: *const UvsScene,
    frame: usize,
    path: UvsRenderPath,
    rgb: *mut f64,
    len: usize,
) -> UvsStatus {
    guard(|| {
        let a = ref_arg(avatar, "avatar")?;
        let s = &ref_arg(scene, "scene")?.inner;
        let f = s
            .frames
            .get(frame)
            .ok_or_else(|| Fail(UvsStatus::InvalidArgument, format!("frame {frame} out of range")))?;
        let path = match path {
            UvsRenderPath::Base => RenderPath::Base,
            UvsRenderPath::Fused => RenderPath::Fused(FusionMode::Resample),
            UvsRenderPath::FusedNoResample => RenderPath::Fused(FusionMode::NoResample),
            UvsRenderPath::ResidualOnly => RenderPath::ResidualOnly,
        };
        let img = render_frame(&a.ckpt.state.avatar, &a.pipeline, f, path, s.background)?;
        copy_out(&img.data, rgb, len)
    })
}

#[no_mangle]
pub unsafe extern "C" fn uvs_avatar_free(avatar: *mut UvsAvatar) {
    if !avatar.is_null() {
        drop(Box::from_raw(avatar));
    }
}

/// Runs every finite-difference suite; `passed` receives 1 when all pass.
#[no_mangle]
pub unsafe extern "C" fn uvs_gradcheck(seed: u64, instances: usize, passed: *mut i32) -> UvsStatus {
    guard(|| {
        let out = out_arg(passed, "passed")?;
        *out = i32::from(gradcheck::run_all(seed, instances).iter().all(|r| r.passed()));
        Ok(())
    })
}
