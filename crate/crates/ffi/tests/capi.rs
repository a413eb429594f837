use std::ffi::{CStr, CString};
use std::path::PathBuf;
use std::process::Command;
use std::ptr;

use uvsplat_ffi::*;

fn last_error() -> String {
    let p = uvs_last_error();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

fn scene(preset: &str) -> *mut UvsScene {
    let name = CString::new(preset).unwrap();
    let mut s = ptr::null_mut();
    assert_eq!(unsafe { uvs_scene_generate(name.as_ptr(), 1, 10, 32, &mut s) }, UvsStatus::Ok);
    assert!(!s.is_null());
    s
}

const TINY: &str = r#"
scene = ""
output = ""
image_size = [32, 32]
[train]
stage1_iters = 6
stage2_iters = 4
[model]
uv_res = 32
dynamic_hidden = [8]
geo_hidden = [8]
geo_grid = 2
"#;

#[test]
fn errors_are_reported_not_raised() {
    let bad = CString::new("wobbly").unwrap();
    let mut s = ptr::null_mut();
    let st = unsafe { uvs_scene_generate(bad.as_ptr(), 0, 10, 32, &mut s) };
    assert_eq!(st, UvsStatus::Config);
    assert!(s.is_null());
    assert!(last_error().contains("wobbly"));

    let st = unsafe { uvs_scene_generate(ptr::null(), 0, 10, 32, &mut s) };
    assert_eq!(st, UvsStatus::NullPointer);
    let st = unsafe { uvs_scene_info(ptr::null(), ptr::null_mut(), ptr::null_mut(), ptr::null_mut()) };
    assert_eq!(st, UvsStatus::NullPointer);
    unsafe {
        uvs_scene_free(ptr::null_mut());
        uvs_avatar_free(ptr::null_mut());
    }
}

#[test]
fn scene_round_trips_through_disk() {
    let s = scene("linear");
    let (mut n, mut w, mut h) = (0, 0, 0);
    assert_eq!(unsafe { uvs_scene_info(s, &mut n, &mut w, &mut h) }, UvsStatus::Ok);
    assert_eq!((n, w, h), (10, 32, 32));
    let mut gt = vec![0.0; w * h * 3];
    assert_eq!(unsafe { uvs_scene_ground_truth(s, 3, gt.as_mut_ptr(), gt.len()) }, UvsStatus::Ok);
    assert_eq!(
        unsafe { uvs_scene_ground_truth(s, 3, gt.as_mut_ptr(), gt.len() - 1) },
        UvsStatus::InvalidArgument
    );
    assert_eq!(unsafe { uvs_scene_ground_truth(s, 99, gt.as_mut_ptr(), gt.len()) }, UvsStatus::InvalidArgument);

    let dir = tempfile::tempdir().unwrap();
    let d = CString::new(dir.path().join("bundle").to_str().unwrap()).unwrap();
    assert_eq!(unsafe { uvs_scene_save(s, d.as_ptr()) }, UvsStatus::Ok);
    let mut back = ptr::null_mut();
    assert_eq!(unsafe { uvs_scene_load(d.as_ptr(), &mut back) }, UvsStatus::Ok);
    let mut gt2 = vec![0.0; gt.len()];
    assert_eq!(unsafe { uvs_scene_ground_truth(back, 3, gt2.as_mut_ptr(), gt2.len()) }, UvsStatus::Ok);
    assert_eq!(gt, gt2);
    unsafe {
        uvs_scene_free(s);
        uvs_scene_free(back);
    }
}

#[test]
fn train_save_load_render() {
    let s = scene("nonlinear");
    let cfg = CString::new(TINY).unwrap();
    let mut a = ptr::null_mut();
    let st = unsafe { uvs_train(s, cfg.as_ptr(), &mut a) };
    assert_eq!(st, UvsStatus::Ok, "{}", last_error());
    let mut n = 0;
    assert_eq!(unsafe { uvs_avatar_num_gaussians(a, &mut n) }, UvsStatus::Ok);
    assert!(n >= 320);

    let mut img = vec![0.0; 32 * 32 * 3];
    for path in [
        UvsRenderPath::Base,
        UvsRenderPath::Fused,
        UvsRenderPath::FusedNoResample,
        UvsRenderPath::ResidualOnly,
    ] {
        assert_eq!(unsafe { uvs_avatar_render(a, s, 2, path, img.as_mut_ptr(), img.len()) }, UvsStatus::Ok);
        assert!(img.iter().all(|v| v.is_finite() && (0.0..=1.0).contains(v)));
    }

    let dir = tempfile::tempdir().unwrap();
    let p = CString::new(dir.path().join("a.ckpt").to_str().unwrap()).unwrap();
    assert_eq!(unsafe { uvs_avatar_save(a, p.as_ptr()) }, UvsStatus::Ok);
    let mut b = ptr::null_mut();
    assert_eq!(unsafe { uvs_avatar_load(p.as_ptr(), s, &mut b) }, UvsStatus::Ok);
    let mut img2 = vec![0.0; img.len()];
    unsafe {
        uvs_avatar_render(a, s, 2, UvsRenderPath::Fused, img.as_mut_ptr(), img.len());
        uvs_avatar_render(b, s, 2, UvsRenderPath::Fused, img2.as_mut_ptr(), img2.len());
    }
    assert_eq!(img, img2);

    let missing = CString::new(dir.path().join("none.ckpt").to_str().unwrap()).unwrap();
    let mut c = ptr::null_mut();
    assert_eq!(unsafe { uvs_avatar_load(missing.as_ptr(), s, &mut c) }, UvsStatus::Io);
    unsafe {
        uvs_avatar_free(a);
        uvs_avatar_free(b);
        uvs_scene_free(s);
    }
}

#[test]
fn gradcheck_entry_point() {
    let mut passed = 0;
    assert_eq!(unsafe { uvs_gradcheck(5, 3, &mut passed) }, UvsStatus::Ok);
    assert_eq!(passed, 1);
}

#[test]
fn version_is_nul_terminated() {
    let v = unsafe { CStr::from_ptr(uvs_version()) }.to_str().unwrap();
    assert_eq!(v, env!("CARGO_PKG_VERSION"));
}

const C_PROGRAM: &str = r#"
#include <stdio.h>
#include "uvsplat.h"

int main(void) {
    UvsScene *scene = NULL;
    if (uvs_scene_generate("static", 0, 10, 16, &scene) != UVS_STATUS_OK) {
        fprintf(stderr, "%s\n", uvs_last_error());
        return 1;
    }
    size_t n = 0, w = 0, h = 0;
    uvs_scene_info(scene, &n, &w, &h);
    double rgb[16 * 16 * 3];
    if (uvs_scene_ground_truth(scene, 0, rgb, w * h * 3) != UVS_STATUS_OK) return 2;
    if (uvs_scene_generate("nope", 0, 10, 16, &scene) != UVS_STATUS_CONFIG) return 3;
    uvs_scene_free(scene);
    printf("%zu %zu %zu\n", n, w, h);
    return 0;
}
"#;

/// Compiles a C program against the generated header and the static library.
#[test]
fn c_program_links_against_header() {
    let Some(cc) = ["cc", "gcc", "clang"]
        .into_iter()
        .find(|c| Command::new(c).arg("--version").output().is_ok())
    else {
        eprintln!("no C compiler found, skipping");
        return;
    };
    let manifest = PathBuf::from(env!("CARGO_MANIFEST_DIR"));
    // CARGO_TARGET_TMPDIR is <target>/tmp; the library sits in <target>/<profile>.
    let target = PathBuf::from(env!("CARGO_TARGET_TMPDIR")).parent().unwrap().to_path_buf();
    let profile = if cfg!(debug_assertions) { "debug" } else { "release" };
    let lib = target.join(profile).join("libuvsplat_ffi.a");
    if !lib.exists() {
        eprintln!("{} not built, skipping", lib.display());
        return;
    }
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("smoke.c");
    let exe = dir.path().join("smoke");
    std::fs::write(&src, C_PROGRAM).unwrap();
    let status = Command::new(cc)
        .arg(&src)
        .arg("-I")
        .arg(manifest.join("include"))
        .arg(&lib)
        .args(["-lpthread", "-ldl", "-lm", "-o"])
        .arg(&exe)
        .status()
        .unwrap();
    assert!(status.success(), "C compilation failed");
    let out = Command::new(&exe).output().unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(String::from_utf8_lossy(&out.stdout).trim(), "10 16 16");
}
