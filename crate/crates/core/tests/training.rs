use uvsplat::config::ProjectConfig;
use uvsplat::fields::FieldModel;
use uvsplat::fusion::FusionMode;
use uvsplat::pipeline::RenderPath;
use uvsplat::scene::{gen_scene, Preset};
use uvsplat::training::Trainer;

fn small_config(stage1: u64, stage2: u64) -> ProjectConfig {
    let mut cfg = ProjectConfig::new("unused", "unused");
    cfg.image_size = [32, 32];
    cfg.model.uv_res = 48;
    cfg.model.dynamic_hidden = vec![16, 16];
    cfg.model.geo_hidden = vec![16];
    cfg.model.geo_grid = 4;
    cfg.train.stage1_iters = stage1;
    cfg.train.stage2_iters = stage2;
    cfg.train.densify_interval = 50;
    cfg
}

fn params(field: &mut uvsplat::fields::Field) -> Vec<Vec<f64>> {
    field.params().iter().map(|p| p.value.to_vec()).collect()
}

#[test]
fn stage2_leaves_cloud_and_base_untouched() {
    let scene = gen_scene(Preset::Nonlinear, 5, 12, 32).unwrap();
    let mut t = Trainer::new(&scene, small_config(40, 100)).unwrap();
    t.run_stage1().unwrap();
    let cloud = t.state.avatar.cloud.clone();
    let base = params(&mut t.state.avatar.base);
    let base_moments = t.state.opt.base.clone();
    let cloud_moments = t.state.opt.cloud.clone();
    let dynamic = params(&mut t.state.avatar.dynamic);
    t.run_stage2().unwrap();
    assert_eq!(t.state.iter2, 100);
    assert_eq!(t.state.avatar.cloud, cloud);
    assert_eq!(params(&mut t.state.avatar.base), base);
    assert_eq!(t.state.opt.base, base_moments);
    assert_eq!(t.state.opt.cloud, cloud_moments);
    assert_ne!(params(&mut t.state.avatar.dynamic), dynamic);
}

#[test]
fn stage1_loss_decreases_on_every_preset() {
    for preset in [Preset::Static, Preset::Linear, Preset::Nonlinear] {
        let scene = gen_scene(preset, 2, 12, 32).unwrap();
        let mut t = Trainer::new(&scene, small_config(200, 0)).unwrap();
        t.run_stage1().unwrap();
        let losses: Vec<f64> = t.log.iter().map(|r| r.loss).collect();
        assert_eq!(losses.len(), 200);
        let blocks: Vec<f64> = losses.chunks(50).map(|c| c.iter().sum::<f64>() / 50.0).collect();
        assert!(blocks.windows(2).all(|w| w[1] < w[0]), "{preset}: {blocks:?}");
    }
}

#[test]
fn single_frame_loss_drops_below_its_start() {
    let mut scene = gen_scene(Preset::Static, 4, 10, 32).unwrap();
    scene.train = vec![0];
    let mut t = Trainer::new(&scene, small_config(500, 0)).unwrap();
    t.run_stage1().unwrap();
    assert!(t.log.iter().all(|r| r.frame == 0));
    assert!(t.log[499].loss < t.log[0].loss, "{} -> {}", t.log[0].loss, t.log[499].loss);
}

#[test]
fn resuming_from_a_checkpoint_matches_an_uninterrupted_run() {
    let scene = gen_scene(Preset::Linear, 6, 12, 32).unwrap();
    let mut full = Trainer::new(&scene, small_config(60, 30)).unwrap();
    full.run_stage1().unwrap();
    full.run_stage2().unwrap();

    let mut first = Trainer::new(&scene, small_config(35, 0)).unwrap();
    first.run_stage1().unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("mid.ckpt");
    let mut ck = first.checkpoint();
    ck.config.train.stage1_iters = 60;
    ck.config.train.stage2_iters = 30;
    ck.save(&path).unwrap();
    let mut resumed = Trainer::resume(&scene, uvsplat::training::Checkpoint::load(&path).unwrap()).unwrap();
    resumed.run_stage1().unwrap();
    resumed.run_stage2().unwrap();

    assert_eq!(resumed.checkpoint().to_tensor_file(), full.checkpoint().to_tensor_file());
    let tail: Vec<u64> = full.log[35..].iter().map(|r| r.loss.to_bits()).collect();
    let resumed_losses: Vec<u64> = resumed.log.iter().map(|r| r.loss.to_bits()).collect();
    assert_eq!(resumed_losses, tail);
}

#[test]
fn evaluation_reports_finite_metrics_on_every_path() {
    let scene = gen_scene(Preset::Linear, 7, 10, 32).unwrap();
    let mut t = Trainer::new(&scene, small_config(20, 10)).unwrap();
    t.run_stage1().unwrap();
    t.run_stage2().unwrap();
    for path in [
        RenderPath::Base,
        RenderPath::Fused(FusionMode::Resample),
        RenderPath::Fused(FusionMode::NoResample),
        RenderPath::ResidualOnly,
    ] {
        let s = t.evaluate(&scene.test, path).unwrap();
        assert_eq!(s.frames, scene.test.len());
        assert!(s.psnr.is_finite() && s.psnr > 0.0, "{path:?}");
        assert!(s.l1 > 0.0 && s.l1 < 1.0);
        assert!(s.ssim > -1.0 && s.ssim <= 1.0);
    }
}

#[test]
fn resume_rejects_a_mismatched_scene() {
    let scene = gen_scene(Preset::Static, 1, 10, 32).unwrap();
    let t = Trainer::new(&scene, small_config(0, 0)).unwrap();
    let ck = t.checkpoint();
    let other = gen_scene(Preset::Static, 1, 10, 48).unwrap();
    assert!(Trainer::resume(&other, ck).is_err());
}
