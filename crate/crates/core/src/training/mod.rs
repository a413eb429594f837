//! Losses, Adam, densification and the two training stages.
//!
//! Stage 1 optimizes the bound cloud and the base appearance field; stage 2
//! freezes both and optimizes the dynamic appearance and deformation fields
//! on the fused render. A single-stage variant trains the cloud together
//! with the dynamic field alone.

pub mod adam;
pub mod checkpoint;
pub mod densify;
pub mod loss;

use std::io::Write as _;
use std::path::Path;

use nalgebra::Vector3;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::ProjectConfig;
use crate::error::{Error, Result};
use crate::fields::{Field, FieldInput, FieldModel};
use crate::fusion::{assemble_stage1, fuse, fuse_backward, FusionInputs, FusionMode, GlobalGaussians};
use crate::geometry::{CloudGrads, GaussianCloud};
use crate::io::write_atomic;
use crate::pipeline::{render_frame, tap_mask, Avatar, Pipeline, RenderPath};
use crate::raster::{render, render_backward, Image};
use crate::scene::SceneBundle;

pub use crate::pipeline::ModelConfig;
pub use adam::{adam_step, AdamConfig, Moments};
pub use checkpoint::Checkpoint;
pub use densify::{densify_and_prune, DensifyConfig, DensifyOutcome, DensifyStats};
pub use loss::{eval_metrics, photometric_loss, scale_hinge, ssim, xyz_hinge, Metrics};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossWeights {
    pub lambda_l1: f64,
    /// Weight of the optional perceptual term; inactive without a hook.
    pub lambda_lpips: f64,
    pub lambda_xyz: f64,
    pub lambda_scale: f64,
    pub eps_xyz: f64,
    pub eps_scale: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            lambda_l1: 0.8,
            lambda_lpips: 0.1,
            lambda_xyz: 0.01,
            lambda_scale: 1.0,
            eps_xyz: 2.0,
            eps_scale: 0.6,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let all = [
            self.lambda_l1,
            self.lambda_lpips,
            self.lambda_xyz,
            self.lambda_scale,
            self.eps_xyz,
            self.eps_scale,
        ];
        if all.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::Config(format!("loss weights must be finite and non-negative: {self:?}")));
        }
        if self.lambda_l1 > 1.0 {
            return Err(Error::Config(format!("lambda_l1 must lie in [0,1], got {}", self.lambda_l1)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub stage1_iters: u64,
    pub stage2_iters: u64,
    pub lr_stage1: f64,
    pub lr_stage2: f64,
    /// Densify every this many stage-1 iterations; 0 disables.
    pub densify_interval: u64,
    pub densify: DensifyConfig,
    pub adam: AdamConfig,
    pub seed: u64,
    /// A copy of the state is kept every this many iterations and restored
    /// when the loss diverges.
    pub snapshot_interval: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self::desk()
    }
}

impl TrainConfig {
    /// Short schedule for 64×64 synthetic scenes on a CPU.
    pub fn desk() -> Self {
        TrainConfig {
            stage1_iters: 2000,
            stage2_iters: 2000,
            lr_stage1: 1e-2,
            lr_stage2: 1e-3,
            densify_interval: 500,
            densify: DensifyConfig::default(),
            adam: AdamConfig::default(),
            seed: 0,
            snapshot_interval: 50,
        }
    }

    /// The full-length schedule.
    pub fn full() -> Self {
        TrainConfig {
            stage1_iters: 60_000,
            stage2_iters: 60_000,
            lr_stage1: 1e-4,
            lr_stage2: 1e-5,
            ..Self::desk()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lr_stage1 > 0.0 && self.lr_stage2 > 0.0 && self.lr_stage1.is_finite() && self.lr_stage2.is_finite()) {
            return Err(Error::Config(format!(
                "learning rates must be positive, got {} and {}",
                self.lr_stage1, self.lr_stage2
            )));
        }
        let a = &self.adam;
        if !((0.0..1.0).contains(&a.beta1) && (0.0..1.0).contains(&a.beta2) && a.eps > 0.0) {
            return Err(Error::Config(format!("invalid adam parameters {a:?}")));
        }
        if self.snapshot_interval == 0 {
            return Err(Error::Config("snapshot_interval must be positive".into()));
        }
        Ok(())
    }
}

/// Optional perceptual term added to the photometric loss with weight
/// `lambda_lpips`.
pub trait PerceptualLoss: Send + Sync {
    /// Loss and its gradient w.r.t. `image`.
    fn loss(&self, image: &Image, gt: &Image) -> Result<(f64, Vec<f64>)>;
}

/// Adam moments of the cloud parameters.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct CloudMoments {
    pub mu_l: Moments,
    pub log_s_l: Moments,
    pub r_l: Moments,
}

impl CloudMoments {
    pub fn zeros(n: usize) -> Self {
        CloudMoments {
            mu_l: Moments::zeros(3 * n),
            log_s_l: Moments::zeros(3 * n),
            r_l: Moments::zeros(4 * n),
        }
    }

    /// Moments for a densified cloud; new Gaussians start from zero.
    pub fn remap(&self, source: &[Option<usize>]) -> Self {
        fn pick(m: &Moments, source: &[Option<usize>], width: usize) -> Moments {
            let mut out = Moments::zeros(source.len() * width);
            for (i, s) in source.iter().enumerate() {
                if let Some(j) = s {
                    out.m[i * width..(i + 1) * width].copy_from_slice(&m.m[j * width..(j + 1) * width]);
                    out.v[i * width..(i + 1) * width].copy_from_slice(&m.v[j * width..(j + 1) * width]);
                }
            }
            out
        }
        CloudMoments {
            mu_l: pick(&self.mu_l, source, 3),
            log_s_l: pick(&self.log_s_l, source, 3),
            r_l: pick(&self.r_l, source, 4),
        }
    }
}

fn field_moments(field: &mut Field) -> Vec<Moments> {
    field.params().iter().map(|p| Moments::zeros(p.value.len())).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub cloud: CloudMoments,
    pub base: Vec<Moments>,
    pub dynamic: Vec<Moments>,
    pub geo: Vec<Moments>,
    /// Adam step counts of the stage-1 (or single-stage) and stage-2 groups.
    pub step1: u64,
    pub step2: u64,
}

impl OptimizerState {
    pub fn new(avatar: &mut Avatar) -> Self {
        OptimizerState {
            cloud: CloudMoments::zeros(avatar.cloud.len()),
            base: field_moments(&mut avatar.base),
            dynamic: field_moments(&mut avatar.dynamic),
            geo: field_moments(&mut avatar.geo),
            step1: 0,
            step2: 0,
        }
    }
}

/// Everything needed to resume training.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainState {
    pub avatar: Avatar,
    pub opt: OptimizerState,
    pub iter1: u64,
    pub iter2: u64,
    pub stats: DensifyStats,
}

impl TrainState {
    pub fn new(mut avatar: Avatar) -> Self {
        let opt = OptimizerState::new(&mut avatar);
        let stats = DensifyStats::new(avatar.cloud.len());
        TrainState {
            avatar,
            opt,
            iter1: 0,
            iter2: 0,
            stats,
        }
    }
}

/// One line of the training log.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LogRecord {
    pub stage: u8,
    pub iter: u64,
    pub frame: usize,
    pub loss: f64,
    pub l1: f64,
    pub psnr: f64,
    pub ssim: f64,
    pub gaussians: usize,
}

/// Writes `iter,loss,l1,psnr,ssim` rows of the records of `stage`.
pub fn write_metrics_csv(records: &[LogRecord], stage: u8, path: &Path) -> Result<()> {
    let mut out = Vec::new();
    writeln!(out, "iter,loss,l1,psnr,ssim").expect("write to memory");
    for r in records.iter().filter(|r| r.stage == stage) {
        writeln!(out, "{},{},{},{},{}", r.iter, r.loss, r.l1, r.psnr, r.ssim).expect("write to memory");
    }
    write_atomic(path, &out)
}

/// Mean metrics over a set of frames.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EvalSummary {
    pub frames: usize,
    pub l1: f64,
    pub psnr: f64,
    pub ssim: f64,
}

pub fn evaluate_frames(
    avatar: &Avatar,
    pipeline: &Pipeline,
    scene: &SceneBundle,
    indices: &[usize],
    path: RenderPath,
) -> Result<EvalSummary> {
    let mut sum = EvalSummary {
        frames: indices.len(),
        l1: 0.0,
        psnr: 0.0,
        ssim: 0.0,
    };
    for &i in indices {
        let img = render_frame(avatar, pipeline, &scene.frames[i], path, scene.background)?;
        let m = eval_metrics(&img, &scene.gt[i])?;
        sum.l1 += m.l1;
        sum.psnr += m.psnr;
        sum.ssim += m.ssim;
    }
    let n = indices.len().max(1) as f64;
    sum.l1 /= n;
    sum.psnr /= n;
    sum.ssim /= n;
    Ok(sum)
}

fn flat3(v: &[Vector3<f64>]) -> Vec<f64> {
    v.iter().flat_map(|x| [x.x, x.y, x.z]).collect()
}

fn unflat3(src: &[f64], dst: &mut [Vector3<f64>]) {
    for (d, s) in dst.iter_mut().zip(src.chunks_exact(3)) {
        *d = Vector3::new(s[0], s[1], s[2]);
    }
}

fn step_cloud(cloud: &mut GaussianCloud, g: &CloudGrads, m: &mut CloudMoments, lr: f64, t: u64, cfg: &AdamConfig) -> Result<()> {
    let mut mu = flat3(&cloud.mu_l);
    adam_step("cloud.mu_l", &mut mu, &flat3(&g.mu_l), &mut m.mu_l, lr, t, cfg)?;
    let mut ls = flat3(&cloud.log_s_l);
    adam_step("cloud.log_s_l", &mut ls, &flat3(&g.log_s_l), &mut m.log_s_l, lr, t, cfg)?;
    let mut r: Vec<f64> = cloud.r_l.iter().flatten().copied().collect();
    let gr: Vec<f64> = g.r_l.iter().flatten().copied().collect();
    adam_step("cloud.r_l", &mut r, &gr, &mut m.r_l, lr, t, cfg)?;
    adam::renormalize_quaternions(&mut r);
    unflat3(&mu, &mut cloud.mu_l);
    unflat3(&ls, &mut cloud.log_s_l);
    for (d, s) in cloud.r_l.iter_mut().zip(r.chunks_exact(4)) {
        d.copy_from_slice(s);
    }
    Ok(())
}

fn step_field(field: &mut Field, moments: &mut [Moments], prefix: &str, lr: f64, t: u64, cfg: &AdamConfig) -> Result<()> {
    for (slot, m) in field.params().into_iter().zip(moments.iter_mut()) {
        adam_step(&format!("{prefix}.{}", slot.name), slot.value, slot.grad, m, lr, t, cfg)?;
    }
    Ok(())
}

/// Which field supplies appearance in the single-field stage.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Appearance {
    Base,
    Dynamic,
}

/// Drives training of one avatar on one scene.
pub struct Trainer<'a> {
    pub scene: &'a SceneBundle,
    pub pipeline: Pipeline,
    pub config: ProjectConfig,
    pub state: TrainState,
    pub log: Vec<LogRecord>,
    pub perceptual: Option<Box<dyn PerceptualLoss>>,
    /// Residual sampling used by stage 2; `NoResample` is an ablation.
    pub fusion_mode: FusionMode,
    last_good: Option<TrainState>,
}

impl<'a> Trainer<'a> {
    pub fn new(scene: &'a SceneBundle, config: ProjectConfig) -> Result<Self> {
        let pipeline = Self::check_and_build(scene, &config)?;
        let avatar = Avatar::new(&config.model, pipeline.num_triangles(), pipeline.cond_dim())?;
        Ok(Self::with_state(scene, config, pipeline, TrainState::new(avatar)))
    }

    /// Resumes from a checkpoint; the scene must match its configuration.
    pub fn resume(scene: &'a SceneBundle, ckpt: Checkpoint) -> Result<Self> {
        let pipeline = Self::check_and_build(scene, &ckpt.config)?;
        if ckpt.num_triangles != pipeline.num_triangles() || ckpt.cond_dim != pipeline.cond_dim() {
            return Err(Error::Config(format!(
                "checkpoint expects {} triangles and {} condition values, scene has {} and {}",
                ckpt.num_triangles,
                ckpt.cond_dim,
                pipeline.num_triangles(),
                pipeline.cond_dim()
            )));
        }
        Ok(Self::with_state(scene, ckpt.config, pipeline, ckpt.state))
    }

    fn with_state(scene: &'a SceneBundle, config: ProjectConfig, pipeline: Pipeline, state: TrainState) -> Self {
        Trainer {
            scene,
            pipeline,
            config,
            state,
            log: Vec::new(),
            perceptual: None,
            fusion_mode: FusionMode::Resample,
            last_good: None,
        }
    }

    fn check_and_build(scene: &SceneBundle, config: &ProjectConfig) -> Result<Pipeline> {
        config.validate()?;
        let [w, h] = config.image_size;
        if scene.width() != w || scene.height() != h {
            return Err(Error::Resolution {
                expected_w: w,
                expected_h: h,
                expected_c: 3,
                w: scene.width(),
                h: scene.height(),
                c: 3,
            });
        }
        if scene.train.is_empty() {
            return Err(Error::Config("scene has no training frames".into()));
        }
        Pipeline::new(&scene.rig, config.model.uv_res)
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            config: self.config.clone(),
            num_triangles: self.pipeline.num_triangles(),
            cond_dim: self.pipeline.cond_dim(),
            state: self.state.clone(),
        }
    }

    /// Frame of iteration `iter`: a seeded shuffle of the training frames per
    /// epoch.
    pub fn frame_for(&self, stage: u8, iter: u64) -> usize {
        let train = &self.scene.train;
        let n = train.len() as u64;
        let epoch = iter / n;
        let mut order = train.clone();
        let seed = self.config.train.seed ^ (u64::from(stage) << 56) ^ epoch.wrapping_mul(0x9e37_79b9_7f4a_7c15);
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        order[(iter % n) as usize]
    }

    /// Runs stage 1 up to `stage1_iters`.
    pub fn run_stage1(&mut self) -> Result<()> {
        let until = self.config.train.stage1_iters;
        self.run(1, until, |t| t.stage1_step(Appearance::Base))
    }

    /// Runs stage 2 up to `stage2_iters`.
    pub fn run_stage2(&mut self) -> Result<()> {
        let until = self.config.train.stage2_iters;
        self.run(2, until, Self::stage2_step)
    }

    /// Single-stage ablation: the cloud and the dynamic field trained together
    /// for `stage1_iters + stage2_iters` iterations with the stage-1 rate.
    pub fn run_residual_only(&mut self) -> Result<()> {
        let until = self.config.train.stage1_iters + self.config.train.stage2_iters;
        self.run(1, until, |t| t.stage1_step(Appearance::Dynamic))
    }

    fn run(&mut self, stage: u8, until: u64, mut step: impl FnMut(&mut Self) -> Result<()>) -> Result<()> {
        let interval = self.config.train.snapshot_interval;
        loop {
            let iter = if stage == 1 { self.state.iter1 } else { self.state.iter2 };
            if iter >= until {
                return Ok(());
            }
            if iter % interval == 0 || self.last_good.is_none() {
                self.last_good = Some(self.state.clone());
            }
            if let Err(e) = step(self) {
                if let Some(good) = self.last_good.take() {
                    self.state = good;
                }
                return Err(e);
            }
        }
    }

    fn photometric(&self, img: &Image, gt: &Image) -> Result<(f64, Vec<f64>)> {
        let w = &self.config.loss;
        let (mut loss, mut grad) = photometric_loss(img, gt, w.lambda_l1)?;
        if let (Some(p), true) = (&self.perceptual, w.lambda_lpips > 0.0) {
            let (l, g) = p.loss(img, gt)?;
            loss += w.lambda_lpips * l;
            for (a, b) in grad.iter_mut().zip(&g) {
                *a += w.lambda_lpips * b;
            }
        }
        Ok((loss, grad))
    }

    fn record(&mut self, stage: u8, iter: u64, frame: usize, loss: f64, img: &Image) -> Result<()> {
        if !loss.is_finite() {
            return Err(Error::Diverged {
                stage,
                iteration: iter,
                loss,
            });
        }
        let m = eval_metrics(img, &self.scene.gt[frame])?;
        self.log.push(LogRecord {
            stage,
            iter,
            frame,
            loss,
            l1: m.l1,
            psnr: m.psnr,
            ssim: m.ssim,
            gaussians: self.state.avatar.cloud.len(),
        });
        Ok(())
    }

    fn stage1_step(&mut self, appearance: Appearance) -> Result<()> {
        let iter = self.state.iter1;
        let fi = self.frame_for(1, iter);
        let frame = &self.scene.frames[fi];
        let prep = self.pipeline.prepare(frame)?;
        let cond = match appearance {
            Appearance::Base => Vec::new(),
            Appearance::Dynamic => prep.cond.to_vec(),
        };
        let weights = self.config.loss;
        let tc = self.config.train.clone();

        let avatar = &mut self.state.avatar;
        let model = match appearance {
            Appearance::Base => &mut avatar.base,
            Appearance::Dynamic => &mut avatar.dynamic,
        };
        let (w, h, _) = model.output_shape();
        let (pts, _) = self.pipeline.sample_points(&avatar.cloud, None, FusionMode::Resample)?;
        let mask = tap_mask(&pts, w, h)?;
        model.zero_grad();
        let b = model.forward(&FieldInput {
            u: Some(&prep.u),
            cond: &cond,
            mask: Some(&mask),
        })?;
        let (g, rec) = assemble_stage1(&avatar.cloud, &prep.frames, &self.pipeline.charts, &b)?;
        let (img, graph) = render(&g, &frame.camera, self.scene.background)?;
        let (photo, d_img) = self.photometric(&img, &self.scene.gt[fi])?;
        let avatar = &mut self.state.avatar;
        let (lx, gx) = xyz_hinge(&avatar.cloud.mu_l, weights.eps_xyz);
        let (ls, gs) = scale_hinge(&avatar.cloud.log_s_l, weights.eps_scale);
        let loss = photo + weights.lambda_xyz * lx + weights.lambda_scale * ls;
        self.record(1, iter, fi, loss, &img)?;

        let d_gauss = render_backward(&graph, &d_img)?;
        let avatar = &mut self.state.avatar;
        let n = avatar.cloud.len();
        let mut local = CloudGrads::zeros(n);
        for i in 0..n {
            local.mu_l[i] = gx[i] * weights.lambda_xyz;
            local.log_s_l[i] = gs[i] * weights.lambda_scale;
        }
        let inputs = FusionInputs {
            base: &b,
            residual: None,
            deform: None,
        };
        let fg = fuse_backward(&rec, &avatar.cloud, &prep.frames, &self.pipeline.charts, &inputs, &d_gauss, Some(&local))?;
        let (model, moments) = match appearance {
            Appearance::Base => (&mut avatar.base, &mut self.state.opt.base),
            Appearance::Dynamic => (&mut avatar.dynamic, &mut self.state.opt.dynamic),
        };
        model.backward(&fg.base)?;
        self.state.stats.accumulate(&fg.cloud);
        self.state.opt.step1 += 1;
        let t = self.state.opt.step1;
        let prefix = match appearance {
            Appearance::Base => "base",
            Appearance::Dynamic => "dynamic",
        };
        step_field(model, moments, prefix, tc.lr_stage1, t, &tc.adam)?;
        step_cloud(&mut avatar.cloud, &fg.cloud, &mut self.state.opt.cloud, tc.lr_stage1, t, &tc.adam)?;
        self.state.iter1 += 1;

        if tc.densify_interval > 0 && self.state.iter1.is_multiple_of(tc.densify_interval) && self.state.iter1 < tc.stage1_iters {
            self.densify(&g)?;
        }
        Ok(())
    }

    fn densify(&mut self, assembled: &GlobalGaussians) -> Result<()> {
        let tc = &self.config.train;
        let mut rng = ChaCha8Rng::seed_from_u64(tc.seed ^ self.state.iter1.wrapping_mul(0x2545_f491_4f6c_dd1d));
        let out = densify_and_prune(
            &self.state.avatar.cloud,
            &self.state.stats,
            &assembled.opacity,
            self.pipeline.num_triangles(),
            &tc.densify,
            &mut rng,
        )?;
        log::debug!(
            "densify at {}: pruned {}, cloned {}, split {}, now {}",
            self.state.iter1,
            out.pruned,
            out.cloned,
            out.split,
            out.cloud.len()
        );
        self.state.opt.cloud = self.state.opt.cloud.remap(&out.source);
        self.state.stats = DensifyStats::new(out.cloud.len());
        self.state.avatar.cloud = out.cloud;
        Ok(())
    }

    fn stage2_step(&mut self) -> Result<()> {
        let iter = self.state.iter2;
        let fi = self.frame_for(2, iter);
        let frame = &self.scene.frames[fi];
        let prep = self.pipeline.prepare(frame)?;
        let cond = prep.cond.to_vec();
        let weights = self.config.loss;
        let tc = self.config.train.clone();
        let mode = self.fusion_mode;

        let avatar = &mut self.state.avatar;
        let (w, h, _) = avatar.dynamic.output_shape();
        avatar.geo.zero_grad();
        avatar.dynamic.zero_grad();
        let dg = avatar.geo.forward(&FieldInput::new(None, &cond))?;
        let (base_pts, res_pts) = self.pipeline.sample_points(&avatar.cloud, Some(&dg), mode)?;
        let (bw, bh, _) = avatar.base.output_shape();
        let b = avatar.base.evaluate(&FieldInput {
            u: Some(&prep.u),
            cond: &[],
            mask: Some(&tap_mask(&base_pts, bw, bh)?),
        })?;
        let r = avatar.dynamic.forward(&FieldInput {
            u: Some(&prep.u),
            cond: &cond,
            mask: Some(&tap_mask(&res_pts, w, h)?),
        })?;
        let (g, rec) = fuse(&avatar.cloud, &prep.frames, &self.pipeline.charts, &b, &r, &dg, mode)?;
        let (img, graph) = render(&g, &frame.camera, self.scene.background)?;
        let (photo, d_img) = self.photometric(&img, &self.scene.gt[fi])?;

        // Regularizers on both the frozen stage-1 geometry and the displaced
        // geometry; only the latter carries gradient.
        let avatar = &self.state.avatar;
        let mu2: Vec<Vector3<f64>> = rec.gaussians.iter().map(|r| r.mu_l).collect();
        let ls2: Vec<Vector3<f64>> = rec.gaussians.iter().map(|r| r.log_s_l).collect();
        let (lx1, _) = xyz_hinge(&avatar.cloud.mu_l, weights.eps_xyz);
        let (ls1, _) = scale_hinge(&avatar.cloud.log_s_l, weights.eps_scale);
        let (lx2, gx) = xyz_hinge(&mu2, weights.eps_xyz);
        let (ls2v, gs) = scale_hinge(&ls2, weights.eps_scale);
        let loss = photo + weights.lambda_xyz * (lx1 + lx2) + weights.lambda_scale * (ls1 + ls2v);
        self.record(2, iter, fi, loss, &img)?;

        let d_gauss = render_backward(&graph, &d_img)?;
        let avatar = &mut self.state.avatar;
        let n = avatar.cloud.len();
        let mut local = CloudGrads::zeros(n);
        for i in 0..n {
            local.mu_l[i] = gx[i] * weights.lambda_xyz;
            local.log_s_l[i] = gs[i] * weights.lambda_scale;
        }
        let inputs = FusionInputs {
            base: &b,
            residual: Some(&r),
            deform: Some(&dg),
        };
        let fg = fuse_backward(&rec, &avatar.cloud, &prep.frames, &self.pipeline.charts, &inputs, &d_gauss, Some(&local))?;
        avatar.dynamic.backward(fg.residual.as_ref().expect("fused record has a residual gradient"))?;
        avatar.geo.backward(fg.deform.as_ref().expect("fused record has a deformation gradient"))?;
        self.state.opt.step2 += 1;
        let t = self.state.opt.step2;
        step_field(&mut avatar.dynamic, &mut self.state.opt.dynamic, "dynamic", tc.lr_stage2, t, &tc.adam)?;
        step_field(&mut avatar.geo, &mut self.state.opt.geo, "geo", tc.lr_stage2, t, &tc.adam)?;
        self.state.iter2 += 1;
        Ok(())
    }

    pub fn evaluate(&self, indices: &[usize], path: RenderPath) -> Result<EvalSummary> {
        evaluate_frames(&self.state.avatar, &self.pipeline, self.scene, indices, path)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::{gen_scene, Preset};

    fn small_config() -> ProjectConfig {
        let mut cfg = ProjectConfig::new("unused", "unused");
        cfg.image_size = [32, 32];
        cfg.model.uv_res = 32;
        cfg.model.dynamic_hidden = vec![8];
        cfg.model.geo_hidden = vec![8];
        cfg.model.geo_grid = 2;
        cfg
    }

    #[test]
    fn zero_iterations_keep_initialization() {
        let scene = gen_scene(Preset::Static, 1, 10, 32).unwrap();
        let mut cfg = small_config();
        cfg.train.stage1_iters = 0;
        let mut t = Trainer::new(&scene, cfg.clone()).unwrap();
        let init = t.state.clone();
        t.run_stage1().unwrap();
        assert_eq!(t.state, init);
    }

    #[test]
    fn moments_remap_zeroes_new_entries() {
        let mut m = CloudMoments::zeros(2);
        m.mu_l.m = vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0];
        let r = m.remap(&[Some(1), None, Some(0)]);
        assert_eq!(r.mu_l.m, vec![4.0, 5.0, 6.0, 0.0, 0.0, 0.0, 1.0, 2.0, 3.0]);
    }

    #[test]
    fn regularizers_vanish_at_initialization() {
        let cloud = GaussianCloud::one_per_triangle(5);
        let w = LossWeights::default();
        assert_eq!(xyz_hinge(&cloud.mu_l, w.eps_xyz).0, 0.0);
        assert_eq!(scale_hinge(&cloud.log_s_l, w.eps_scale).0, 0.0);
    }

    struct FailAt {
        calls: std::sync::atomic::AtomicUsize,
        at: usize,
    }

    impl PerceptualLoss for FailAt {
        fn loss(&self, image: &Image, _gt: &Image) -> Result<(f64, Vec<f64>)> {
            let n = self.calls.fetch_add(1, std::sync::atomic::Ordering::SeqCst);
            let l = if n == self.at { f64::NAN } else { 0.0 };
            Ok((l, vec![0.0; image.data.len()]))
        }
    }

    #[test]
    fn diverged_loss_restores_snapshot() {
        let scene = gen_scene(Preset::Static, 1, 10, 32).unwrap();
        let mut cfg = small_config();
        cfg.train.stage1_iters = 20;
        cfg.train.snapshot_interval = 5;
        let mut t = Trainer::new(&scene, cfg).unwrap();
        t.perceptual = Some(Box::new(FailAt {
            calls: 0.into(),
            at: 7,
        }));
        let err = t.run_stage1().unwrap_err();
        assert!(matches!(err, Error::Diverged { stage: 1, iteration: 7, .. }), "{err}");
        assert_eq!(t.state.iter1, 5);
        assert!(t.state.avatar.cloud.mu_l.iter().all(|m| m.iter().all(|v| v.is_finite())));
    }
}
