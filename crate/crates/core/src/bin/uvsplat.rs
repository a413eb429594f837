use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{bail, Context};
use clap::{Parser, Subcommand, ValueEnum};
use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::json;

use uvsplat::config::ProjectConfig;
use uvsplat::fusion::{FusionMode, GlobalGaussians};
use uvsplat::gradcheck;
use uvsplat::io::write_atomic;
use uvsplat::pipeline::{render_frame, Pipeline, RenderPath};
use uvsplat::quat;
use uvsplat::raster::{render, render_backward, Camera};
use uvsplat::scene::{gen_scene, read_bundle, write_bundle, Preset, SceneBundle, DEFAULT_FRAMES, DEFAULT_IMAGE_SIZE};
use uvsplat::training::{write_metrics_csv, Checkpoint, EvalSummary, TrainConfig, Trainer};
use uvsplat::Error;

#[derive(Parser)]
#[command(name = "uvsplat", version, about = "Mesh-bound Gaussian avatars with UV-space appearance fields")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic scene bundle.
    GenScene {
        #[arg(long)]
        preset: Preset,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = DEFAULT_FRAMES)]
        frames: usize,
        #[arg(long, default_value_t = DEFAULT_IMAGE_SIZE)]
        size: usize,
    },
    /// Train an avatar on the scene named by a config file.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, value_enum, default_value_t = Stage::All)]
        stage: Stage,
        /// Use the long schedule and learning rates.
        #[arg(long)]
        full_schedule: bool,
        /// Sample the residual field at the undisplaced uv (ablation).
        #[arg(long)]
        no_resample: bool,
    },
    /// Render one frame of the checkpoint's scene.
    Render {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        frame: usize,
        /// Base appearance only.
        #[arg(long)]
        base_only: bool,
        #[arg(long, value_enum)]
        path: Option<PathArg>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Metrics on the test split.
    Eval {
        #[arg(long)]
        ckpt: PathBuf,
        /// Overrides the scene directory stored in the checkpoint.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, value_enum)]
        path: Option<PathArg>,
    },
    /// Finite-difference checks of every gradient.
    GradCheck {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 100)]
        instances: usize,
    },
    /// Forward and backward rasterization throughput.
    Bench {
        #[arg(long, default_value = "256x256")]
        size: String,
        #[arg(long, default_value_t = 2000)]
        gaussians: usize,
    },
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Stage {
    #[value(name = "1")]
    One,
    #[value(name = "2")]
    Two,
    All,
    OnlyR,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum PathArg {
    Base,
    Fused,
    NoResample,
    ResidualOnly,
}

impl PathArg {
    fn to_render_path(self) -> RenderPath {
        match self {
            PathArg::Base => RenderPath::Base,
            PathArg::Fused => RenderPath::Fused(FusionMode::Resample),
            PathArg::NoResample => RenderPath::Fused(FusionMode::NoResample),
            PathArg::ResidualOnly => RenderPath::ResidualOnly,
        }
    }
}

/// Default render path of a checkpoint: fused once stage 2 has run.
fn default_path(ck: &Checkpoint) -> RenderPath {
    if ck.state.iter2 > 0 {
        RenderPath::Fused(FusionMode::Resample)
    } else {
        RenderPath::Base
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::GenScene {
            preset,
            seed,
            out,
            frames,
            size,
        } => {
            let scene = gen_scene(preset, seed, frames, size)?;
            write_bundle(&scene, &out)?;
            println!(
                "wrote {} frames ({} train, {} test) at {}x{} to {}",
                scene.frames.len(),
                scene.train.len(),
                scene.test.len(),
                size,
                size,
                out.display()
            );
            Ok(())
        }
        Command::Train {
            config,
            stage,
            full_schedule,
            no_resample,
        } => train(&config, stage, full_schedule, no_resample),
        Command::Render {
            ckpt,
            frame,
            base_only,
            path,
            out,
        } => {
            let ck = Checkpoint::load(&ckpt)?;
            let scene = read_bundle(&ck.config.scene)?;
            let f = scene
                .frames
                .get(frame)
                .with_context(|| format!("frame {frame} out of range (scene has {})", scene.frames.len()))?;
            let pipeline = Pipeline::new(&scene.rig, ck.config.model.uv_res)?;
            let path = match (base_only, path) {
                (true, _) => RenderPath::Base,
                (false, Some(p)) => p.to_render_path(),
                (false, None) => default_path(&ck),
            };
            render_frame(&ck.state.avatar, &pipeline, f, path, scene.background)?.save_png(&out)?;
            println!("wrote {}", out.display());
            Ok(())
        }
        Command::Eval { ckpt, config, path } => {
            let ck = Checkpoint::load(&ckpt)?;
            let scene_dir = match config {
                Some(c) => ProjectConfig::load(&c)?.scene,
                None => ck.config.scene.clone(),
            };
            let scene = read_bundle(&scene_dir)?;
            let path = path.map_or_else(|| default_path(&ck), PathArg::to_render_path);
            let trainer = Trainer::resume(&scene, ck)?;
            println!("{:<6} {:>6} {:>10} {:>9} {:>8}", "split", "frames", "L1", "PSNR", "SSIM");
            for (name, idx) in [("train", &scene.train), ("test", &scene.test)] {
                let s = trainer.evaluate(idx, path)?;
                println!("{:<6} {:>6} {:>10.5} {:>9.3} {:>8.4}", name, s.frames, s.l1, s.psnr, s.ssim);
            }
            Ok(())
        }
        Command::GradCheck { seed, instances } => {
            let start = Instant::now();
            let reports = gradcheck::run_all(seed, instances);
            for r in &reports {
                println!("{r}");
            }
            println!("elapsed {:.1}s", start.elapsed().as_secs_f64());
            if reports.iter().all(gradcheck::SuiteReport::passed) {
                Ok(())
            } else {
                bail!("gradient check failed")
            }
        }
        Command::Bench { size, gaussians } => bench(&size, gaussians),
    }
}

fn summary_json(s: &EvalSummary) -> serde_json::Value {
    json!({ "frames": s.frames, "l1": s.l1, "psnr": s.psnr, "ssim": s.ssim })
}

fn stage_summary(t: &Trainer, scene: &SceneBundle, path: RenderPath) -> anyhow::Result<serde_json::Value> {
    Ok(json!({
        "train": summary_json(&t.evaluate(&scene.train, path)?),
        "test": summary_json(&t.evaluate(&scene.test, path)?),
        "gaussians": t.state.avatar.cloud.len(),
        "iter1": t.state.iter1,
        "iter2": t.state.iter2,
    }))
}

/// Saves the restored state next to the outputs and forwards the error.
fn on_failure(t: &Trainer, out: &Path, e: Error) -> anyhow::Error {
    if matches!(e, Error::Diverged { .. } | Error::NanGradient(_)) {
        let p = out.join("last_good.ckpt");
        match t.checkpoint().save(&p) {
            Ok(()) => eprintln!("saved last good state to {}", p.display()),
            Err(se) => eprintln!("could not save last good state: {se}"),
        }
    }
    e.into()
}

fn train(config: &Path, stage: Stage, full_schedule: bool, no_resample: bool) -> anyhow::Result<()> {
    let mut cfg = ProjectConfig::load(config)?;
    if full_schedule {
        let p = TrainConfig::full();
        cfg.train.stage1_iters = p.stage1_iters;
        cfg.train.stage2_iters = p.stage2_iters;
        cfg.train.lr_stage1 = p.lr_stage1;
        cfg.train.lr_stage2 = p.lr_stage2;
    }
    let scene = read_bundle(&cfg.scene)?;
    let out = cfg.output.clone();
    std::fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
    let start = Instant::now();
    let mut summary = serde_json::Map::new();
    summary.insert("config_hash".into(), json!(hex(&cfg.hash())));

    let mut trainer = if stage == Stage::Two {
        let ck = Checkpoint::load(&out.join("stage1.ckpt")).context("stage 2 resumes from stage1.ckpt")?;
        if ck.config.model != cfg.model {
            bail!("model section differs from the one stage1.ckpt was trained with");
        }
        let mut t = Trainer::resume(&scene, ck)?;
        t.config.train = cfg.train.clone();
        t.config.loss = cfg.loss;
        t
    } else {
        Trainer::new(&scene, cfg.clone())?
    };
    if no_resample {
        trainer.fusion_mode = FusionMode::NoResample;
    }
    let fused = RenderPath::Fused(trainer.fusion_mode);

    if stage == Stage::OnlyR {
        trainer.run_residual_only().map_err(|e| on_failure(&trainer, &out, e))?;
        trainer.checkpoint().save(&out.join("only_r.ckpt"))?;
        write_metrics_csv(&trainer.log, 1, &out.join("metrics_only_r.csv"))?;
        summary.insert("only_r".into(), stage_summary(&trainer, &scene, RenderPath::ResidualOnly)?);
    }
    if matches!(stage, Stage::One | Stage::All) {
        trainer.run_stage1().map_err(|e| on_failure(&trainer, &out, e))?;
        trainer.checkpoint().save(&out.join("stage1.ckpt"))?;
        write_metrics_csv(&trainer.log, 1, &out.join("metrics_stage1.csv"))?;
        summary.insert("stage1".into(), stage_summary(&trainer, &scene, RenderPath::Base)?);
    }
    if matches!(stage, Stage::Two | Stage::All) {
        trainer.run_stage2().map_err(|e| on_failure(&trainer, &out, e))?;
        trainer.checkpoint().save(&out.join("stage2.ckpt"))?;
        write_metrics_csv(&trainer.log, 2, &out.join("metrics_stage2.csv"))?;
        summary.insert("stage2".into(), stage_summary(&trainer, &scene, fused)?);
    }
    summary.insert("seconds".into(), json!(start.elapsed().as_secs_f64()));
    let text = serde_json::to_string_pretty(&serde_json::Value::Object(summary))?;
    write_atomic(&out.join("summary.json"), text.as_bytes())?;
    println!("{text}");
    Ok(())
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

fn parse_size(s: &str) -> anyhow::Result<(usize, usize)> {
    let (w, h) = s.split_once(['x', 'X']).context("size must look like WxH")?;
    Ok((w.trim().parse()?, h.trim().parse()?))
}

fn bench(size: &str, n: usize) -> anyhow::Result<()> {
    let (w, h) = parse_size(size)?;
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut g = GlobalGaussians::default();
    for _ in 0..n {
        g.color.push([rng.gen(), rng.gen(), rng.gen()]);
        g.opacity.push(rng.gen_range(0.3..0.9));
        g.mu.push(Vector3::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-0.5..0.5)));
        g.scale.push(Vector3::from_fn(|_, _| rng.gen_range(0.01..0.06)));
        g.rot.push(quat::normalize(&[rng.gen(), rng.gen(), rng.gen(), rng.gen()]));
    }
    let cam = Camera::look_at(
        Vector3::new(0.0, 0.0, 3.2),
        Vector3::zeros(),
        Vector3::new(0.0, 1.0, 0.0),
        1.2 * w as f64,
        w,
        h,
    );
    let d: Vec<f64> = (0..w * h * 3).map(|_| rng.gen_range(-1.0..1.0)).collect();
    // Warm-up.
    let (_, graph) = render(&g, &cam, [0.0; 3])?;
    render_backward(&graph, &d)?;
    let runs = 10;
    let (mut fwd, mut bwd) = (0.0, 0.0);
    for _ in 0..runs {
        let t0 = Instant::now();
        let (_, graph) = render(&g, &cam, [0.0; 3])?;
        let t1 = Instant::now();
        render_backward(&graph, &d)?;
        fwd += (t1 - t0).as_secs_f64();
        bwd += t1.elapsed().as_secs_f64();
    }
    let px = (w * h * runs) as f64;
    println!(
        "{}x{} {} gaussians, {} threads: forward {:.3} ms ({:.3e} px/s), backward {:.3} ms ({:.3e} px/s)",
        w,
        h,
        n,
        rayon::current_num_threads(),
        1e3 * fwd / runs as f64,
        px / fwd,
        1e3 * bwd / runs as f64,
        px / bwd
    );
    Ok(())
}
