//! Command-line driver.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::Serialize;
use ucm_core::attention::{block_sparse_attention, build_dual_stream_mask, dense_masked_attention};
use ucm_core::curation::{generate_synthetic_dataset, render_clip, SceneSpec};
use ucm_core::diffusion::codec::to_signed;
use ucm_core::diffusion::sample::{euler_sample, frustum_sampler, rollout, OracleVelocity};
use ucm_core::diffusion::train::{train, TrainClip, Trainer};
use ucm_core::diffusion::{Codec, Dit};
use ucm_core::eval::{cycle_protocol, cycle_trajectory, memory_init_protocol, Generator, ModelGenerator, OracleGenerator, SceneDepth};
use ucm_core::geometry::{pool_trajectory, Trajectory};
use ucm_core::memory::{retrieve_top_m, MemoryBank};
use ucm_core::rng;

use crate::checkpoint;
use crate::config::{ConfigError, RunConfig};
use crate::dataset::{read_bank, read_clip, read_dataset, scene_dir, write_bank, write_dataset, ClipMeta};
use crate::formats::{create_dir, read_image, read_json, read_poses, write_bytes, write_image, write_json, write_poses, IoError};
use crate::report;

#[derive(Debug, Parser)]
#[command(name = "ucm", version, about = "Memory-conditioned camera-controlled video world model (toy scale)")]
pub struct Cli {
    /// JSON run configuration; defaults apply to missing fields.
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Root seed for every random stream.
    #[arg(long, global = true, value_name = "U64")]
    pub seed: Option<u64>,
    /// Override a config field by dotted key, e.g. `model.depth=2`. Repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    pub set: Vec<String>,
    /// Output directory.
    #[arg(long, global = true, value_name = "DIR")]
    pub out: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Render the synthetic dataset with revisit samples.
    Curate,
    /// Train the denoiser on the dataset.
    Train,
    /// Generate a clip sequence from a reference frame along a trajectory.
    Generate(GenerateArgs),
    /// Run an evaluation protocol.
    Eval(EvalArgs),
    /// Show which memory frames are retrieved for a trajectory.
    InspectRetrieval(InspectArgs),
    /// Time dense against block-sparse dual-stream attention.
    BenchAttention,
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    /// Reference frame (PNG); defaults to the first frame of the configured clip.
    #[arg(long, value_name = "PATH")]
    pub reference: Option<PathBuf>,
    /// Pose file; defaults to the configured clip's trajectory.
    #[arg(long, value_name = "PATH")]
    pub trajectory: Option<PathBuf>,
    /// Memory bank directory to start from and extend.
    #[arg(long, value_name = "DIR")]
    pub bank: Option<PathBuf>,
    /// Class label; defaults to the scene's class.
    #[arg(long)]
    pub class: Option<usize>,
    /// Integrate the exact velocity toward the encoded clip instead of the
    /// model, and report the reconstruction error.
    #[arg(long)]
    pub oracle_velocity: bool,
    /// Dataset clip directory used as the target with --oracle-velocity.
    #[arg(long, value_name = "DIR")]
    pub clip: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Protocol {
    Cycle,
    MemoryInit,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long, value_enum)]
    pub protocol: Protocol,
    /// Use the ray-cast renderer as a perfect generator.
    #[arg(long)]
    pub oracle: bool,
}

#[derive(Debug, Args)]
pub struct InspectArgs {
    /// Memory bank directory; defaults to the frames of the configured clip.
    #[arg(long, value_name = "DIR")]
    pub bank: Option<PathBuf>,
    /// Target pose file; defaults to the configured clip reversed.
    #[arg(long, value_name = "PATH")]
    pub trajectory: Option<PathBuf>,
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Io(#[from] IoError),
    #[error("{0}")]
    Run(String),
}

fn run_err(e: impl std::fmt::Display) -> CliError {
    CliError::Run(e.to_string())
}

pub fn resolve_config(cli: &Cli) -> Result<RunConfig, CliError> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(o) = &cli.out {
        cfg.out = o.clone();
    }
    Ok(cfg.apply_overrides(&cli.set)?)
}

pub fn run(cli: Cli, out: &mut dyn Write) -> Result<(), CliError> {
    let cfg = resolve_config(&cli)?;
    match cli.command {
        Command::Curate => cmd_curate(&cfg, out),
        Command::Train => cmd_train(&cfg, out),
        Command::Generate(a) => cmd_generate(&cfg, &a, out),
        Command::Eval(a) => cmd_eval(&cfg, &a, out),
        Command::InspectRetrieval(a) => cmd_inspect_retrieval(&cfg, &a, out),
        Command::BenchAttention => cmd_bench_attention(&cfg, out),
    }
}

macro_rules! say {
    ($out:expr, $($arg:tt)*) => {
        writeln!($out, $($arg)*).map_err(|e| CliError::Run(e.to_string()))?
    };
}

pub fn cmd_curate(cfg: &RunConfig, out: &mut dyn Write) -> Result<(), CliError> {
    let c = &cfg.curation;
    if c.scenes == 0 || c.clips_per_scene == 0 || c.frames == 0 || c.classes == 0 {
        return Err(ConfigError::Invalid("curation sizes must be at least 1".to_string()).into());
    }
    let scenes = generate_synthetic_dataset(cfg.seed, c).map_err(run_err)?;
    let counts = write_dataset(&cfg.dataset, cfg.seed, c, &scenes)?;
    say!(
        out,
        "curated {} scenes, {} clips, {} frames, {} revisit samples into {}",
        counts.scenes,
        counts.clips,
        counts.frames,
        counts.samples,
        cfg.dataset.display()
    );
    Ok(())
}

#[derive(Serialize)]
struct TrainSummary {
    steps: usize,
    batch: usize,
    seconds: f64,
    first_window_mean_loss: f64,
    final_window_mean_loss: f64,
    parameters: usize,
}

pub fn cmd_train(cfg: &RunConfig, out: &mut dyn Write) -> Result<(), CliError> {
    cfg.validate()?;
    let data = read_dataset(&cfg.dataset)?;
    let codec = Codec::new(cfg.model.codec).map_err(run_err)?;
    let mut model: Dit<f32> = Dit::init(cfg.model.clone(), &mut rng::substream(cfg.seed, rng::INIT)).map_err(run_err)?;
    let clips: Vec<TrainClip<'_>> = data
        .clips()
        .map(|c| TrainClip {
            clip: &c.clip,
            samples: &c.samples,
        })
        .collect();
    let trainer = Trainer::new(&model, &codec, clips, cfg.train.clone()).map_err(run_err)?;
    create_dir(&cfg.out)?;
    let every = cfg.train.checkpoint_every;
    let ckpt_dir = cfg.out.join("checkpoints");
    let start = Instant::now();
    let mut log_err = None;
    let report = train(&mut model, &trainer, cfg.seed, |step, loss, m| {
        if step % 50 == 0 || step + 1 == cfg.train.steps {
            if let Err(e) = writeln!(out, "step {step:6} loss {loss:.5} elapsed {:.1}s", start.elapsed().as_secs_f64()) {
                log_err = Some(e);
            }
        }
        if every > 0 && (step + 1) % every == 0 {
            checkpoint::save(&ckpt_dir.join(format!("step_{:06}.ucmc", step + 1)), m).map_err(|e| e.to_string())?;
        }
        Ok(())
    })
    .map_err(run_err)?;
    if let Some(e) = log_err {
        return Err(run_err(e));
    }
    let seconds = start.elapsed().as_secs_f64();
    let path = cfg.checkpoint_path();
    checkpoint::save(&path, &model)?;
    let mut csv = String::from("step,loss,grad_norm,lr\n");
    for i in 0..report.losses.len() {
        csv.push_str(&format!("{},{},{},{}\n", i, report.losses[i], report.grad_norms[i], report.learning_rates[i]));
    }
    write_bytes(&cfg.out.join("train_log.csv"), csv.as_bytes())?;
    let n = report.losses.len();
    let summary = TrainSummary {
        steps: n,
        batch: cfg.train.batch,
        seconds,
        first_window_mean_loss: report.mean_loss(0..100.min(n)),
        final_window_mean_loss: report.mean_loss(n.saturating_sub(100)..n),
        parameters: model.params.len(),
    };
    write_json(&cfg.out.join("train_summary.json"), &summary)?;
    say!(
        out,
        "trained {} steps in {:.1}s; loss {:.5} -> {:.5}; checkpoint {}",
        n,
        seconds,
        summary.first_window_mean_loss,
        summary.final_window_mean_loss,
        path.display()
    );
    Ok(())
}

fn load_scene(cfg: &RunConfig, s: usize) -> Result<SceneSpec, CliError> {
    Ok(read_json(&scene_dir(&cfg.dataset, s).join("scene.json"))?)
}

fn configured_clip_dir(cfg: &RunConfig) -> PathBuf {
    crate::dataset::clip_dir(&cfg.dataset, cfg.eval.scene, cfg.eval.clip)
}

fn write_frames(dir: &Path, frames: &[ucm_core::image::Image]) -> Result<(), IoError> {
    for (i, f) in frames.iter().enumerate() {
        write_image(&dir.join("frames").join(format!("{i:05}.png")), f)?;
    }
    Ok(())
}

#[derive(Serialize)]
struct OracleVelocityReport {
    steps: usize,
    max_abs_error: f64,
    exact: bool,
}

pub fn cmd_generate(cfg: &RunConfig, a: &GenerateArgs, out: &mut dyn Write) -> Result<(), CliError> {
    if cfg.sampler.steps == 0 {
        return Err(ConfigError::Invalid("sampler.steps must be at least 1".to_string()).into());
    }
    if a.oracle_velocity {
        let dir = a.clip.clone().unwrap_or_else(|| configured_clip_dir(cfg));
        let data = read_clip(&dir)?;
        let clip = &data.clip;
        let codec = Codec::new(cfg.model.codec).map_err(run_err)?;
        let signed: Vec<Vec<f64>> = clip.frames.iter().map(to_signed).collect();
        let refs: Vec<&[f64]> = signed.iter().map(|v| &v[..]).collect();
        let (w, h) = (clip.intrinsics.width as usize, clip.intrinsics.height as usize);
        let target = codec.encode(&refs, w, h).map_err(run_err)?;
        let mut r = rng::substream(cfg.seed, rng::SAMPLING);
        let x0: Vec<f64> = (0..target.data.len()).map(|_| StandardNormal.sample(&mut r)).collect();
        let mut field = OracleVelocity::new(&x0, &target.data);
        let x = euler_sample(&mut field, x0, cfg.sampler.steps).map_err(run_err)?;
        let err = x.iter().zip(&target.data).map(|(p, q)| (p - q).abs()).fold(0.0, f64::max);
        let mut latent = target.clone();
        latent.data = x;
        let frames: Vec<_> = codec
            .decode(&latent)
            .map_err(run_err)?
            .iter()
            .map(|f| ucm_core::diffusion::codec::from_signed(f, w, h))
            .collect();
        write_frames(&cfg.out, &frames)?;
        write_poses(&cfg.out.join("poses.json"), &clip.intrinsics, &clip.trajectory)?;
        let rep = OracleVelocityReport {
            steps: cfg.sampler.steps,
            max_abs_error: err,
            exact: err == 0.0,
        };
        write_json(&cfg.out.join("oracle_velocity.json"), &rep)?;
        say!(
            out,
            "oracle velocity: {} step(s), max |x - x1| = {:e} ({})",
            rep.steps,
            err,
            if rep.exact { "exact reconstruction" } else { "inexact" }
        );
        return Ok(());
    }

    let model = checkpoint::load(&cfg.checkpoint_path())?;
    let mc = &model.config;
    let codec = Codec::new(mc.codec).map_err(run_err)?;
    let clip_dir = configured_clip_dir(cfg);
    let (k, traj) = match &a.trajectory {
        Some(p) => read_poses(p)?,
        None => read_poses(&clip_dir.join("poses.json"))?,
    };
    let reference = match &a.reference {
        Some(p) => read_image(p)?,
        None => read_image(&clip_dir.join("frames").join("00000.png"))?,
    };
    let t = mc.frames;
    if traj.len() < t || (traj.len() - 1) % (t - 1) != 0 {
        return Err(CliError::Run(format!(
            "trajectory has {} poses; expected clips * {} + 1",
            traj.len(),
            t - 1
        )));
    }
    let clips = (traj.len() - 1) / (t - 1);
    let mut bank = match &a.bank {
        Some(d) => read_bank(d)?,
        None => MemoryBank::new(),
    };
    let scene = load_scene(cfg, cfg.eval.scene)?;
    let class = a.class.unwrap_or(cfg.eval.scene % mc.classes.max(1));
    let mut depth = SceneDepth { scene: &scene };
    let sampler = frustum_sampler(&cfg.sampler).map_err(run_err)?;
    let mut r = rng::substream(cfg.seed, rng::SAMPLING);
    let res = rollout(
        &model, &codec, &reference, &traj, &k, class, clips, &mut bank, &mut depth, &sampler, &cfg.sampler, &mut r,
    )
    .map_err(run_err)?;
    write_frames(&cfg.out, &res.frames)?;
    write_poses(&cfg.out.join("poses.json"), &k, &traj)?;
    write_bank(&cfg.out.join("bank"), &bank, &k)?;
    say!(
        out,
        "generated {} frames in {} clip(s); bank holds {} frames; written to {}",
        res.frames.len(),
        clips,
        bank.len(),
        cfg.out.display()
    );
    Ok(())
}

pub fn cmd_eval(cfg: &RunConfig, a: &EvalArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let meta: ClipMeta = read_json(&configured_clip_dir(cfg).join("clip.json"))?;
    let scene = load_scene(cfg, cfg.eval.scene)?;
    let k = cfg.curation.intrinsics().map_err(run_err)?;
    let model = if a.oracle { None } else { Some(checkpoint::load(&cfg.checkpoint_path())?) };
    let t = model.as_ref().map_or(cfg.model.frames, |m| m.config.frames);
    let codec = Codec::new(model.as_ref().map_or(cfg.model.codec, |m| m.config.codec)).map_err(run_err)?;
    let sampler = frustum_sampler(&cfg.sampler).map_err(run_err)?;
    let mut depth = SceneDepth { scene: &scene };
    let mut gen: Box<dyn Generator + '_> = match &model {
        None => Box::new(OracleGenerator {
            scene: &scene,
            intrinsics: k,
        }),
        Some(m) => Box::new(ModelGenerator {
            model: m,
            codec: &codec,
            intrinsics: k,
            class: meta.class % m.config.classes.max(1),
            depth: &mut depth,
            sampler: &sampler,
            config: cfg.sampler.clone(),
            seed: cfg.seed,
        }),
    };
    let (stem, rep) = match a.protocol {
        Protocol::Cycle => {
            let forward = meta.spline.arc(cfg.eval.cycle_clips.max(1) * (t - 1) + 1, cfg.eval.arc);
            let traj = cycle_trajectory(&forward);
            let (reference, _) = scene.render(traj.first(), &k);
            let mut bank = MemoryBank::new();
            ("cycle", cycle_protocol(gen.as_mut(), &reference, &traj, &mut bank).map_err(run_err)?)
        }
        Protocol::MemoryInit => {
            let traj = meta.spline.trajectory(cfg.eval.init_clips.max(1) * (t - 1) + 1);
            let clip = render_clip(&scene, &traj, &k, meta.class).map_err(run_err)?;
            ("memory_init", memory_init_protocol(gen.as_mut(), &clip).map_err(run_err)?)
        }
    };
    create_dir(&cfg.out)?;
    report::write_report(&cfg.out, &format!("{stem}_report"), &rep)?;
    say!(out, "{}", report::table(&rep));
    Ok(())
}

#[derive(Serialize)]
struct RetrievalReport {
    memories: usize,
    targets: usize,
    indices: Vec<usize>,
    times: Vec<u64>,
    scores: Vec<f64>,
    assignments: Vec<usize>,
    iou: Vec<Vec<f64>>,
}

pub fn cmd_inspect_retrieval(cfg: &RunConfig, a: &InspectArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let clip_dir = configured_clip_dir(cfg);
    let (bank, k) = match &a.bank {
        Some(d) => {
            let (k, _) = read_poses(&d.join("poses.json"))?;
            (read_bank(d)?, k)
        }
        None => {
            let data = read_clip(&clip_dir)?;
            let mut bank = MemoryBank::new();
            for ((img, d), p) in data.clip.frames.iter().zip(&data.clip.depths).zip(data.clip.trajectory.poses()) {
                bank.append(img.clone(), d.clone(), *p).map_err(run_err)?;
            }
            (bank, data.clip.intrinsics)
        }
    };
    let targets = match &a.trajectory {
        Some(p) => read_poses(p)?.1,
        None => {
            let (_, t) = read_poses(&clip_dir.join("poses.json"))?;
            Trajectory::new(t.poses().iter().rev().copied().collect()).map_err(run_err)?
        }
    };
    let pooled = pool_trajectory(&targets, cfg.model.codec.temporal_stride).map_err(run_err)?;
    let sampler = frustum_sampler(&cfg.sampler).map_err(run_err)?;
    let res = retrieve_top_m(&bank, &pooled, &k, cfg.sampler.memories, &sampler).map_err(run_err)?;
    say!(out, "{} bank frames, {} latent targets, top {}", bank.len(), pooled.len(), cfg.sampler.memories);
    say!(out, "{:>4} {:>6} {:>6} {:>8} {:>7}", "rank", "index", "time", "score", "frame");
    for (r, &i) in res.indices.iter().enumerate() {
        let asg = res.assignments.get(r).map_or("-".to_string(), |a| a.to_string());
        say!(out, "{:>4} {:>6} {:>6} {:>8.4} {:>7}", r, i, bank.records()[i].time, res.scores[r], asg);
    }
    let rep = RetrievalReport {
        memories: cfg.sampler.memories,
        targets: pooled.len(),
        times: res.indices.iter().map(|&i| bank.records()[i].time).collect(),
        indices: res.indices,
        scores: res.scores,
        assignments: res.assignments,
        iou: res.iou,
    };
    write_json(&cfg.out.join("retrieval.json"), &rep)?;
    Ok(())
}

#[derive(Debug, Clone, Serialize)]
pub struct BenchReport {
    pub frames: usize,
    pub memories: usize,
    pub tokens: usize,
    pub true_blocks: usize,
    pub total_blocks: usize,
    pub dense_ms: f64,
    pub sparse_ms: f64,
    pub speedup: f64,
    pub max_abs_diff: f64,
}

/// Times both attention paths on random inputs; reports the best of
/// `repeats` runs each.
pub fn bench_attention(cfg: &RunConfig) -> Result<BenchReport, CliError> {
    let b = &cfg.bench;
    if b.frames == 0 || b.grid == 0 || b.heads == 0 || b.head_dim == 0 {
        return Err(ConfigError::Invalid("bench sizes must be at least 1".to_string()).into());
    }
    let mut r = rng::substream(cfg.seed, "bench");
    let p = b.grid * b.grid;
    let assignments: Vec<usize> = (0..b.memories).map(|_| r.random_range(1..=b.frames)).collect();
    let mask = build_dual_stream_mask(b.frames, b.memories, &assignments, p).map_err(run_err)?;
    let n = mask.seq_len();
    let dim = b.heads * b.head_dim;
    let mut draw = || (0..n * dim).map(|_| r.random::<f32>() * 2.0 - 1.0).collect::<Vec<f32>>();
    let (q, kk, v) = (draw(), draw(), draw());
    let token_mask = mask.token_mask();
    let mut dense_ms = f64::INFINITY;
    let mut sparse_ms = f64::INFINITY;
    let mut dense = Vec::new();
    let mut sparse = Vec::new();
    for _ in 0..b.repeats.max(1) {
        let t0 = Instant::now();
        dense = dense_masked_attention(&q, &kk, &v, n, n, b.heads, b.head_dim, &token_mask);
        dense_ms = dense_ms.min(t0.elapsed().as_secs_f64() * 1e3);
        let t0 = Instant::now();
        sparse = block_sparse_attention(&q, &kk, &v, b.heads, b.head_dim, &mask);
        sparse_ms = sparse_ms.min(t0.elapsed().as_secs_f64() * 1e3);
    }
    let max_abs_diff = dense.iter().zip(&sparse).map(|(a, c)| (a - c).abs() as f64).fold(0.0, f64::max);
    let nb = mask.n_blocks();
    Ok(BenchReport {
        frames: b.frames,
        memories: b.memories,
        tokens: n,
        true_blocks: mask.true_blocks(),
        total_blocks: nb * nb,
        dense_ms,
        sparse_ms,
        speedup: dense_ms / sparse_ms,
        max_abs_diff,
    })
}

pub fn cmd_bench_attention(cfg: &RunConfig, out: &mut dyn Write) -> Result<(), CliError> {
    let rep = bench_attention(cfg)?;
    say!(
        out,
        "N={} M={} tokens={} true blocks {}/{}",
        rep.frames,
        rep.memories,
        rep.tokens,
        rep.true_blocks,
        rep.total_blocks
    );
    say!(
        out,
        "dense {:.3} ms  sparse {:.3} ms  speedup {:.2}x  max |diff| {:.2e}",
        rep.dense_ms,
        rep.sparse_ms,
        rep.speedup,
        rep.max_abs_diff
    );
    write_json(&cfg.out.join("bench_attention.json"), &rep)?;
    Ok(())
}
