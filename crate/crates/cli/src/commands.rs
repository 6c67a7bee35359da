//! The eight subcommands. Each one resolves flags against an optional
//! key=value config file (flags win, unknown keys rejected), locks its
//! output directory, does the work through the core library, and records a
//! run manifest sufficient to re-execute the run.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use serde_json::json;

use motiondiff_core::dataset::{
    array_to_motion, augment_mirrored, caption_family, compute_stats, destandardize,
    extract_static_pairs, generate_dataset, load_motion, mark_unconditional, save_motion,
    write_manifest, DatasetSpec, MotionFamily, ALL_FAMILIES,
};
use motiondiff_core::diffusion::{sample, GuidanceConfig};
use motiondiff_core::eval::{
    compute_metrics, evaluator_checkpoint, evaluator_from_checkpoint, nearest_neighbors,
    train_evaluator, Embedder, EvalConfig, Query,
};
use motiondiff_core::motion::{resample_motion, MotionSequence};
use motiondiff_core::network::NetworkConfig;
use motiondiff_core::rng::{indexed_stream, stream};
use motiondiff_core::rotation::POSE_DIM;
use motiondiff_core::schedule::{make_schedule, ScheduleKind};
use motiondiff_core::skeleton::{default_skeleton, export_bvh};
use motiondiff_core::text::{HashedTextProvider, TextEncoder};
use motiondiff_core::training::{
    model_from_checkpoint, train_motion, train_pose, Stage, TrainConfig, TrainResult,
};
use motiondiff_core::checkpoint::save_checkpoint;

use crate::config::FileConfig;
use crate::error::{CliError, CliResult};
use crate::io::{load_ckpt, load_corpus, require_file};
use crate::run::RunDir;

fn path_str(p: &Path) -> String {
    p.display().to_string()
}

fn resolve_out_dir(cfg: &FileConfig, cli: Option<PathBuf>) -> CliResult<PathBuf> {
    if let Some(dir) = cfg.opt("out_dir", cli)? {
        return Ok(dir);
    }
    match std::env::var("MOTIONDIFF_OUT_DIR") {
        Ok(dir) if !dir.is_empty() => Ok(PathBuf::from(dir)),
        _ => Err(CliError::Usage(
            "--out-dir is required (or set MOTIONDIFF_OUT_DIR)".into(),
        )),
    }
}

fn unit_fraction(name: &str, value: f64) -> CliResult<f64> {
    if (0.0..=1.0).contains(&value) {
        Ok(value)
    } else {
        Err(CliError::Usage(format!(
            "{name} must lie in [0, 1], got {value}"
        )))
    }
}

fn positive(name: &str, value: usize) -> CliResult<usize> {
    if value == 0 {
        Err(CliError::Usage(format!("{name} must be >= 1")))
    } else {
        Ok(value)
    }
}

// ---------------------------------------------------------------------------
// synth-data

#[derive(clap::Args)]
pub struct SynthDataArgs {
    /// Key=value config file; explicit flags override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output directory (or MOTIONDIFF_OUT_DIR).
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
    /// Generation seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Comma-separated caption classes; defaults to all eight.
    #[arg(long)]
    pub families: Option<String>,
    /// Motions per family.
    #[arg(long)]
    pub count: Option<usize>,
    /// Frames per motion.
    #[arg(long)]
    pub frames: Option<usize>,
    /// Frame rate of the synthesized clips.
    #[arg(long)]
    pub fps: Option<f64>,
    /// Append sagittal mirrors with left/right captions swapped.
    #[arg(long)]
    pub mirror: bool,
    /// Fraction of motions whose caption is nulled.
    #[arg(long)]
    pub unconditional_fraction: Option<f64>,
    /// Fraction of motions assigned to the heldout split.
    #[arg(long)]
    pub heldout_fraction: Option<f64>,
}

pub fn run_synth_data(a: SynthDataArgs) -> CliResult<()> {
    let cfg = FileConfig::load(a.config.as_deref())?;
    let seed = cfg.require("seed", a.seed)?;
    let families_raw = cfg.opt::<String>("families", a.families)?;
    let count = positive("count", cfg.get("count", a.count, 10)?)?;
    let frames = cfg.get("frames", a.frames, 24)?;
    let fps = cfg.get("fps", a.fps, 20.0)?;
    let mirror = cfg.flag("mirror", a.mirror)?;
    let uncond = unit_fraction(
        "unconditional_fraction",
        cfg.get("unconditional_fraction", a.unconditional_fraction, 0.0)?,
    )?;
    let heldout = unit_fraction(
        "heldout_fraction",
        cfg.get("heldout_fraction", a.heldout_fraction, 0.2)?,
    )?;
    let out = resolve_out_dir(&cfg, a.out_dir)?;
    cfg.finish()?;

    let families: Vec<MotionFamily> = match &families_raw {
        None => ALL_FAMILIES.to_vec(),
        Some(list) => list
            .split(',')
            .map(|s| Ok(s.trim().parse::<MotionFamily>()?))
            .collect::<CliResult<_>>()?,
    };

    let spec = DatasetSpec {
        seed,
        counts: families.iter().map(|&f| (f, count)).collect(),
        frames,
        fps,
    };
    let mut corpus = generate_dataset(&spec)?;
    if mirror {
        corpus = augment_mirrored(&corpus);
    }
    if uncond > 0.0 {
        corpus = mark_unconditional(&corpus, uncond, seed);
    }

    let n = corpus.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut stream(seed, "split"));
    let n_held = ((heldout * n as f64).floor() as usize).min(n);
    let mut split = vec!["train"; n];
    for &i in order.iter().take(n_held) {
        split[i] = "heldout";
    }

    let run = RunDir::create(&out)?;
    fs::create_dir_all(out.join("motions"))?;
    let mut entries = Vec::with_capacity(n);
    for (i, m) in corpus.iter().enumerate() {
        let rel = format!("motions/motion_{i:05}.json");
        save_motion(m, &out.join(&rel))?;
        entries.push((rel, split[i].to_string()));
    }
    write_manifest(&entries, &out.join("manifest.tsv"))?;
    let mut stats_text = serde_json::to_string_pretty(&compute_stats(&corpus)?)?;
    stats_text.push('\n');
    fs::write(out.join("stats.json"), stats_text)?;

    let mut tally: BTreeMap<String, usize> = BTreeMap::new();
    for m in &corpus {
        let key = m
            .caption
            .as_deref()
            .and_then(caption_family)
            .map(|f| f.to_string())
            .unwrap_or_else(|| "unconditional".to_string());
        *tally.entry(key).or_insert(0) += 1;
    }
    for (family, c) in &tally {
        println!("{family:>16}  {c}");
    }
    println!(
        "wrote {n} motions to {} ({} train / {n_held} heldout)",
        out.display(),
        n - n_held
    );

    run.write_manifest(
        "synth-data",
        Some(seed),
        json!({
            "out_dir": path_str(&out),
            "families": families.iter().map(|f| f.to_string()).collect::<Vec<_>>(),
            "count": count,
            "frames": frames,
            "fps": fps,
            "mirror": mirror,
            "unconditional_fraction": uncond,
            "heldout_fraction": heldout,
        }),
    )
}

// ---------------------------------------------------------------------------
// shared training flags

#[derive(clap::Args)]
pub struct TrainFlags {
    /// Target step count (a resumed run continues up to this total).
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Peak learning rate after warmup.
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub warmup_steps: Option<usize>,
    /// Probability of training an item against the null caption.
    #[arg(long)]
    pub cfg_dropout: Option<f64>,
    /// Weight of the variational term in the hybrid loss.
    #[arg(long)]
    pub lambda_vlb: Option<f64>,
    /// Steps between interval checkpoints; 0 keeps only the final one.
    #[arg(long)]
    pub checkpoint_interval: Option<usize>,
    /// Global gradient-norm clip; 0 disables clipping.
    #[arg(long)]
    pub grad_clip: Option<f64>,
    /// Noise schedule: cosine | linear.
    #[arg(long)]
    pub schedule: Option<String>,
    /// Diffusion steps T.
    #[arg(long)]
    pub timesteps: Option<usize>,
}

fn resolve_train(
    cfg: &FileConfig,
    f: &TrainFlags,
    stage: Stage,
    seed: u64,
    clip_length: usize,
) -> CliResult<TrainConfig> {
    let base = TrainConfig::defaults(stage, seed);
    Ok(TrainConfig {
        stage,
        seed,
        clip_length,
        batch_size: cfg.get("batch_size", f.batch_size, base.batch_size)?,
        steps: cfg.get("steps", f.steps, base.steps)?,
        lr: cfg.get("lr", f.lr, base.lr)?,
        warmup_steps: cfg.get("warmup_steps", f.warmup_steps, base.warmup_steps)?,
        cfg_dropout: cfg.get("cfg_dropout", f.cfg_dropout, base.cfg_dropout)?,
        lambda_vlb: cfg.get("lambda_vlb", f.lambda_vlb, base.lambda_vlb)?,
        checkpoint_interval: cfg.get(
            "checkpoint_interval",
            f.checkpoint_interval,
            base.checkpoint_interval,
        )?,
        grad_clip: cfg.get("grad_clip", f.grad_clip, base.grad_clip)?,
        schedule: cfg
            .get("schedule", f.schedule.clone(), base.schedule.to_string())?
            .parse::<ScheduleKind>()?,
        timesteps: cfg.get("timesteps", f.timesteps, base.timesteps)?,
    })
}

fn report_training(stage: &str, result: &TrainResult, out: &Path) {
    match result.trace.last() {
        Some(last) => println!(
            "{stage} stage done at step {}: loss_simple {:.6}, loss_vlb {:.6}",
            last.step + 1,
            last.loss_simple,
            last.loss_vlb
        ),
        None => println!("{stage} stage: already at the target step count"),
    }
    println!(
        "conditional items {} / null items {}",
        result.counters.conditional_items, result.counters.null_items
    );
    println!("checkpoint: {}", out.join("checkpoint_final.ckpt").display());
}

// ---------------------------------------------------------------------------
// train-pose

#[derive(clap::Args)]
pub struct TrainPoseArgs {
    /// Key=value config file; explicit flags override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Dataset manifest (or directory of motion files).
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Output directory (or MOTIONDIFF_OUT_DIR).
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
    /// Training seed; all randomness derives from it.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Manifest split to train on.
    #[arg(long)]
    pub split: Option<String>,
    /// Static pairs sampled per motion.
    #[arg(long)]
    pub per_motion: Option<usize>,
    /// Comma-separated channel widths, shallow to deep.
    #[arg(long)]
    pub widths: Option<String>,
    /// Residual blocks per level.
    #[arg(long)]
    pub blocks: Option<usize>,
    /// Attention heads.
    #[arg(long)]
    pub heads: Option<usize>,
    /// Text embedding width.
    #[arg(long)]
    pub d_text: Option<usize>,
    /// Timestep embedding width.
    #[arg(long)]
    pub time_dim: Option<usize>,
    /// Seed of the frozen hashed text provider.
    #[arg(long)]
    pub text_seed: Option<u64>,
    /// Checkpoint to continue from.
    #[arg(long)]
    pub resume: Option<PathBuf>,
    #[command(flatten)]
    pub train: TrainFlags,
}

fn parse_widths(s: &str) -> CliResult<Vec<usize>> {
    s.split(',')
        .map(|tok| {
            tok.trim()
                .parse::<usize>()
                .map_err(|e| CliError::Usage(format!("bad width {tok:?}: {e}")))
        })
        .collect()
}

pub fn run_train_pose(a: TrainPoseArgs) -> CliResult<()> {
    let cfg = FileConfig::load(a.config.as_deref())?;
    let data = cfg.require::<PathBuf>("data", a.data)?;
    let seed = cfg.require("seed", a.seed)?;
    let split = cfg.get("split", a.split.clone(), "train".to_string())?;
    let per_motion = positive("per_motion", cfg.get("per_motion", a.per_motion, 4)?)?;
    let widths = parse_widths(&cfg.get("widths", a.widths.clone(), "32,64".to_string())?)?;
    let blocks = cfg.get("blocks", a.blocks, 1)?;
    let heads = cfg.get("heads", a.heads, 4)?;
    let d_text = cfg.get("d_text", a.d_text, 32)?;
    let time_dim = cfg.get("time_dim", a.time_dim, 32)?;
    let text_seed = cfg.get("text_seed", a.text_seed, 7)?;
    let resume_path = cfg.opt::<PathBuf>("resume", a.resume.clone())?;
    let base_clip = TrainConfig::defaults(Stage::Pose, seed).clip_length;
    let train_cfg = resolve_train(&cfg, &a.train, Stage::Pose, seed, base_clip)?;
    let out = resolve_out_dir(&cfg, a.out_dir)?;
    cfg.finish()?;

    let motions: Vec<MotionSequence> = load_corpus(&data, &split)?
        .into_iter()
        .map(|i| i.motion)
        .collect();
    let pairs = extract_static_pairs(&motions, per_motion, seed);
    let net = NetworkConfig {
        channel_widths: widths,
        blocks_per_level: blocks,
        heads,
        d_text,
        time_dim,
        temporal_enabled: false,
        temporal_kernel: 3,
    };
    let provider = HashedTextProvider::new(text_seed, d_text);
    let resume = resume_path
        .as_deref()
        .map(|p| load_ckpt(p, "resume checkpoint"))
        .transpose()?;

    let run = RunDir::create(&out)?;
    let result = train_pose(&net, &train_cfg, &pairs, &provider, Some(&out), resume.as_ref())?;
    report_training("pose", &result, &out);
    run.write_manifest(
        "train-pose",
        Some(seed),
        json!({
            "data": path_str(&data),
            "split": split,
            "per_motion": per_motion,
            "text_seed": text_seed,
            "network": net,
            "train": train_cfg,
            "resume": resume_path.as_deref().map(path_str),
            "out_dir": path_str(&out),
        }),
    )
}

// ---------------------------------------------------------------------------
// train-motion

#[derive(clap::Args)]
pub struct TrainMotionArgs {
    /// Key=value config file; explicit flags override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Dataset manifest (or directory of motion files).
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Output directory (or MOTIONDIFF_OUT_DIR).
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
    /// Training seed; all randomness derives from it.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Manifest split to train on.
    #[arg(long)]
    pub split: Option<String>,
    /// Stage-1 checkpoint to extend (required unless resuming).
    #[arg(long)]
    pub pose_checkpoint: Option<PathBuf>,
    /// Frames per training clip.
    #[arg(long)]
    pub clip_length: Option<usize>,
    /// Temporal convolution kernel size (odd).
    #[arg(long)]
    pub temporal_kernel: Option<usize>,
    /// Seed of the frozen hashed text provider.
    #[arg(long)]
    pub text_seed: Option<u64>,
    /// Checkpoint to continue from.
    #[arg(long)]
    pub resume: Option<PathBuf>,
    #[command(flatten)]
    pub train: TrainFlags,
}

pub fn run_train_motion(a: TrainMotionArgs) -> CliResult<()> {
    let cfg = FileConfig::load(a.config.as_deref())?;
    let data = cfg.require::<PathBuf>("data", a.data)?;
    let seed = cfg.require("seed", a.seed)?;
    let split = cfg.get("split", a.split.clone(), "train".to_string())?;
    let clip_length = cfg.get("clip_length", a.clip_length, 24)?;
    let kernel_opt = cfg.opt("temporal_kernel", a.temporal_kernel)?;
    let text_seed = cfg.get("text_seed", a.text_seed, 7)?;
    let pose_path = cfg.opt::<PathBuf>("pose_checkpoint", a.pose_checkpoint.clone())?;
    let resume_path = cfg.opt::<PathBuf>("resume", a.resume.clone())?;
    let train_cfg = resolve_train(&cfg, &a.train, Stage::Motion, seed, clip_length)?;
    let out = resolve_out_dir(&cfg, a.out_dir)?;
    cfg.finish()?;

    let resume = resume_path
        .as_deref()
        .map(|p| load_ckpt(p, "resume checkpoint"))
        .transpose()?;
    let pose = pose_path
        .as_deref()
        .map(|p| load_ckpt(p, "pose checkpoint"))
        .transpose()?;
    if resume.is_none() && pose.is_none() {
        return Err(CliError::Usage(
            "--pose-checkpoint is required unless --resume is given".into(),
        ));
    }

    // The network shape is inherited from the checkpoint being continued so
    // the two stages cannot drift apart.
    let base_cfg = model_from_checkpoint(resume.as_ref().or(pose.as_ref()).unwrap())?
        .model
        .config;
    if base_cfg.temporal_enabled {
        if let Some(k) = kernel_opt {
            if k != base_cfg.temporal_kernel {
                return Err(CliError::Usage(format!(
                    "--temporal-kernel {k} conflicts with the checkpoint's kernel {}",
                    base_cfg.temporal_kernel
                )));
            }
        }
    }
    let net = NetworkConfig {
        temporal_enabled: true,
        temporal_kernel: if base_cfg.temporal_enabled {
            base_cfg.temporal_kernel
        } else {
            kernel_opt.unwrap_or(3)
        },
        ..base_cfg
    };

    let corpus: Vec<MotionSequence> = load_corpus(&data, &split)?
        .into_iter()
        .map(|i| i.motion)
        .collect();
    let provider = HashedTextProvider::new(text_seed, net.d_text);

    let run = RunDir::create(&out)?;
    let result = train_motion(
        &net,
        &train_cfg,
        &corpus,
        pose.as_ref(),
        &provider,
        Some(&out),
        resume.as_ref(),
    )?;
    report_training("motion", &result, &out);
    run.write_manifest(
        "train-motion",
        Some(seed),
        json!({
            "data": path_str(&data),
            "split": split,
            "pose_checkpoint": pose_path.as_deref().map(path_str),
            "text_seed": text_seed,
            "network": net,
            "train": train_cfg,
            "resume": resume_path.as_deref().map(path_str),
            "out_dir": path_str(&out),
        }),
    )
}

// ---------------------------------------------------------------------------
// train-evaluator

#[derive(clap::Args)]
pub struct TrainEvaluatorArgs {
    /// Key=value config file; explicit flags override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Dataset manifest (or directory of motion files).
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Output directory (or MOTIONDIFF_OUT_DIR).
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
    /// Training seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Manifest split to train on.
    #[arg(long)]
    pub split: Option<String>,
    /// Joint embedding dimension.
    #[arg(long)]
    pub d_e: Option<usize>,
    /// Hashed text feature dimension.
    #[arg(long)]
    pub text_dim: Option<usize>,
    /// Seed of the evaluator's own frozen text provider.
    #[arg(long)]
    pub text_seed: Option<u64>,
    /// Contrastive training steps.
    #[arg(long)]
    pub steps: Option<usize>,
    /// Learning rate.
    #[arg(long)]
    pub lr: Option<f64>,
    /// InfoNCE temperature.
    #[arg(long)]
    pub temperature: Option<f64>,
}

pub fn run_train_evaluator(a: TrainEvaluatorArgs) -> CliResult<()> {
    let cfg = FileConfig::load(a.config.as_deref())?;
    let data = cfg.require::<PathBuf>("data", a.data)?;
    let seed = cfg.require("seed", a.seed)?;
    let split = cfg.get("split", a.split.clone(), "train".to_string())?;
    let base = EvalConfig::defaults(seed);
    let eval_cfg = EvalConfig {
        seed,
        d_e: cfg.get("d_e", a.d_e, base.d_e)?,
        text_dim: cfg.get("text_dim", a.text_dim, base.text_dim)?,
        text_seed: cfg.get("text_seed", a.text_seed, base.text_seed)?,
        steps: cfg.get("steps", a.steps, base.steps)?,
        lr: cfg.get("lr", a.lr, base.lr)?,
        temperature: cfg.get("temperature", a.temperature, base.temperature)?,
    };
    let out = resolve_out_dir(&cfg, a.out_dir)?;
    cfg.finish()?;

    let motions: Vec<MotionSequence> = load_corpus(&data, &split)?
        .into_iter()
        .map(|i| i.motion)
        .collect();

    let run = RunDir::create(&out)?;
    let provider = train_evaluator(&motions, &eval_cfg)?;
    let path = out.join("evaluator.ckpt");
    save_checkpoint(&evaluator_checkpoint(&provider), &path)?;
    println!("evaluator checksum {}", provider.checksum());
    println!("checkpoint: {}", path.display());
    run.write_manifest(
        "train-evaluator",
        Some(seed),
        json!({
            "data": path_str(&data),
            "split": split,
            "eval": eval_cfg,
            "out_dir": path_str(&out),
        }),
    )
}

// ---------------------------------------------------------------------------
// sample

#[derive(clap::Args)]
pub struct SampleArgs {
    /// Key=value config file; explicit flags override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Denoiser checkpoint to sample from.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Output directory (or MOTIONDIFF_OUT_DIR).
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
    /// Sampling seed; sample i uses substream i.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Caption to condition on; omit for unconditional samples.
    #[arg(long)]
    pub caption: Option<String>,
    /// Number of motions to draw.
    #[arg(long)]
    pub count: Option<usize>,
    /// Frames per sample before any upsampling.
    #[arg(long)]
    pub frames: Option<usize>,
    /// Guidance scale w; 1 = conditional, 0 = unconditional.
    #[arg(long)]
    pub guidance: Option<f64>,
    /// Frame rate stamped on the output motions.
    #[arg(long)]
    pub fps: Option<f64>,
    /// Resample each motion to this frame count after sampling.
    #[arg(long)]
    pub upsample: Option<usize>,
    /// Also write a BVH next to each motion.
    #[arg(long)]
    pub bvh: bool,
    /// Seed of the frozen hashed text provider (must match training).
    #[arg(long)]
    pub text_seed: Option<u64>,
}

pub fn run_sample(a: SampleArgs) -> CliResult<()> {
    let cfg = FileConfig::load(a.config.as_deref())?;
    let checkpoint = cfg.require::<PathBuf>("checkpoint", a.checkpoint)?;
    let seed = cfg.require("seed", a.seed)?;
    let caption = cfg.opt::<String>("caption", a.caption)?;
    let count = positive("count", cfg.get("count", a.count, 1)?)?;
    let frames = positive("frames", cfg.get("frames", a.frames, 24)?)?;
    let guidance = cfg.get("guidance", a.guidance, 2.0)?;
    let fps = cfg.get("fps", a.fps, 20.0)?;
    let upsample = cfg.opt::<usize>("upsample", a.upsample)?;
    let bvh = cfg.flag("bvh", a.bvh)?;
    let text_seed = cfg.get("text_seed", a.text_seed, 7)?;
    let out = resolve_out_dir(&cfg, a.out_dir)?;
    cfg.finish()?;

    let loaded = model_from_checkpoint(&load_ckpt(&checkpoint, "checkpoint")?)?;
    let provider = HashedTextProvider::new(text_seed, loaded.model.config.d_text);
    let schedule = make_schedule(loaded.schedule_kind, loaded.timesteps)?;
    let conditioning = provider.embed(caption.as_deref());
    let guide = GuidanceConfig::new(guidance, provider.embed(None))?;
    let skeleton = default_skeleton();

    let run = RunDir::create(&out)?;
    let mut entries = Vec::with_capacity(count);
    for i in 0..count {
        let mut rng = indexed_stream(seed, "sample", i as u64);
        let x = sample(
            &loaded.model,
            &schedule,
            frames,
            POSE_DIM,
            &conditioning,
            &guide,
            &mut rng,
        )?;
        let raw = destandardize(&x, &loaded.stats)?;
        let mut motion = array_to_motion(&raw, fps, caption.clone())?;
        if let Some(n) = upsample {
            motion = resample_motion(&motion, n)?;
        }
        let name = format!("sample_{i:05}.json");
        save_motion(&motion, &out.join(&name))?;
        if bvh {
            export_bvh(&skeleton, &motion, &out.join(format!("sample_{i:05}.bvh")))?;
        }
        println!(
            "wrote {} ({})",
            out.join(&name).display(),
            caption.as_deref().unwrap_or("unconditional")
        );
        entries.push((name, "generated".to_string()));
    }
    write_manifest(&entries, &out.join("manifest.tsv"))?;

    run.write_manifest(
        "sample",
        Some(seed),
        json!({
            "checkpoint": path_str(&checkpoint),
            "caption": caption,
            "count": count,
            "frames": frames,
            "guidance": guidance,
            "fps": fps,
            "upsample": upsample,
            "bvh": bvh,
            "text_seed": text_seed,
            "out_dir": path_str(&out),
        }),
    )
}

// ---------------------------------------------------------------------------
// eval

#[derive(clap::Args)]
pub struct EvalArgs {
    /// Key=value config file; explicit flags override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Trained evaluator checkpoint.
    #[arg(long)]
    pub evaluator: Option<PathBuf>,
    /// Generated set: manifest or directory.
    #[arg(long)]
    pub generated: Option<PathBuf>,
    /// Reference set: manifest or directory.
    #[arg(long)]
    pub reference: Option<PathBuf>,
    /// Split filter for the generated set.
    #[arg(long)]
    pub generated_split: Option<String>,
    /// Split filter for the reference set.
    #[arg(long)]
    pub reference_split: Option<String>,
    /// Output directory (or MOTIONDIFF_OUT_DIR).
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
    /// Metric seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Metric repetitions; >1 adds 95% confidence intervals.
    #[arg(long)]
    pub repetitions: Option<usize>,
}

pub fn run_eval(a: EvalArgs) -> CliResult<()> {
    let cfg = FileConfig::load(a.config.as_deref())?;
    let evaluator = cfg.require::<PathBuf>("evaluator", a.evaluator)?;
    let generated = cfg.require::<PathBuf>("generated", a.generated)?;
    let reference = cfg.require::<PathBuf>("reference", a.reference)?;
    let gen_split = cfg.get("generated_split", a.generated_split.clone(), "all".to_string())?;
    let ref_split = cfg.get("reference_split", a.reference_split.clone(), "all".to_string())?;
    let seed = cfg.require("seed", a.seed)?;
    let repetitions = cfg.get("repetitions", a.repetitions, 1)?;
    let out = resolve_out_dir(&cfg, a.out_dir)?;
    cfg.finish()?;

    let provider = evaluator_from_checkpoint(&load_ckpt(&evaluator, "evaluator checkpoint")?)?;
    let gen_motions: Vec<MotionSequence> = load_corpus(&generated, &gen_split)?
        .into_iter()
        .map(|i| i.motion)
        .collect();
    let ref_motions: Vec<MotionSequence> = load_corpus(&reference, &ref_split)?
        .into_iter()
        .map(|i| i.motion)
        .collect();

    let run = RunDir::create(&out)?;
    let report = compute_metrics(&provider, &gen_motions, &ref_motions, seed, repetitions)?;
    let mut text = report.to_json()?;
    if !text.ends_with('\n') {
        text.push('\n');
    }
    fs::write(out.join("metrics.json"), text)?;

    println!("fid {:.6}", report.fid);
    for (k, v) in &report.r_precision {
        println!("r_precision {k} {v:.4}");
    }
    println!("diversity {:.6}", report.diversity);
    println!(
        "n_samples {} (generated) vs {} (reference)",
        gen_motions.len(),
        ref_motions.len()
    );
    println!("report: {}", out.join("metrics.json").display());

    run.write_manifest(
        "eval",
        Some(seed),
        json!({
            "evaluator": path_str(&evaluator),
            "generated": path_str(&generated),
            "reference": path_str(&reference),
            "generated_split": gen_split,
            "reference_split": ref_split,
            "repetitions": repetitions,
            "out_dir": path_str(&out),
        }),
    )
}

// ---------------------------------------------------------------------------
// nn

#[derive(clap::Args)]
pub struct NnArgs {
    /// Key=value config file; explicit flags override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Trained evaluator checkpoint.
    #[arg(long)]
    pub evaluator: Option<PathBuf>,
    /// Corpus manifest (or directory of motion files).
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Split filter for the corpus.
    #[arg(long)]
    pub split: Option<String>,
    /// Caption-style text query (exclusive with --query-motion).
    #[arg(long)]
    pub query_text: Option<String>,
    /// Motion-file query (exclusive with --query-text).
    #[arg(long)]
    pub query_motion: Option<PathBuf>,
    /// Neighbors to return.
    #[arg(long)]
    pub k: Option<usize>,
    /// Directory to write the neighbor motions (JSON + BVH) into.
    #[arg(long)]
    pub export: Option<PathBuf>,
}

pub fn run_nn(a: NnArgs) -> CliResult<()> {
    let cfg = FileConfig::load(a.config.as_deref())?;
    let evaluator = cfg.require::<PathBuf>("evaluator", a.evaluator)?;
    let data = cfg.require::<PathBuf>("data", a.data)?;
    let split = cfg.get("split", a.split.clone(), "all".to_string())?;
    let query_text = cfg.opt::<String>("query_text", a.query_text)?;
    let query_motion = cfg.opt::<PathBuf>("query_motion", a.query_motion)?;
    let k = cfg.get("k", a.k, 6)?;
    let export = cfg.opt::<PathBuf>("export", a.export)?;
    cfg.finish()?;

    let provider = evaluator_from_checkpoint(&load_ckpt(&evaluator, "evaluator checkpoint")?)?;
    let items = load_corpus(&data, &split)?;
    let motions: Vec<MotionSequence> = items.iter().map(|i| i.motion.clone()).collect();

    let loaded_query: Option<MotionSequence> = match (&query_text, &query_motion) {
        (Some(_), Some(_)) | (None, None) => {
            return Err(CliError::Usage(
                "exactly one of --query-text / --query-motion is required".into(),
            ))
        }
        (None, Some(p)) => {
            require_file(p, "query motion")?;
            Some(load_motion(p)?)
        }
        (Some(_), None) => None,
    };
    let query = match (&query_text, &loaded_query) {
        (Some(t), _) => Query::Text(t),
        (_, Some(m)) => Query::Motion(m),
        _ => unreachable!(),
    };

    let neighbors = nearest_neighbors(&provider, query, &motions, k)?;
    for (rank, n) in neighbors.iter().enumerate() {
        let item = &items[n.index];
        println!(
            "{:>2}  {:+.6}  {}  {}",
            rank + 1,
            n.similarity,
            item.path.display(),
            item.motion.caption.as_deref().unwrap_or("(unconditional)")
        );
    }

    if let Some(dir) = export {
        fs::create_dir_all(&dir)?;
        let skeleton = default_skeleton();
        for (rank, n) in neighbors.iter().enumerate() {
            let m = &motions[n.index];
            save_motion(m, &dir.join(format!("nn_{:02}.json", rank + 1)))?;
            export_bvh(&skeleton, m, &dir.join(format!("nn_{:02}.bvh", rank + 1)))?;
        }
        println!("exported {} neighbors to {}", neighbors.len(), dir.display());
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// export-bvh

#[derive(clap::Args)]
pub struct ExportBvhArgs {
    /// Key=value config file; explicit flags override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Motion JSON file to convert.
    #[arg(long)]
    pub input: Option<PathBuf>,
    /// Destination BVH path.
    #[arg(long)]
    pub output: Option<PathBuf>,
}

pub fn run_export_bvh(a: ExportBvhArgs) -> CliResult<()> {
    let cfg = FileConfig::load(a.config.as_deref())?;
    let input = cfg.require::<PathBuf>("input", a.input)?;
    let output = cfg.require::<PathBuf>("output", a.output)?;
    cfg.finish()?;

    require_file(&input, "input motion")?;
    let motion = load_motion(&input)?;
    if let Some(parent) = output.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent)?;
        }
    }
    export_bvh(&default_skeleton(), &motion, &output)?;
    println!("wrote {}", output.display());
    Ok(())
}
