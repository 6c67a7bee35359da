//! `motiondiff`: synthesize the caption-labelled motion corpus, train the
//! two-stage diffusion model, draw samples, and score them.
//!
//! Exit codes: 0 success, 2 usage/config, 3 data, 4 numerical. Every
//! subcommand is deterministic given its seed; timestamps appear only in
//! `run_manifest.json`.

mod commands;
mod config;
mod error;
mod io;
mod run;

use clap::{Parser, Subcommand};

use crate::commands::{
    run_eval, run_export_bvh, run_nn, run_sample, run_synth_data, run_train_evaluator,
    run_train_motion, run_train_pose, EvalArgs, ExportBvhArgs, NnArgs, SampleArgs, SynthDataArgs,
    TrainEvaluatorArgs, TrainMotionArgs, TrainPoseArgs,
};
use crate::error::CliResult;

#[derive(Parser)]
#[command(
    name = "motiondiff",
    version,
    about = "Text-conditioned human motion diffusion at desk scale"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic caption-labelled motion corpus.
    SynthData(SynthDataArgs),
    /// Train the stage-1 static pose model on (caption, pose) pairs.
    TrainPose(TrainPoseArgs),
    /// Fine-tune the temporal motion model from a pose checkpoint.
    TrainMotion(TrainMotionArgs),
    /// Train the contrastive text-motion evaluator.
    TrainEvaluator(TrainEvaluatorArgs),
    /// Draw motions from a trained checkpoint.
    Sample(SampleArgs),
    /// Score a generated set against a reference set.
    Eval(EvalArgs),
    /// List the nearest corpus motions for a text or motion query.
    Nn(NnArgs),
    /// Convert a stored motion file to BVH.
    ExportBvh(ExportBvhArgs),
}

fn dispatch(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::SynthData(a) => run_synth_data(a),
        Command::TrainPose(a) => run_train_pose(a),
        Command::TrainMotion(a) => run_train_motion(a),
        Command::TrainEvaluator(a) => run_train_evaluator(a),
        Command::Sample(a) => run_sample(a),
        Command::Eval(a) => run_eval(a),
        Command::Nn(a) => run_nn(a),
        Command::ExportBvh(a) => run_export_bvh(a),
    }
}

fn main() {
    if let Err(e) = dispatch(Cli::parse()) {
        eprintln!("error: {e}");
        std::process::exit(e.exit_code());
    }
}
