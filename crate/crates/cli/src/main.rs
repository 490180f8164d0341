use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use pgov_cli::ablation::run_ablation_suite;
use pgov_cli::config::{PipelineConfig, Preset};
use pgov_cli::pipeline::Run;
use pgov_cli::report::emit_report;
use pgov_core::error::Error;

/// Partial-to-global curriculum for open-vocabulary 3D semantic segmentation
/// on synthetic RGB-D scenes.
#[derive(Parser)]
#[command(name = "pgov", version)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args)]
struct StageArgs {
    /// Pipeline config JSON; defaults to the built-in desk-scale benchmark.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Run directory; stages read their inputs from and write their outputs
    /// to this directory.
    #[arg(long)]
    out: PathBuf,
    /// Overrides the config's global seed.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate labeled global scenes and camera trajectories.
    Synth(StageArgs),
    /// Render RGB-D frames (plus per-frame color noise) for every scene.
    Render(StageArgs),
    /// Produce pixel-entity masks and frame vocabularies for train scenes.
    Oracle(StageArgs),
    /// Stage 1: alignment + consistency training on partial clouds.
    Pretrain(StageArgs),
    /// Repeated-grid-sampling pseudo labels from the stage-1 model.
    Pseudolabel(StageArgs),
    /// Stage 2: alignment fine-tuning on pseudo-labeled global scenes.
    Finetune(StageArgs),
    /// Zero-shot segmentation metrics on the held-out scenes.
    Eval(StageArgs),
    /// Run a preset end to end, or the whole ablation suite with --suite.
    Experiment {
        #[command(flatten)]
        stage: StageArgs,
        /// One of: full_curriculum, stage1_only, no_consistency,
        /// no_pretrained_weights.
        #[arg(long, default_value = "full_curriculum")]
        preset: String,
        /// Run all four presets over the configured ablation seeds.
        #[arg(long)]
        suite: bool,
    },
    /// Write summary.txt and loss_curves.svg from a finished run.
    Report {
        #[arg(long)]
        out: PathBuf,
    },
}

fn load_config(args: &StageArgs) -> Result<PipelineConfig, Error> {
    let mut cfg = match &args.config {
        Some(path) => PipelineConfig::load(path)?,
        None => PipelineConfig::default(),
    };
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run() -> Result<(), Error> {
    let cli = Cli::parse();
    match &cli.cmd {
        Cmd::Synth(a) => Run::new(&load_config(a)?, &a.out).synth(),
        Cmd::Render(a) => Run::new(&load_config(a)?, &a.out).render(),
        Cmd::Oracle(a) => Run::new(&load_config(a)?, &a.out).oracle(),
        Cmd::Pretrain(a) => Run::new(&load_config(a)?, &a.out).pretrain(),
        Cmd::Pseudolabel(a) => Run::new(&load_config(a)?, &a.out).pseudolabel(),
        Cmd::Finetune(a) => Run::new(&load_config(a)?, &a.out).finetune(),
        Cmd::Eval(a) => Run::new(&load_config(a)?, &a.out).eval(),
        Cmd::Experiment { stage, preset, suite } => {
            let cfg = load_config(stage)?;
            if *suite {
                run_ablation_suite(&cfg, &stage.out)?;
                Ok(())
            } else {
                let preset = Preset::parse(preset)?;
                let mut cfg = cfg;
                preset.apply(&mut cfg);
                Run::new(&cfg, &stage.out).experiment(preset)
            }
        }
        Cmd::Report { out } => emit_report(out),
    }
}

fn exit_code_for(err: &Error) -> u8 {
    match err {
        // Configuration problems.
        Error::InvalidConfig { .. } | Error::EmptySpec | Error::BadSplit(_) => 2,
        // Data and format problems.
        Error::Format { .. }
        | Error::Io(_)
        | Error::Json(_)
        | Error::MissingArtifacts(_)
        | Error::VocabMismatch { .. }
        | Error::OutOfRangeLabel { .. }
        | Error::DimMismatch { .. } => 3,
        _ => 1,
    }
}

fn main() -> ExitCode {
    if let Ok(threads) = std::env::var("PGOV_THREADS") {
        if let Ok(n) = threads.parse::<usize>() {
            let _ = rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global();
        }
    }
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code_for(&e))
        }
    }
}
