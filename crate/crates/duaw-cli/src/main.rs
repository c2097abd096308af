//! `duaw`: one executable driving the full pipeline — synthetic data,
//! VAE training, watermark optimization, generator customization, and
//! the evaluation experiments.
//!
//! Exit codes: 0 success, 2 config error, 3 missing artifact,
//! 4 numerical failure, 1 anything else.

mod commands;
mod config;
mod workspace;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use duaw_core::generator::{FinetuneMode, PerturbPattern};
use duaw_core::{DuawError, Result};

use config::PipelineConfig;
use workspace::Workspace;

#[derive(Parser)]
#[command(
    name = "duaw",
    version,
    about = "Universal adversarial watermark pipeline"
)]
struct Cli {
    /// Workspace root (or set DUAW_WORKSPACE).
    #[arg(long, global = true)]
    workspace: Option<PathBuf>,

    /// TOML configuration file; flags override file values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Global seed override.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Image resolution override.
    #[arg(long, global = true)]
    resolution: Option<usize>,

    /// Overwrite existing outputs.
    #[arg(long, global = true)]
    force: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Full,
    Lora,
}

impl From<Mode> for FinetuneMode {
    fn from(m: Mode) -> FinetuneMode {
        match m {
            Mode::Full => FinetuneMode::Full,
            Mode::Lora => FinetuneMode::Lora,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum Pattern {
    Checkerboard,
    Stripes,
}

impl From<Pattern> for PerturbPattern {
    fn from(p: Pattern) -> PerturbPattern {
        match p {
            Pattern::Checkerboard => PerturbPattern::Checkerboard,
            Pattern::Stripes => PerturbPattern::Stripes,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Synthesize the procedural surrogate dataset.
    GenData {
        /// Output directory (default: <workspace>/data/train or /holdout).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Generate the held-out content x style set instead.
        #[arg(long)]
        holdout: bool,
    },
    /// Train the VAE on the surrogate dataset and freeze it.
    TrainVae {
        /// base, reseeded or widened (transfer-study variants).
        #[arg(long, default_value = "base")]
        variant: String,
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Optimize the universal watermark against the frozen VAE.
    TrainDuaw {
        #[arg(long)]
        epsilon: Option<f32>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        batch_size: Option<usize>,
        #[arg(long)]
        lr: Option<f32>,
        /// ms-ssim or mse.
        #[arg(long)]
        loss: Option<String>,
    },
    /// Pretrain the base latent denoiser over the frozen VAE.
    PretrainGen {
        #[arg(long, default_value = "base")]
        variant: String,
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Fine-tune the generator on instance images.
    Customize {
        #[arg(long, value_enum)]
        mode: Mode,
        #[arg(long)]
        instances: PathBuf,
        /// Low-rank adapter rank (lora mode).
        #[arg(long)]
        rank: Option<usize>,
        /// Apply the trained watermark to the instances first.
        #[arg(long)]
        watermarked: bool,
    },
    /// Run both customization arms and report protection success rates.
    Evaluate {
        #[arg(long, value_enum, default_value = "full")]
        mode: Mode,
        #[arg(long)]
        instances: PathBuf,
    },
    /// Protection under noise / blur / JPEG on the watermarked instances.
    Robustness {
        #[arg(long, value_enum, default_value = "full")]
        mode: Mode,
        #[arg(long)]
        instances: PathBuf,
        #[arg(long, default_value_t = 0.02)]
        noise: f32,
        #[arg(long, default_value_t = 0.4)]
        blur: f32,
        #[arg(long, default_value_t = 85)]
        jpeg: u32,
    },
    /// Watermark budget sweep: visibility vs protection.
    AblateEps {
        #[arg(long, value_enum, default_value = "full")]
        mode: Mode,
        #[arg(long)]
        instances: PathBuf,
        /// Ascending epsilon grid (default 0.01 0.03 0.05 0.08 0.1).
        #[arg(long, num_args = 1.., value_delimiter = ',')]
        grid: Option<Vec<f32>>,
    },
    /// MS-SSIM vs MSE watermark objectives at equal epsilon.
    CompareLoss {
        #[arg(long, value_enum, default_value = "full")]
        mode: Mode,
        #[arg(long)]
        instances: PathBuf,
    },
    /// Watermark transfer across independently trained VAE variants.
    TransferVae {
        #[arg(long, value_enum, default_value = "full")]
        mode: Mode,
        #[arg(long)]
        instances: PathBuf,
    },
    /// Perturbation-preservation sanity check for both fine-tune modes.
    PreserveCheck {
        #[arg(long)]
        instances: PathBuf,
        #[arg(long, value_enum, default_value = "checkerboard")]
        pattern: Pattern,
        #[arg(long, default_value_t = 0.03)]
        amplitude: f32,
    },
    /// Apply a trained watermark to a directory of PNGs.
    Apply {
        /// Watermark container (default: <workspace>/watermark/duaw.duaw).
        #[arg(long)]
        watermark: Option<PathBuf>,
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Bilinearly rescale the watermark to mismatched resolutions.
        #[arg(long)]
        resize: bool,
    },
}

fn exit_code_for(err: &DuawError) -> u8 {
    match err {
        DuawError::Config(_) | DuawError::InvalidArg(_) => 2,
        DuawError::MissingArtifact(_) => 3,
        DuawError::NonFinite { .. } => 4,
        _ => 1,
    }
}

fn resolve_config(cli: &Cli) -> Result<PipelineConfig> {
    let mut cfg = match &cli.config {
        Some(path) => PipelineConfig::load(path)?,
        None => PipelineConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(res) = cli.resolution {
        cfg.resolution = res;
    }
    // per-command overrides
    match &cli.command {
        Command::TrainVae { epochs, .. } => {
            if let Some(e) = epochs {
                cfg.vae.epochs = *e;
            }
        }
        Command::TrainDuaw {
            epsilon,
            epochs,
            batch_size,
            lr,
            loss,
        } => {
            if let Some(v) = epsilon {
                cfg.duaw.epsilon = *v;
            }
            if let Some(v) = epochs {
                cfg.duaw.epochs = *v;
            }
            if let Some(v) = batch_size {
                cfg.duaw.batch_size = *v;
            }
            if let Some(v) = lr {
                cfg.duaw.lr = *v;
            }
            if let Some(v) = loss {
                cfg.duaw.loss = v.clone();
            }
        }
        Command::PretrainGen { epochs, .. } => {
            if let Some(e) = epochs {
                cfg.generator.epochs = *e;
            }
        }
        Command::Customize { rank, .. } => {
            if let Some(r) = rank {
                cfg.finetune.rank = *r;
            }
        }
        _ => {}
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: &Cli) -> Result<()> {
    let cfg = resolve_config(cli)?;
    let root = cli
        .workspace
        .clone()
        .or_else(|| std::env::var_os("DUAW_WORKSPACE").map(PathBuf::from))
        .ok_or_else(|| {
            DuawError::Config("no workspace: pass --workspace or set DUAW_WORKSPACE".into())
        })?;
    let ws = Workspace::acquire(&root, cli.force)?;

    match &cli.command {
        Command::GenData { out, holdout } => {
            commands::gen_data(&ws, &cfg, out.clone(), *holdout)
        }
        Command::TrainVae { variant, .. } => commands::cmd_train_vae(&ws, &cfg, variant),
        Command::TrainDuaw { .. } => commands::cmd_train_duaw(&ws, &cfg),
        Command::PretrainGen { variant, .. } => commands::cmd_pretrain_gen(&ws, &cfg, variant),
        Command::Customize {
            mode,
            instances,
            watermarked,
            ..
        } => commands::cmd_customize(&ws, &cfg, (*mode).into(), instances, *watermarked),
        Command::Evaluate { mode, instances } => {
            commands::cmd_evaluate(&ws, &cfg, (*mode).into(), instances)
        }
        Command::Robustness {
            mode,
            instances,
            noise,
            blur,
            jpeg,
        } => commands::cmd_robustness(&ws, &cfg, (*mode).into(), instances, *noise, *blur, *jpeg),
        Command::AblateEps {
            mode,
            instances,
            grid,
        } => commands::cmd_ablate_eps(&ws, &cfg, (*mode).into(), instances, grid.clone()),
        Command::CompareLoss { mode, instances } => {
            commands::cmd_compare_loss(&ws, &cfg, (*mode).into(), instances)
        }
        Command::TransferVae { mode, instances } => {
            commands::cmd_transfer_vae(&ws, &cfg, (*mode).into(), instances)
        }
        Command::PreserveCheck {
            instances,
            pattern,
            amplitude,
        } => commands::cmd_preserve_check(&ws, &cfg, instances, (*pattern).into(), *amplitude),
        Command::Apply {
            watermark,
            input,
            out,
            resize,
        } => commands::cmd_apply(&ws, &cfg, watermark.clone(), input, out, *resize),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e);
            ExitCode::from(exit_code_for(&e))
        }
    }
}
