//! Thin CLI over the tl3d library: gen-data | train-vae | train-diffusion
//! | sample | eval. Run settings come from an optional key=value config
//! file plus `--set key=value` overrides; a few common knobs have
//! dedicated flags. Failure families map to distinct exit codes (2 config,
//! 3 I/O/format, 4 numeric divergence, 5 missing checkpoint).

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use tl3d::harness::{cmd_eval, cmd_gen_data, cmd_sample, cmd_train_diffusion, cmd_train_vae, Config};

#[derive(Parser)]
#[command(name = "tl3d", about = "Tri-latent 3D generation: data, training, sampling, evaluation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// key=value config file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override a config key (repeatable): --set train.lr=1e-3
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// RNG seed (shorthand for --set seed=N).
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a procedural multi-view RGB-D dataset container.
    GenData {
        #[command(flatten)]
        common: Common,
    },
    /// Train the stage-1 compression model on a dataset.
    TrainVae {
        #[command(flatten)]
        common: Common,
        /// Dataset container path (shorthand for --set dataset=...).
        #[arg(long)]
        dataset: Option<PathBuf>,
    },
    /// Train the latent diffusion model against a frozen stage-1 encoder.
    TrainDiffusion {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        dataset: Option<PathBuf>,
        /// Stage-1 checkpoint.
        #[arg(long)]
        vae_checkpoint: Option<PathBuf>,
    },
    /// Sample latents, decode, and render a pose trajectory.
    Sample {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        dataset: Option<PathBuf>,
        #[arg(long)]
        vae_checkpoint: Option<PathBuf>,
        #[arg(long)]
        diffusion_checkpoint: Option<PathBuf>,
        /// Sampling steps.
        #[arg(long)]
        steps: Option<usize>,
        /// Guidance scale s.
        #[arg(long)]
        cfg_scale: Option<f64>,
        /// ode_euler | ddim_like
        #[arg(long)]
        sampler: Option<String>,
        /// unet_rollout | transformer_full_attention
        #[arg(long)]
        backbone: Option<String>,
        /// none | text | image | image+patches
        #[arg(long)]
        cond: Option<String>,
        /// Text prompt for text conditioning.
        #[arg(long)]
        prompt: Option<String>,
    },
    /// Evaluate a trained model: PSNR, Chamfer, Coverage, MMD.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        dataset: Option<PathBuf>,
        #[arg(long)]
        vae_checkpoint: Option<PathBuf>,
    },
}

fn build_config(common: &Common, extra: &[(&str, Option<String>)]) -> tl3d::Result<Config> {
    let mut cfg = match &common.config {
        Some(path) => Config::from_file(path)?,
        None => Config::new(),
    };
    cfg.apply_overrides(&common.overrides)?;
    if let Some(seed) = common.seed {
        cfg.set("seed", &seed.to_string());
    }
    for (key, value) in extra {
        if let Some(v) = value {
            cfg.set(key, v);
        }
    }
    Ok(cfg)
}

fn opt_path(p: &Option<PathBuf>) -> Option<String> {
    p.as_ref().map(|p| p.display().to_string())
}

fn run() -> tl3d::Result<()> {
    let cli = Cli::parse();
    match &cli.command {
        Command::GenData { common } => {
            let cfg = build_config(common, &[])?;
            let path = cmd_gen_data(&cfg)?;
            println!("dataset written to {}", path.display());
        }
        Command::TrainVae { common, dataset } => {
            let cfg = build_config(common, &[("dataset", opt_path(dataset))])?;
            let ckpt = cmd_train_vae(&cfg)?;
            println!("final checkpoint at {}", ckpt.display());
        }
        Command::TrainDiffusion {
            common,
            dataset,
            vae_checkpoint,
        } => {
            let cfg = build_config(
                common,
                &[
                    ("dataset", opt_path(dataset)),
                    ("vae_checkpoint", opt_path(vae_checkpoint)),
                ],
            )?;
            let ckpt = cmd_train_diffusion(&cfg)?;
            println!("final checkpoint at {}", ckpt.display());
        }
        Command::Sample {
            common,
            dataset,
            vae_checkpoint,
            diffusion_checkpoint,
            steps,
            cfg_scale,
            sampler,
            backbone,
            cond,
            prompt,
        } => {
            let cfg = build_config(
                common,
                &[
                    ("dataset", opt_path(dataset)),
                    ("vae_checkpoint", opt_path(vae_checkpoint)),
                    ("diffusion_checkpoint", opt_path(diffusion_checkpoint)),
                    ("diff.steps", steps.map(|v| v.to_string())),
                    ("diff.cfg_scale", cfg_scale.map(|v| v.to_string())),
                    ("diff.sampler", sampler.clone()),
                    ("diff.backbone", backbone.clone()),
                    ("diff.cond", cond.clone()),
                    ("sample.prompt", prompt.clone()),
                ],
            )?;
            let dir = cmd_sample(&cfg)?;
            println!("samples written to {}", dir.display());
        }
        Command::Eval {
            common,
            dataset,
            vae_checkpoint,
        } => {
            let cfg = build_config(
                common,
                &[
                    ("dataset", opt_path(dataset)),
                    ("vae_checkpoint", opt_path(vae_checkpoint)),
                ],
            )?;
            let dir = cmd_eval(&cfg)?;
            println!("report written to {}", dir.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
