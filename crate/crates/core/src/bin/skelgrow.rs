use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use skelgrow::cli;

#[derive(Parser)]
#[command(name = "skelgrow", version, about = "Adaptive skeleton growth for point-cloud avatars")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic scene from a spec file.
    Generate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        /// Scene JSON path; the observation sidecar goes next to it.
        #[arg(long)]
        out: PathBuf,
    },
    /// Warm up, grow extra joints and refine.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Replay a trained model, optionally with explicit extra-joint rotations.
    Animate {
        #[arg(long)]
        model: PathBuf,
        /// Overrides JSON: `per_entry[i][frame]` axis-angles, optional `freeze_base_frame`.
        #[arg(long, alias = "config")]
        overrides: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Reconstruction error of a trained model on a saved scene.
    Eval {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        scene: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn run(cli: Cli) -> skelgrow::Result<()> {
    cli::configure_threads()?;
    match cli.command {
        Command::Generate { config, seed, out } => {
            let summary = cli::cmd_generate(&config, seed, &out)?;
            println!("{summary}");
        }
        Command::Train { config, seed, out } => {
            let report = cli::cmd_train(&config, seed, out.as_deref())?;
            println!("grown {:?}, final loss {:e}", report.grown, report.final_loss);
            if let Some(h) = report.held_out_rmse {
                println!("held-out rmse {h:e}");
            }
        }
        Command::Animate { model, overrides, out } => {
            let n = cli::cmd_animate(&model, overrides.as_deref(), &out)?;
            println!("wrote {n} frames to {}", out.display());
        }
        Command::Eval { model, scene, out } => {
            let r = cli::cmd_eval(&model, &scene, out.as_deref())?;
            println!("{}", skelgrow::io::to_json(&r).trim_end());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
