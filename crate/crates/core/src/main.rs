use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use vlearn::cli;
use vlearn::Error;

#[derive(Parser)]
#[command(
    name = "vlearn",
    version,
    about = "Off-policy value learning with a trust-region Gaussian policy"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train an agent and write metrics, checkpoint and final report to OUT.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a single-switch variant of a configuration.
    Ablate {
        #[arg(long)]
        config: PathBuf,
        /// no_is, ppo_loss, no_twin, eps_rho_20, vtrace or base
        #[arg(long)]
        variant: String,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Continue a checkpointed run to its configured step count.
    Resume {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        total_steps: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Monte Carlo variance study of the value estimators on a Gaussian bandit.
    BanditLab {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write the single-transition loss curves and their minimizers.
    Fig1 {
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate a checkpoint's deterministic policy and print JSON.
    Eval {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long, default_value_t = 10)]
        episodes: usize,
        #[arg(long)]
        seed: Option<u64>,
    },
}

fn run(command: Command) -> vlearn::Result<()> {
    match command {
        Command::Train { config, seed, out } => {
            let report = cli::cmd_train(&config, seed, &out)?;
            println!("{}", serde_json::to_string(&report)?);
        }
        Command::Ablate {
            config,
            variant,
            seed,
            out,
        } => {
            let report = cli::cmd_ablate(&config, &variant, seed, &out)?;
            println!("{}", serde_json::to_string(&report)?);
        }
        Command::Resume {
            ckpt,
            total_steps,
            out,
        } => {
            let report = cli::cmd_resume(&ckpt, total_steps, &out)?;
            println!("{}", serde_json::to_string(&report)?);
        }
        Command::BanditLab { config, out } => {
            let rows = cli::cmd_bandit_lab(&config, &out)?;
            log::info!("wrote {} rows to {}", rows.len(), out.display());
        }
        Command::Fig1 { out } => {
            for p in cli::cmd_fig1(&out)? {
                println!("{}", p.display());
            }
        }
        Command::Eval {
            ckpt,
            episodes,
            seed,
        } => {
            let res = cli::cmd_eval(&ckpt, episodes, seed)?;
            println!("{}", serde_json::to_string(&res)?);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("VLEARN_LOG", "info")).init();
    let args = Cli::parse();
    match run(args.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::Config(_) | Error::UnknownKeys(_) => ExitCode::from(2),
                Error::Diverged { .. } => ExitCode::from(3),
                _ => ExitCode::FAILURE,
            }
        }
    }
}
