use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use quadsac::env::PathKind;
use quadsac::harness::{
    default_robustness_grid, evaluate_fixed, evaluate_path, load_checkpoint, robustness_sweep, train, ExperimentConfig,
};

#[derive(Parser)]
#[command(name = "quadsac", about = "Soft actor-critic quadrotor go-to-target experiments")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Train an agent from a TOML experiment config.
    Train {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Override the total number of environment steps.
        #[arg(long)]
        steps: Option<usize>,
    },
    /// Evaluate a checkpoint against a fixed or moving target.
    Eval {
        #[arg(value_enum)]
        path: PathArg,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Target speed in m/s for moving paths.
        #[arg(long, default_value_t = 0.5)]
        speed: f64,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Episodes for the fixed-target suite.
        #[arg(long, default_value_t = 20)]
        episodes: usize,
        #[arg(long, default_value_t = 500)]
        steps: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Run the extreme-initialization grid.
    Robustness {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Inspect parameters.
    Params {
        #[command(subcommand)]
        what: ParamsCmd,
    },
}

#[derive(Subcommand)]
enum ParamsCmd {
    /// Print the resolved config (defaults when no file is given) as TOML.
    Show {
        #[arg(long)]
        config: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum PathArg {
    Fixed,
    Line,
    Square,
    Sinusoid,
}

impl From<PathArg> for PathKind {
    fn from(p: PathArg) -> Self {
        match p {
            PathArg::Fixed => PathKind::Fixed,
            PathArg::Line => PathKind::Line,
            PathArg::Square => PathKind::Square,
            PathArg::Sinusoid => PathKind::Sinusoid,
        }
    }
}

fn load_config(path: Option<&PathBuf>) -> Result<ExperimentConfig> {
    match path {
        Some(p) => Ok(ExperimentConfig::load(p)?),
        None => Ok(ExperimentConfig::default()),
    }
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    match cli.cmd {
        Cmd::Train {
            config,
            seed,
            out,
            steps,
        } => {
            let mut cfg = load_config(config.as_ref())?;
            if let Some(s) = seed {
                cfg.train.seed = s;
            }
            if let Some(n) = steps {
                cfg.train.total_env_steps = n;
            }
            let out = out.unwrap_or_else(|| cfg.train.output_dir.clone());
            let started = std::time::Instant::now();
            let mut report = |row: &quadsac::harness::CurveRow| {
                eprintln!(
                    "[{:>7.0}s] steps {:>8}  eval {:>9.2}  q1 {:.4}  v {:.4}  pi {:.3}  H {:.3}",
                    started.elapsed().as_secs_f64(),
                    row.env_steps,
                    row.mean_eval_reward,
                    row.q1_loss,
                    row.value_loss,
                    row.policy_loss,
                    row.entropy
                );
            };
            let outcome = train(&cfg, &out, Some(&mut report)).context("training failed")?;
            println!("wrote {}", outcome.output_dir.display());
        }
        Cmd::Eval {
            path,
            checkpoint,
            speed,
            config,
            out,
            episodes,
            steps,
            seed,
        } => {
            let cfg = load_config(config.as_ref())?;
            let agent = load_checkpoint(&checkpoint)?;
            let kind = PathKind::from(path);
            if kind == PathKind::Fixed {
                let (records, summary) =
                    evaluate_fixed(&agent, &cfg.quad, &cfg.env, episodes, steps, seed, out.as_deref())?;
                for (i, r) in records.iter().enumerate() {
                    println!(
                        "episode {i:3}  reward {:9.2}  steps {:4}  terminated {}  final_err {:.3}",
                        r.summary.total_reward,
                        r.summary.steps,
                        r.summary.terminated,
                        r.final_tracking_error(100)
                    );
                }
                println!(
                    "mean reward {:.2}  completed {}/{}",
                    summary.mean_total_reward, summary.completed, summary.episodes
                );
            } else {
                if episodes == 0 {
                    bail!("--episodes must be >= 1");
                }
                let rec = evaluate_path(&agent, &cfg.quad, &cfg.env, kind, speed, None, steps, out.as_deref())?;
                println!(
                    "{} speed {speed}: reward {:.2}  steps {}  terminated {}  mean_err {:.3}  final_err {:.3}",
                    kind.name(),
                    rec.summary.total_reward,
                    rec.summary.steps,
                    rec.summary.terminated,
                    rec.mean_tracking_error(0..rec.rows.len()),
                    rec.final_tracking_error(100)
                );
            }
        }
        Cmd::Robustness {
            checkpoint,
            config,
            out,
        } => {
            let cfg = load_config(config.as_ref())?;
            let agent = load_checkpoint(&checkpoint)?;
            let grid = default_robustness_grid();
            let (report, _) = robustness_sweep(&agent, &cfg.quad, &cfg.env, &grid, out.as_deref())?;
            println!(
                "episodes {}  successes {}  rate {:.3}  median reward {:.2}  mean reward {:.2}",
                report.episodes,
                report.successes,
                report.success_rate,
                report.median_total_reward,
                report.mean_total_reward
            );
        }
        Cmd::Params {
            what: ParamsCmd::Show { config },
        } => {
            let cfg = load_config(config.as_ref())?;
            print!("{}", cfg.to_toml_string());
        }
    }
    Ok(())
}
