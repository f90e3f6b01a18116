use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use fastrl_envlab::PushProfile;
use fastrl_trainer::checkpoint::Checkpoint;
use fastrl_trainer::train::config_of;
use fastrl_trainer::{evaluate, export_curves, resume, sweep, train, Axis, RunConfig, Trainer, XAxis};

#[derive(Parser)]
#[command(name = "fastrl", about = "Off-policy training on vectorized toy environments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train from a config file, or continue a run with --resume.
    Train {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Dotted override, e.g. `train.num_envs=64`; repeatable.
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
        /// Run directory; defaults to runs/<config file stem>.
        #[arg(long)]
        run_dir: Option<PathBuf>,
        /// Continue from the run directory's latest checkpoint.
        #[arg(long)]
        resume: bool,
    },
    /// Evaluate a checkpoint with the deterministic policy.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        episodes: usize,
        #[arg(long = "push-profile")]
        push_profile: Option<PushProfile>,
        /// Evaluation seed; defaults to the run's `train.eval_seed`.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Run a grid of configurations.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        /// `key=v1,v2,...`; repeat for a cartesian grid.
        #[arg(long = "axis", required = true)]
        axes: Vec<Axis>,
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
        /// Seeds per point, counting up from the base seed.
        #[arg(long, default_value_t = 1)]
        seeds: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Export learning curves from run directories.
    Plot {
        #[arg(required = true)]
        run_dirs: Vec<PathBuf>,
        #[arg(long, default_value = "tracking_mean")]
        metric: String,
        /// `env_steps` or `wall_clock`.
        #[arg(long, default_value = "env_steps")]
        x: XAxis,
        /// Output path prefix; `.svg` and `.csv` are appended.
        #[arg(long, default_value = "curves")]
        out: PathBuf,
    },
}

fn default_dir(config: &std::path::Path, parent: &str) -> PathBuf {
    let stem = config
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "run".into());
    PathBuf::from(parent).join(stem)
}

fn run(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Train {
            config,
            overrides,
            run_dir,
            resume: resuming,
        } => {
            let summary = if resuming {
                let dir = match (&run_dir, &config) {
                    (Some(d), _) => d.clone(),
                    (None, Some(c)) => default_dir(c, "runs"),
                    (None, None) => bail!("--resume needs --run-dir or --config"),
                };
                resume(&dir, &overrides)?
            } else {
                let Some(config) = config else {
                    bail!("train needs --config");
                };
                let cfg = RunConfig::load(&config, &overrides)?;
                let dir = run_dir.unwrap_or_else(|| default_dir(&config, "runs"));
                train(cfg, &dir)?
            };
            println!("{}", serde_json::to_string_pretty(&summary)?);
            if let Some(msg) = &summary.diverged {
                eprintln!(
                    "training aborted: {msg}; checkpoint saved in {}",
                    summary.run_dir.display()
                );
                return Ok(ExitCode::from(2));
            }
        }
        Command::Eval {
            checkpoint,
            episodes,
            push_profile,
            seed,
        } => {
            let ck = Checkpoint::load(&checkpoint)?;
            let cfg = config_of(&ck)?;
            let trainer = Trainer::from_checkpoint(&ck, None)?;
            let profile = push_profile.unwrap_or_else(|| fastrl_trainer::env::training_push_profile(&cfg));
            let seed = seed.unwrap_or(cfg.train.eval_seed);
            let stats = evaluate(&cfg, trainer.learner(), trainer.normalizer(), episodes, profile, seed)?;
            println!("{}", serde_json::to_string_pretty(&stats)?);
        }
        Command::Sweep {
            config,
            axes,
            overrides,
            seeds,
            out,
        } => {
            let base = RunConfig::load(&config, &overrides)?;
            let out = out.unwrap_or_else(|| default_dir(&config, "sweeps"));
            let results = sweep(&base, &axes, seeds, &out)?;
            for r in &results {
                println!(
                    "point {} seed {} [{}]: {} final {:?} best {:?}",
                    r.point,
                    r.seed,
                    r.overrides.join(" "),
                    r.status,
                    r.final_tracking,
                    r.best_tracking
                );
            }
            println!("summary: {}", out.join("summary.csv").display());
        }
        Command::Plot {
            run_dirs,
            metric,
            x,
            out,
        } => {
            let (svg, csv) = export_curves(&run_dirs, &metric, x, &out).context("exporting curves")?;
            println!("{}\n{}", svg.display(), csv.display());
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
