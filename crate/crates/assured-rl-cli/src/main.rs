//! Command-line front end: `train`, `oracle`, and `compare`.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use assured_rl::cmdp::{Policy, TabularCmdp};
use assured_rl::experiment::{self, ExperimentConfig};
use assured_rl::gridworld::MazeSpec;
use assured_rl::learners::Algorithm;
use assured_rl::oracle;

/// Master-seed fallback when neither `--seed` nor the config provides one.
const SEED_ENV_VAR: &str = "ASSURED_RL_SEED";

#[derive(Parser)]
#[command(name = "assured-rl", version, about = "Safe tabular RL experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a multi-trial training experiment and write CSV curves.
    Train(TrainArgs),
    /// Compute exact safety and value tables for a maze or model file.
    Oracle(OracleArgs),
    /// Run assured and baseline agents with shared seeds and emit a
    /// joint report.
    Compare(TrainArgs),
}

#[derive(Args)]
struct TrainArgs {
    /// Experiment config file (`key = value` lines, `#` comments).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Maze file; overrides the config's `maze` key.
    #[arg(long)]
    maze: Option<PathBuf>,
    /// Master seed; overrides the config and the environment fallback.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory; overrides the config's `out_dir` key.
    #[arg(long)]
    out_dir: Option<PathBuf>,
    /// Algorithm: assured-q, assured-sarsa, or baseline-q.
    #[arg(long)]
    algo: Option<Algorithm>,
    /// Number of independent trials.
    #[arg(long)]
    trials: Option<usize>,
    /// Episodes per trial.
    #[arg(long)]
    episodes: Option<usize>,
}

#[derive(Args)]
struct OracleArgs {
    /// Maze file to analyze (exports its exact model first).
    #[arg(long, conflicts_with = "model")]
    maze: Option<PathBuf>,
    /// Model file in the tabular-cmdp text format.
    #[arg(long)]
    model: Option<PathBuf>,
    /// Discount for constrained value iteration.
    #[arg(long, default_value_t = 0.9)]
    gamma: f64,
    /// Solver tolerance.
    #[arg(long, default_value_t = oracle::DEFAULT_TOL)]
    tol: f64,
    /// Output directory for the computed tables.
    #[arg(long, default_value = "oracle-out")]
    out_dir: PathBuf,
}

impl TrainArgs {
    fn resolve(&self) -> Result<ExperimentConfig> {
        let mut config = match &self.config {
            Some(path) => experiment::load_config(path)
                .with_context(|| format!("loading config {}", path.display()))?,
            None => {
                let mut defaults = ExperimentConfig::default();
                match &self.maze {
                    Some(maze) => defaults.maze_path = maze.clone(),
                    None => bail!("either --config or --maze is required"),
                }
                // Without a config file the seed falls back to the
                // environment variable below.
                defaults
            }
        };
        if let Some(maze) = &self.maze {
            config.maze_path = maze.clone();
        }
        if let Some(algo) = self.algo {
            config.algorithm = algo;
        }
        if let Some(trials) = self.trials {
            config.trials = trials;
        }
        if let Some(episodes) = self.episodes {
            config.episodes = episodes;
        }
        if let Some(out_dir) = &self.out_dir {
            config.out_dir = out_dir.clone();
        }
        if let Some(seed) = self.seed {
            config.master_seed = seed;
        } else if self.config.is_none() {
            if let Some(seed) = env_seed()? {
                config.master_seed = seed;
            }
        }
        Ok(config)
    }
}

fn env_seed() -> Result<Option<u64>> {
    match std::env::var(SEED_ENV_VAR) {
        Ok(raw) => {
            let seed = raw
                .parse()
                .with_context(|| format!("{SEED_ENV_VAR} must be an integer, got `{raw}`"))?;
            Ok(Some(seed))
        }
        Err(std::env::VarError::NotPresent) => Ok(None),
        Err(e) => Err(e).context(format!("reading {SEED_ENV_VAR}")),
    }
}

fn cmd_train(args: &TrainArgs) -> Result<()> {
    let config = args.resolve()?;
    let output = experiment::run_experiment(&config)?;
    let last = output.curve.episodes().saturating_sub(1);
    println!(
        "trained {} x {} episodes of {} on {}",
        config.trials,
        config.episodes,
        config.algorithm,
        config.maze_path.display()
    );
    if output.curve.episodes() > 0 {
        println!(
            "final mean episode length {:.3}, mean cumulative violations {:.3}",
            output.curve.mean_length[last], output.curve.mean_cum_violations[last]
        );
    }
    println!("wrote {}", config.out_dir.display());
    Ok(())
}

fn cmd_compare(args: &TrainArgs) -> Result<()> {
    let config = args.resolve()?;
    let output = experiment::run_compare(&config)?;
    let last = output.assured.curve.episodes().saturating_sub(1);
    if output.assured.curve.episodes() > 0 {
        println!(
            "assured-q:  mean length {:.3}, mean cumulative violations {:.3}",
            output.assured.curve.mean_length[last],
            output.assured.curve.mean_cum_violations[last]
        );
        println!(
            "baseline-q: mean length {:.3}, mean cumulative violations {:.3}",
            output.baseline.curve.mean_length[last],
            output.baseline.curve.mean_cum_violations[last]
        );
    }
    println!("wrote {}", config.out_dir.join("compare.csv").display());
    Ok(())
}

fn cmd_oracle(args: &OracleArgs) -> Result<()> {
    let (model, exported_from_maze) = match (&args.maze, &args.model) {
        (Some(maze_path), None) => {
            let text = fs::read_to_string(maze_path)
                .with_context(|| format!("reading maze {}", maze_path.display()))?;
            let spec = MazeSpec::parse(&text)
                .with_context(|| format!("parsing maze {}", maze_path.display()))?;
            (spec.to_cmdp(), true)
        }
        (None, Some(model_path)) => {
            let text = fs::read_to_string(model_path)
                .with_context(|| format!("reading model {}", model_path.display()))?;
            let model = TabularCmdp::from_text(&text)
                .with_context(|| format!("parsing model {}", model_path.display()))?;
            (model, false)
        }
        _ => bail!("exactly one of --maze or --model is required"),
    };

    let kernel = oracle::safety_kernel(&model)?;
    let plan = oracle::constrained_value_iteration(&model, &kernel, args.gamma, args.tol)?;
    let uniform = Policy::uniform(model.n_states(), model.n_actions());
    let qd = oracle::qd_policy_eval(&model, &uniform, args.tol)?;

    fs::create_dir_all(&args.out_dir)
        .with_context(|| format!("creating {}", args.out_dir.display()))?;
    if exported_from_maze {
        write_out(&args.out_dir, "model.txt", &model.to_text())?;
    }
    write_out(&args.out_dir, "kernel.txt", &kernel.to_barrier_table().to_text_matrix())?;
    write_out(&args.out_dir, "constrained_q.txt", &plan.q.to_text_matrix())?;
    write_out(&args.out_dir, "qd_uniform.txt", &qd.to_text_matrix())?;

    println!(
        "{} of {} state-action pairs are unsafe",
        kernel.count_unsafe(),
        model.n_states() * model.n_actions()
    );
    if !plan.infeasible_starts.is_empty() {
        println!(
            "warning: {} start state(s) have no safe action",
            plan.infeasible_starts.len()
        );
    }
    println!("wrote {}", args.out_dir.display());
    Ok(())
}

fn write_out(dir: &Path, name: &str, contents: &str) -> Result<()> {
    let path = dir.join(name);
    fs::write(&path, contents).with_context(|| format!("writing {}", path.display()))
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    match &cli.command {
        Command::Train(args) => cmd_train(args),
        Command::Oracle(args) => cmd_oracle(args),
        Command::Compare(args) => cmd_compare(args),
    }
}
