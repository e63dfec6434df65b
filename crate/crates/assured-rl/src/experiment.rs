//! Multi-trial training experiments with seeded, reproducible output.
//!
//! An experiment trains `trials` independent agents on one maze and
//! writes three files to the output directory:
//!
//! - `trials.csv` — per-episode records for every trial
//!   (`trial,episode,length,return,violation,cum_violations,skipped`),
//! - `aggregate.csv` — per-episode mean and standard error of episode
//!   length and cumulative violations across trials
//!   (`episode,mean_length,sem_length,mean_cum_violations,sem_cum_violations`),
//! - `manifest.txt` — the resolved configuration, plus the final
//!   barrier table of the first trial as `barrier_trial0.txt`.
//!
//! Everything is a pure function of the configuration and master seed:
//! trial `i` derives its own generator seed by hashing
//! `(master_seed, i)`, so runs are reproducible byte-for-byte and
//! adding trials never perturbs existing ones. Trials run in parallel
//! and are reduced in index order.

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::gridworld::{GridEnv, MazeParseError, MazeSpec, RestartMode};
use crate::learners::{train, Algorithm, ConfigError, EpisodeStats, LearnerConfig, TrainLog};

/// Fully resolved experiment description.
#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub maze_path: PathBuf,
    pub algorithm: Algorithm,
    pub trials: usize,
    pub episodes: usize,
    pub gamma: f64,
    pub epsilon: f64,
    pub eta: f64,
    pub step_cap: usize,
    pub restart_mode: RestartMode,
    pub master_seed: u64,
    pub out_dir: PathBuf,
}

impl Default for ExperimentConfig {
    /// Canonical hyperparameters: gamma 0.9, epsilon 0.1, eta 0.1,
    /// 100-step cap, preceding-state restarts.
    fn default() -> Self {
        ExperimentConfig {
            maze_path: PathBuf::new(),
            algorithm: Algorithm::AssuredQ,
            trials: 1,
            episodes: 2000,
            gamma: 0.9,
            epsilon: 0.1,
            eta: 0.1,
            step_cap: 100,
            restart_mode: RestartMode::PrecedingState,
            master_seed: 0,
            out_dir: PathBuf::from("out"),
        }
    }
}

impl ExperimentConfig {
    pub fn learner_config(&self) -> LearnerConfig {
        LearnerConfig {
            algorithm: self.algorithm,
            gamma: self.gamma,
            epsilon: self.epsilon,
            eta: self.eta,
            episodes: self.episodes,
            step_cap: self.step_cap,
        }
    }

    pub fn validate(&self) -> Result<(), ExperimentError> {
        if self.trials == 0 {
            return Err(ExperimentError::NoTrials);
        }
        if self.maze_path.as_os_str().is_empty() {
            return Err(ExperimentError::MissingMaze);
        }
        self.learner_config().validate()?;
        Ok(())
    }

    /// Echo of the resolved configuration in the config-file syntax.
    pub fn manifest(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!("version = {}\n", env!("CARGO_PKG_VERSION")));
        out.push_str(&format!("maze = {}\n", self.maze_path.display()));
        out.push_str(&format!("algorithm = {}\n", self.algorithm));
        out.push_str(&format!("trials = {}\n", self.trials));
        out.push_str(&format!("episodes = {}\n", self.episodes));
        out.push_str(&format!("gamma = {}\n", self.gamma));
        out.push_str(&format!("epsilon = {}\n", self.epsilon));
        out.push_str(&format!("eta = {}\n", self.eta));
        out.push_str(&format!("step_cap = {}\n", self.step_cap));
        out.push_str(&format!("restart_mode = {}\n", restart_mode_name(self.restart_mode)));
        out.push_str(&format!("seed = {}\n", self.master_seed));
        out.push_str(
            "# episode length counts steps actually taken; bump-terminated episodes\n\
             # record their length at the bump, not the step cap.\n",
        );
        out
    }
}

fn restart_mode_name(mode: RestartMode) -> &'static str {
    match mode {
        RestartMode::PrecedingState => "preceding-state",
        RestartMode::FixedStart => "fixed-start",
    }
}

fn parse_restart_mode(s: &str) -> Option<RestartMode> {
    match s {
        "preceding-state" => Some(RestartMode::PrecedingState),
        "fixed-start" => Some(RestartMode::FixedStart),
        _ => None,
    }
}

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("config line {line}: {reason}")]
    BadConfig { line: usize, reason: String },
    #[error("config is missing the required `maze` key")]
    MissingMaze,
    #[error("trials must be at least 1")]
    NoTrials,
    #[error(transparent)]
    Learner(#[from] ConfigError),
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("maze {path}: {source}")]
    Maze {
        path: PathBuf,
        #[source]
        source: MazeParseError,
    },
    #[error("trial logs have mismatched episode counts: {0} vs {1}")]
    MismatchedLogs(usize, usize),
    #[error("no trial logs to aggregate")]
    EmptyAggregate,
}

/// Parses the flat `key = value` config syntax (`#` starts a comment).
///
/// Recognized keys: `maze`, `algorithm`, `trials`, `episodes`, `gamma`,
/// `epsilon`, `eta`, `step_cap`, `restart_mode`, `seed`, `out_dir`.
/// Missing keys keep their defaults; `maze` is required.
pub fn parse_config(text: &str) -> Result<ExperimentConfig, ExperimentError> {
    let mut config = ExperimentConfig::default();
    let mut saw_maze = false;

    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let bad = |reason: &str| ExperimentError::BadConfig {
            line: lineno + 1,
            reason: reason.to_string(),
        };
        let (key, value) = line.split_once('=').ok_or_else(|| bad("expected `key = value`"))?;
        let key = key.trim();
        let value = value.trim();
        match key {
            "maze" => {
                config.maze_path = PathBuf::from(value);
                saw_maze = true;
            }
            "algorithm" => {
                config.algorithm = value.parse().map_err(|e: ConfigError| bad(&e.to_string()))?;
            }
            "trials" => config.trials = value.parse().map_err(|_| bad("expected an integer"))?,
            "episodes" => config.episodes = value.parse().map_err(|_| bad("expected an integer"))?,
            "gamma" => config.gamma = value.parse().map_err(|_| bad("expected a number"))?,
            "epsilon" => config.epsilon = value.parse().map_err(|_| bad("expected a number"))?,
            "eta" => config.eta = value.parse().map_err(|_| bad("expected a number"))?,
            "step_cap" => config.step_cap = value.parse().map_err(|_| bad("expected an integer"))?,
            "restart_mode" => {
                config.restart_mode = parse_restart_mode(value)
                    .ok_or_else(|| bad("expected preceding-state or fixed-start"))?;
            }
            "seed" => config.master_seed = value.parse().map_err(|_| bad("expected an integer"))?,
            "out_dir" => config.out_dir = PathBuf::from(value),
            other => return Err(bad(&format!("unknown key `{other}`"))),
        }
    }

    if !saw_maze {
        return Err(ExperimentError::MissingMaze);
    }
    Ok(config)
}

pub fn load_config(path: &Path) -> Result<ExperimentConfig, ExperimentError> {
    let text = fs::read_to_string(path).map_err(|source| ExperimentError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_config(&text)
}

fn splitmix64(mut state: u64) -> u64 {
    state = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = state;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed for trial `i`: `splitmix64(master ^ ((i + 1) * GOLDEN_GAMMA))`.
/// Depends only on `(master_seed, i)`, so extending a run with more
/// trials never changes earlier ones.
pub fn trial_seed(master_seed: u64, trial: u64) -> u64 {
    splitmix64(master_seed ^ (trial + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15))
}

/// Per-episode aggregate statistics across trials. Skipped episodes
/// contribute no length sample but still advance the episode index, so
/// curves stay aligned; bands are the sample deviation over `sqrt(N)`.
#[derive(Clone, Debug, PartialEq)]
pub struct AggregateCurve {
    pub mean_length: Vec<f64>,
    pub sem_length: Vec<f64>,
    pub mean_cum_violations: Vec<f64>,
    pub sem_cum_violations: Vec<f64>,
}

impl AggregateCurve {
    pub fn episodes(&self) -> usize {
        self.mean_length.len()
    }

    pub fn to_csv(&self) -> String {
        let mut out =
            String::from("episode,mean_length,sem_length,mean_cum_violations,sem_cum_violations\n");
        for e in 0..self.episodes() {
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                e,
                fmt_stat(self.mean_length[e]),
                fmt_stat(self.sem_length[e]),
                fmt_stat(self.mean_cum_violations[e]),
                fmt_stat(self.sem_cum_violations[e]),
            ));
        }
        out
    }
}

fn fmt_stat(v: f64) -> String {
    if v.is_nan() {
        "nan".to_string()
    } else {
        format!("{v}")
    }
}

fn mean_and_sem(samples: &[f64]) -> (f64, f64) {
    let n = samples.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = samples.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return (mean, 0.0);
    }
    let var = samples.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    (mean, var.sqrt() / (n as f64).sqrt())
}

/// Reduces per-trial logs to mean and standard-error curves. All logs
/// must record the same number of episodes.
pub fn aggregate(logs: &[TrainLog]) -> Result<AggregateCurve, ExperimentError> {
    let episodes = match logs.first() {
        Some(log) => log.episodes.len(),
        None => return Err(ExperimentError::EmptyAggregate),
    };
    for log in logs {
        if log.episodes.len() != episodes {
            return Err(ExperimentError::MismatchedLogs(episodes, log.episodes.len()));
        }
    }

    // Running per-trial cumulative violation counts.
    let mut cum = vec![0.0_f64; logs.len()];
    let mut mean_length = Vec::with_capacity(episodes);
    let mut sem_length = Vec::with_capacity(episodes);
    let mut mean_cum = Vec::with_capacity(episodes);
    let mut sem_cum = Vec::with_capacity(episodes);

    for e in 0..episodes {
        let lengths: Vec<f64> = logs
            .iter()
            .filter(|log| !log.episodes[e].skipped)
            .map(|log| log.episodes[e].length as f64)
            .collect();
        let (m, sem) = mean_and_sem(&lengths);
        mean_length.push(m);
        sem_length.push(sem);

        for (t, log) in logs.iter().enumerate() {
            cum[t] += log.episodes[e].violations as f64;
        }
        let (m, sem) = mean_and_sem(&cum);
        mean_cum.push(m);
        sem_cum.push(sem);
    }

    Ok(AggregateCurve { mean_length, sem_length, mean_cum_violations: mean_cum, sem_cum_violations: sem_cum })
}

/// In-memory result of an experiment.
pub struct ExperimentOutput {
    pub logs: Vec<TrainLog>,
    pub curve: AggregateCurve,
}

/// Trains the configured trials without touching the filesystem.
pub fn run_trials(
    config: &ExperimentConfig,
    spec: &MazeSpec,
) -> Result<ExperimentOutput, ExperimentError> {
    config.validate()?;
    let learner_config = config.learner_config();
    let logs: Vec<TrainLog> = (0..config.trials)
        .into_par_iter()
        .map(|trial| {
            let mut rng =
                ChaCha8Rng::seed_from_u64(trial_seed(config.master_seed, trial as u64));
            let mut env = GridEnv::new(spec.clone(), config.restart_mode, config.step_cap);
            train(&mut env, &learner_config, &mut rng)
                .expect("config validated before dispatch")
        })
        .collect();
    let curve = aggregate(&logs)?;
    Ok(ExperimentOutput { logs, curve })
}

fn per_trial_csv(logs: &[TrainLog]) -> String {
    let mut out = String::from("trial,episode,length,return,violation,cum_violations,skipped\n");
    for (t, log) in logs.iter().enumerate() {
        let mut cum = 0usize;
        for (e, stats) in log.episodes.iter().enumerate() {
            cum += stats.violations;
            out.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                t,
                e,
                stats.length,
                stats.discounted_return,
                stats.violations,
                cum,
                u8::from(stats.skipped),
            ));
        }
    }
    out
}

fn write_file(dir: &Path, name: &str, contents: &str) -> Result<(), ExperimentError> {
    let path = dir.join(name);
    let io_err = |source| ExperimentError::Io { path: path.clone(), source };
    let mut file = fs::File::create(&path).map_err(io_err)?;
    file.write_all(contents.as_bytes())
        .map_err(|source| ExperimentError::Io { path: path.clone(), source })
}

/// Loads the maze, trains every trial, and writes the output files.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentOutput, ExperimentError> {
    config.validate()?;
    let maze_text =
        fs::read_to_string(&config.maze_path).map_err(|source| ExperimentError::Io {
            path: config.maze_path.clone(),
            source,
        })?;
    let spec = MazeSpec::parse(&maze_text).map_err(|source| ExperimentError::Maze {
        path: config.maze_path.clone(),
        source,
    })?;

    let output = run_trials(config, &spec)?;

    fs::create_dir_all(&config.out_dir).map_err(|source| ExperimentError::Io {
        path: config.out_dir.clone(),
        source,
    })?;
    write_file(&config.out_dir, "manifest.txt", &config.manifest())?;
    write_file(&config.out_dir, "trials.csv", &per_trial_csv(&output.logs))?;
    write_file(&config.out_dir, "aggregate.csv", &output.curve.to_csv())?;
    if let Some(first) = output.logs.first() {
        write_file(&config.out_dir, "barrier_trial0.txt", &first.barrier.to_text_matrix())?;
    }
    Ok(output)
}

/// Result of a paired assured-versus-baseline run.
pub struct CompareOutput {
    pub assured: ExperimentOutput,
    pub baseline: ExperimentOutput,
}

/// Runs assured Q-learning and baseline Q-learning with the same master
/// seed (trial `i` of each arm uses the same derived seed) and writes a
/// joint `compare.csv` with both violation and length curves next to
/// the two per-arm output directories.
pub fn run_compare(config: &ExperimentConfig) -> Result<CompareOutput, ExperimentError> {
    let mut assured_config = config.clone();
    assured_config.algorithm = Algorithm::AssuredQ;
    assured_config.out_dir = config.out_dir.join("assured-q");
    let mut baseline_config = config.clone();
    baseline_config.algorithm = Algorithm::BaselineQ;
    baseline_config.out_dir = config.out_dir.join("baseline-q");

    let assured = run_experiment(&assured_config)?;
    let baseline = run_experiment(&baseline_config)?;

    let mut csv = String::from(
        "episode,assured_mean_cum_violations,assured_sem_cum_violations,\
         baseline_mean_cum_violations,baseline_sem_cum_violations,\
         assured_mean_length,baseline_mean_length\n",
    );
    for e in 0..assured.curve.episodes() {
        csv.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            e,
            fmt_stat(assured.curve.mean_cum_violations[e]),
            fmt_stat(assured.curve.sem_cum_violations[e]),
            fmt_stat(baseline.curve.mean_cum_violations[e]),
            fmt_stat(baseline.curve.sem_cum_violations[e]),
            fmt_stat(assured.curve.mean_length[e]),
            fmt_stat(baseline.curve.mean_length[e]),
        ));
    }
    fs::create_dir_all(&config.out_dir).map_err(|source| ExperimentError::Io {
        path: config.out_dir.clone(),
        source,
    })?;
    write_file(&config.out_dir, "compare.csv", &csv)?;
    Ok(CompareOutput { assured, baseline })
}

/// Convenience view of one trial's episode records as plain numbers.
pub fn cumulative_violations(stats: &[EpisodeStats]) -> Vec<usize> {
    let mut cum = 0;
    stats
        .iter()
        .map(|s| {
            cum += s.violations;
            cum
        })
        .collect()
}
