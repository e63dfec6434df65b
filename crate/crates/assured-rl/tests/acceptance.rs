//! Acceptance suite: one test per criterion, each printing a PASS/FAIL
//! line (run with `cargo test --test acceptance -- --nocapture` to see
//! them).
//!
//! The training-based criteria share one experiment: the bundled
//! corridor-with-detour maze, gamma 0.9, epsilon 0.1, eta 0.1, 100-step
//! cap, preceding-state restarts, 100 trials of 2000 episodes for both
//! the assured and the baseline agent.
//!
//! Episode-length parity (criterion 3) is judged on the *total episode
//! length*: the number of steps the agent needs to reach the goal from
//! a start-rule origin, chaining the short resumed episodes that follow
//! a wall bump and charging the full step cap to abandoned attempts.
//! That is the quantity the learning curves plot; raw per-episode means
//! are also printed for reference (they diverge because the baseline's
//! bump-truncated episodes are short by construction).

use std::sync::OnceLock;
use std::time::{Duration, Instant};

use assured_rl::barrier::BarrierTable;
use assured_rl::cmdp::{ActionId, StateId};
use assured_rl::experiment::{run_experiment, run_trials, ExperimentConfig, ExperimentOutput};
use assured_rl::extreal::ExtReal;
use assured_rl::gridworld::{Action, GridEnv, MazeSpec, RestartMode, StartRule};
use assured_rl::learners::{
    assured_q_update, select_action, train, Algorithm, EpisodeStats, LearnerConfig, QTable,
};
use assured_rl::oracle;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const MASTER_SEED: u64 = 12345;
const TRIALS: usize = 100;
const EPISODES: usize = 2000;
const STEP_CAP: usize = 100;

struct SharedRuns {
    spec: MazeSpec,
    assured: ExperimentOutput,
    baseline: ExperimentOutput,
    elapsed: Duration,
}

fn shared_runs() -> &'static SharedRuns {
    static RUNS: OnceLock<SharedRuns> = OnceLock::new();
    RUNS.get_or_init(|| {
        let spec = MazeSpec::corridor_detour();
        let mut config = ExperimentConfig {
            maze_path: "mazes/corridor_detour.txt".into(),
            trials: TRIALS,
            episodes: EPISODES,
            step_cap: STEP_CAP,
            restart_mode: RestartMode::PrecedingState,
            master_seed: MASTER_SEED,
            ..ExperimentConfig::default()
        };
        let start = Instant::now();
        config.algorithm = Algorithm::AssuredQ;
        let assured = run_trials(&config, &spec).expect("assured runs");
        config.algorithm = Algorithm::BaselineQ;
        let baseline = run_trials(&config, &spec).expect("baseline runs");
        let elapsed = start.elapsed();
        SharedRuns { spec, assured, baseline, elapsed }
    })
}

fn report(name: &str, pass: bool, detail: &str) {
    println!("acceptance {name}: {} ({detail})", if pass { "PASS" } else { "FAIL" });
    assert!(pass, "{name}: {detail}");
}

/// Violations per trial over the final quarter of episodes.
fn final_quarter_violations(output: &ExperimentOutput) -> Vec<usize> {
    output
        .logs
        .iter()
        .map(|log| {
            let cut = log.episodes.len() * 3 / 4;
            log.episodes[cut..].iter().map(|e| e.violations).sum()
        })
        .collect()
}

/// Criterion: over the final 25% of episodes the assured agent stops
/// violating (zero new violations in at least 95% of trials) while the
/// baseline keeps bumping (at least one new violation in at least 95%
/// of trials), within a minute of runtime.
#[test]
fn criterion_01_violation_plateau() {
    let runs = shared_runs();
    let assured_zero = final_quarter_violations(&runs.assured)
        .iter()
        .filter(|&&v| v == 0)
        .count();
    let baseline_some = final_quarter_violations(&runs.baseline)
        .iter()
        .filter(|&&v| v >= 1)
        .count();
    let within_budget = runs.elapsed < Duration::from_secs(60);
    let detail = format!(
        "assured zero-new-violation trials {assured_zero}/{TRIALS}, \
         baseline with new violations {baseline_some}/{TRIALS}, runtime {:.2?}",
        runs.elapsed
    );
    report(
        "01 violation_plateau",
        assured_zero * 100 >= TRIALS * 95 && baseline_some * 100 >= TRIALS * 95 && within_budget,
        &detail,
    );
}

/// Independent one-pass enumeration of wall-bumping pairs: live
/// non-goal cells whose move target is a wall or off the grid.
fn bump_pair_count(spec: &MazeSpec) -> usize {
    spec.startable_states()
        .iter()
        .map(|&s| {
            let (x, y) = spec.coords_of(s).expect("startable states are live cells");
            Action::ALL
                .iter()
                .filter(|action| {
                    let (dx, dy) = action.delta();
                    let nx = x as isize + dx;
                    let ny = y as isize + dy;
                    nx < 0 || ny < 0 || spec.state_at(nx as usize, ny as usize).is_none()
                })
                .count()
        })
        .sum()
}

/// Criterion: in a deterministic maze every assured trial's total
/// violation count is bounded by the number of bump-capable pairs
/// (each pair is pruned after its first bump). Exact inequality.
#[test]
fn criterion_02_violation_hard_bound() {
    let runs = shared_runs();
    let bound = bump_pair_count(&runs.spec);
    let totals: Vec<usize> = runs
        .assured
        .logs
        .iter()
        .map(|log| log.episodes.iter().map(|e| e.violations).sum())
        .collect();
    let worst = *totals.iter().max().expect("at least one trial");
    report(
        "02 violation_hard_bound",
        totals.iter().all(|&t| t <= bound),
        &format!("max total violations {worst} <= {bound} bump-capable pairs"),
    );
}

/// Breadth-first shortest start-to-goal distance, an oracle independent
/// of the learners and the value iteration.
fn shortest_path_len(spec: &MazeSpec) -> usize {
    let mut dist = vec![usize::MAX; spec.n_states()];
    let mut queue = std::collections::VecDeque::new();
    dist[spec.start_state().index()] = 0;
    queue.push_back(spec.start_state());
    while let Some(s) = queue.pop_front() {
        if s == spec.goal_state() {
            return dist[s.index()];
        }
        let (x, y) = spec.coords_of(s).expect("live cell");
        for action in Action::ALL {
            let (dx, dy) = action.delta();
            let nx = x as isize + dx;
            let ny = y as isize + dy;
            if nx < 0 || ny < 0 {
                continue;
            }
            if let Some(next) = spec.state_at(nx as usize, ny as usize) {
                if dist[next.index()] == usize::MAX {
                    dist[next.index()] = dist[s.index()] + 1;
                    queue.push_back(next);
                }
            }
        }
    }
    panic!("goal unreachable");
}

/// Total episode lengths over a window of episode records: steps from a
/// start-rule origin until the goal, chaining bump-resumed episodes and
/// charging the cap to abandoned attempts. A journey already in flight
/// at the window boundary is discarded.
fn journey_lengths(window: &[EpisodeStats], in_flight: bool, cap: usize) -> Vec<usize> {
    let mut out = Vec::new();
    let mut acc = 0usize;
    let mut discard_first = in_flight;
    let mut push = |value: usize, discard: &mut bool| {
        if *discard {
            *discard = false;
        } else {
            out.push(value);
        }
    };
    for e in window {
        if e.skipped {
            continue;
        }
        acc += e.length;
        if e.discounted_return > 0.0 {
            push(acc.min(cap), &mut discard_first);
            acc = 0;
        } else if e.violations > 0 {
            if acc >= cap {
                push(cap, &mut discard_first);
                acc = 0;
            }
        } else {
            push(cap, &mut discard_first);
            acc = 0;
        }
    }
    out
}

fn final_window_journeys(output: &ExperimentOutput) -> Vec<usize> {
    let mut all = Vec::new();
    for log in &output.logs {
        let cut = log.episodes.len() * 9 / 10;
        let in_flight = log.episodes[..cut]
            .last()
            .map(|e| e.violations > 0)
            .unwrap_or(false);
        all.extend(journey_lengths(&log.episodes[cut..], in_flight, STEP_CAP));
    }
    all
}

fn mean(samples: &[usize]) -> f64 {
    samples.iter().sum::<usize>() as f64 / samples.len() as f64
}

fn median(samples: &mut [usize]) -> usize {
    samples.sort_unstable();
    samples[samples.len() / 2]
}

/// Criterion: over the final 10% of training both agents take equally
/// long to reach the goal — mean total episode length within 10% and
/// median within one step of the shortest corridor path.
#[test]
fn criterion_03_learning_parity() {
    let runs = shared_runs();
    let mut assured = final_window_journeys(&runs.assured);
    let mut baseline = final_window_journeys(&runs.baseline);
    let (ma, mb) = (mean(&assured), mean(&baseline));
    let rel = (ma - mb).abs() / ma.max(mb);
    let (med_a, med_b) = (median(&mut assured), median(&mut baseline));
    let shortest = shortest_path_len(&runs.spec);

    // Reference: raw per-episode means diverge because baseline
    // bump-truncated episodes are short; the goal-to-goal accounting
    // above is what the learning curves compare.
    let raw = |output: &ExperimentOutput| {
        let window = &output.curve.mean_length[EPISODES * 9 / 10..];
        window.iter().sum::<f64>() / window.len() as f64
    };
    println!(
        "  (raw per-episode means: assured {:.3}, baseline {:.3})",
        raw(&runs.assured),
        raw(&runs.baseline)
    );

    let detail = format!(
        "mean total episode length {ma:.3} vs {mb:.3} (rel diff {:.3}), \
         medians {med_a}/{med_b} vs shortest path {shortest}",
        rel
    );
    report(
        "03 learning_parity",
        rel <= 0.10
            && (shortest..=shortest + 1).contains(&med_a)
            && (shortest..=shortest + 1).contains(&med_b),
        &detail,
    );
}

fn random_maze_text<R: Rng + ?Sized>(w: usize, h: usize, rng: &mut R) -> Option<String> {
    let mut cells: Vec<Vec<char>> = (0..h)
        .map(|_| (0..w).map(|_| if rng.gen::<f64>() < 0.3 { '#' } else { '.' }).collect())
        .collect();
    let free: Vec<(usize, usize)> = (0..h)
        .flat_map(|y| (0..w).map(move |x| (x, y)))
        .filter(|&(x, y)| cells[y][x] == '.')
        .collect();
    if free.len() < 2 {
        return None;
    }
    let si = rng.gen_range(0..free.len());
    let gi = loop {
        let i = rng.gen_range(0..free.len());
        if i != si {
            break i;
        }
    };
    cells[free[si].1][free[si].0] = 'S';
    cells[free[gi].1][free[gi].0] = 'G';
    Some(
        cells
            .into_iter()
            .map(|row| row.into_iter().collect::<String>())
            .collect::<Vec<_>>()
            .join("\n"),
    )
}

/// Criterion: with exploring starts on twenty random 6x6 mazes the
/// learned barrier table equals the exact safety kernel entry for
/// entry after enough episodes.
#[test]
fn criterion_04_barrier_completeness() {
    let start = Instant::now();
    let mut master = ChaCha8Rng::seed_from_u64(777);
    let mut mismatches = 0usize;
    for maze_idx in 0..20u64 {
        let spec = loop {
            if let Some(text) = random_maze_text(6, 6, &mut master) {
                if let Ok(spec) = MazeSpec::parse(&text) {
                    break spec;
                }
            }
        };
        let model = spec.to_cmdp();
        let kernel = oracle::safety_kernel(&model).expect("export validates");

        let mut env = GridEnv::new(spec.clone(), RestartMode::FixedStart, STEP_CAP)
            .with_start_rule(StartRule::UniformFree);
        let config = LearnerConfig {
            algorithm: Algorithm::AssuredQ,
            gamma: 0.9,
            epsilon: 0.2,
            eta: 0.1,
            episodes: 6000,
            step_cap: STEP_CAP,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + maze_idx);
        let log = train(&mut env, &config, &mut rng).expect("valid config");

        for s in (0..model.n_states()).map(StateId) {
            for a in (0..model.n_actions()).map(ActionId) {
                if log.barrier.is_condemned(s, a) != kernel.is_unsafe(s, a) {
                    mismatches += 1;
                }
            }
        }
    }
    let elapsed = start.elapsed();
    report(
        "04 barrier_completeness",
        mismatches == 0 && elapsed < Duration::from_secs(120),
        &format!("{mismatches} mismatched entries across 20 mazes, runtime {elapsed:.2?}"),
    );
}

fn random_model_suite(seed: u64, models: usize) -> Vec<(assured_rl::TabularCmdp, Vec<assured_rl::Policy>)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..models)
        .map(|_| {
            let n_live = rng.gen_range(2..=5);
            let n_actions = rng.gen_range(2..=3);
            let model = oracle::random_cmdp(n_live, n_actions, 0.3, &mut rng);
            let policies = (0..10)
                .map(|_| oracle::random_policy(model.n_states(), model.n_actions(), &mut rng))
                .collect();
            (model, policies)
        })
        .collect()
}

/// Criterion: the zero set of the damage probability and the zero set
/// of the evaluated barrier coincide exactly, over 50 random models
/// with 10 random policies each.
#[test]
fn criterion_05_duality() {
    let mut checked = 0usize;
    let mut mismatches = 0usize;
    for (model, policies) in random_model_suite(0xD0A1, 50) {
        for policy in &policies {
            let qd = oracle::qd_policy_eval(&model, policy, oracle::DEFAULT_TOL).expect("converges");
            let barrier = oracle::b_policy_eval(&model, policy, oracle::DEFAULT_TOL).expect("converges");
            for s in model.states() {
                for a in model.actions() {
                    checked += 1;
                    let qd_zero = qd.get(s, a) <= oracle::DEFAULT_TOL;
                    let b_zero = !barrier.is_condemned(s, a);
                    if qd_zero != b_zero {
                        mismatches += 1;
                    }
                }
            }
        }
    }
    report(
        "05 duality",
        mismatches == 0,
        &format!("{mismatches} mismatches over {checked} (model, policy, pair) checks"),
    );
}

/// Criterion: every converged damage-probability table satisfies its
/// Bellman recursion with sup-norm residual below 1e-8.
#[test]
fn criterion_06_bellman_residual() {
    let mut worst: f64 = 0.0;
    for (model, policies) in random_model_suite(0xBE11, 50) {
        for policy in &policies {
            let qd = oracle::qd_policy_eval(&model, policy, oracle::DEFAULT_TOL).expect("converges");
            worst = worst.max(oracle::qd_bellman_residual(&model, policy, &qd));
        }
    }
    report(
        "06 bellman_residual",
        worst < 1e-8,
        &format!("max residual {worst:.3e} over 500 evaluations"),
    );
}

/// Criterion: the Monte-Carlo estimate of the violation probability
/// agrees with the dynamic-programming value within three standard
/// errors in at least 19 of 20 random cases (100k trajectories each).
#[test]
fn criterion_07_monte_carlo_agreement() {
    let mut rng = ChaCha8Rng::seed_from_u64(20_000);
    let mut agree = 0usize;
    let mut worst_gap = 0.0_f64;
    for _ in 0..20 {
        let n_live = rng.gen_range(2..=5);
        let n_actions = rng.gen_range(2..=3);
        let model = oracle::random_cmdp(n_live, n_actions, 0.3, &mut rng);
        let policy = oracle::random_policy(model.n_states(), model.n_actions(), &mut rng);
        let s = StateId(rng.gen_range(0..n_live));
        let a = ActionId(rng.gen_range(0..n_actions));
        let qd = oracle::qd_policy_eval(&model, &policy, oracle::DEFAULT_TOL).expect("converges");
        let mc = oracle::monte_carlo_qd(&model, &policy, s, a, 100_000, &mut rng).expect("runs");
        let gap = (mc.estimate - qd.get(s, a)).abs();
        if gap <= 3.0 * mc.stderr {
            agree += 1;
        } else {
            worst_gap = worst_gap.max(gap);
        }
    }
    report(
        "07 monte_carlo_agreement",
        agree >= 19,
        &format!("{agree}/20 within 3 stderr (worst excess gap {worst_gap:.3e})"),
    );
}

/// Criterion: with the barrier frozen at zero and no pruning, the
/// assured update rule run over 500 episodes reproduces a textbook
/// epsilon-greedy Q-learner bit for bit on the same seed.
#[test]
fn criterion_08_reduction_sanity() {
    let spec = MazeSpec::corridor_detour();
    let (gamma, epsilon, eta) = (0.9, 0.1, 0.1);
    let episodes = 500;
    let seed = 99;

    // Assured machinery with the barrier disabled: frozen all-zero
    // table, selection over the full action set, no pruning.
    let mut env = GridEnv::new(spec.clone(), RestartMode::PrecedingState, STEP_CAP);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n_states = env.n_states();
    let n_actions = env.n_actions();
    let mut q = QTable::zeros(n_states, n_actions);
    let frozen_barrier = BarrierTable::new(n_states, n_actions);
    let all: Vec<ActionId> = (0..n_actions).map(ActionId).collect();
    for _ in 0..episodes {
        let mut s = env.reset(&mut rng);
        loop {
            let a = select_action(&q, s, &all, epsilon, &mut rng).expect("full set");
            let out = env.step(a).expect("episode active");
            assured_q_update(&mut q, &frozen_barrier, s, a, out.reward, out.next, eta, gamma);
            if out.done {
                break;
            }
            s = out.next;
        }
    }

    // Independent textbook mirror on plain f64, same seed and same
    // per-step randomness contract (one branch draw; a uniform index
    // when exploring; a tie draw only when several maxima tie).
    let mut env = GridEnv::new(spec, RestartMode::PrecedingState, STEP_CAP);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut table = vec![0.0_f64; n_states * n_actions];
    let textbook_select = |table: &[f64], s: StateId, rng: &mut ChaCha8Rng| -> ActionId {
        if rng.gen::<f64>() < epsilon {
            return ActionId(rng.gen_range(0..n_actions));
        }
        let row = &table[s.index() * n_actions..(s.index() + 1) * n_actions];
        let best = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let ties: Vec<usize> = (0..n_actions).filter(|&a| row[a] == best).collect();
        if ties.len() == 1 {
            ActionId(ties[0])
        } else {
            ActionId(ties[rng.gen_range(0..ties.len())])
        }
    };
    for _ in 0..episodes {
        let mut s = env.reset(&mut rng);
        loop {
            let a = textbook_select(&table, s, &mut rng);
            let out = env.step(a).expect("episode active");
            let base = out.next.index() * n_actions;
            let max_next =
                table[base..base + n_actions].iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let target = out.reward + gamma * max_next;
            let idx = s.index() * n_actions + a.index();
            table[idx] = (1.0 - eta) * table[idx] + eta * target;
            if out.done {
                break;
            }
            s = out.next;
        }
    }

    let mut mismatches = 0usize;
    for s in 0..n_states {
        for a in 0..n_actions {
            match q.get(StateId(s), ActionId(a)) {
                ExtReal::Finite(v) if v.to_bits() == table[s * n_actions + a].to_bits() => {}
                _ => mismatches += 1,
            }
        }
    }
    report(
        "08 reduction_sanity",
        mismatches == 0,
        &format!("{mismatches} bitwise mismatches over {} entries", n_states * n_actions),
    );
}

/// Criterion: after training, the assured learner's greedy policy
/// matches constrained value iteration on every state along the
/// optimal corridor trajectory, with action values within 0.05.
#[test]
fn criterion_09_constrained_optimality() {
    let runs = shared_runs();
    let model = runs.spec.to_cmdp();
    let kernel = oracle::safety_kernel(&model).expect("export validates");
    let plan = oracle::constrained_value_iteration(&model, &kernel, 0.9, 1e-12).expect("converges");
    let learned = &runs.assured.logs[0];

    let mut s = runs.spec.start_state();
    let mut states_checked = 0usize;
    let mut action_mismatches = 0usize;
    let mut worst_gap = 0.0_f64;
    loop {
        let vi_action = plan.greedy_action(&kernel, s).expect("feasible state");
        let learner_safe = learned.barrier.safe_actions(s);
        let learner_action = learned.q.greedy_among(s, &learner_safe).expect("non-empty safe set");
        states_checked += 1;
        if vi_action != learner_action {
            action_mismatches += 1;
        }
        let q_vi = plan.q.get(s, vi_action).as_finite().expect("safe pair is finite");
        let q_learned = match learned.q.get(s, vi_action) {
            ExtReal::Finite(v) => v,
            ExtReal::NegInf => f64::NEG_INFINITY,
        };
        worst_gap = worst_gap.max((q_vi - q_learned).abs());
        let next = model.outcomes(s, vi_action).expect("valid pair")[0].next;
        if next == runs.spec.goal_state() {
            break;
        }
        s = next;
    }
    report(
        "09 constrained_optimality",
        action_mismatches == 0 && worst_gap <= 0.05,
        &format!(
            "{states_checked} corridor states, {action_mismatches} action mismatches, \
             worst |dQ| {worst_gap:.4}"
        ),
    );
}

/// Criterion: rerunning the shared experiment with the same master seed
/// produces byte-identical aggregate CSV output.
#[test]
fn criterion_10_determinism() {
    let base = std::env::temp_dir().join(format!("assured-rl-acceptance-{}", std::process::id()));
    let _ = std::fs::remove_dir_all(&base);
    let mut identical = true;
    for algorithm in [Algorithm::AssuredQ, Algorithm::BaselineQ] {
        let mut bytes: Vec<Vec<u8>> = Vec::new();
        for pass in 0..2 {
            let out_dir = base.join(format!("{algorithm}-{pass}"));
            let config = ExperimentConfig {
                maze_path: maze_path(),
                algorithm,
                trials: TRIALS,
                episodes: EPISODES,
                step_cap: STEP_CAP,
                restart_mode: RestartMode::PrecedingState,
                master_seed: MASTER_SEED,
                out_dir: out_dir.clone(),
                ..ExperimentConfig::default()
            };
            run_experiment(&config).expect("experiment writes output");
            bytes.push(std::fs::read(out_dir.join("aggregate.csv")).expect("aggregate exists"));
        }
        identical &= bytes[0] == bytes[1];
    }
    let _ = std::fs::remove_dir_all(&base);
    report(
        "10 determinism",
        identical,
        "two full reruns per algorithm, aggregate.csv compared byte for byte",
    );
}

/// The bundled maze file, resolved relative to this crate.
fn maze_path() -> std::path::PathBuf {
    std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("../../mazes/corridor_detour.txt")
}
