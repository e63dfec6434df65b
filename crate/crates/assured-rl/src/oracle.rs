//! Exact model-based ground truth for the model-free learners.
//!
//! Given a validated [`TabularCmdp`] this module computes:
//!
//! - the safety kernel (which pairs admit an almost-surely safe policy),
//! - the probability `qd(s, a)` of ever taking a damaging transition
//!   under a fixed policy, via its Bellman recursion
//!   `qd(s, a) = E[d + qd(S', A')]`,
//! - the evaluated barrier of a policy (`0` exactly where `qd` vanishes),
//! - optimal action values restricted to the safety kernel, and
//! - an independent Monte-Carlo estimate of `qd` for cross-checking.
//!
//! It also generates random structurally valid models and policies for
//! tests.

use rand::Rng;
use thiserror::Error;

use crate::barrier::BarrierTable;
use crate::cmdp::{ActionId, ModelError, ModelViolations, Outcome, Policy, StateId, TabularCmdp};
use crate::extreal::ExtReal;
use crate::learners::QTable;

/// Default classification tolerance: `qd` values at or below this are
/// treated as exactly zero. The fixed-point iteration is monotone from
/// below, so any strictly positive probability crosses it.
pub const DEFAULT_TOL: f64 = 1e-9;

const MAX_SWEEPS: usize = 1_000_000;

/// Trajectories longer than this are abandoned as damage-free; with the
/// reachability early-exit below this only matters for near-degenerate
/// models where the remaining mass is far below Monte-Carlo resolution.
const MC_STEP_CAP: usize = 1_000_000;

#[derive(Debug, Error)]
pub enum SolverError {
    #[error("model failed validation: {0}")]
    InvalidModel(#[from] ModelViolations),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("policy shape {policy_states}x{policy_actions} does not match model {model_states}x{model_actions}")]
    ShapeMismatch {
        policy_states: usize,
        policy_actions: usize,
        model_states: usize,
        model_actions: usize,
    },
    #[error("kernel shape does not match model")]
    KernelMismatch,
    #[error("tolerance must be positive, got {0}")]
    BadTolerance(f64),
    #[error("discount must lie in [0, 1), got {0}")]
    BadDiscount(f64),
    #[error("sample count must be at least 1")]
    BadSampleCount,
    #[error("fixed-point iteration did not converge within {0} sweeps")]
    NoConvergence(usize),
}

fn check_policy(model: &TabularCmdp, policy: &Policy) -> Result<(), SolverError> {
    if policy.n_states() != model.n_states() || policy.n_actions() != model.n_actions() {
        return Err(SolverError::ShapeMismatch {
            policy_states: policy.n_states(),
            policy_actions: policy.n_actions(),
            model_states: model.n_states(),
            model_actions: model.n_actions(),
        });
    }
    Ok(())
}

/// The set of pairs from which no policy is almost-surely safe.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SafetyKernel {
    unsafe_pairs: Vec<bool>,
    n_states: usize,
    n_actions: usize,
}

impl SafetyKernel {
    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn is_unsafe(&self, s: StateId, a: ActionId) -> bool {
        self.unsafe_pairs[s.index() * self.n_actions + a.index()]
    }

    pub fn safe_actions(&self, s: StateId) -> Vec<ActionId> {
        (0..self.n_actions)
            .map(ActionId)
            .filter(|&a| !self.is_unsafe(s, a))
            .collect()
    }

    pub fn state_has_safe_action(&self, s: StateId) -> bool {
        !self.safe_actions(s).is_empty()
    }

    pub fn count_unsafe(&self) -> usize {
        self.unsafe_pairs.iter().filter(|&&u| u).count()
    }

    /// The optimal barrier this kernel encodes: `-inf` on unsafe pairs,
    /// `0` elsewhere.
    pub fn to_barrier_table(&self) -> BarrierTable {
        let mut table = BarrierTable::new(self.n_states, self.n_actions);
        for s in 0..self.n_states {
            for a in 0..self.n_actions {
                if self.is_unsafe(StateId(s), ActionId(a)) {
                    table.condemn(StateId(s), ActionId(a));
                }
            }
        }
        table
    }
}

/// Computes the safety kernel by propagating unavoidable damage to a
/// fixed point: a pair starts unsafe if some outcome damages, and
/// becomes unsafe if some positive-probability outcome lands in a state
/// whose every action is already unsafe. Positive probability is all
/// that matters; magnitudes are irrelevant to almost-sure safety.
pub fn safety_kernel(model: &TabularCmdp) -> Result<SafetyKernel, SolverError> {
    model.validate()?;
    let n_states = model.n_states();
    let n_actions = model.n_actions();
    let mut unsafe_pairs = vec![false; n_states * n_actions];

    for s in model.states() {
        for a in model.actions() {
            let damaging = model
                .outcomes(s, a)?
                .iter()
                .any(|o| o.prob > 0.0 && o.damage.is_damage());
            unsafe_pairs[s.index() * n_actions + a.index()] = damaging;
        }
    }

    loop {
        let mut changed = false;
        let state_lost: Vec<bool> = (0..n_states)
            .map(|s| (0..n_actions).all(|a| unsafe_pairs[s * n_actions + a]))
            .collect();
        for s in model.states() {
            for a in model.actions() {
                let idx = s.index() * n_actions + a.index();
                if unsafe_pairs[idx] {
                    continue;
                }
                let doomed = model
                    .outcomes(s, a)?
                    .iter()
                    .any(|o| o.prob > 0.0 && state_lost[o.next.index()]);
                if doomed {
                    unsafe_pairs[idx] = true;
                    changed = true;
                }
            }
        }
        if !changed {
            break;
        }
    }

    Ok(SafetyKernel { unsafe_pairs, n_states, n_actions })
}

/// Per-pair probability of ever violating a constraint under a policy.
#[derive(Clone, Debug, PartialEq)]
pub struct QdTable {
    qd: Vec<f64>,
    n_states: usize,
    n_actions: usize,
}

impl QdTable {
    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn get(&self, s: StateId, a: ActionId) -> f64 {
        self.qd[s.index() * self.n_actions + a.index()]
    }

    /// Text matrix, one row per state.
    pub fn to_text_matrix(&self) -> String {
        use std::fmt::Write as _;
        let mut out = String::new();
        for s in 0..self.n_states {
            for a in 0..self.n_actions {
                if a > 0 {
                    out.push(' ');
                }
                write!(out, "{}", self.qd[s * self.n_actions + a]).expect("string write");
            }
            out.push('\n');
        }
        out
    }
}

/// States from which the policy reaches a damaging outcome with
/// positive probability (backward fixed point on the support graph).
fn damage_reachable_states(model: &TabularCmdp, policy: &Policy) -> Vec<bool> {
    let mut reachable = vec![false; model.n_states()];
    loop {
        let mut changed = false;
        for state in model.states() {
            if reachable[state.index()] {
                continue;
            }
            let probs = policy.action_probs(state);
            let hot = model.actions().any(|action| {
                probs[action.index()] > 0.0
                    && model
                        .outcomes(state, action)
                        .expect("indices in range")
                        .iter()
                        .any(|o| o.prob > 0.0 && (o.damage.is_damage() || reachable[o.next.index()]))
            });
            if hot {
                reachable[state.index()] = true;
                changed = true;
            }
        }
        if !changed {
            return reachable;
        }
    }
}

/// States from which the policy avoids damage forever with positive
/// probability: those that can reach, along damage-free support edges,
/// a state where damage is unreachable altogether. Everywhere else
/// damage is almost sure (the process is trapped among states that
/// keep a uniformly positive damage probability).
fn avoid_possible_states(model: &TabularCmdp, policy: &Policy, damage_reachable: &[bool]) -> Vec<bool> {
    let mut avoid: Vec<bool> = damage_reachable.iter().map(|&r| !r).collect();
    loop {
        let mut changed = false;
        for state in model.states() {
            if avoid[state.index()] {
                continue;
            }
            let probs = policy.action_probs(state);
            let escapes = model.actions().any(|action| {
                probs[action.index()] > 0.0
                    && model
                        .outcomes(state, action)
                        .expect("indices in range")
                        .iter()
                        .any(|o| o.prob > 0.0 && !o.damage.is_damage() && avoid[o.next.index()])
            });
            if escapes {
                avoid[state.index()] = true;
                changed = true;
            }
        }
        if !changed {
            return avoid;
        }
    }
}

/// One application of the damage-probability Bellman operator.
fn apply_qd_operator(model: &TabularCmdp, policy: &Policy, qd: &[f64], out: &mut [f64]) {
    let n_actions = model.n_actions();
    let terminal = model.terminal_damage_state();
    // State values under the policy.
    let v: Vec<f64> = (0..model.n_states())
        .map(|s| {
            let probs = policy.action_probs(StateId(s));
            (0..n_actions).map(|a| probs[a] * qd[s * n_actions + a]).sum()
        })
        .collect();
    for s in model.states() {
        for a in model.actions() {
            let idx = s.index() * n_actions + a.index();
            if s == terminal {
                out[idx] = 0.0;
                continue;
            }
            out[idx] = model
                .outcomes(s, a)
                .expect("indices in range")
                .iter()
                .map(|o| o.prob * (o.damage.indicator() as f64 + v[o.next.index()]))
                .sum();
        }
    }
}

/// Evaluates `qd` for a policy by monotone fixed-point iteration from
/// zero. Iterating from below, `qd_k(s, a)` is the probability of
/// damage within `k` steps, so the sequence is non-decreasing, bounded
/// by one, and the final sup-norm Bellman residual is below `tol`
/// (the operator is non-expansive).
pub fn qd_policy_eval(
    model: &TabularCmdp,
    policy: &Policy,
    tol: f64,
) -> Result<QdTable, SolverError> {
    if tol <= 0.0 {
        return Err(SolverError::BadTolerance(tol));
    }
    model.validate()?;
    check_policy(model, policy)?;

    let len = model.n_states() * model.n_actions();
    let mut qd = vec![0.0; len];
    let mut next = vec![0.0; len];
    for _ in 0..MAX_SWEEPS {
        apply_qd_operator(model, policy, &qd, &mut next);
        let delta = qd
            .iter()
            .zip(&next)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        std::mem::swap(&mut qd, &mut next);
        if delta < tol {
            for v in &mut qd {
                *v = v.clamp(0.0, 1.0);
            }
            // Pin the certain entries exactly. Zeros are already exact
            // (the iteration never lifts a pair whose subtree is
            // damage-free); ones are identified structurally, since the
            // truncated iterate sits just below the fixed point.
            let reachable = damage_reachable_states(model, policy);
            let avoid = avoid_possible_states(model, policy, &reachable);
            let n_actions = model.n_actions();
            for s in model.states() {
                for a in model.actions() {
                    let certain = model
                        .outcomes(s, a)
                        .expect("indices in range")
                        .iter()
                        .all(|o| {
                            o.prob == 0.0 || o.damage.is_damage() || !avoid[o.next.index()]
                        });
                    if certain {
                        qd[s.index() * n_actions + a.index()] = 1.0;
                    }
                }
            }
            return Ok(QdTable { qd, n_states: model.n_states(), n_actions: model.n_actions() });
        }
    }
    Err(SolverError::NoConvergence(MAX_SWEEPS))
}

/// Sup-norm Bellman residual of a `qd` table (one operator application).
pub fn qd_bellman_residual(model: &TabularCmdp, policy: &Policy, qd: &QdTable) -> f64 {
    let mut image = vec![0.0; qd.qd.len()];
    apply_qd_operator(model, policy, &qd.qd, &mut image);
    qd.qd
        .iter()
        .zip(&image)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max)
}

/// Evaluated barrier of a policy: `0` where `qd(s, a) <= tol`, `-inf`
/// otherwise. Zero damage probability and a zero barrier are the same
/// statement, so this is a thresholding of [`qd_policy_eval`].
pub fn b_policy_eval(
    model: &TabularCmdp,
    policy: &Policy,
    tol: f64,
) -> Result<BarrierTable, SolverError> {
    let qd = qd_policy_eval(model, policy, tol)?;
    let mut table = BarrierTable::new(model.n_states(), model.n_actions());
    for s in model.states() {
        for a in model.actions() {
            if qd.get(s, a) > tol {
                table.condemn(s, a);
            }
        }
    }
    Ok(table)
}

/// Result of constrained value iteration.
#[derive(Clone, Debug)]
pub struct ConstrainedPlan {
    /// Optimal action values; unsafe pairs are pinned at `-inf`.
    pub q: QTable,
    /// States carrying start mass whose every action is unsafe: the
    /// constrained problem is infeasible from them and their value
    /// stays `-inf`.
    pub infeasible_starts: Vec<StateId>,
}

impl ConstrainedPlan {
    /// Deterministic greedy action among kernel-safe actions.
    pub fn greedy_action(&self, kernel: &SafetyKernel, s: StateId) -> Option<ActionId> {
        self.q.greedy_among(s, &kernel.safe_actions(s))
    }
}

/// Value iteration restricted to the safety kernel: maximization at
/// each state ranges over its safe actions only, and unsafe pairs keep
/// value `-inf`. Safe pairs never lead to states without a safe action
/// (that is what the kernel fixed point guarantees), so the recursion
/// is closed.
pub fn constrained_value_iteration(
    model: &TabularCmdp,
    kernel: &SafetyKernel,
    gamma: f64,
    tol: f64,
) -> Result<ConstrainedPlan, SolverError> {
    if !(0.0..1.0).contains(&gamma) {
        return Err(SolverError::BadDiscount(gamma));
    }
    if tol <= 0.0 {
        return Err(SolverError::BadTolerance(tol));
    }
    model.validate()?;
    if kernel.n_states() != model.n_states() || kernel.n_actions() != model.n_actions() {
        return Err(SolverError::KernelMismatch);
    }

    let n_states = model.n_states();
    let n_actions = model.n_actions();
    let mut q = vec![0.0; n_states * n_actions];
    let mut converged = false;

    for _ in 0..MAX_SWEEPS {
        let v: Vec<Option<f64>> = (0..n_states)
            .map(|s| {
                (0..n_actions)
                    .filter(|&a| !kernel.is_unsafe(StateId(s), ActionId(a)))
                    .map(|a| q[s * n_actions + a])
                    .fold(None, |acc: Option<f64>, x| Some(acc.map_or(x, |m| m.max(x))))
            })
            .collect();
        let mut delta = 0.0_f64;
        for s in model.states() {
            for a in model.actions() {
                if kernel.is_unsafe(s, a) {
                    continue;
                }
                let idx = s.index() * n_actions + a.index();
                let new: f64 = model
                    .outcomes(s, a)?
                    .iter()
                    .map(|o| {
                        let next_v = v[o.next.index()]
                            .expect("safe pairs only reach states with a safe action");
                        o.prob * (o.reward + gamma * next_v)
                    })
                    .sum();
                delta = delta.max((new - q[idx]).abs());
                q[idx] = new;
            }
        }
        if delta < tol {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(SolverError::NoConvergence(MAX_SWEEPS));
    }

    let mut table = QTable::zeros(n_states, n_actions);
    for s in model.states() {
        for a in model.actions() {
            let value = if kernel.is_unsafe(s, a) {
                ExtReal::NegInf
            } else {
                ExtReal::finite(q[s.index() * n_actions + a.index()])
            };
            table.set(s, a, value);
        }
    }
    let infeasible_starts = model
        .states()
        .filter(|&s| model.start_distribution()[s.index()] > 0.0 && !kernel.state_has_safe_action(s))
        .collect();
    Ok(ConstrainedPlan { q: table, infeasible_starts })
}

/// A Monte-Carlo estimate with its binomial standard error.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct McEstimate {
    pub estimate: f64,
    pub stderr: f64,
}

/// Estimates `qd(s, a)` as the fraction of simulated trajectories that
/// hit damage. A trajectory stops as soon as damage occurs or it enters
/// a state from which damage is unreachable under the policy's support
/// (so absorbing terminals exit immediately); a generous step cap
/// guards the remainder.
pub fn monte_carlo_qd<R: Rng + ?Sized>(
    model: &TabularCmdp,
    policy: &Policy,
    s: StateId,
    a: ActionId,
    n: usize,
    rng: &mut R,
) -> Result<McEstimate, SolverError> {
    if n == 0 {
        return Err(SolverError::BadSampleCount);
    }
    model.validate()?;
    check_policy(model, policy)?;
    model.outcomes(s, a)?;

    let reachable = damage_reachable_states(model, policy);

    let mut hits = 0usize;
    for _ in 0..n {
        let mut sample = model.sample(s, a, rng)?;
        let mut steps = 0usize;
        loop {
            if sample.damage.is_damage() {
                hits += 1;
                break;
            }
            let cur = sample.next;
            if !reachable[cur.index()] {
                break;
            }
            steps += 1;
            if steps >= MC_STEP_CAP {
                break;
            }
            let next_action = policy.sample_action(cur, rng);
            sample = model.sample(cur, next_action, rng)?;
        }
    }
    let estimate = hits as f64 / n as f64;
    let stderr = (estimate * (1.0 - estimate) / n as f64).sqrt();
    Ok(McEstimate { estimate, stderr })
}

/// Generates a random structurally valid model with `n_live` live
/// states plus the damage terminal. Roughly `damage_density` of the
/// live rows carry positive mass on a damaging outcome; live-to-live
/// outcomes get uniform rewards in `[-1, 1)`.
pub fn random_cmdp<R: Rng + ?Sized>(
    n_live: usize,
    n_actions: usize,
    damage_density: f64,
    rng: &mut R,
) -> TabularCmdp {
    assert!(n_live >= 1 && n_actions >= 1, "sizes must be at least 1");
    assert!((0.0..=1.0).contains(&damage_density), "density must lie in [0, 1]");

    let n_states = n_live + 1;
    let terminal = StateId(n_live);
    let mut start = vec![1.0 / n_live as f64; n_live];
    let head: f64 = start[..n_live - 1].iter().sum();
    start[n_live - 1] = 1.0 - head;
    start.push(0.0);

    let mut model =
        TabularCmdp::new(n_states, n_actions, terminal, start).expect("shape is valid");

    for s in 0..n_live {
        for a in 0..n_actions {
            let with_damage = rng.gen::<f64>() < damage_density;
            let k = rng.gen_range(1..=n_live.min(3));
            let successors = rand::seq::index::sample(rng, n_live, k);
            let mut weights: Vec<f64> = (0..k + usize::from(with_damage))
                .map(|_| rng.gen_range(0.1..1.0))
                .collect();
            let total: f64 = weights.iter().sum();
            for w in &mut weights {
                *w /= total;
            }
            // Pin the row sum to exactly one.
            let head: f64 = weights[..weights.len() - 1].iter().sum();
            *weights.last_mut().expect("at least one weight") = 1.0 - head;

            let mut outcomes = Vec::with_capacity(weights.len());
            for (i, next) in successors.iter().enumerate() {
                outcomes.push(Outcome {
                    prob: weights[i],
                    next: StateId(next),
                    reward: rng.gen_range(-1.0..1.0),
                    damage: crate::cmdp::Damage::Safe,
                });
            }
            if with_damage {
                outcomes.push(Outcome {
                    prob: weights[k],
                    next: terminal,
                    reward: 0.0,
                    damage: crate::cmdp::Damage::Damaged,
                });
            }
            model.set_outcomes(StateId(s), ActionId(a), outcomes).expect("in range");
        }
    }
    for a in 0..n_actions {
        model
            .set_outcomes(
                terminal,
                ActionId(a),
                vec![Outcome {
                    prob: 1.0,
                    next: terminal,
                    reward: 0.0,
                    damage: crate::cmdp::Damage::Safe,
                }],
            )
            .expect("in range");
    }
    debug_assert!(model.validate().is_ok());
    model
}

/// A random policy with strictly positive probability on every action.
pub fn random_policy<R: Rng + ?Sized>(n_states: usize, n_actions: usize, rng: &mut R) -> Policy {
    let mut probs = Vec::with_capacity(n_states * n_actions);
    for _ in 0..n_states {
        let mut row: Vec<f64> = (0..n_actions).map(|_| rng.gen_range(0.05..1.0)).collect();
        let total: f64 = row.iter().sum();
        for p in &mut row {
            *p /= total;
        }
        let head: f64 = row[..n_actions - 1].iter().sum();
        row[n_actions - 1] = 1.0 - head;
        probs.extend(row);
    }
    Policy::new(n_states, n_actions, probs).expect("rows sum to one by construction")
}
