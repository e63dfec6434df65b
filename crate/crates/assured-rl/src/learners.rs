//! Episodic tabular learners: assured Q-learning, assured SARSA, and
//! the penalty-reward baseline.
//!
//! The assured learners pair the Q-table with a barrier learner. Each
//! step updates the barrier first, then folds the fresh barrier value
//! into the Q update:
//!
//! ```text
//! Q(s, a) <- B(s, a) + (1 - eta) Q(s, a) + eta (r + gamma max_a' Q(s', a'))
//! ```
//!
//! so condemned pairs are dragged to `-inf` and pruned from the
//! per-state safe sets; exploration and greedy choices are restricted
//! to those sets, an episode whose start state has an empty safe set is
//! skipped, and an episode that reaches a state with an empty safe set
//! is stopped early (the preceding update already condemned the pair
//! that led there, so no synthetic damage sample is needed).
//!
//! The baseline learner is plain epsilon-greedy Q-learning over all
//! actions; its only safety signal is a `-inf` reward substituted on
//! damaged transitions, which its own max-backups then propagate.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use thiserror::Error;

use crate::barrier::{BarrierTable, SafeSets};
use crate::cmdp::{ActionId, Damage, StateId};
use crate::extreal::{argmax_tiebreak, ExtReal};
use crate::gridworld::GridEnv;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Algorithm {
    AssuredQ,
    AssuredSarsa,
    BaselineQ,
}

impl Algorithm {
    pub fn is_assured(self) -> bool {
        matches!(self, Algorithm::AssuredQ | Algorithm::AssuredSarsa)
    }

    pub fn name(self) -> &'static str {
        match self {
            Algorithm::AssuredQ => "assured-q",
            Algorithm::AssuredSarsa => "assured-sarsa",
            Algorithm::BaselineQ => "baseline-q",
        }
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Algorithm {
    type Err = ConfigError;

    fn from_str(s: &str) -> Result<Algorithm, ConfigError> {
        match s {
            "assured-q" => Ok(Algorithm::AssuredQ),
            "assured-sarsa" => Ok(Algorithm::AssuredSarsa),
            "baseline-q" => Ok(Algorithm::BaselineQ),
            other => Err(ConfigError::UnknownAlgorithm(other.to_string())),
        }
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum ConfigError {
    #[error("gamma must lie in (0, 1), got {0}")]
    BadGamma(f64),
    #[error("epsilon must lie in [0, 1], got {0}")]
    BadEpsilon(f64),
    #[error("eta must lie in (0, 1], got {0}")]
    BadEta(f64),
    #[error("step cap must be at least 1")]
    BadStepCap,
    #[error("unknown algorithm `{0}` (expected assured-q, assured-sarsa, or baseline-q)")]
    UnknownAlgorithm(String),
}

/// Training hyperparameters.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LearnerConfig {
    pub algorithm: Algorithm,
    pub gamma: f64,
    pub epsilon: f64,
    pub eta: f64,
    pub episodes: usize,
    pub step_cap: usize,
}

impl LearnerConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return Err(ConfigError::BadGamma(self.gamma));
        }
        if !(0.0..=1.0).contains(&self.epsilon) {
            return Err(ConfigError::BadEpsilon(self.epsilon));
        }
        if !(self.eta > 0.0 && self.eta <= 1.0) {
            return Err(ConfigError::BadEta(self.eta));
        }
        if self.step_cap == 0 {
            return Err(ConfigError::BadStepCap);
        }
        Ok(())
    }
}

/// `|S| x |A|` table of action values.
#[derive(Clone, Debug, PartialEq)]
pub struct QTable {
    entries: Vec<ExtReal>,
    n_states: usize,
    n_actions: usize,
}

impl QTable {
    pub fn zeros(n_states: usize, n_actions: usize) -> QTable {
        assert!(n_states > 0 && n_actions > 0, "table must be non-empty");
        QTable { entries: vec![ExtReal::ZERO; n_states * n_actions], n_states, n_actions }
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    fn idx(&self, s: StateId, a: ActionId) -> usize {
        assert!(s.index() < self.n_states, "state {s} out of range");
        assert!(a.index() < self.n_actions, "action {a} out of range");
        s.index() * self.n_actions + a.index()
    }

    pub fn get(&self, s: StateId, a: ActionId) -> ExtReal {
        self.entries[self.idx(s, a)]
    }

    pub fn set(&mut self, s: StateId, a: ActionId, value: ExtReal) {
        let idx = self.idx(s, a);
        self.entries[idx] = value;
    }

    pub fn row(&self, s: StateId) -> &[ExtReal] {
        let base = self.idx(s, ActionId(0));
        &self.entries[base..base + self.n_actions]
    }

    pub fn row_max(&self, s: StateId) -> ExtReal {
        *self.row(s).iter().max().expect("rows are non-empty")
    }

    /// Deterministic greedy choice among `allowed` (first maximal entry);
    /// `None` when `allowed` is empty. Used for evaluation, where random
    /// tie-breaking would blur policy comparisons.
    pub fn greedy_among(&self, s: StateId, allowed: &[ActionId]) -> Option<ActionId> {
        allowed
            .iter()
            .copied()
            .max_by(|&x, &y| {
                // max_by keeps the later of equal elements; compare with
                // index order reversed so the first maximum wins.
                self.get(s, x).cmp(&self.get(s, y)).then(y.index().cmp(&x.index()))
            })
    }

    /// Text matrix, one row per state, `-inf` for condemned entries.
    pub fn to_text_matrix(&self) -> String {
        use std::fmt::Write as _;
        let mut out = String::new();
        for s in 0..self.n_states {
            for (i, v) in self.row(StateId(s)).iter().enumerate() {
                if i > 0 {
                    out.push(' ');
                }
                write!(out, "{v}").expect("writing to a string cannot fail");
            }
            out.push('\n');
        }
        out
    }
}

/// Epsilon-greedy selection restricted to `allowed`.
///
/// Draws one uniform variate to pick the branch; exploration then draws
/// a uniform index, and exploitation draws only when several allowed
/// actions tie for the maximal Q value. Returns `None` when `allowed`
/// is empty (the caller must treat the state as unsafe).
pub fn select_action<R: Rng + ?Sized>(
    q: &QTable,
    s: StateId,
    allowed: &[ActionId],
    epsilon: f64,
    rng: &mut R,
) -> Option<ActionId> {
    if allowed.is_empty() {
        return None;
    }
    if rng.gen::<f64>() < epsilon {
        return Some(allowed[rng.gen_range(0..allowed.len())]);
    }
    let values: Vec<ExtReal> = allowed.iter().map(|&a| q.get(s, a)).collect();
    let idx = argmax_tiebreak(&values, rng).expect("allowed is non-empty");
    Some(allowed[idx])
}

/// Assured Q update; call after the barrier update for this transition
/// so `B(s, a)` is fresh. The inner max ranges over all actions — rows
/// of terminal states stay at zero, and condemned actions carry `-inf`,
/// which is exactly what lets full-state condemnation propagate.
pub fn assured_q_update(
    q: &mut QTable,
    barrier: &BarrierTable,
    s: StateId,
    a: ActionId,
    reward: f64,
    next: StateId,
    eta: f64,
    gamma: f64,
) -> ExtReal {
    let target = ExtReal::finite(reward) + q.row_max(next).scale(gamma);
    let new = barrier.get(s, a) + q.get(s, a).blend(target, eta);
    q.set(s, a, new);
    new
}

/// Standard Q update with the penalty substitution: a damaged
/// transition is treated as reward `-inf`, which the blend absorbs.
pub fn baseline_q_update(
    q: &mut QTable,
    s: StateId,
    a: ActionId,
    reward: f64,
    damage: Damage,
    next: StateId,
    eta: f64,
    gamma: f64,
) -> ExtReal {
    let effective_reward = match damage {
        Damage::Damaged => ExtReal::NegInf,
        Damage::Safe => ExtReal::finite(reward),
    };
    let target = effective_reward + q.row_max(next).scale(gamma);
    let new = q.get(s, a).blend(target, eta);
    q.set(s, a, new);
    new
}

/// Assured SARSA update: on-policy target `r + gamma Q(s', a')` with
/// `a_next` already drawn from the successor's safe set; `None` marks a
/// terminal or fully unsafe successor, where the target reduces to `r`.
pub fn assured_sarsa_update(
    q: &mut QTable,
    barrier: &BarrierTable,
    s: StateId,
    a: ActionId,
    reward: f64,
    next: StateId,
    a_next: Option<ActionId>,
    eta: f64,
    gamma: f64,
) -> ExtReal {
    let next_value = match a_next {
        Some(an) => q.get(next, an).scale(gamma),
        None => ExtReal::ZERO,
    };
    let target = ExtReal::finite(reward) + next_value;
    let new = barrier.get(s, a) + q.get(s, a).blend(target, eta);
    q.set(s, a, new);
    new
}

/// Per-episode record.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpisodeStats {
    /// Steps actually taken (0 for skipped episodes).
    pub length: usize,
    /// Discounted sum of observed rewards.
    pub discounted_return: f64,
    /// Damage events this episode; episodes end on damage, so 0 or 1.
    pub violations: usize,
    /// The start state's safe set was empty, so no step was taken.
    pub skipped: bool,
}

/// Full result of one training run.
#[derive(Clone, Debug)]
pub struct TrainLog {
    pub episodes: Vec<EpisodeStats>,
    pub q: QTable,
    pub barrier: BarrierTable,
}

/// One agent: tables, safe sets, and hyperparameters.
#[derive(Clone, Debug)]
pub struct Learner {
    config: LearnerConfig,
    q: QTable,
    barrier: BarrierTable,
    safe: SafeSets,
    all_actions: Vec<ActionId>,
}

impl Learner {
    pub fn new(n_states: usize, n_actions: usize, config: LearnerConfig) -> Result<Learner, ConfigError> {
        config.validate()?;
        Ok(Learner {
            config,
            q: QTable::zeros(n_states, n_actions),
            barrier: BarrierTable::new(n_states, n_actions),
            safe: SafeSets::all_allowed(n_states, n_actions),
            all_actions: (0..n_actions).map(ActionId).collect(),
        })
    }

    pub fn config(&self) -> &LearnerConfig {
        &self.config
    }

    pub fn q(&self) -> &QTable {
        &self.q
    }

    pub fn barrier(&self) -> &BarrierTable {
        &self.barrier
    }

    pub fn safe_sets(&self) -> &SafeSets {
        &self.safe
    }

    fn selection_set(&self, s: StateId) -> Vec<ActionId> {
        if self.config.algorithm.is_assured() {
            self.safe.actions(s)
        } else {
            self.all_actions.clone()
        }
    }

    /// Runs one episode against `env` and updates the tables in place.
    pub fn run_episode<R: Rng + ?Sized>(&mut self, env: &mut GridEnv, rng: &mut R) -> EpisodeStats {
        let s0 = env.reset(rng);
        let assured = self.config.algorithm.is_assured();
        if assured && self.safe.is_empty(s0) {
            return EpisodeStats { length: 0, discounted_return: 0.0, violations: 0, skipped: true };
        }
        match self.config.algorithm {
            Algorithm::AssuredQ | Algorithm::BaselineQ => self.q_episode(env, s0, rng),
            Algorithm::AssuredSarsa => self.sarsa_episode(env, s0, rng),
        }
    }

    fn q_episode<R: Rng + ?Sized>(
        &mut self,
        env: &mut GridEnv,
        s0: StateId,
        rng: &mut R,
    ) -> EpisodeStats {
        let LearnerConfig { algorithm, gamma, epsilon, eta, .. } = self.config;
        let assured = algorithm.is_assured();
        let mut s = s0;
        let mut length = 0;
        let mut discounted_return = 0.0;
        let mut discount = 1.0;
        let mut violations = 0;

        loop {
            let allowed = self.selection_set(s);
            let a = select_action(&self.q, s, &allowed, epsilon, rng)
                .expect("selection set is non-empty inside the loop");
            let out = env.step(a).expect("episode is still active");
            length += 1;
            discounted_return += discount * out.reward;
            discount *= gamma;
            if out.damage.is_damage() {
                violations += 1;
            }

            if assured {
                self.barrier.update(s, a, out.next, out.damage);
                assured_q_update(&mut self.q, &self.barrier, s, a, out.reward, out.next, eta, gamma);
                if self.q.get(s, a).is_neg_inf() {
                    self.safe.remove(s, a);
                }
            } else {
                baseline_q_update(&mut self.q, s, a, out.reward, out.damage, out.next, eta, gamma);
            }

            if out.done {
                break;
            }
            if assured && self.safe.is_empty(out.next) {
                // Everything beyond out.next is already known lost; the
                // update above condemned (s, a), so stop here instead of
                // walking into unavoidable damage.
                break;
            }
            s = out.next;
        }
        EpisodeStats { length, discounted_return, violations, skipped: false }
    }

    fn sarsa_episode<R: Rng + ?Sized>(
        &mut self,
        env: &mut GridEnv,
        s0: StateId,
        rng: &mut R,
    ) -> EpisodeStats {
        let LearnerConfig { gamma, epsilon, eta, .. } = self.config;
        let mut s = s0;
        let mut a = select_action(&self.q, s, &self.safe.actions(s), epsilon, rng)
            .expect("start state has a non-empty safe set");
        let mut length = 0;
        let mut discounted_return = 0.0;
        let mut discount = 1.0;
        let mut violations = 0;

        loop {
            let out = env.step(a).expect("episode is still active");
            length += 1;
            discounted_return += discount * out.reward;
            discount *= gamma;
            if out.damage.is_damage() {
                violations += 1;
            }

            self.barrier.update(s, a, out.next, out.damage);
            let a_next = if out.done || self.safe.is_empty(out.next) {
                None
            } else {
                Some(
                    select_action(&self.q, out.next, &self.safe.actions(out.next), epsilon, rng)
                        .expect("safe set checked non-empty"),
                )
            };
            assured_sarsa_update(
                &mut self.q,
                &self.barrier,
                s,
                a,
                out.reward,
                out.next,
                a_next,
                eta,
                gamma,
            );
            if self.q.get(s, a).is_neg_inf() {
                self.safe.remove(s, a);
            }

            match a_next {
                Some(an) => {
                    s = out.next;
                    a = an;
                }
                None => break,
            }
        }
        EpisodeStats { length, discounted_return, violations, skipped: false }
    }
}

/// Trains a fresh learner for `config.episodes` episodes.
pub fn train<R: Rng + ?Sized>(
    env: &mut GridEnv,
    config: &LearnerConfig,
    rng: &mut R,
) -> Result<TrainLog, ConfigError> {
    let mut learner = Learner::new(env.n_states(), env.n_actions(), *config)?;
    let mut episodes = Vec::with_capacity(config.episodes);
    for _ in 0..config.episodes {
        episodes.push(learner.run_episode(env, rng));
    }
    Ok(TrainLog { episodes, q: learner.q, barrier: learner.barrier })
}
