//! Tabular constrained MDP with a damage channel.
//!
//! The model is an explicit finite table `p(s', r, d | s, a)` over states,
//! rewards, and a binary damage indicator, augmented with a designated
//! absorbing terminal `s_D` that is entered exactly when damage occurs.
//! Three structural conditions tie damage to the terminal:
//!
//! 1. no transition into `s_D` carries `d = 0` (from a live state),
//! 2. no transition into a live state carries `d = 1`,
//! 3. from `s_D` all mass stays on `(s_D, d = 0)`.
//!
//! Together they guarantee at most one damage event per trajectory, which
//! is what makes the expected cumulative damage equal the probability of
//! ever violating a constraint.

use std::fmt;

use rand::Rng;
use thiserror::Error;

use crate::extreal::ExtReal;

/// Probability masses must sum to one within this slack.
pub const DISTRIBUTION_TOLERANCE: f64 = 1e-12;

/// Index into a model's state table.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct StateId(pub usize);

/// Index into a model's action table.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ActionId(pub usize);

impl StateId {
    pub fn index(self) -> usize {
        self.0
    }
}

impl ActionId {
    pub fn index(self) -> usize {
        self.0
    }
}

impl fmt::Display for StateId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "s{}", self.0)
    }
}

impl fmt::Display for ActionId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "a{}", self.0)
    }
}

/// Binary per-transition damage indicator.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Damage {
    Safe,
    Damaged,
}

impl Damage {
    /// Parses a `{0, 1}` integer; anything else is a domain error.
    pub fn from_u8(value: u8) -> Result<Damage, InvalidDamage> {
        match value {
            0 => Ok(Damage::Safe),
            1 => Ok(Damage::Damaged),
            other => Err(InvalidDamage(other)),
        }
    }

    pub fn indicator(self) -> u8 {
        match self {
            Damage::Safe => 0,
            Damage::Damaged => 1,
        }
    }

    pub fn is_damage(self) -> bool {
        matches!(self, Damage::Damaged)
    }

    /// `log(1 - d)` as an extended real: `0` when safe, `-inf` on damage.
    pub fn log1m(self) -> ExtReal {
        match self {
            Damage::Safe => ExtReal::ZERO,
            Damage::Damaged => ExtReal::NegInf,
        }
    }
}

impl From<bool> for Damage {
    fn from(damaged: bool) -> Damage {
        if damaged {
            Damage::Damaged
        } else {
            Damage::Safe
        }
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
#[error("damage indicator must be 0 or 1, got {0}")]
pub struct InvalidDamage(pub u8);

/// One observed transition tuple `(s, a, s', r, d)` — the only feedback
/// the model-free learners ever see.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TransitionSample {
    pub state: StateId,
    pub action: ActionId,
    pub next: StateId,
    pub reward: f64,
    pub damage: Damage,
}

/// One support point of `p(s', r, d | s, a)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Outcome {
    pub prob: f64,
    pub next: StateId,
    pub reward: f64,
    pub damage: Damage,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ModelError {
    #[error("state index {0} out of range (model has {1} states)")]
    InvalidState(usize, usize),
    #[error("action index {0} out of range (model has {1} actions)")]
    InvalidAction(usize, usize),
    #[error("model must have at least one state and one action")]
    EmptyModel,
    #[error("start distribution has {0} entries, model has {1} states")]
    StartLengthMismatch(usize, usize),
}

/// A single structural violation found by [`TabularCmdp::validate`].
#[derive(Clone, Debug, PartialEq)]
pub enum ModelViolation {
    /// Row mass is not within tolerance of 1 (or some mass is negative).
    NotNormalized { state: StateId, action: ActionId, sum: f64 },
    NegativeMass { state: StateId, action: ActionId, outcome: usize, prob: f64 },
    NonFiniteReward { state: StateId, action: ActionId, outcome: usize },
    /// Condition 1: positive mass on `(s' = s_D, d = 0)` from a live state.
    TerminalWithoutDamage { state: StateId, action: ActionId, outcome: usize },
    /// Condition 2: positive mass on `(s' != s_D, d = 1)`.
    DamageWithoutTerminal { state: StateId, action: ActionId, outcome: usize },
    /// Condition 3: mass from `s_D` not on `(s_D, d = 0)`.
    TerminalNotAbsorbing { action: ActionId, outcome: usize },
    /// Start distribution is not a probability distribution.
    BadStartDistribution { sum: f64 },
}

impl fmt::Display for ModelViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::NotNormalized { state, action, sum } => {
                write!(f, "row ({state}, {action}) sums to {sum}, expected 1")
            }
            Self::NegativeMass { state, action, outcome, prob } => {
                write!(f, "row ({state}, {action}) outcome {outcome} has negative mass {prob}")
            }
            Self::NonFiniteReward { state, action, outcome } => {
                write!(f, "row ({state}, {action}) outcome {outcome} has a non-finite reward")
            }
            Self::TerminalWithoutDamage { state, action, outcome } => {
                write!(
                    f,
                    "row ({state}, {action}) outcome {outcome} enters the damage terminal with d = 0"
                )
            }
            Self::DamageWithoutTerminal { state, action, outcome } => {
                write!(
                    f,
                    "row ({state}, {action}) outcome {outcome} carries damage but lands on a live state"
                )
            }
            Self::TerminalNotAbsorbing { action, outcome } => {
                write!(f, "damage terminal leaks mass via {action} outcome {outcome}")
            }
            Self::BadStartDistribution { sum } => {
                write!(f, "start distribution sums to {sum}, expected 1")
            }
        }
    }
}

/// Report listing every violation in an invalid model.
#[derive(Debug, Error, PartialEq)]
#[error("model violates {} structural condition(s): {}", .violations.len(), format_violations(.violations))]
pub struct ModelViolations {
    pub violations: Vec<ModelViolation>,
}

fn format_violations(violations: &[ModelViolation]) -> String {
    violations
        .iter()
        .map(|v| v.to_string())
        .collect::<Vec<_>>()
        .join("; ")
}

/// Explicit finite damage-augmented model.
#[derive(Clone, Debug, PartialEq)]
pub struct TabularCmdp {
    n_states: usize,
    n_actions: usize,
    terminal_damage_state: StateId,
    /// Row-major `(state, action)` outcome lists.
    transitions: Vec<Vec<Outcome>>,
    start_distribution: Vec<f64>,
}

impl TabularCmdp {
    /// Creates an empty-rowed model; fill rows with [`set_outcomes`]
    /// and check structure with [`validate`].
    ///
    /// [`set_outcomes`]: TabularCmdp::set_outcomes
    /// [`validate`]: TabularCmdp::validate
    pub fn new(
        n_states: usize,
        n_actions: usize,
        terminal_damage_state: StateId,
        start_distribution: Vec<f64>,
    ) -> Result<TabularCmdp, ModelError> {
        if n_states == 0 || n_actions == 0 {
            return Err(ModelError::EmptyModel);
        }
        if terminal_damage_state.index() >= n_states {
            return Err(ModelError::InvalidState(terminal_damage_state.index(), n_states));
        }
        if start_distribution.len() != n_states {
            return Err(ModelError::StartLengthMismatch(start_distribution.len(), n_states));
        }
        Ok(TabularCmdp {
            n_states,
            n_actions,
            terminal_damage_state,
            transitions: vec![Vec::new(); n_states * n_actions],
            start_distribution,
        })
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn terminal_damage_state(&self) -> StateId {
        self.terminal_damage_state
    }

    pub fn start_distribution(&self) -> &[f64] {
        &self.start_distribution
    }

    pub fn states(&self) -> impl Iterator<Item = StateId> {
        (0..self.n_states).map(StateId)
    }

    pub fn actions(&self) -> impl Iterator<Item = ActionId> {
        (0..self.n_actions).map(ActionId)
    }

    fn row_index(&self, s: StateId, a: ActionId) -> Result<usize, ModelError> {
        if s.index() >= self.n_states {
            return Err(ModelError::InvalidState(s.index(), self.n_states));
        }
        if a.index() >= self.n_actions {
            return Err(ModelError::InvalidAction(a.index(), self.n_actions));
        }
        Ok(s.index() * self.n_actions + a.index())
    }

    pub fn set_outcomes(
        &mut self,
        s: StateId,
        a: ActionId,
        outcomes: Vec<Outcome>,
    ) -> Result<(), ModelError> {
        let idx = self.row_index(s, a)?;
        self.transitions[idx] = outcomes;
        Ok(())
    }

    pub fn outcomes(&self, s: StateId, a: ActionId) -> Result<&[Outcome], ModelError> {
        let idx = self.row_index(s, a)?;
        Ok(&self.transitions[idx])
    }

    /// Checks per-row normalization and the three damage-terminal
    /// conditions, reporting every violating `(s, a, outcome)`.
    pub fn validate(&self) -> Result<(), ModelViolations> {
        let mut violations = Vec::new();
        let s_d = self.terminal_damage_state;

        let start_sum: f64 = self.start_distribution.iter().sum();
        if (start_sum - 1.0).abs() > DISTRIBUTION_TOLERANCE
            || self.start_distribution.iter().any(|&p| p < 0.0)
        {
            violations.push(ModelViolation::BadStartDistribution { sum: start_sum });
        }

        for s in self.states() {
            for a in self.actions() {
                let row = self.outcomes(s, a).expect("indices in range");
                let mut sum = 0.0;
                for (i, o) in row.iter().enumerate() {
                    sum += o.prob;
                    if o.prob < 0.0 {
                        violations.push(ModelViolation::NegativeMass {
                            state: s,
                            action: a,
                            outcome: i,
                            prob: o.prob,
                        });
                    }
                    if !o.reward.is_finite() {
                        violations.push(ModelViolation::NonFiniteReward {
                            state: s,
                            action: a,
                            outcome: i,
                        });
                    }
                    if o.prob <= 0.0 {
                        continue;
                    }
                    if s == s_d {
                        if o.next != s_d || o.damage.is_damage() {
                            violations.push(ModelViolation::TerminalNotAbsorbing {
                                action: a,
                                outcome: i,
                            });
                        }
                    } else if o.next == s_d && !o.damage.is_damage() {
                        violations.push(ModelViolation::TerminalWithoutDamage {
                            state: s,
                            action: a,
                            outcome: i,
                        });
                    } else if o.next != s_d && o.damage.is_damage() {
                        violations.push(ModelViolation::DamageWithoutTerminal {
                            state: s,
                            action: a,
                            outcome: i,
                        });
                    }
                }
                if (sum - 1.0).abs() > DISTRIBUTION_TOLERANCE {
                    violations.push(ModelViolation::NotNormalized { state: s, action: a, sum });
                }
            }
        }

        if violations.is_empty() {
            Ok(())
        } else {
            Err(ModelViolations { violations })
        }
    }

    /// Draws `(s', r, d)` from the model's distribution at `(s, a)`.
    pub fn sample<R: Rng + ?Sized>(
        &self,
        s: StateId,
        a: ActionId,
        rng: &mut R,
    ) -> Result<TransitionSample, ModelError> {
        let row = self.outcomes(s, a)?;
        debug_assert!(!row.is_empty(), "sampling from an unset row ({s}, {a})");
        let u: f64 = rng.gen();
        let mut acc = 0.0;
        let mut chosen = row.last().expect("validated rows are non-empty");
        for o in row {
            acc += o.prob;
            if u < acc {
                chosen = o;
                break;
            }
        }
        Ok(TransitionSample {
            state: s,
            action: a,
            next: chosen.next,
            reward: chosen.reward,
            damage: chosen.damage,
        })
    }

    /// Draws a start state from the start distribution.
    pub fn sample_start<R: Rng + ?Sized>(&self, rng: &mut R) -> StateId {
        let u: f64 = rng.gen();
        let mut acc = 0.0;
        for (i, &p) in self.start_distribution.iter().enumerate() {
            acc += p;
            if u < acc {
                return StateId(i);
            }
        }
        StateId(self.n_states - 1)
    }

    /// Serializes to the line-oriented text format (see [`from_text`]).
    ///
    /// [`from_text`]: TabularCmdp::from_text
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        out.push_str("# tabular cmdp\n");
        out.push_str(&format!("states {}\n", self.n_states));
        out.push_str(&format!("actions {}\n", self.n_actions));
        out.push_str(&format!("terminal {}\n", self.terminal_damage_state.index()));
        for (i, &p) in self.start_distribution.iter().enumerate() {
            if p != 0.0 {
                out.push_str(&format!("start {i} {p}\n"));
            }
        }
        for s in self.states() {
            for a in self.actions() {
                for o in self.outcomes(s, a).expect("indices in range") {
                    out.push_str(&format!(
                        "t {} {} {} {} {} {}\n",
                        s.index(),
                        a.index(),
                        o.next.index(),
                        o.prob,
                        o.reward,
                        o.damage.indicator()
                    ));
                }
            }
        }
        out
    }

    /// Parses the text format: `states N` / `actions N` / `terminal I`
    /// headers, `start I P` lines for non-zero start mass, and one
    /// `t S A S' PROB REWARD D` line per outcome. `#` starts a comment.
    pub fn from_text(text: &str) -> Result<TabularCmdp, CmdpTextError> {
        let mut n_states = None;
        let mut n_actions = None;
        let mut terminal = None;
        let mut starts: Vec<(usize, f64)> = Vec::new();
        let mut triples: Vec<(usize, usize, Outcome)> = Vec::new();

        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let mut parts = line.split_whitespace();
            let keyword = parts.next().expect("non-empty line has a token");
            let fields: Vec<&str> = parts.collect();
            let err = |what: &str| CmdpTextError::Malformed {
                line: lineno + 1,
                reason: what.to_string(),
            };
            match keyword {
                "states" => {
                    let [n] = fields[..] else {
                        return Err(err("expected `states N`"));
                    };
                    n_states = Some(parse_field::<usize>(n, lineno)?);
                }
                "actions" => {
                    let [n] = fields[..] else {
                        return Err(err("expected `actions N`"));
                    };
                    n_actions = Some(parse_field::<usize>(n, lineno)?);
                }
                "terminal" => {
                    let [n] = fields[..] else {
                        return Err(err("expected `terminal I`"));
                    };
                    terminal = Some(parse_field::<usize>(n, lineno)?);
                }
                "start" => {
                    let [i, p] = fields[..] else {
                        return Err(err("expected `start I P`"));
                    };
                    starts.push((parse_field(i, lineno)?, parse_field(p, lineno)?));
                }
                "t" => {
                    let [s, a, next, prob, reward, d] = fields[..] else {
                        return Err(err("expected `t S A S' PROB REWARD D`"));
                    };
                    let damage = Damage::from_u8(parse_field::<u8>(d, lineno)?)
                        .map_err(|e| err(&e.to_string()))?;
                    triples.push((
                        parse_field(s, lineno)?,
                        parse_field(a, lineno)?,
                        Outcome {
                            next: StateId(parse_field(next, lineno)?),
                            prob: parse_field(prob, lineno)?,
                            reward: parse_field(reward, lineno)?,
                            damage,
                        },
                    ));
                }
                other => {
                    return Err(CmdpTextError::Malformed {
                        line: lineno + 1,
                        reason: format!("unknown keyword `{other}`"),
                    })
                }
            }
        }

        let n_states = n_states.ok_or(CmdpTextError::MissingHeader("states"))?;
        let n_actions = n_actions.ok_or(CmdpTextError::MissingHeader("actions"))?;
        let terminal = terminal.ok_or(CmdpTextError::MissingHeader("terminal"))?;
        let mut start = vec![0.0; n_states];
        for (i, p) in starts {
            if i >= n_states {
                return Err(CmdpTextError::Model(ModelError::InvalidState(i, n_states)));
            }
            start[i] = p;
        }
        let mut model = TabularCmdp::new(n_states, n_actions, StateId(terminal), start)
            .map_err(CmdpTextError::Model)?;
        let mut rows: Vec<Vec<Outcome>> = vec![Vec::new(); n_states * n_actions];
        for (s, a, o) in triples {
            if s >= n_states {
                return Err(CmdpTextError::Model(ModelError::InvalidState(s, n_states)));
            }
            if a >= n_actions {
                return Err(CmdpTextError::Model(ModelError::InvalidAction(a, n_actions)));
            }
            if o.next.index() >= n_states {
                return Err(CmdpTextError::Model(ModelError::InvalidState(
                    o.next.index(),
                    n_states,
                )));
            }
            rows[s * n_actions + a].push(o);
        }
        for (idx, row) in rows.into_iter().enumerate() {
            let s = StateId(idx / n_actions);
            let a = ActionId(idx % n_actions);
            model.set_outcomes(s, a, row).expect("indices in range");
        }
        Ok(model)
    }
}

fn parse_field<T: std::str::FromStr>(field: &str, lineno: usize) -> Result<T, CmdpTextError> {
    field.parse().map_err(|_| CmdpTextError::Malformed {
        line: lineno + 1,
        reason: format!("cannot parse `{field}`"),
    })
}

#[derive(Debug, Error)]
pub enum CmdpTextError {
    #[error("line {line}: {reason}")]
    Malformed { line: usize, reason: String },
    #[error("missing `{0}` header")]
    MissingHeader(&'static str),
    #[error(transparent)]
    Model(ModelError),
}

#[derive(Debug, Error, PartialEq)]
pub enum PolicyError {
    #[error("policy row for state {0} sums to {1}, expected 1")]
    NotNormalized(usize, f64),
    #[error("policy row for state {0} has a negative probability")]
    NegativeProbability(usize),
    #[error("policy shape {0}x{1} does not divide evenly")]
    BadShape(usize, usize),
}

/// A stationary randomized policy: one distribution over actions per state.
#[derive(Clone, Debug, PartialEq)]
pub struct Policy {
    probs: Vec<f64>,
    n_states: usize,
    n_actions: usize,
}

impl Policy {
    /// `probs` is row-major `n_states x n_actions`; every row must be a
    /// probability distribution within [`DISTRIBUTION_TOLERANCE`].
    pub fn new(n_states: usize, n_actions: usize, probs: Vec<f64>) -> Result<Policy, PolicyError> {
        if probs.len() != n_states * n_actions || n_actions == 0 {
            return Err(PolicyError::BadShape(probs.len(), n_actions));
        }
        for s in 0..n_states {
            let row = &probs[s * n_actions..(s + 1) * n_actions];
            if row.iter().any(|&p| p < 0.0) {
                return Err(PolicyError::NegativeProbability(s));
            }
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > DISTRIBUTION_TOLERANCE {
                return Err(PolicyError::NotNormalized(s, sum));
            }
        }
        Ok(Policy { probs, n_states, n_actions })
    }

    /// Uniform over all actions in every state.
    pub fn uniform(n_states: usize, n_actions: usize) -> Policy {
        let mut probs = vec![1.0 / n_actions as f64; n_states * n_actions];
        // Pin each row sum to exactly one.
        for s in 0..n_states {
            let head: f64 = probs[s * n_actions..(s + 1) * n_actions - 1].iter().sum();
            probs[(s + 1) * n_actions - 1] = 1.0 - head;
        }
        Policy { probs, n_states, n_actions }
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn prob(&self, s: StateId, a: ActionId) -> f64 {
        self.probs[s.index() * self.n_actions + a.index()]
    }

    pub fn action_probs(&self, s: StateId) -> &[f64] {
        &self.probs[s.index() * self.n_actions..(s.index() + 1) * self.n_actions]
    }

    pub fn sample_action<R: Rng + ?Sized>(&self, s: StateId, rng: &mut R) -> ActionId {
        let row = self.action_probs(s);
        let u: f64 = rng.gen();
        let mut acc = 0.0;
        for (i, &p) in row.iter().enumerate() {
            acc += p;
            if u < acc {
                return ActionId(i);
            }
        }
        ActionId(self.n_actions - 1)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn point_mass(next: usize, reward: f64, damage: bool) -> Vec<Outcome> {
        vec![Outcome { prob: 1.0, next: StateId(next), reward, damage: Damage::from(damage) }]
    }

    /// Two live states (0, 1) and the damage terminal (2); action 0 walks
    /// forward, action 1 damages.
    fn tiny_model() -> TabularCmdp {
        let mut m = TabularCmdp::new(3, 2, StateId(2), vec![1.0, 0.0, 0.0]).unwrap();
        m.set_outcomes(StateId(0), ActionId(0), point_mass(1, 0.0, false)).unwrap();
        m.set_outcomes(StateId(0), ActionId(1), point_mass(2, 0.0, true)).unwrap();
        m.set_outcomes(StateId(1), ActionId(0), point_mass(1, 1.0, false)).unwrap();
        m.set_outcomes(StateId(1), ActionId(1), point_mass(2, 0.0, true)).unwrap();
        m.set_outcomes(StateId(2), ActionId(0), point_mass(2, 0.0, false)).unwrap();
        m.set_outcomes(StateId(2), ActionId(1), point_mass(2, 0.0, false)).unwrap();
        m
    }

    #[test]
    fn damage_parse_and_log1m() {
        assert_eq!(Damage::from_u8(0), Ok(Damage::Safe));
        assert_eq!(Damage::from_u8(1), Ok(Damage::Damaged));
        assert_eq!(Damage::from_u8(2), Err(InvalidDamage(2)));
        assert_eq!(Damage::Safe.log1m(), ExtReal::ZERO);
        assert_eq!(Damage::Damaged.log1m(), ExtReal::NegInf);
    }

    #[test]
    fn valid_model_passes() {
        assert_eq!(tiny_model().validate(), Ok(()));
    }

    #[test]
    fn terminal_entry_without_damage_violates_condition_one() {
        let mut m = tiny_model();
        m.set_outcomes(StateId(0), ActionId(1), point_mass(2, 0.0, false)).unwrap();
        let report = m.validate().unwrap_err();
        assert!(report
            .violations
            .iter()
            .any(|v| matches!(v, ModelViolation::TerminalWithoutDamage { .. })));
    }

    #[test]
    fn damage_into_live_state_violates_condition_two() {
        let mut m = tiny_model();
        m.set_outcomes(StateId(0), ActionId(1), point_mass(1, 0.0, true)).unwrap();
        let report = m.validate().unwrap_err();
        assert!(report
            .violations
            .iter()
            .any(|v| matches!(v, ModelViolation::DamageWithoutTerminal { .. })));
    }

    #[test]
    fn leaking_terminal_violates_condition_three() {
        let mut m = tiny_model();
        m.set_outcomes(StateId(2), ActionId(0), point_mass(0, 0.0, false)).unwrap();
        let report = m.validate().unwrap_err();
        assert!(report
            .violations
            .iter()
            .any(|v| matches!(v, ModelViolation::TerminalNotAbsorbing { .. })));
    }

    #[test]
    fn unnormalized_row_is_reported() {
        let mut m = tiny_model();
        m.set_outcomes(
            StateId(0),
            ActionId(0),
            vec![Outcome { prob: 0.9, next: StateId(1), reward: 0.0, damage: Damage::Safe }],
        )
        .unwrap();
        let report = m.validate().unwrap_err();
        assert!(report.violations.iter().any(
            |v| matches!(v, ModelViolation::NotNormalized { sum, .. } if (sum - 0.9).abs() < 1e-15)
        ));
    }

    #[test]
    fn sample_point_mass_is_deterministic() {
        let m = tiny_model();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..10 {
            let t = m.sample(StateId(0), ActionId(0), &mut rng).unwrap();
            assert_eq!(t.next, StateId(1));
            assert_eq!(t.reward, 0.0);
            assert_eq!(t.damage, Damage::Safe);
        }
    }

    #[test]
    fn sample_from_terminal_stays_absorbed() {
        let m = tiny_model();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for a in 0..2 {
            let t = m.sample(StateId(2), ActionId(a), &mut rng).unwrap();
            assert_eq!(t.next, StateId(2));
            assert_eq!(t.damage, Damage::Safe);
            assert_eq!(t.reward, 0.0);
        }
    }

    #[test]
    fn sample_invalid_ids_rejected() {
        let m = tiny_model();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        assert!(matches!(
            m.sample(StateId(9), ActionId(0), &mut rng),
            Err(ModelError::InvalidState(9, 3))
        ));
        assert!(matches!(
            m.sample(StateId(0), ActionId(9), &mut rng),
            Err(ModelError::InvalidAction(9, 2))
        ));
    }

    #[test]
    fn sample_two_outcome_frequencies_within_3_sigma() {
        let mut m = TabularCmdp::new(3, 1, StateId(2), vec![1.0, 0.0, 0.0]).unwrap();
        m.set_outcomes(
            StateId(0),
            ActionId(0),
            vec![
                Outcome { prob: 0.5, next: StateId(1), reward: 0.0, damage: Damage::Safe },
                Outcome { prob: 0.5, next: StateId(2), reward: 0.0, damage: Damage::Damaged },
            ],
        )
        .unwrap();
        m.set_outcomes(StateId(1), ActionId(0), point_mass(1, 0.0, false)).unwrap();
        m.set_outcomes(StateId(2), ActionId(0), point_mass(2, 0.0, false)).unwrap();
        m.validate().unwrap();

        let n = 10_000;
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut hits = 0;
        for _ in 0..n {
            if m.sample(StateId(0), ActionId(0), &mut rng).unwrap().damage.is_damage() {
                hits += 1;
            }
        }
        let freq = hits as f64 / n as f64;
        let sigma = (0.5 * 0.5 / n as f64).sqrt();
        assert!((freq - 0.5).abs() <= 3.0 * sigma, "frequency {freq} outside 3 sigma");
    }

    #[test]
    fn text_round_trip_is_exact() {
        let m = tiny_model();
        let text = m.to_text();
        let back = TabularCmdp::from_text(&text).unwrap();
        assert_eq!(m, back);
    }

    #[test]
    fn text_parse_reports_line_numbers() {
        let err = TabularCmdp::from_text("states 2\nactions 1\nterminal 1\nt 0 0 bogus 1 0 0\n")
            .unwrap_err();
        match err {
            CmdpTextError::Malformed { line, .. } => assert_eq!(line, 4),
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn policy_validation() {
        assert!(Policy::new(1, 2, vec![0.5, 0.5]).is_ok());
        assert!(matches!(
            Policy::new(1, 2, vec![0.6, 0.6]),
            Err(PolicyError::NotNormalized(0, _))
        ));
        assert!(matches!(
            Policy::new(1, 2, vec![-0.1, 1.1]),
            Err(PolicyError::NegativeProbability(0))
        ));
    }

    #[test]
    fn uniform_policy_rows_sum_to_one() {
        let p = Policy::uniform(4, 3);
        for s in 0..4 {
            let sum: f64 = p.action_probs(StateId(s)).iter().sum();
            assert!((sum - 1.0).abs() <= DISTRIBUTION_TOLERANCE);
        }
    }
}
