//! Tabular safe reinforcement learning with barrier-based action pruning.
//!
//! The toolkit trains agents that must satisfy constraints almost
//! surely — not merely in expectation — in finite MDPs that report a
//! binary per-transition *damage* signal alongside the reward. The key
//! object is the action-barrier function `B(s, a)`, which is `0` on
//! pairs from which some policy stays safe forever and `-inf` on pairs
//! that lead to damage with positive probability. Because its entries
//! are binary, `B` can be learned exactly from transitions alone, and
//! maintaining its zero-level set as a per-state safe-action set turns
//! any tabular learner into an *assured* one: condemned actions are
//! pruned during training, so each unsafe pair is tried at most once.
//!
//! Modules:
//!
//! - [`extreal`] — arithmetic on ℝ ∪ {−∞} with an absorbing `-inf`.
//! - [`cmdp`] — the damage-augmented tabular model, its structural
//!   validation, and transition sampling.
//! - [`gridworld`] — the maze environment (wall bumps are the unsafe
//!   event) and its exact model export.
//! - [`barrier`] — the model-free barrier learner and safe sets.
//! - [`learners`] — assured Q-learning, assured SARSA, and the
//!   penalty-reward baseline.
//! - [`oracle`] — exact dynamic-programming ground truth: safety
//!   kernel, damage-probability evaluation, constrained value
//!   iteration, and a Monte-Carlo cross-checker.
//! - [`experiment`] — seeded multi-trial experiment runner with CSV
//!   output.

pub mod barrier;
pub mod cmdp;
pub mod experiment;
pub mod extreal;
pub mod gridworld;
pub mod learners;
pub mod oracle;

pub use barrier::{BarrierTable, SafeSets};
pub use cmdp::{ActionId, Damage, Outcome, Policy, StateId, TabularCmdp, TransitionSample};
pub use extreal::ExtReal;
pub use gridworld::{Action, GridEnv, MazeSpec, RestartMode, StartRule};
pub use learners::{Algorithm, EpisodeStats, Learner, LearnerConfig, QTable, TrainLog};
pub use oracle::{ConstrainedPlan, McEstimate, QdTable, SafetyKernel};
