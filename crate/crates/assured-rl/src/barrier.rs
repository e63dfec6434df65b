//! Model-free learning of the action-barrier function.
//!
//! `B(s, a)` starts at zero everywhere and is updated once per observed
//! transition with
//!
//! ```text
//! B(s, a) <- B(s, a) + log(1 - d) + max_a' B(s', a')
//! ```
//!
//! Every entry is therefore always exactly `0` or `-inf`, entries only
//! ever move downward, and a `-inf` at the successor propagates
//! backward: a pair leading (with any observed probability) to damage
//! or to a fully condemned state is itself condemned. The zero-level
//! set per state is the set of permitted actions, maintained
//! incrementally in [`SafeSets`].

use std::fmt::Write as _;

use crate::cmdp::{ActionId, Damage, StateId};
use crate::extreal::ExtReal;

/// `|S| x |A|` table of barrier values, each `0` or `-inf`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BarrierTable {
    entries: Vec<ExtReal>,
    n_states: usize,
    n_actions: usize,
}

impl BarrierTable {
    /// All-zero table: every pair starts presumed safe.
    pub fn new(n_states: usize, n_actions: usize) -> BarrierTable {
        assert!(n_states > 0 && n_actions > 0, "table must be non-empty");
        BarrierTable {
            entries: vec![ExtReal::ZERO; n_states * n_actions],
            n_states,
            n_actions,
        }
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

    /// Forces an entry to `-inf` (used by the oracle when materializing
    /// an evaluated barrier; the learner goes through [`update`]).
    ///
    /// [`update`]: BarrierTable::update
    pub fn condemn(&mut self, s: StateId, a: ActionId) {
        let idx = self.idx(s, a);
        self.entries[idx] = ExtReal::NegInf;
    }

    pub fn row(&self, s: StateId) -> &[ExtReal] {
        let base = self.idx(s, ActionId(0));
        &self.entries[base..base + self.n_actions]
    }

    pub fn row_max(&self, s: StateId) -> ExtReal {
        *self.row(s).iter().max().expect("rows are non-empty")
    }

    /// One barrier-learner step on an observed transition; returns the
    /// updated `B(s, a)`.
    ///
    /// The result stays `0` iff the old value was `0`, the transition
    /// carried no damage, and some action at the successor is still
    /// rated `0`. Terminal successors keep their all-zero rows (they
    /// are never updated), so the max term vanishes there.
    pub fn update(&mut self, s: StateId, a: ActionId, next: StateId, damage: Damage) -> ExtReal {
        let new = self.get(s, a) + damage.log1m() + self.row_max(next);
        let idx = self.idx(s, a);
        self.entries[idx] = new;
        new
    }

    /// Actions still rated safe at `s`; may be empty.
    pub fn safe_actions(&self, s: StateId) -> Vec<ActionId> {
        self.row(s)
            .iter()
            .enumerate()
            .filter(|(_, v)| !v.is_neg_inf())
            .map(|(i, _)| ActionId(i))
            .collect()
    }

    /// A state is unsafe when no action at it is rated safe.
    pub fn is_unsafe_state(&self, s: StateId) -> bool {
        self.row(s).iter().all(|v| v.is_neg_inf())
    }

    /// `true` where this table has condemned the pair.
    pub fn is_condemned(&self, s: StateId, a: ActionId) -> bool {
        self.get(s, a).is_neg_inf()
    }

    /// Text matrix, one row per state, entries `0` or `-inf`.
    pub fn to_text_matrix(&self) -> String {
        let mut out = String::new();
        for s in 0..self.n_states {
            let row = self.row(StateId(s));
            for (i, v) in row.iter().enumerate() {
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

/// Permitted-action sets, one per state, kept in lockstep with a
/// [`BarrierTable`]: an action is removed the moment its entry drops to
/// `-inf`, and never returns.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SafeSets {
    allowed: Vec<bool>,
    counts: Vec<usize>,
    n_actions: usize,
}

impl SafeSets {
    /// Every action allowed in every state.
    pub fn all_allowed(n_states: usize, n_actions: usize) -> SafeSets {
        assert!(n_states > 0 && n_actions > 0, "sets must be non-empty");
        SafeSets {
            allowed: vec![true; n_states * n_actions],
            counts: vec![n_actions; n_states],
            n_actions,
        }
    }

    pub fn contains(&self, s: StateId, a: ActionId) -> bool {
        self.allowed[s.index() * self.n_actions + a.index()]
    }

    pub fn remove(&mut self, s: StateId, a: ActionId) {
        let idx = s.index() * self.n_actions + a.index();
        if self.allowed[idx] {
            self.allowed[idx] = false;
            self.counts[s.index()] -= 1;
        }
    }

    pub fn is_empty(&self, s: StateId) -> bool {
        self.counts[s.index()] == 0
    }

    pub fn len(&self, s: StateId) -> usize {
        self.counts[s.index()]
    }

    pub fn actions(&self, s: StateId) -> Vec<ActionId> {
        let base = s.index() * self.n_actions;
        (0..self.n_actions)
            .filter(|&a| self.allowed[base + a])
            .map(ActionId)
            .collect()
    }
}
