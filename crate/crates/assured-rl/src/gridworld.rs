//! Episodic maze environment with wall-bump damage.
//!
//! The agent navigates an ASCII maze with four moves. Stepping into a
//! free cell costs nothing, reaching the goal pays +10 and ends the
//! episode, and bumping into a wall (or off the grid) is the unsafe
//! event: it emits damage, moves the agent to the synthetic damage
//! terminal, and ends the episode. By default the next episode then
//! resumes from the cell the agent occupied before the bump.
//!
//! The environment is deterministic, so it also exports an exact
//! [`TabularCmdp`] (every row a point mass) for the dynamic-programming
//! oracle to consume.

use rand::Rng;
use thiserror::Error;

use crate::cmdp::{ActionId, Damage, Outcome, StateId, TabularCmdp};

/// Canonical corridor-with-detour maze used by the bundled experiments:
/// a width-one corridor of three cells joins start and goal, and a
/// longer open loop goes around it. With discounting, the corridor is
/// optimal but risky to explore (two of the four moves inside it bump).
pub const CORRIDOR_DETOUR_MAZE: &str = include_str!("../../../mazes/corridor_detour.txt");

/// The four moves.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Action {
    Up = 0,
    Down = 1,
    Right = 2,
    Left = 3,
}

impl Action {
    pub const ALL: [Action; 4] = [Action::Up, Action::Down, Action::Right, Action::Left];
    pub const COUNT: usize = 4;

    pub fn id(self) -> ActionId {
        ActionId(self as usize)
    }

    pub fn from_id(a: ActionId) -> Option<Action> {
        Action::ALL.get(a.index()).copied()
    }

    /// Grid delta `(dx, dy)`; y grows downward.
    pub fn delta(self) -> (isize, isize) {
        match self {
            Action::Up => (0, -1),
            Action::Down => (0, 1),
            Action::Right => (1, 0),
            Action::Left => (-1, 0),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Cell {
    Wall,
    Free,
    Start,
    Goal,
}

impl Cell {
    pub fn is_live(self) -> bool {
        !matches!(self, Cell::Wall)
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum MazeParseError {
    #[error("maze text is empty")]
    Empty,
    #[error("line {line}: row has {got} cells, expected {expected}")]
    RaggedRows { line: usize, got: usize, expected: usize },
    #[error("line {line}, column {column}: illegal character {ch:?}")]
    IllegalChar { line: usize, column: usize, ch: char },
    #[error("line {line}, column {column}: second start cell (exactly one `S` allowed)")]
    MultipleStart { line: usize, column: usize },
    #[error("line {line}, column {column}: second goal cell (exactly one `G` allowed)")]
    MultipleGoal { line: usize, column: usize },
    #[error("maze has no start cell")]
    NoStart,
    #[error("maze has no goal cell")]
    NoGoal,
}

/// Parsed, immutable maze layout plus its state-id numbering.
///
/// Live (non-wall) cells get dense ids in row-major order; one extra
/// synthetic id at the end is the damage terminal.
#[derive(Clone, Debug, PartialEq)]
pub struct MazeSpec {
    width: usize,
    height: usize,
    cells: Vec<Cell>,
    /// State id per cell, `None` for walls.
    ids: Vec<Option<StateId>>,
    /// Cell coordinates per live state id.
    coords: Vec<(usize, usize)>,
    start: (usize, usize),
    goal: (usize, usize),
}

impl MazeSpec {
    /// Parses maze text: `#` wall, `.` free, `S` start, `G` goal, one
    /// row per line, rectangular, trailing newline optional.
    pub fn parse(text: &str) -> Result<MazeSpec, MazeParseError> {
        let mut cells = Vec::new();
        let mut width = None;
        let mut height = 0;
        let mut start = None;
        let mut goal = None;

        for (y, row) in text.lines().enumerate() {
            let row_cells: Vec<char> = row.chars().collect();
            match width {
                None => width = Some(row_cells.len()),
                Some(w) if w != row_cells.len() => {
                    return Err(MazeParseError::RaggedRows {
                        line: y + 1,
                        got: row_cells.len(),
                        expected: w,
                    })
                }
                Some(_) => {}
            }
            for (x, ch) in row_cells.into_iter().enumerate() {
                let cell = match ch {
                    '#' => Cell::Wall,
                    '.' => Cell::Free,
                    'S' => {
                        if start.replace((x, y)).is_some() {
                            return Err(MazeParseError::MultipleStart { line: y + 1, column: x + 1 });
                        }
                        Cell::Start
                    }
                    'G' => {
                        if goal.replace((x, y)).is_some() {
                            return Err(MazeParseError::MultipleGoal { line: y + 1, column: x + 1 });
                        }
                        Cell::Goal
                    }
                    other => {
                        return Err(MazeParseError::IllegalChar {
                            line: y + 1,
                            column: x + 1,
                            ch: other,
                        })
                    }
                };
                cells.push(cell);
            }
            height += 1;
        }

        let width = width.filter(|&w| w > 0).ok_or(MazeParseError::Empty)?;
        if height == 0 {
            return Err(MazeParseError::Empty);
        }
        let start = start.ok_or(MazeParseError::NoStart)?;
        let goal = goal.ok_or(MazeParseError::NoGoal)?;

        let mut ids = vec![None; cells.len()];
        let mut coords = Vec::new();
        for (i, cell) in cells.iter().enumerate() {
            if cell.is_live() {
                ids[i] = Some(StateId(coords.len()));
                coords.push((i % width, i / width));
            }
        }

        Ok(MazeSpec { width, height, cells, ids, coords, start, goal })
    }

    /// The bundled corridor-with-detour maze.
    pub fn corridor_detour() -> MazeSpec {
        MazeSpec::parse(CORRIDOR_DETOUR_MAZE).expect("bundled maze is valid")
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn cell(&self, x: usize, y: usize) -> Cell {
        self.cells[y * self.width + x]
    }

    /// Live cells plus the damage terminal.
    pub fn n_states(&self) -> usize {
        self.coords.len() + 1
    }

    pub fn n_actions(&self) -> usize {
        Action::COUNT
    }

    pub fn damage_state(&self) -> StateId {
        StateId(self.coords.len())
    }

    pub fn start_state(&self) -> StateId {
        self.state_at(self.start.0, self.start.1).expect("start is live")
    }

    pub fn goal_state(&self) -> StateId {
        self.state_at(self.goal.0, self.goal.1).expect("goal is live")
    }

    /// State id of the cell at `(x, y)`, if it is live and on the grid.
    pub fn state_at(&self, x: usize, y: usize) -> Option<StateId> {
        if x >= self.width || y >= self.height {
            return None;
        }
        self.ids[y * self.width + x]
    }

    /// Coordinates of a live state (`None` for the damage terminal).
    pub fn coords_of(&self, s: StateId) -> Option<(usize, usize)> {
        self.coords.get(s.index()).copied()
    }

    /// Live non-goal states, i.e. the cells an episode may start in.
    pub fn startable_states(&self) -> Vec<StateId> {
        let goal = self.goal_state();
        (0..self.coords.len()).map(StateId).filter(|&s| s != goal).collect()
    }

    /// Result of attempting `action` from the live cell with id `s`.
    /// Off-grid, wall, goal, and free moves are all resolved here so the
    /// stepper and the model export share one source of truth.
    fn move_outcome(&self, s: StateId, action: Action) -> MoveOutcome {
        let (x, y) = self.coords_of(s).expect("moves originate from live cells");
        let (dx, dy) = action.delta();
        let nx = x as isize + dx;
        let ny = y as isize + dy;
        if nx < 0 || ny < 0 {
            return MoveOutcome::Bump;
        }
        match self.state_at(nx as usize, ny as usize) {
            None => MoveOutcome::Bump,
            Some(next) if next == self.goal_state() => MoveOutcome::Goal(next),
            Some(next) => MoveOutcome::Free(next),
        }
    }

    /// Exact model export. Transitions are deterministic, so every
    /// `(s, a)` row is a point mass; the goal is a second absorbing
    /// terminal (zero reward, no damage) distinct from the damage
    /// terminal, and the start distribution is a point mass on the
    /// start cell.
    pub fn to_cmdp(&self) -> TabularCmdp {
        let n = self.n_states();
        let s_d = self.damage_state();
        let goal = self.goal_state();
        let mut start = vec![0.0; n];
        start[self.start_state().index()] = 1.0;
        let mut model =
            TabularCmdp::new(n, Action::COUNT, s_d, start).expect("non-empty by construction");

        let point = |next: StateId, reward: f64, damage: bool| {
            vec![Outcome { prob: 1.0, next, reward, damage: Damage::from(damage) }]
        };
        for s in (0..self.coords.len()).map(StateId) {
            for action in Action::ALL {
                let row = if s == goal {
                    point(goal, 0.0, false)
                } else {
                    match self.move_outcome(s, action) {
                        MoveOutcome::Bump => point(s_d, 0.0, true),
                        MoveOutcome::Goal(g) => point(g, GOAL_REWARD, false),
                        MoveOutcome::Free(next) => point(next, 0.0, false),
                    }
                };
                model.set_outcomes(s, action.id(), row).expect("indices in range");
            }
        }
        for action in Action::ALL {
            model.set_outcomes(s_d, action.id(), point(s_d, 0.0, false)).expect("in range");
        }
        model
    }
}

enum MoveOutcome {
    Bump,
    Goal(StateId),
    Free(StateId),
}

/// Reward for reaching the goal; all other moves pay zero.
pub const GOAL_REWARD: f64 = 10.0;

/// Where an episode resumes after a wall bump.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RestartMode {
    /// Resume from the cell occupied just before the bump.
    PrecedingState,
    /// Always restart from the start rule.
    FixedStart,
}

/// How fresh episodes (goal, truncation, or first episode) choose their
/// start state.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StartRule {
    /// The maze's `S` cell.
    StartCell,
    /// Uniform over all live non-goal cells (exploring starts).
    UniformFree,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum EpisodeEnd {
    Bump,
    Goal,
    Truncated,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum GridError {
    #[error("step called after the episode ended; call reset first")]
    EpisodeOver,
    #[error("unknown action id {0}")]
    UnknownAction(usize),
    #[error("cannot start an episode at {0}: not a live non-goal cell")]
    BadStartState(StateId),
}

/// One environment step.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepOutcome {
    pub next: StateId,
    pub reward: f64,
    pub damage: Damage,
    pub done: bool,
}

/// Mutable episodic wrapper around a [`MazeSpec`].
#[derive(Clone, Debug)]
pub struct GridEnv {
    spec: MazeSpec,
    step_cap: usize,
    restart_mode: RestartMode,
    start_rule: StartRule,
    current: StateId,
    previous: StateId,
    steps_this_episode: usize,
    episode_done: bool,
    last_end: Option<EpisodeEnd>,
}

impl GridEnv {
    pub fn new(spec: MazeSpec, restart_mode: RestartMode, step_cap: usize) -> GridEnv {
        let start = spec.start_state();
        GridEnv {
            spec,
            step_cap,
            restart_mode,
            start_rule: StartRule::StartCell,
            current: start,
            previous: start,
            steps_this_episode: 0,
            episode_done: false,
            last_end: None,
        }
    }

    pub fn with_start_rule(mut self, rule: StartRule) -> GridEnv {
        self.start_rule = rule;
        self
    }

    pub fn spec(&self) -> &MazeSpec {
        &self.spec
    }

    pub fn n_states(&self) -> usize {
        self.spec.n_states()
    }

    pub fn n_actions(&self) -> usize {
        self.spec.n_actions()
    }

    pub fn current_state(&self) -> StateId {
        self.current
    }

    pub fn episode_done(&self) -> bool {
        self.episode_done
    }

    pub fn steps_this_episode(&self) -> usize {
        self.steps_this_episode
    }

    /// Begins a new episode and returns its start state.
    ///
    /// After a bump under [`RestartMode::PrecedingState`] the episode
    /// resumes from the pre-bump cell; the bump event is consumed, so a
    /// skipped episode falls back to the start rule on the next reset.
    /// Episodes ended by goal or truncation always use the start rule.
    pub fn reset<R: Rng + ?Sized>(&mut self, rng: &mut R) -> StateId {
        let s = match (self.restart_mode, self.last_end.take()) {
            (RestartMode::PrecedingState, Some(EpisodeEnd::Bump)) => self.previous,
            _ => self.draw_start(rng),
        };
        self.begin_at(s);
        s
    }

    /// Begins a new episode at an explicit live non-goal cell.
    pub fn reset_to(&mut self, s: StateId) -> Result<StateId, GridError> {
        let live = self.spec.coords_of(s).is_some();
        if !live || s == self.spec.goal_state() {
            return Err(GridError::BadStartState(s));
        }
        self.last_end = None;
        self.begin_at(s);
        Ok(s)
    }

    fn begin_at(&mut self, s: StateId) {
        self.current = s;
        self.previous = s;
        self.steps_this_episode = 0;
        self.episode_done = false;
    }

    fn draw_start<R: Rng + ?Sized>(&self, rng: &mut R) -> StateId {
        match self.start_rule {
            StartRule::StartCell => self.spec.start_state(),
            StartRule::UniformFree => {
                let candidates = self.spec.startable_states();
                candidates[rng.gen_range(0..candidates.len())]
            }
        }
    }

    /// Applies one action. Moving into a free cell is an ordinary step;
    /// the goal pays [`GOAL_REWARD`] and ends the episode; a wall or the
    /// grid edge emits damage, records the pre-bump cell for the restart
    /// rule, and ends the episode. Hitting the step cap ends the episode
    /// without damage.
    pub fn step(&mut self, a: ActionId) -> Result<StepOutcome, GridError> {
        if self.episode_done {
            return Err(GridError::EpisodeOver);
        }
        let action = Action::from_id(a).ok_or(GridError::UnknownAction(a.index()))?;
        self.steps_this_episode += 1;

        let outcome = match self.spec.move_outcome(self.current, action) {
            MoveOutcome::Bump => {
                self.previous = self.current;
                self.current = self.spec.damage_state();
                self.episode_done = true;
                self.last_end = Some(EpisodeEnd::Bump);
                StepOutcome {
                    next: self.current,
                    reward: 0.0,
                    damage: Damage::Damaged,
                    done: true,
                }
            }
            MoveOutcome::Goal(goal) => {
                self.current = goal;
                self.episode_done = true;
                self.last_end = Some(EpisodeEnd::Goal);
                StepOutcome { next: goal, reward: GOAL_REWARD, damage: Damage::Safe, done: true }
            }
            MoveOutcome::Free(next) => {
                self.current = next;
                if self.steps_this_episode >= self.step_cap {
                    self.episode_done = true;
                    self.last_end = Some(EpisodeEnd::Truncated);
                }
                StepOutcome {
                    next,
                    reward: 0.0,
                    damage: Damage::Safe,
                    done: self.episode_done,
                }
            }
        };
        Ok(outcome)
    }
}
