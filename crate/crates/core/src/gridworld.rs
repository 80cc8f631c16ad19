//! The KeysDoors grid-world.
//!
//! An `n x n` grid holds exactly one key and one door per column. One key and
//! one door are "correct"; opening the correct door while holding the correct
//! key pays +100 and ends the episode. Every other action costs -1 except
//! `wait`, which costs nothing.
//!
//! Cells are `(row, col)` with `(0, 0)` in the top-left corner; `up` decreases
//! the row and `right` increases the column.

use rand::Rng as _;
use serde::de::Error as _;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::rng::{self, Rng};

pub type Cell = (usize, usize);

pub const NUM_ACTIONS: usize = 7;
pub const NUM_CHANNELS: usize = 3;
pub const KEY_CHANNEL: usize = 0;
pub const DOOR_CHANNEL: usize = 1;
pub const AGENT_CHANNEL: usize = 2;

pub const GOAL_REWARD: f64 = 100.0;
pub const STEP_REWARD: f64 = -1.0;
pub const WAIT_REWARD: f64 = 0.0;

/// Raw pixel intensity of a lit cell; observations are divided by this.
const LIT: u8 = 255;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
#[repr(u8)]
pub enum Action {
    Left = 0,
    Right = 1,
    Up = 2,
    Down = 3,
    Take = 4,
    Open = 5,
    Wait = 6,
}

impl Action {
    pub const ALL: [Action; NUM_ACTIONS] = [
        Action::Left,
        Action::Right,
        Action::Up,
        Action::Down,
        Action::Take,
        Action::Open,
        Action::Wait,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(index: usize) -> Option<Action> {
        Action::ALL.get(index).copied()
    }

    pub fn is_movement(self) -> bool {
        matches!(self, Action::Left | Action::Right | Action::Up | Action::Down)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EnvConfig {
    pub n: usize,
    pub episode_cap: usize,
    pub seed: u64,
}

impl Default for EnvConfig {
    fn default() -> Self {
        Self {
            n: 5,
            episode_cap: 2000,
            seed: 0,
        }
    }
}

impl EnvConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n < 2 {
            return Err(Error::InvalidConfig(format!(
                "grid side must be at least 2, got {}",
                self.n
            )));
        }
        if self.episode_cap == 0 {
            return Err(Error::InvalidConfig("episode_cap must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct EnvInstance {
    pub n: usize,
    /// Row of the key in each column.
    pub key_cells: Vec<usize>,
    /// Row of the door in each column.
    pub door_cells: Vec<usize>,
    pub correct_key: usize,
    pub correct_door: usize,
    pub start_cell: Cell,
    pub seed: u64,
}

/// Samples a layout: per column, key and door rows drawn without replacement,
/// then the correct key, the correct door and the start cell.
pub fn generate_instance(cfg: &EnvConfig, rng: &mut Rng) -> Result<EnvInstance> {
    cfg.validate()?;
    let n = cfg.n;
    let mut key_cells = Vec::with_capacity(n);
    let mut door_cells = Vec::with_capacity(n);
    for _ in 0..n {
        let key = rng.gen_range(0..n);
        let mut door = rng.gen_range(0..n - 1);
        if door >= key {
            door += 1;
        }
        key_cells.push(key);
        door_cells.push(door);
    }
    let correct_key = rng.gen_range(0..n);
    let correct_door = rng.gen_range(0..n);
    let start_cell = (rng.gen_range(0..n), rng.gen_range(0..n));
    Ok(EnvInstance {
        n,
        key_cells,
        door_cells,
        correct_key,
        correct_door,
        start_cell,
        seed: cfg.seed,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct EnvState {
    pub agent: Cell,
    pub held_key: Option<usize>,
    /// Set on goal termination and on truncation.
    pub terminal: bool,
    /// Set only when the episode cap was reached without reaching the goal.
    pub truncated: bool,
    pub step_count: usize,
}

impl EnvState {
    pub fn goal_reached(&self) -> bool {
        self.terminal && !self.truncated
    }
}

/// One rendered frame. Stored as raw 0/255 intensities; [`Observation::pixel`]
/// and [`Observation::normalized`] expose the values divided by 255.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Observation {
    n: usize,
    raw: Vec<u8>,
}

impl Observation {
    pub fn blank(n: usize) -> Self {
        Self {
            n,
            raw: vec![0; n * n * NUM_CHANNELS],
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn len(&self) -> usize {
        self.raw.len()
    }

    pub fn is_empty(&self) -> bool {
        self.raw.is_empty()
    }

    fn offset(&self, row: usize, col: usize, channel: usize) -> usize {
        (row * self.n + col) * NUM_CHANNELS + channel
    }

    fn light(&mut self, cell: Cell, channel: usize) {
        let i = self.offset(cell.0, cell.1, channel);
        self.raw[i] = LIT;
    }

    pub fn pixel(&self, row: usize, col: usize, channel: usize) -> f64 {
        f64::from(self.raw[self.offset(row, col, channel)]) / f64::from(LIT)
    }

    pub fn is_lit(&self, row: usize, col: usize, channel: usize) -> bool {
        self.raw[self.offset(row, col, channel)] != 0
    }

    /// Flattened `[row][col][channel]` values in `[0, 1]`.
    pub fn normalized(&self) -> Vec<f64> {
        self.raw.iter().map(|&v| f64::from(v) / f64::from(LIT)).collect()
    }

    pub fn write_normalized(&self, out: &mut [f64]) {
        for (o, &v) in out.iter_mut().zip(&self.raw) {
            *o = f64::from(v) / f64::from(LIT);
        }
    }

    pub fn channel_count(&self, channel: usize) -> usize {
        self.raw
            .iter()
            .skip(channel)
            .step_by(NUM_CHANNELS)
            .filter(|&&v| v != 0)
            .count()
    }

    pub fn shape(&self) -> [usize; 3] {
        [self.n, self.n, NUM_CHANNELS]
    }

    /// Nested `n x n x 3` array of 0/1.
    pub fn to_nested(&self) -> Vec<Vec<Vec<u8>>> {
        (0..self.n)
            .map(|r| {
                (0..self.n)
                    .map(|c| {
                        (0..NUM_CHANNELS)
                            .map(|ch| u8::from(self.is_lit(r, c, ch)))
                            .collect()
                    })
                    .collect()
            })
            .collect()
    }

    pub fn from_nested(nested: &[Vec<Vec<u8>>]) -> Result<Self> {
        let n = nested.len();
        let mut obs = Observation::blank(n);
        for (r, row) in nested.iter().enumerate() {
            if row.len() != n {
                return Err(Error::Format(format!("observation row {r} has {} cells", row.len())));
            }
            for (c, cell) in row.iter().enumerate() {
                if cell.len() != NUM_CHANNELS {
                    return Err(Error::Format(format!("cell ({r},{c}) has {} channels", cell.len())));
                }
                for (ch, &v) in cell.iter().enumerate() {
                    match v {
                        0 => {}
                        1 => obs.light((r, c), ch),
                        other => {
                            return Err(Error::Format(format!("pixel value {other} is not 0/1")))
                        }
                    }
                }
            }
        }
        Ok(obs)
    }
}

impl Serialize for Observation {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        self.to_nested().serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for Observation {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let nested = Vec::<Vec<Vec<u8>>>::deserialize(deserializer)?;
        Observation::from_nested(&nested).map_err(D::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Step {
    pub state: EnvState,
    pub observation: Observation,
    pub reward: f64,
    pub terminal: bool,
}

impl EnvInstance {
    /// Generates the instance for `cfg`, drawing from the stream seeded by `cfg.seed`.
    pub fn from_config(cfg: &EnvConfig) -> Result<Self> {
        generate_instance(cfg, &mut rng::from_seed(cfg.seed))
    }

    pub fn key_cell(&self, key: usize) -> Cell {
        (self.key_cells[key], key)
    }

    pub fn door_cell(&self, door: usize) -> Cell {
        (self.door_cells[door], door)
    }

    /// Column of the key whose home is `cell`, if any.
    pub fn key_at(&self, cell: Cell) -> Option<usize> {
        (self.key_cells.get(cell.1) == Some(&cell.0)).then_some(cell.1)
    }

    pub fn door_at(&self, cell: Cell) -> Option<usize> {
        (self.door_cells.get(cell.1) == Some(&cell.0)).then_some(cell.1)
    }

    /// Checks every structural invariant of a (possibly deserialized) instance.
    pub fn validate(&self) -> Result<()> {
        let n = self.n;
        if n < 2 {
            return Err(Error::InvalidConfig(format!("grid side must be at least 2, got {n}")));
        }
        if self.key_cells.len() != n || self.door_cells.len() != n {
            return Err(Error::Format("key/door vectors must have one entry per column".into()));
        }
        for c in 0..n {
            if self.key_cells[c] >= n || self.door_cells[c] >= n {
                return Err(Error::Format(format!("column {c} has an off-grid key or door")));
            }
            if self.key_cells[c] == self.door_cells[c] {
                return Err(Error::Format(format!("column {c} has key and door on the same cell")));
            }
        }
        if self.correct_key >= n || self.correct_door >= n {
            return Err(Error::Format("correct key/door out of range".into()));
        }
        if self.start_cell.0 >= n || self.start_cell.1 >= n {
            return Err(Error::Format("start cell off-grid".into()));
        }
        Ok(())
    }

    pub fn initial_state(&self) -> EnvState {
        EnvState {
            agent: self.start_cell,
            held_key: None,
            terminal: false,
            truncated: false,
            step_count: 0,
        }
    }

    pub fn reset(&self) -> (EnvState, Observation) {
        let state = self.initial_state();
        let obs = self.render(&state);
        (state, obs)
    }

    /// Applies the dynamics without rendering. Returns the next state and the reward.
    pub fn transition(&self, state: &EnvState, action: Action, cap: usize) -> Result<(EnvState, f64)> {
        if state.terminal || state.step_count >= cap {
            return Err(Error::TerminalStep {
                step_count: state.step_count,
            });
        }
        let n = self.n;
        let mut next = *state;
        let (row, col) = state.agent;
        let mut reward = STEP_REWARD;
        match action {
            Action::Left => next.agent = (row, col.saturating_sub(1)),
            Action::Right => next.agent = (row, (col + 1).min(n - 1)),
            Action::Up => next.agent = (row.saturating_sub(1), col),
            Action::Down => next.agent = ((row + 1).min(n - 1), col),
            Action::Take => {
                // A key can only be picked up from its home cell while it is not held;
                // any previously held key goes back home either way.
                next.held_key = match self.key_at(state.agent) {
                    Some(k) if state.held_key != Some(k) => Some(k),
                    _ => None,
                };
            }
            Action::Open => {
                let on_correct_door = self.door_at(state.agent) == Some(self.correct_door);
                if on_correct_door && state.held_key == Some(self.correct_key) {
                    reward = GOAL_REWARD;
                    next.terminal = true;
                } else {
                    next.held_key = None;
                }
            }
            Action::Wait => reward = WAIT_REWARD,
        }
        next.step_count += 1;
        if !next.terminal && next.step_count >= cap {
            next.terminal = true;
            next.truncated = true;
        }
        Ok((next, reward))
    }

    pub fn step(&self, state: &EnvState, action: Action, cap: usize) -> Result<Step> {
        let (state, reward) = self.transition(state, action, cap)?;
        let observation = self.render(&state);
        Ok(Step {
            terminal: state.terminal,
            state,
            observation,
            reward,
        })
    }

    pub fn render(&self, state: &EnvState) -> Observation {
        let mut obs = Observation::blank(self.n);
        for k in 0..self.n {
            if state.held_key != Some(k) {
                obs.light(self.key_cell(k), KEY_CHANNEL);
            }
        }
        if state.held_key.is_some() {
            obs.light(state.agent, KEY_CHANNEL);
        }
        for d in 0..self.n {
            obs.light(self.door_cell(d), DOOR_CHANNEL);
        }
        obs.light(state.agent, AGENT_CHANNEL);
        obs
    }

    /// `(row * n + col) * (n + 1) + held`, where `held` is 0 for no key and
    /// `k + 1` for key `k`.
    pub fn ground_truth_state(&self, state: &EnvState) -> u64 {
        let n = self.n as u64;
        let cell = state.agent.0 as u64 * n + state.agent.1 as u64;
        let held = state.held_key.map_or(0, |k| k as u64 + 1);
        cell * (n + 1) + held
    }

    pub fn num_ground_truth_states(&self) -> u64 {
        let n = self.n as u64;
        n * n * (n + 1)
    }

    /// Identity of the layout, goal and start, independent of the seed it came from.
    /// Canonical text of the layout, ignoring the seed.
    pub fn fingerprint(&self) -> String {
        let join = |v: &[usize]| v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",");
        format!(
            "n={};keys={};doors={};correct={},{};start={},{}",
            self.n,
            join(&self.key_cells),
            join(&self.door_cells),
            self.correct_key,
            self.correct_door,
            self.start_cell.0,
            self.start_cell.1
        )
    }
}
