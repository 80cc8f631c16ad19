//! A second, deliberately naive implementation of the grid rules, written from
//! the prose description, plus a breadth-first enumeration that compares it
//! against the library simulator.


use std::collections::{HashSet, VecDeque};

use explore_bonus::gridworld::{Action, EnvInstance, EnvState, Observation, AGENT_CHANNEL, DOOR_CHANNEL, KEY_CHANNEL};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct RefState {
    pub row: usize,
    pub col: usize,
    /// 0 for empty hands, else column of the held key plus one.
    pub hand: usize,
    pub done: bool,
}

#[derive(Clone, Copy, PartialEq)]
enum Tile {
    Floor,
    Key(usize),
    Door(usize),
}

pub struct RefWorld {
    n: usize,
    tiles: Vec<Vec<Tile>>,
    goal_key: usize,
    goal_door: usize,
    pub start: (usize, usize),
}

impl RefWorld {
    pub fn new(inst: &EnvInstance) -> Self {
        let n = inst.n;
        let mut tiles = vec![vec![Tile::Floor; n]; n];
        for col in 0..n {
            tiles[inst.key_cells[col]][col] = Tile::Key(col);
            tiles[inst.door_cells[col]][col] = Tile::Door(col);
        }
        Self {
            n,
            tiles,
            goal_key: inst.correct_key,
            goal_door: inst.correct_door,
            start: inst.start_cell,
        }
    }

    pub fn start_state(&self) -> RefState {
        RefState {
            row: self.start.0,
            col: self.start.1,
            hand: 0,
            done: false,
        }
    }

    /// Successor and reward, with no step cap.
    pub fn act(&self, s: RefState, code: usize) -> (RefState, f64) {
        let mut t = s;
        let last = self.n as isize - 1;
        let shift = |v: usize, d: isize| (v as isize + d).clamp(0, last) as usize;
        match code {
            0 => t.col = shift(s.col, -1),
            1 => t.col = shift(s.col, 1),
            2 => t.row = shift(s.row, -1),
            3 => t.row = shift(s.row, 1),
            4 => {
                // picking up a key drops the old one; "taking" the key already in
                // hand, or taking on a non-key tile, leaves the hands empty
                let before = s.hand;
                t.hand = 0;
                if let Tile::Key(k) = self.tiles[s.row][s.col] {
                    if before != k + 1 {
                        t.hand = k + 1;
                    }
                }
            }
            5 => {
                if self.tiles[s.row][s.col] == Tile::Door(self.goal_door) && s.hand == self.goal_key + 1 {
                    t.done = true;
                    return (t, 100.0);
                }
                t.hand = 0;
            }
            6 => return (t, 0.0),
            _ => unreachable!(),
        }
        (t, -1.0)
    }

    /// Lit cells per channel: keys at home unless held, the held key under the
    /// agent, every door, the agent.
    pub fn picture(&self, s: RefState) -> [HashSet<(usize, usize)>; 3] {
        let mut keys = HashSet::new();
        let mut doors = HashSet::new();
        for r in 0..self.n {
            for c in 0..self.n {
                match self.tiles[r][c] {
                    Tile::Key(k) if s.hand != k + 1 => {
                        keys.insert((r, c));
                    }
                    Tile::Door(_) => {
                        doors.insert((r, c));
                    }
                    _ => {}
                }
            }
        }
        if s.hand != 0 {
            keys.insert((s.row, s.col));
        }
        [keys, doors, HashSet::from([(s.row, s.col)])]
    }
}

fn lit_cells(obs: &Observation, n: usize, channel: usize) -> HashSet<(usize, usize)> {
    (0..n)
        .flat_map(|r| (0..n).map(move |c| (r, c)))
        .filter(|&(r, c)| obs.is_lit(r, c, channel))
        .collect()
}

fn to_lib(s: RefState, steps: usize) -> EnvState {
    EnvState {
        agent: (s.row, s.col),
        held_key: s.hand.checked_sub(1),
        terminal: s.done,
        truncated: false,
        step_count: steps,
    }
}

pub struct OracleOutcome {
    pub states: usize,
    pub transitions: usize,
    pub mismatches: Vec<String>,
}

/// Enumerates every state reachable from the start under the reference rules
/// and checks each (state, action) against the library transition and render.
pub fn bfs_compare(inst: &EnvInstance) -> OracleOutcome {
    let world = RefWorld::new(inst);
    let n = inst.n;
    let cap = usize::MAX;
    let mut seen = HashSet::new();
    let mut queue = VecDeque::new();
    let start = world.start_state();
    seen.insert(start);
    queue.push_back(start);
    let mut out = OracleOutcome {
        states: 0,
        transitions: 0,
        mismatches: Vec::new(),
    };
    let (lib_start, lib_obs) = inst.reset();
    if lib_start != to_lib(start, 0) {
        out.mismatches.push("start state".into());
    }
    let pic = world.picture(start);
    for ch in [KEY_CHANNEL, DOOR_CHANNEL, AGENT_CHANNEL] {
        if lit_cells(&lib_obs, n, ch) != pic[ch] {
            out.mismatches.push(format!("start render channel {ch}"));
        }
    }
    while let Some(s) = queue.pop_front() {
        out.states += 1;
        for code in 0..7 {
            out.transitions += 1;
            let (want, want_r) = world.act(s, code);
            let action = Action::from_index(code).expect("7 actions");
            let got = match inst.step(&to_lib(s, 0), action, cap) {
                Ok(step) => step,
                Err(e) => {
                    out.mismatches.push(format!("{s:?} {action:?}: {e}"));
                    continue;
                }
            };
            if got.state != to_lib(want, 1) || got.reward != want_r || got.terminal != want.done {
                out.mismatches.push(format!("{s:?} {action:?}: expected {want:?}/{want_r}, got {:?}/{}", got.state, got.reward));
            }
            let pic = world.picture(want);
            for ch in [KEY_CHANNEL, DOOR_CHANNEL, AGENT_CHANNEL] {
                if lit_cells(&got.observation, n, ch) != pic[ch] {
                    out.mismatches.push(format!("{s:?} {action:?}: render channel {ch}"));
                }
            }
            if !want.done && seen.insert(want) {
                queue.push_back(want);
            }
        }
    }
    out
}
