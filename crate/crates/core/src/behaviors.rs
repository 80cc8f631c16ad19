//! Scripted controllers and the demonstration dataset.

use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gridworld::{Action, Cell, EnvInstance, EnvState, Observation};
use crate::rng::Rng;

/// Cap for the demonstrator family (demonstrator, inverse, random order, waiting, unsafe).
pub const DEMONSTRATOR_CAP: usize = 2000;
/// Cap for the random, dummy and standing-still behaviors.
pub const SHORT_CAP: usize = 1000;
pub const WAIT_PROBABILITY: f64 = 0.1;
pub const EXPLOIT_EPISODES: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BehaviorKind {
    Demonstrator,
    Random,
    DemonstratorInverse,
    DemonstratorRandomOrder,
    DummyDemonstrator,
    StandingStill,
    WaitingDemonstrator,
    UnsafeDemonstrator,
}

impl BehaviorKind {
    pub const ALL: [BehaviorKind; 8] = [
        BehaviorKind::Demonstrator,
        BehaviorKind::Random,
        BehaviorKind::DemonstratorInverse,
        BehaviorKind::DemonstratorRandomOrder,
        BehaviorKind::DummyDemonstrator,
        BehaviorKind::StandingStill,
        BehaviorKind::WaitingDemonstrator,
        BehaviorKind::UnsafeDemonstrator,
    ];

    pub fn name(self) -> &'static str {
        match self {
            BehaviorKind::Demonstrator => "demonstrator",
            BehaviorKind::Random => "random",
            BehaviorKind::DemonstratorInverse => "demonstrator_inverse",
            BehaviorKind::DemonstratorRandomOrder => "demonstrator_random_order",
            BehaviorKind::DummyDemonstrator => "dummy_demonstrator",
            BehaviorKind::StandingStill => "standing_still",
            BehaviorKind::WaitingDemonstrator => "waiting_demonstrator",
            BehaviorKind::UnsafeDemonstrator => "unsafe_demonstrator",
        }
    }

    pub fn cap(self) -> usize {
        match self {
            BehaviorKind::Random | BehaviorKind::DummyDemonstrator | BehaviorKind::StandingStill => {
                SHORT_CAP
            }
            _ => DEMONSTRATOR_CAP,
        }
    }
}

impl fmt::Display for BehaviorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for BehaviorKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        BehaviorKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::InvalidConfig(format!("unknown behavior `{s}`")))
    }
}

/// A recorded episode. Observations and ground-truth states have one more
/// entry than actions: index `t` is the state before action `t`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Episode {
    pub instance_ref: u64,
    pub observations: Vec<Observation>,
    pub ground_truth_states: Vec<u64>,
    pub actions: Vec<Action>,
    pub rewards: Vec<f64>,
    /// The final transition reached the goal.
    pub terminal: bool,
    /// The episode stopped without reaching the goal (cap or end of script).
    pub truncated: bool,
}

#[derive(Debug, Clone, Copy)]
pub struct Transition<'a> {
    pub observation: &'a Observation,
    pub ground_truth_state: u64,
    pub action: Action,
    pub reward: f64,
    pub next_observation: &'a Observation,
    pub next_ground_truth_state: u64,
    pub terminal: bool,
    pub truncated: bool,
}

impl Episode {
    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }

    pub fn total_reward(&self) -> f64 {
        self.rewards.iter().sum()
    }

    pub fn count(&self, action: Action) -> usize {
        self.actions.iter().filter(|&&a| a == action).count()
    }

    pub fn transition(&self, t: usize) -> Transition<'_> {
        let last = t + 1 == self.len();
        Transition {
            observation: &self.observations[t],
            ground_truth_state: self.ground_truth_states[t],
            action: self.actions[t],
            reward: self.rewards[t],
            next_observation: &self.observations[t + 1],
            next_ground_truth_state: self.ground_truth_states[t + 1],
            terminal: last && self.terminal,
            truncated: last && self.truncated,
        }
    }

    pub fn transitions(&self) -> impl Iterator<Item = Transition<'_>> {
        (0..self.len()).map(move |t| self.transition(t))
    }

    /// Structural check used when reading episodes back from disk.
    pub fn validate(&self) -> Result<()> {
        let t = self.actions.len();
        if self.observations.len() != t + 1
            || self.ground_truth_states.len() != t + 1
            || self.rewards.len() != t
        {
            return Err(Error::Format(format!(
                "episode lengths disagree: {} observations, {} states, {} actions, {} rewards",
                self.observations.len(),
                self.ground_truth_states.len(),
                t,
                self.rewards.len()
            )));
        }
        if self.terminal && self.truncated {
            return Err(Error::Format("episode both terminal and truncated".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Demonstration {
    pub exploration_episode: Episode,
    pub exploit_episodes: Vec<Episode>,
}

impl Demonstration {
    pub fn episodes(&self) -> impl Iterator<Item = &Episode> {
        std::iter::once(&self.exploration_episode).chain(self.exploit_episodes.iter())
    }
}

/// Steps an instance and records everything into an [`Episode`].
struct Rollout<'a> {
    instance: &'a EnvInstance,
    cap: usize,
    state: EnvState,
    episode: Episode,
}

impl<'a> Rollout<'a> {
    fn new(instance: &'a EnvInstance, cap: usize) -> Self {
        let (state, obs) = instance.reset();
        let episode = Episode {
            instance_ref: instance.seed,
            observations: vec![obs],
            ground_truth_states: vec![instance.ground_truth_state(&state)],
            actions: Vec::new(),
            rewards: Vec::new(),
            terminal: false,
            truncated: false,
        };
        Self {
            instance,
            cap,
            state,
            episode,
        }
    }

    fn done(&self) -> bool {
        self.state.terminal
    }

    fn act(&mut self, action: Action) -> Result<()> {
        let step = self.instance.step(&self.state, action, self.cap)?;
        self.state = step.state;
        self.episode.actions.push(action);
        self.episode.rewards.push(step.reward);
        self.episode.observations.push(step.observation);
        self.episode
            .ground_truth_states
            .push(self.instance.ground_truth_state(&self.state));
        Ok(())
    }

    fn finish(mut self) -> Episode {
        self.episode.terminal = self.state.goal_reached();
        self.episode.truncated = !self.episode.terminal;
        self.episode
    }
}

/// Column-first path: all horizontal moves, then all vertical moves.
pub fn navigate(from: Cell, to: Cell) -> Vec<Action> {
    let (horizontal, h_steps) = if to.1 >= from.1 {
        (Action::Right, to.1 - from.1)
    } else {
        (Action::Left, from.1 - to.1)
    };
    let (vertical, v_steps) = if to.0 >= from.0 {
        (Action::Down, to.0 - from.0)
    } else {
        (Action::Up, from.0 - to.0)
    };
    std::iter::repeat_n(horizontal, h_steps)
        .chain(std::iter::repeat_n(vertical, v_steps))
        .collect()
}

/// Keys left to right, and for each key, doors left to right.
pub fn canonical_order(n: usize) -> Vec<(usize, usize)> {
    (0..n).flat_map(|k| (0..n).map(move |d| (k, d))).collect()
}

/// How a scripted key/door plan is perturbed while it is executed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum ScriptStyle {
    Faithful,
    /// Before each scripted action, wait with the given probability (repeatedly).
    Waiting,
    /// Drop the key with an extra `open` somewhere on every key-to-door leg.
    Dummy,
    /// Follow every movement with `take` while no key is held.
    Unsafe,
}

struct Script<'a, 'r> {
    rollout: Rollout<'a>,
    style: ScriptStyle,
    rng: &'r mut Rng,
}

impl Script<'_, '_> {
    fn emit(&mut self, action: Action) -> Result<()> {
        if self.style == ScriptStyle::Waiting {
            while !self.rollout.done() && self.rng.gen_bool(WAIT_PROBABILITY) {
                self.rollout.act(Action::Wait)?;
            }
        }
        if !self.rollout.done() {
            self.rollout.act(action)?;
        }
        Ok(())
    }

    /// Moves along `path`; `then` is the scripted action that follows the path.
    fn walk(&mut self, path: &[Action], then: Action) -> Result<()> {
        for (i, &step) in path.iter().enumerate() {
            if self.rollout.done() {
                break;
            }
            self.emit(step)?;
            let last = i + 1 == path.len();
            if self.style == ScriptStyle::Unsafe
                && self.rollout.state.held_key.is_none()
                && !(last && then == Action::Take)
                && !self.rollout.done()
            {
                self.rollout.act(Action::Take)?;
            }
        }
        Ok(())
    }

    fn try_pair(&mut self, key: usize, door: usize) -> Result<()> {
        let inst = self.rollout.instance;
        let key_cell = inst.key_cell(key);
        let door_cell = inst.door_cell(door);
        let to_key = navigate(self.rollout.state.agent, key_cell);
        self.walk(&to_key, Action::Take)?;
        self.emit(Action::Take)?;
        let to_door = navigate(key_cell, door_cell);
        if self.style == ScriptStyle::Dummy {
            // The extra open lands strictly before the door cell.
            let drop_at = self.rng.gen_range(0..to_door.len());
            self.walk(&to_door[..drop_at], Action::Open)?;
            self.emit(Action::Open)?;
            self.walk(&to_door[drop_at..], Action::Open)?;
        } else {
            self.walk(&to_door, Action::Open)?;
        }
        self.emit(Action::Open)
    }

    fn run(mut self, pairs: &[(usize, usize)], stop_after: Option<usize>) -> Result<Episode> {
        for (i, &(key, door)) in pairs.iter().enumerate() {
            if self.rollout.done() || stop_after.is_some_and(|s| i >= s) {
                break;
            }
            self.try_pair(key, door)?;
        }
        Ok(self.rollout.finish())
    }
}

fn run_script(
    instance: &EnvInstance,
    pairs: &[(usize, usize)],
    style: ScriptStyle,
    cap: usize,
    stop_after: Option<usize>,
    rng: &mut Rng,
) -> Result<Episode> {
    Script {
        rollout: Rollout::new(instance, cap),
        style,
        rng,
    }
    .run(pairs, stop_after)
}

fn require_success(episode: Episode, what: &str) -> Result<Episode> {
    if episode.terminal {
        Ok(episode)
    } else {
        Err(Error::Controller(format!(
            "{what} did not reach the goal within {} steps",
            episode.len()
        )))
    }
}

/// Tries the `(key, door)` pairs in `order` until the goal is reached.
pub fn run_demonstrator(instance: &EnvInstance, order: &[(usize, usize)], rng: &mut Rng) -> Result<Episode> {
    let episode = run_script(instance, order, ScriptStyle::Faithful, DEMONSTRATOR_CAP, None, rng)?;
    require_success(episode, "demonstrator")
}

/// Goes straight to the correct key and then to the correct door.
pub fn run_exploit(instance: &EnvInstance) -> Result<Episode> {
    let mut rollout = Rollout::new(instance, DEMONSTRATOR_CAP);
    let key_cell = instance.key_cell(instance.correct_key);
    let door_cell = instance.door_cell(instance.correct_door);
    let actions = navigate(instance.start_cell, key_cell)
        .into_iter()
        .chain([Action::Take])
        .chain(navigate(key_cell, door_cell))
        .chain([Action::Open]);
    for a in actions {
        rollout.act(a)?;
    }
    require_success(rollout.finish(), "exploit script")
}

/// Position of the correct pair in the canonical order, plus one.
pub fn canonical_trials(instance: &EnvInstance) -> usize {
    instance.correct_key * instance.n + instance.correct_door + 1
}

pub fn run_behavior(kind: BehaviorKind, instance: &EnvInstance, rng: &mut Rng) -> Result<Episode> {
    let n = instance.n;
    let cap = kind.cap();
    match kind {
        BehaviorKind::Demonstrator => run_demonstrator(instance, &canonical_order(n), rng),
        BehaviorKind::DemonstratorInverse => {
            let mut order = canonical_order(n);
            order.reverse();
            run_demonstrator(instance, &order, rng)
        }
        BehaviorKind::DemonstratorRandomOrder => {
            let mut order = canonical_order(n);
            order.shuffle(rng);
            run_demonstrator(instance, &order, rng)
        }
        BehaviorKind::Random => {
            let mut rollout = Rollout::new(instance, cap);
            while !rollout.done() {
                let a = Action::ALL[rng.gen_range(0..Action::ALL.len())];
                rollout.act(a)?;
            }
            Ok(rollout.finish())
        }
        BehaviorKind::StandingStill => {
            let mut rollout = Rollout::new(instance, cap);
            while !rollout.done() {
                rollout.act(Action::Wait)?;
            }
            Ok(rollout.finish())
        }
        BehaviorKind::WaitingDemonstrator => {
            let episode = run_script(instance, &canonical_order(n), ScriptStyle::Waiting, cap, None, rng)?;
            require_success(episode, "waiting demonstrator")
        }
        BehaviorKind::UnsafeDemonstrator => {
            let episode = run_script(instance, &canonical_order(n), ScriptStyle::Unsafe, cap, None, rng)?;
            require_success(episode, "unsafe demonstrator")
        }
        BehaviorKind::DummyDemonstrator => run_script(
            instance,
            &canonical_order(n),
            ScriptStyle::Dummy,
            cap,
            Some(canonical_trials(instance)),
            rng,
        ),
    }
}

/// `per_env` demonstrations per instance, each one canonical exploration
/// episode followed by [`EXPLOIT_EPISODES`] exploit episodes.
pub fn generate_demonstrations(
    instances: &[EnvInstance],
    per_env: usize,
    rng: &mut Rng,
) -> Result<Vec<Demonstration>> {
    if per_env == 0 {
        return Err(Error::InvalidConfig("per_env must be at least 1".into()));
    }
    let mut out = Vec::with_capacity(instances.len() * per_env);
    for instance in instances {
        for _ in 0..per_env {
            let exploration_episode = run_behavior(BehaviorKind::Demonstrator, instance, rng)?;
            let exploit_episodes = (0..EXPLOIT_EPISODES)
                .map(|_| run_exploit(instance))
                .collect::<Result<Vec<_>>>()?;
            out.push(Demonstration {
                exploration_episode,
                exploit_episodes,
            });
        }
    }
    Ok(out)
}
