//! Tabular Q-learning over ground-truth states, with an optional bonus added
//! to the environment reward.

use std::fmt;
use std::str::FromStr;

use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::baselines::CountTable;
use crate::bonus::{BonusModel, StepInput};
use crate::error::{Error, Result};
use crate::gridworld::{Action, EnvInstance, NUM_ACTIONS};
use crate::rng::{self, Rng};
use crate::smtw::{BonusNet, SmtwBonus};
use crate::stats;

pub const LR_SWEEP: [f64; 4] = [0.01, 0.1, 0.5, 0.7];
pub const EPSILON: f64 = 0.1;
pub const GAMMA: f64 = 0.99;
/// Long enough for the count-based agent to plateau on n = 5 grids; at 300
/// episodes its median greedy return is still 0.
pub const EPISODES: usize = 1000;
pub const EPISODE_CAP: usize = 1000;
pub const REPEATS: usize = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    EpsilonGreedy,
    Count,
    Smtw,
}

impl Algorithm {
    pub const ALL: [Algorithm; 3] = [Algorithm::EpsilonGreedy, Algorithm::Count, Algorithm::Smtw];

    pub fn name(self) -> &'static str {
        match self {
            Algorithm::EpsilonGreedy => "epsilon_greedy",
            Algorithm::Count => "count",
            Algorithm::Smtw => "smtw",
        }
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Algorithm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Algorithm::ALL
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| Error::InvalidConfig(format!("unknown algorithm `{s}`")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AgentConfig {
    pub algorithm: Algorithm,
    pub lr: f64,
    pub epsilon: f64,
    pub gamma: f64,
    pub episodes: usize,
    pub episode_cap: usize,
}

impl AgentConfig {
    pub fn new(algorithm: Algorithm, lr: f64) -> Self {
        Self {
            algorithm,
            lr,
            epsilon: EPSILON,
            gamma: GAMMA,
            episodes: EPISODES,
            episode_cap: EPISODE_CAP,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.epsilon) {
            return Err(Error::InvalidConfig(format!("epsilon {} outside [0, 1]", self.epsilon)));
        }
        if !(self.lr > 0.0 && self.lr <= 1.0) {
            return Err(Error::InvalidConfig(format!("learning rate {} outside (0, 1]", self.lr)));
        }
        if !(0.0..=1.0).contains(&self.gamma) || self.episode_cap == 0 {
            return Err(Error::InvalidConfig("gamma must be in [0, 1] and the cap positive".into()));
        }
        Ok(())
    }
}

/// Action values indexed by ground-truth state code; unseen entries are 0.
#[derive(Debug, Clone, PartialEq)]
pub struct QTable {
    values: Vec<[f64; NUM_ACTIONS]>,
}

impl QTable {
    pub fn new(states: usize) -> Self {
        Self {
            values: vec![[0.0; NUM_ACTIONS]; states],
        }
    }

    pub fn get(&self, state: u64, action: Action) -> f64 {
        self.values[state as usize][action.index()]
    }

    pub fn row(&self, state: u64) -> &[f64; NUM_ACTIONS] {
        &self.values[state as usize]
    }

    pub fn max(&self, state: u64) -> f64 {
        self.row(state).iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    /// Greedy action, ties broken uniformly at random.
    pub fn greedy(&self, state: u64, rng: &mut Rng) -> Action {
        let row = self.row(state);
        let best = self.max(state);
        let ties: Vec<usize> = (0..NUM_ACTIONS).filter(|&a| row[a] == best).collect();
        Action::from_index(ties[rng.gen_range(0..ties.len())]).expect("index < 7")
    }

    pub fn update(&mut self, state: u64, action: Action, target: f64, lr: f64) {
        let q = &mut self.values[state as usize][action.index()];
        *q += lr * (target - *q);
    }

    pub fn all_finite(&self) -> bool {
        self.values.iter().flatten().all(|v| v.is_finite())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LearningCurve {
    /// Return of a greedy evaluation episode after each training episode.
    pub returns: Vec<f64>,
    /// Environment return of each (exploring) training episode.
    pub train_returns: Vec<f64>,
    /// Sum of the bonus actually added to the reward in each training episode.
    pub total_bonus: Vec<f64>,
}

/// One step of the bonus stream as seen by the learner.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BonusTrace {
    /// Global training step, starting at 1.
    pub k: u64,
    pub raw: f64,
    pub added: f64,
}

/// The bonus stream used by an algorithm; `None` adds nothing.
pub enum AgentBonus<'a> {
    None,
    Count(CountTable),
    Smtw(SmtwBonus<'a>),
}

impl<'a> AgentBonus<'a> {
    pub fn for_algorithm(algorithm: Algorithm, model: Option<&'a BonusNet>) -> Result<Self> {
        Ok(match algorithm {
            Algorithm::EpsilonGreedy => AgentBonus::None,
            Algorithm::Count => AgentBonus::Count(CountTable::new()),
            Algorithm::Smtw => AgentBonus::Smtw(SmtwBonus::new(
                model.ok_or_else(|| Error::InvalidConfig("the smtw agent needs a trained bonus".into()))?,
            )),
        })
    }

    fn model(&mut self) -> Option<&mut dyn BonusModel> {
        match self {
            AgentBonus::None => None,
            AgentBonus::Count(t) => Some(t),
            AgentBonus::Smtw(b) => Some(b),
        }
    }
}

pub fn train_agent(cfg: &AgentConfig, instance: &EnvInstance, bonus: &mut AgentBonus<'_>, rng: &mut Rng) -> Result<LearningCurve> {
    Ok(train_agent_traced(cfg, instance, bonus, rng, None)?.0)
}

/// Q-learning on `r + b`. For the learned bonus `b = B(h_t, a_t) / sqrt(k)`
/// with `k` the global step counter; the count bonus is added undecayed.
/// Only reaching the goal stops bootstrapping; the cap does not.
pub fn train_agent_traced(
    cfg: &AgentConfig,
    instance: &EnvInstance,
    bonus: &mut AgentBonus<'_>,
    rng: &mut Rng,
    mut trace: Option<&mut Vec<BonusTrace>>,
) -> Result<(LearningCurve, QTable)> {
    cfg.validate()?;
    let matching = matches!(
        (cfg.algorithm, &*bonus),
        (Algorithm::EpsilonGreedy, AgentBonus::None) | (Algorithm::Count, AgentBonus::Count(_)) | (Algorithm::Smtw, AgentBonus::Smtw(_))
    );
    if !matching {
        return Err(Error::InvalidConfig(format!("bonus stream does not match algorithm `{}`", cfg.algorithm)));
    }
    let decay = cfg.algorithm == Algorithm::Smtw;
    let needs_frames = decay;
    let mut q = QTable::new(instance.num_ground_truth_states() as usize);
    let mut curve = LearningCurve::default();
    let mut k: u64 = 0;
    for _ in 0..cfg.episodes {
        let (mut state, mut obs) = instance.reset();
        let mut s = instance.ground_truth_state(&state);
        if let Some(m) = bonus.model() {
            m.begin_episode();
        }
        let (mut ret, mut added_sum) = (0.0, 0.0);
        while !state.terminal {
            let action = if rng.gen_bool(cfg.epsilon) {
                Action::ALL[rng.gen_range(0..NUM_ACTIONS)]
            } else {
                q.greedy(s, rng)
            };
            k += 1;
            let raw = match bonus.model() {
                Some(m) => m.score(&StepInput {
                    observation: &obs,
                    ground_truth_state: s,
                    action,
                })?,
                None => 0.0,
            };
            let added = if decay { raw / (k as f64).sqrt() } else { raw };
            if let Some(t) = trace.as_deref_mut() {
                t.push(BonusTrace { k, raw, added });
            }
            let (next, reward) = instance.transition(&state, action, cfg.episode_cap)?;
            let s_next = instance.ground_truth_state(&next);
            let bootstrap = if next.goal_reached() { 0.0 } else { cfg.gamma * q.max(s_next) };
            q.update(s, action, reward + added + bootstrap, cfg.lr);
            ret += reward;
            added_sum += added;
            state = next;
            s = s_next;
            if needs_frames && !state.terminal {
                obs = instance.render(&state);
            }
        }
        if !q.all_finite() {
            return Err(Error::NonFinite("Q-table entry".into()));
        }
        curve.train_returns.push(ret);
        curve.total_bonus.push(added_sum);
        curve.returns.push(greedy_return(&q, instance, cfg.episode_cap, rng)?);
    }
    Ok((curve, q))
}

/// Environment return of one greedy episode (no learning, random tie-breaks).
pub fn greedy_return(q: &QTable, instance: &EnvInstance, cap: usize, rng: &mut Rng) -> Result<f64> {
    let mut state = instance.initial_state();
    let mut ret = 0.0;
    while !state.terminal {
        let action = q.greedy(instance.ground_truth_state(&state), rng);
        let (next, reward) = instance.transition(&state, action, cap)?;
        ret += reward;
        state = next;
    }
    Ok(ret)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub lrs: Vec<f64>,
    pub repeats: usize,
    pub episodes: usize,
    pub episode_cap: usize,
    pub epsilon: f64,
    pub gamma: f64,
    pub seed: u64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            lrs: LR_SWEEP.to_vec(),
            repeats: REPEATS,
            episodes: EPISODES,
            episode_cap: EPISODE_CAP,
            epsilon: EPSILON,
            gamma: GAMMA,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub run_id: usize,
    pub algorithm: Algorithm,
    pub lr: f64,
    pub instance_seed: u64,
    pub repeat: usize,
    pub curve: LearningCurve,
}

impl RunRecord {
    /// Mean evaluation return over the run; used to rank learning rates.
    pub fn score(&self) -> f64 {
        stats::mean(&self.curve.returns)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Envelope {
    pub median: Vec<f64>,
    pub min: Vec<f64>,
    pub max: Vec<f64>,
}

impl Envelope {
    pub fn of(curves: &[&[f64]]) -> Self {
        let len = curves.iter().map(|c| c.len()).min().unwrap_or(0);
        let mut env = Envelope {
            median: Vec::with_capacity(len),
            min: Vec::with_capacity(len),
            max: Vec::with_capacity(len),
        };
        for t in 0..len {
            let column: Vec<f64> = curves.iter().map(|c| c[t]).collect();
            let s = stats::Summary::of(&column);
            env.median.push(s.median);
            env.min.push(s.min);
            env.max.push(s.max);
        }
        env
    }

    /// First episode (0-based) whose median exceeds `threshold`.
    pub fn first_median_above(&self, threshold: f64) -> Option<usize> {
        self.median.iter().position(|&m| m > threshold)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlgorithmSummary {
    pub algorithm: Algorithm,
    pub best_lr: f64,
    /// Median run score for each swept learning rate, in sweep order.
    pub lr_scores: Vec<(f64, f64)>,
    pub returns: Envelope,
    pub total_bonus: Envelope,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub config: ExperimentConfig,
    pub runs: Vec<RunRecord>,
    pub summaries: Vec<AlgorithmSummary>,
}

impl ExperimentReport {
    pub fn summary(&self, algorithm: Algorithm) -> Option<&AlgorithmSummary> {
        self.summaries.iter().find(|s| s.algorithm == algorithm)
    }

    /// `run_id,algorithm,lr,episode,return,total_bonus,train_return`
    pub fn curves_csv(&self) -> String {
        let mut out = String::from("run_id,algorithm,lr,episode,return,total_bonus,train_return\n");
        for r in &self.runs {
            for (e, ((ret, bonus), train)) in r
                .curve
                .returns
                .iter()
                .zip(&r.curve.total_bonus)
                .zip(&r.curve.train_returns)
                .enumerate()
            {
                out.push_str(&format!(
                    "{},{},{},{},{},{},{}\n",
                    r.run_id, r.algorithm, r.lr, e, ret, bonus, train
                ));
            }
        }
        out
    }
}

/// Every algorithm x learning rate x instance x repeat, then the best
/// learning rate per algorithm by median run score (ties go to the earlier lr).
pub fn run_experiment(
    cfg: &ExperimentConfig,
    instances: &[EnvInstance],
    model: Option<&BonusNet>,
    threads: usize,
) -> Result<ExperimentReport> {
    if cfg.lrs.is_empty() || cfg.repeats == 0 || instances.is_empty() || cfg.episodes == 0 {
        return Err(Error::InvalidConfig("the agent experiment needs lrs, repeats, instances and episodes".into()));
    }
    let mut jobs = Vec::new();
    for algorithm in Algorithm::ALL {
        for &lr in &cfg.lrs {
            for inst in instances {
                for repeat in 0..cfg.repeats {
                    jobs.push((jobs.len(), algorithm, lr, inst, repeat));
                }
            }
        }
    }
    let run = |&(run_id, algorithm, lr, inst, repeat): &(usize, Algorithm, f64, &EnvInstance, usize)| -> Result<RunRecord> {
        let agent_cfg = AgentConfig {
            algorithm,
            lr,
            epsilon: cfg.epsilon,
            gamma: cfg.gamma,
            episodes: cfg.episodes,
            episode_cap: cfg.episode_cap,
        };
        let mut bonus = AgentBonus::for_algorithm(algorithm, model)?;
        let mut r = rng::stream(cfg.seed, "agent-run", run_id as u64);
        let curve = train_agent(&agent_cfg, inst, &mut bonus, &mut r)?;
        Ok(RunRecord {
            run_id,
            algorithm,
            lr,
            instance_seed: inst.seed,
            repeat,
            curve,
        })
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads.max(1))
        .build()
        .map_err(|e| Error::InvalidConfig(format!("thread pool: {e}")))?;
    let runs: Vec<RunRecord> = pool.install(|| jobs.par_iter().map(run).collect::<Result<_>>())?;

    let summaries = Algorithm::ALL
        .into_iter()
        .map(|algorithm| summarize(algorithm, &cfg.lrs, &runs))
        .collect();
    Ok(ExperimentReport {
        config: cfg.clone(),
        runs,
        summaries,
    })
}

fn summarize(algorithm: Algorithm, lrs: &[f64], runs: &[RunRecord]) -> AlgorithmSummary {
    let of = |lr: f64| runs.iter().filter(move |r| r.algorithm == algorithm && r.lr == lr);
    let lr_scores: Vec<(f64, f64)> = lrs
        .iter()
        .map(|&lr| (lr, stats::median(&of(lr).map(RunRecord::score).collect::<Vec<_>>())))
        .collect();
    let best_lr = lr_scores
        .iter()
        .fold(None::<(f64, f64)>, |best, &(lr, s)| match best {
            Some((_, bs)) if bs >= s => best,
            _ => Some((lr, s)),
        })
        .map(|(lr, _)| lr)
        .expect("nonempty sweep");
    let best: Vec<&RunRecord> = of(best_lr).collect();
    let returns: Vec<&[f64]> = best.iter().map(|r| r.curve.returns.as_slice()).collect();
    let bonuses: Vec<&[f64]> = best.iter().map(|r| r.curve.total_bonus.as_slice()).collect();
    AlgorithmSummary {
        algorithm,
        best_lr,
        lr_scores,
        returns: Envelope::of(&returns),
        total_bonus: Envelope::of(&bonuses),
    }
}
