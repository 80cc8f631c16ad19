//! The cascaded bonus learner.
//!
//! 1. A recurrent classifier is trained by behavioral cloning on demonstrator
//!    histories; its logits `Q(h, a)` are read as optimal Q-values.
//! 2. Each demonstrated transition gets the Bellman-residual target
//!    `y = Q(h, a) - gamma * max_a' Q(h', a') - r` (no bootstrap at the goal).
//! 3. A second recurrent network `B(h, a)` regresses `y` on the demonstrated
//!    action and the constant `b_min` on one randomly drawn other action.
//!
//! Only observations reach either network; ground-truth states are never read.

use std::collections::HashMap;

use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::behaviors::{Demonstration, Episode};
use crate::bonus::{BonusModel, StepInput};
use crate::error::{Error, Result};
use crate::gridworld::{Action, Observation, NUM_ACTIONS, NUM_CHANNELS};
use crate::neural::{
    argmax, softmax_cross_entropy, squared_error, AdamConfig, Architecture, Checkpoint, HeadQuery,
    RecurrentState, SequenceNet,
};
use crate::rng::{self, Rng};

pub const GAMMA: f64 = 0.99;
pub const POLICY_LR: f64 = 1e-3;
pub const BONUS_LR: f64 = 1e-4;
pub const RECURRENT_UNITS: usize = 64;
pub const HIDDEN_UNITS: usize = 512;
pub const DEFAULT_EPOCHS: usize = 10;
/// Per-step regression loss above which bonus training is declared divergent.
pub const DIVERGENCE_LOSS: f64 = 1e6;

pub fn policy_architecture(n: usize) -> Architecture {
    Architecture {
        input: n * n * NUM_CHANNELS,
        recurrent: RECURRENT_UNITS,
        hidden: HIDDEN_UNITS,
        aux: 0,
        output: NUM_ACTIONS,
    }
}

pub fn bonus_architecture(n: usize) -> Architecture {
    Architecture {
        input: n * n * NUM_CHANNELS,
        recurrent: RECURRENT_UNITS,
        hidden: HIDDEN_UNITS,
        aux: NUM_ACTIONS,
        output: 1,
    }
}

fn network_inputs(observations: &[Observation]) -> Vec<Vec<f64>> {
    observations.iter().map(Observation::normalized).collect()
}

pub fn one_hot(action: Action) -> Vec<f64> {
    let mut v = vec![0.0; NUM_ACTIONS];
    v[action.index()] = 1.0;
    v
}

fn check_input(net: &SequenceNet, obs: &Observation) -> Result<()> {
    if obs.len() != net.arch.input {
        return Err(Error::Shape(format!(
            "observation has {} values, network expects {}",
            obs.len(),
            net.arch.input
        )));
    }
    Ok(())
}

/// Behavioral-cloning classifier whose logits are read as Q-values.
#[derive(Debug, Clone)]
pub struct PolicyNet {
    net: SequenceNet,
}

impl PolicyNet {
    pub fn new(n: usize, rng: &mut Rng) -> Result<Self> {
        Ok(Self {
            net: SequenceNet::new(policy_architecture(n), rng)?,
        })
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        let net = SequenceNet::from_checkpoint(ckpt)?;
        if net.arch.output != NUM_ACTIONS || net.arch.aux != 0 {
            return Err(Error::Shape("checkpoint is not a policy network".into()));
        }
        Ok(Self { net })
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        self.net.to_checkpoint()
    }

    pub fn network(&self) -> &SequenceNet {
        &self.net
    }

    /// `Q(h_t, .)` for every prefix `h_t = (o_0, ..., o_t)` of `observations`.
    pub fn logits(&self, observations: &[Observation]) -> Result<Vec<Vec<f64>>> {
        if let Some(o) = observations.first() {
            check_input(&self.net, o)?;
        }
        let hs = self.net.forward_recurrent(&network_inputs(observations))?;
        hs.iter().map(|h| self.net.forward_head(h, &[])).collect()
    }

    /// Greedy action per prefix (lowest index on ties).
    pub fn predict(&self, observations: &[Observation]) -> Result<Vec<Action>> {
        Ok(self
            .logits(observations)?
            .iter()
            .map(|q| Action::from_index(argmax(q)).expect("7 logits"))
            .collect())
    }

    /// Fraction of the episode's actions the classifier reproduces.
    pub fn accuracy(&self, episode: &Episode) -> Result<f64> {
        let predicted = self.predict(&episode.observations[..episode.len()])?;
        let hits = predicted
            .iter()
            .zip(&episode.actions)
            .filter(|(p, a)| p == a)
            .count();
        Ok(hits as f64 / episode.len().max(1) as f64)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr: f64,
    pub seed: u64,
}

impl TrainConfig {
    pub fn policy_default(seed: u64) -> Self {
        Self {
            epochs: DEFAULT_EPOCHS,
            lr: POLICY_LR,
            seed,
        }
    }

    pub fn bonus_default(seed: u64) -> Self {
        Self {
            epochs: DEFAULT_EPOCHS,
            lr: BONUS_LR,
            seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BcReport {
    /// Mean per-step cross-entropy of each epoch.
    pub epoch_losses: Vec<f64>,
    /// Per-step accuracy over the final epoch, measured before each update.
    pub final_accuracy: f64,
}

fn all_episodes(demos: &[Demonstration]) -> Vec<&Episode> {
    demos.iter().flat_map(Demonstration::episodes).collect()
}

/// Behavioral cloning: one full-episode forward/backward and one Adam update
/// per episode, episodes shuffled every epoch.
pub fn train_bc(demos: &[Demonstration], cfg: &TrainConfig) -> Result<(PolicyNet, BcReport)> {
    let episodes: Vec<&Episode> = all_episodes(demos).into_iter().filter(|e| !e.is_empty()).collect();
    let first = episodes
        .first()
        .ok_or_else(|| Error::InvalidConfig("behavioral cloning needs a nonempty dataset".into()))?;
    let n = first.observations[0].n();
    let mut policy = PolicyNet::new(n, &mut rng::stream(cfg.seed, "bc-init", 0))?;
    let mut order_rng = rng::stream(cfg.seed, "bc-order", 0);
    let adam = AdamConfig::with_lr(cfg.lr);
    let mut order: Vec<usize> = (0..episodes.len()).collect();
    let mut epoch_losses = Vec::with_capacity(cfg.epochs);
    let mut final_accuracy = 0.0;
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut order_rng);
        let (mut loss_sum, mut hits, mut steps) = (0.0, 0usize, 0usize);
        for (i, &e) in order.iter().enumerate() {
            let ep = episodes[e];
            let (loss, correct) = bc_update(&mut policy.net, ep, &adam).map_err(|err| match err {
                Error::NonFinite(what) => Error::Diverged(format!(
                    "behavioral cloning epoch {epoch}, update {i} (episode of {} steps): non-finite {what}",
                    ep.len()
                )),
                other => other,
            })?;
            loss_sum += loss;
            hits += correct;
            steps += ep.len();
        }
        epoch_losses.push(loss_sum / steps.max(1) as f64);
        final_accuracy = hits as f64 / steps.max(1) as f64;
    }
    Ok((
        policy,
        BcReport {
            epoch_losses,
            final_accuracy,
        },
    ))
}

fn bc_update(net: &mut SequenceNet, ep: &Episode, adam: &AdamConfig) -> Result<(f64, usize)> {
    let steps = ep.len();
    check_input(net, &ep.observations[0])?;
    let inputs = network_inputs(&ep.observations[..steps]);
    let queries: Vec<HeadQuery> = (0..steps).map(|step| HeadQuery { step, aux: Vec::new() }).collect();
    let logits = net.forward(&inputs, &queries)?;
    let mut loss = 0.0;
    let mut correct = 0;
    let mut grads = Vec::with_capacity(steps);
    for (q, &a) in logits.iter().zip(&ep.actions) {
        let (l, g) = softmax_cross_entropy(q, a.index());
        loss += l;
        correct += usize::from(argmax(q) == a.index());
        grads.push(g);
    }
    if !loss.is_finite() {
        net.backward(&grads).ok();
        return Err(Error::NonFinite("cross-entropy loss".into()));
    }
    net.zero_grad();
    net.backward(&grads)?;
    net.adam_step(adam)?;
    Ok((loss, correct))
}

/// One demonstrated transition prepared for bonus regression.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegressionSample {
    pub action: Action,
    pub reward: f64,
    pub target: f64,
    /// A uniformly drawn action other than `action`, regressed towards `b_min`.
    pub contrast: Action,
    pub terminal: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegressionEpisode {
    /// Observations `o_0 .. o_T`; sample `t` uses the history `o_0 .. o_t`.
    pub observations: Vec<Observation>,
    pub samples: Vec<RegressionSample>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegressionSet {
    pub episodes: Vec<RegressionEpisode>,
    pub b_min: f64,
    pub gamma: f64,
}

impl RegressionSet {
    pub fn samples(&self) -> impl Iterator<Item = &RegressionSample> {
        self.episodes.iter().flat_map(|e| e.samples.iter())
    }

    pub fn len(&self) -> usize {
        self.episodes.iter().map(|e| e.samples.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// `y_t = Q(h_t, a_t) - gamma * max_a Q(h_{t+1}, a) - r_t`, with the bootstrap
/// term dropped when the transition reached the goal.
pub fn bellman_targets(logits: &[Vec<f64>], episode: &Episode, gamma: f64) -> Vec<f64> {
    episode
        .transitions()
        .enumerate()
        .map(|(t, tr)| {
            let q = logits[t][tr.action.index()];
            let bootstrap = if tr.terminal {
                0.0
            } else {
                let next = &logits[t + 1];
                gamma * next[argmax(next)]
            };
            q - bootstrap - tr.reward
        })
        .collect()
}

pub fn draw_contrast(action: Action, rng: &mut Rng) -> Action {
    let k = rng.gen_range(0..NUM_ACTIONS - 1);
    let k = if k >= action.index() { k + 1 } else { k };
    Action::from_index(k).expect("index < 7")
}

/// Builds regression targets for every demonstrated transition. `b_min`
/// defaults to the minimum target over the dataset.
pub fn make_regression_targets(
    policy: &PolicyNet,
    demos: &[Demonstration],
    gamma: f64,
    b_min_override: Option<f64>,
    rng: &mut Rng,
) -> Result<RegressionSet> {
    // Duplicated episodes (same instance, same actions) share their logits.
    let mut memo: HashMap<(u64, Vec<Action>), Vec<f64>> = HashMap::new();
    let mut episodes = Vec::new();
    for ep in all_episodes(demos).into_iter().filter(|e| !e.is_empty()) {
        let key = (ep.instance_ref, ep.actions.clone());
        let targets = match memo.get(&key) {
            Some(t) => t.clone(),
            None => {
                let logits = policy.logits(&ep.observations)?;
                let t = bellman_targets(&logits, ep, gamma);
                memo.insert(key, t.clone());
                t
            }
        };
        let samples = ep
            .transitions()
            .zip(targets)
            .map(|(tr, target)| RegressionSample {
                action: tr.action,
                reward: tr.reward,
                target,
                contrast: draw_contrast(tr.action, rng),
                terminal: tr.terminal,
            })
            .collect();
        episodes.push(RegressionEpisode {
            observations: ep.observations.clone(),
            samples,
        });
    }
    let data_min = episodes
        .iter()
        .flat_map(|e| e.samples.iter().map(|s| s.target))
        .fold(f64::INFINITY, f64::min);
    if let Some(bad) = episodes.iter().flat_map(|e| &e.samples).find(|s| !s.target.is_finite()) {
        return Err(Error::NonFinite(format!("regression target for action {:?}", bad.action)));
    }
    Ok(RegressionSet {
        episodes,
        b_min: b_min_override.unwrap_or(data_min),
        gamma,
    })
}

/// Recurrent bonus `B(h, a)`; the action enters as a one-hot vector next to
/// the recurrent feature.
#[derive(Debug, Clone)]
pub struct BonusNet {
    net: SequenceNet,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BonusReport {
    pub epoch_losses: Vec<f64>,
    /// RMS residual of the demonstrated-action term over the final epoch.
    pub rms_demonstrated: f64,
    /// RMS residual of the contrast-action term over the final epoch.
    pub rms_contrast: f64,
    pub b_min: f64,
}

impl BonusNet {
    pub fn new(n: usize, rng: &mut Rng) -> Result<Self> {
        Ok(Self {
            net: SequenceNet::new(bonus_architecture(n), rng)?,
        })
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        let net = SequenceNet::from_checkpoint(ckpt)?;
        if net.arch.output != 1 || net.arch.aux != NUM_ACTIONS {
            return Err(Error::Shape("checkpoint is not a bonus network".into()));
        }
        Ok(Self { net })
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        self.net.to_checkpoint()
    }

    pub fn network(&self) -> &SequenceNet {
        &self.net
    }

    pub fn input_width(&self) -> usize {
        self.net.arch.input
    }

    /// `B(h, a)` for the full history `h`, evaluated from scratch.
    pub fn bonus(&self, history: &[Observation], action: Action) -> Result<f64> {
        if history.is_empty() {
            return Err(Error::Shape("bonus needs a nonempty history".into()));
        }
        let mut tracker = self.tracker();
        for o in history {
            tracker.push(o)?;
        }
        tracker.query(action)
    }

    /// `B(h_t, a)` for every prefix and every action.
    pub fn bonus_table(&self, history: &[Observation]) -> Result<Vec<[f64; NUM_ACTIONS]>> {
        let hs = self.net.forward_recurrent(&network_inputs(history))?;
        hs.iter()
            .map(|h| {
                let mut row = [0.0; NUM_ACTIONS];
                for a in Action::ALL {
                    row[a.index()] = self.net.forward_head(h, &one_hot(a))?[0];
                }
                Ok(row)
            })
            .collect()
    }

    pub fn tracker(&self) -> BonusTracker<'_> {
        BonusTracker {
            model: self,
            state: self.net.initial_state(),
            steps: 0,
        }
    }
}

/// Incremental evaluation: push one observation per step, then query actions.
#[derive(Debug, Clone)]
pub struct BonusTracker<'a> {
    model: &'a BonusNet,
    state: RecurrentState,
    steps: usize,
}

impl BonusTracker<'_> {
    pub fn reset(&mut self) {
        self.state = self.model.net.initial_state();
        self.steps = 0;
    }

    pub fn push(&mut self, obs: &Observation) -> Result<()> {
        check_input(&self.model.net, obs)?;
        self.state = self.model.net.recurrent_step(&self.state, &obs.normalized())?;
        self.steps += 1;
        Ok(())
    }

    pub fn query(&self, action: Action) -> Result<f64> {
        if self.steps == 0 {
            return Err(Error::Shape("bonus needs a nonempty history".into()));
        }
        let out = self.model.net.forward_head(&self.state.h, &one_hot(action))?;
        if !out[0].is_finite() {
            return Err(Error::NonFinite("bonus output".into()));
        }
        Ok(out[0])
    }

    pub fn history_len(&self) -> usize {
        self.steps
    }
}

/// Two-term squared loss per transition: demonstrated action towards its
/// target, the contrast action towards `b_min`. One Adam update per episode.
pub fn train_bonus(set: &RegressionSet, cfg: &TrainConfig) -> Result<(BonusNet, BonusReport)> {
    let first = set
        .episodes
        .iter()
        .find(|e| !e.samples.is_empty())
        .ok_or_else(|| Error::InvalidConfig("bonus regression needs samples".into()))?;
    let n = first.observations[0].n();
    let mut model = BonusNet::new(n, &mut rng::stream(cfg.seed, "bonus-init", 0))?;
    let mut order_rng = rng::stream(cfg.seed, "bonus-order", 0);
    let adam = AdamConfig::with_lr(cfg.lr);
    let mut order: Vec<usize> = (0..set.episodes.len())
        .filter(|&i| !set.episodes[i].samples.is_empty())
        .collect();
    let mut epoch_losses = Vec::with_capacity(cfg.epochs);
    let (mut rms_demonstrated, mut rms_contrast) = (f64::NAN, f64::NAN);
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut order_rng);
        let (mut sq_demo, mut sq_contrast, mut count) = (0.0, 0.0, 0usize);
        for &e in &order {
            let ep = &set.episodes[e];
            let (d, c) = bonus_update(&mut model.net, ep, set.b_min, &adam)?;
            let per_step = (d + c) / ep.samples.len() as f64;
            if !per_step.is_finite() || per_step > DIVERGENCE_LOSS {
                return Err(Error::Diverged(format!(
                    "bonus regression epoch {epoch}: per-step loss {per_step:e}"
                )));
            }
            sq_demo += d;
            sq_contrast += c;
            count += ep.samples.len();
        }
        let count = count.max(1) as f64;
        epoch_losses.push((sq_demo + sq_contrast) / count);
        rms_demonstrated = (sq_demo / count).sqrt();
        rms_contrast = (sq_contrast / count).sqrt();
    }
    Ok((
        model,
        BonusReport {
            epoch_losses,
            rms_demonstrated,
            rms_contrast,
            b_min: set.b_min,
        },
    ))
}

fn bonus_update(net: &mut SequenceNet, ep: &RegressionEpisode, b_min: f64, adam: &AdamConfig) -> Result<(f64, f64)> {
    let steps = ep.samples.len();
    check_input(net, &ep.observations[0])?;
    let inputs = network_inputs(&ep.observations[..steps]);
    let mut queries = Vec::with_capacity(2 * steps);
    for (step, s) in ep.samples.iter().enumerate() {
        queries.push(HeadQuery {
            step,
            aux: one_hot(s.action),
        });
        queries.push(HeadQuery {
            step,
            aux: one_hot(s.contrast),
        });
    }
    let outputs = net.forward(&inputs, &queries)?;
    let mut grads = Vec::with_capacity(2 * steps);
    let (mut demo_loss, mut contrast_loss) = (0.0, 0.0);
    for (s, pair) in ep.samples.iter().zip(outputs.chunks(2)) {
        let (l1, g1) = squared_error(pair[0][0], s.target);
        let (l2, g2) = squared_error(pair[1][0], b_min);
        demo_loss += l1;
        contrast_loss += l2;
        grads.push(vec![g1]);
        grads.push(vec![g2]);
    }
    net.zero_grad();
    net.backward(&grads)?;
    net.adam_step(adam)?;
    Ok((demo_loss, contrast_loss))
}

/// The learned bonus as a stream scorer: the history restarts with each episode.
pub struct SmtwBonus<'a> {
    tracker: BonusTracker<'a>,
}

impl<'a> SmtwBonus<'a> {
    pub fn new(model: &'a BonusNet) -> Self {
        Self {
            tracker: model.tracker(),
        }
    }
}

impl BonusModel for SmtwBonus<'_> {
    fn begin_episode(&mut self) {
        self.tracker.reset();
    }

    fn score(&mut self, step: &StepInput<'_>) -> Result<f64> {
        self.tracker.push(step.observation)?;
        self.tracker.query(step.action)
    }
}
