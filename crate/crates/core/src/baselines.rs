//! Comparator bonuses: visit counts over ground-truth states, and random
//! network distillation over observations.

use std::collections::HashMap;

use crate::bonus::{BonusModel, StepInput};
use crate::error::{Error, Result};
use crate::gridworld::{Action, Observation, NUM_CHANNELS};
use crate::neural::{AdamConfig, Dense, ParamStore};
use crate::rng::Rng;

/// `(ground-truth state, action)` visit counts.
#[derive(Debug, Clone, Default)]
pub struct CountTable {
    counts: HashMap<(u64, Action), u64>,
}

impl CountTable {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn count(&self, state: u64, action: Action) -> u64 {
        self.counts.get(&(state, action)).copied().unwrap_or(0)
    }

    pub fn total(&self) -> u64 {
        self.counts.values().sum()
    }

    /// Records the visit, then returns `N(s, a)^{-1/2}` of the updated count.
    pub fn count_bonus(&mut self, state: u64, action: Action) -> f64 {
        let n = self.counts.entry((state, action)).or_insert(0);
        *n += 1;
        1.0 / (*n as f64).sqrt()
    }
}

impl BonusModel for CountTable {
    fn begin_episode(&mut self) {}

    fn score(&mut self, step: &StepInput<'_>) -> Result<f64> {
        Ok(self.count_bonus(step.ground_truth_state, step.action))
    }
}

pub const RND_HIDDEN: usize = 128;
pub const RND_EMBEDDING: usize = 64;
pub const RND_LR: f64 = 1e-4;
/// Raw errors collected before normalized values are emitted.
pub const RND_WARMUP: u64 = 50;
pub const RND_EPS: f64 = 1e-8;

/// Welford accumulator.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct RunningStats {
    count: u64,
    mean: f64,
    m2: f64,
}

impl RunningStats {
    pub fn push(&mut self, x: f64) {
        self.count += 1;
        let delta = x - self.mean;
        self.mean += delta / self.count as f64;
        self.m2 += delta * (x - self.mean);
    }

    pub fn count(&self) -> u64 {
        self.count
    }

    pub fn mean(&self) -> f64 {
        self.mean
    }

    /// Population variance.
    pub fn variance(&self) -> f64 {
        if self.count == 0 {
            0.0
        } else {
            self.m2 / self.count as f64
        }
    }
}

#[derive(Debug, Clone)]
struct Embedding {
    store: ParamStore,
    l1: Dense,
    l2: Dense,
}

impl Embedding {
    fn new(input: usize, rng: &mut Rng) -> Result<Self> {
        let mut store = ParamStore::new();
        let l1 = Dense::new(&mut store, "l1", input, RND_HIDDEN, rng)?;
        let l2 = Dense::new(&mut store, "l2", RND_HIDDEN, RND_EMBEDDING, rng)?;
        Ok(Self { store, l1, l2 })
    }

    /// Returns the rectified hidden layer and the embedding.
    fn forward(&self, x: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let mut hidden = vec![0.0; RND_HIDDEN];
        self.l1.forward(&self.store, x, &mut hidden);
        hidden.iter_mut().for_each(|v| *v = v.max(0.0));
        let mut out = vec![0.0; RND_EMBEDDING];
        self.l2.forward(&self.store, &hidden, &mut out);
        (hidden, out)
    }
}

/// A frozen random embedding and a predictor trained online to match it.
#[derive(Debug, Clone)]
pub struct RndPair {
    target: Embedding,
    predictor: Embedding,
    stats: RunningStats,
    adam: AdamConfig,
    input: usize,
}

impl RndPair {
    pub fn new(n: usize, rng: &mut Rng) -> Result<Self> {
        let input = n * n * NUM_CHANNELS;
        let target = Embedding::new(input, rng)?;
        let predictor = Embedding::new(input, rng)?;
        Ok(Self {
            target,
            predictor,
            stats: RunningStats::default(),
            adam: AdamConfig::with_lr(RND_LR),
            input,
        })
    }

    /// A pair whose predictor starts as an exact copy of the target.
    pub fn with_predictor_copy(n: usize, rng: &mut Rng) -> Result<Self> {
        let mut pair = Self::new(n, rng)?;
        pair.predictor = pair.target.clone();
        Ok(pair)
    }

    pub fn stats(&self) -> RunningStats {
        self.stats
    }

    pub fn target_checksum(&self) -> Vec<u64> {
        self.target
            .store
            .params()
            .iter()
            .flat_map(|p| p.value.iter().map(|v| v.to_bits()))
            .collect()
    }

    /// Mean squared difference between target and predictor embeddings.
    pub fn raw_error(&self, obs: &Observation) -> Result<f64> {
        let x = self.input_of(obs)?;
        let (_, t) = self.target.forward(&x);
        let (_, p) = self.predictor.forward(&x);
        Ok(mean_sq(&t, &p))
    }

    fn input_of(&self, obs: &Observation) -> Result<Vec<f64>> {
        if obs.len() != self.input {
            return Err(Error::Shape(format!(
                "observation has {} values, RND expects {}",
                obs.len(),
                self.input
            )));
        }
        Ok(obs.normalized())
    }

    /// Normalized novelty of `obs`; afterwards the running statistics absorb
    /// the raw error and the predictor takes one step towards the target.
    /// Returns 0 until the statistics hold `RND_WARMUP` values.
    pub fn rnd_bonus(&mut self, obs: &Observation) -> Result<f64> {
        let x = self.input_of(obs)?;
        let (_, t) = self.target.forward(&x);
        let (hidden, p) = self.predictor.forward(&x);
        let raw = mean_sq(&t, &p);
        if !raw.is_finite() {
            return Err(Error::NonFinite("RND raw error".into()));
        }
        let value = if self.stats.count() < RND_WARMUP {
            0.0
        } else {
            (raw - self.stats.mean()) / (self.stats.variance() + RND_EPS).sqrt()
        };
        self.stats.push(raw);

        let scale = 2.0 / RND_EMBEDDING as f64;
        let dout: Vec<f64> = p.iter().zip(&t).map(|(p, t)| scale * (p - t)).collect();
        let mut dhidden = vec![0.0; RND_HIDDEN];
        let pred = &mut self.predictor;
        pred.store.zero_grad();
        pred.l2.backward(&mut pred.store, &hidden, &dout, Some(&mut dhidden));
        for (d, h) in dhidden.iter_mut().zip(&hidden) {
            if *h <= 0.0 {
                *d = 0.0;
            }
        }
        pred.l1.backward(&mut pred.store, &x, &dhidden, None);
        pred.store.adam_step(&self.adam)?;
        Ok(value)
    }
}

fn mean_sq(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / a.len() as f64
}

impl BonusModel for RndPair {
    fn begin_episode(&mut self) {}

    fn score(&mut self, step: &StepInput<'_>) -> Result<f64> {
        self.rnd_bonus(step.observation)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gridworld::{EnvConfig, EnvInstance};
    use crate::rng;

    fn instance() -> EnvInstance {
        EnvInstance::from_config(&EnvConfig::default()).unwrap()
    }

    #[test]
    fn count_bonus_closed_form() {
        let mut t = CountTable::new();
        for k in 1..=10u64 {
            let b = t.count_bonus(7, Action::Up);
            assert!((b - 1.0 / (k as f64).sqrt()).abs() < 1e-12);
        }
        assert_eq!(t.count(7, Action::Up), 10);
        assert_eq!(t.count_bonus(7, Action::Down), 1.0);
    }

    #[test]
    fn welford_matches_two_pass() {
        let xs: Vec<f64> = (0..37).map(|i| ((i * 7919) % 101) as f64 / 13.0).collect();
        let mut s = RunningStats::default();
        xs.iter().for_each(|&x| s.push(x));
        let m = xs.iter().sum::<f64>() / xs.len() as f64;
        let v = xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / xs.len() as f64;
        assert!((s.mean() - m).abs() < 1e-12 && (s.variance() - v).abs() < 1e-12);
    }

    #[test]
    fn copied_predictor_has_zero_error() {
        let pair = RndPair::with_predictor_copy(5, &mut rng::from_seed(0)).unwrap();
        let (_, obs) = instance().reset();
        assert_eq!(pair.raw_error(&obs).unwrap(), 0.0);
    }

    #[test]
    fn repeated_observation_becomes_unrewarding() {
        let mut pair = RndPair::new(5, &mut rng::from_seed(1)).unwrap();
        let target = pair.target_checksum();
        let (_, obs) = instance().reset();
        let values: Vec<f64> = (0..500).map(|_| pair.rnd_bonus(&obs).unwrap()).collect();
        assert!(values[..RND_WARMUP as usize].iter().all(|&v| v == 0.0));
        assert!(*values.last().unwrap() <= 0.0);
        assert_eq!(pair.target_checksum(), target);
    }

    #[test]
    fn same_seed_same_stream() {
        let inst = instance();
        let mut a = RndPair::new(5, &mut rng::from_seed(2)).unwrap();
        let mut b = RndPair::new(5, &mut rng::from_seed(2)).unwrap();
        let (mut state, mut obs) = inst.reset();
        for i in 0..120 {
            let x = a.rnd_bonus(&obs).unwrap();
            let y = b.rnd_bonus(&obs).unwrap();
            assert_eq!(x.to_bits(), y.to_bits());
            let step = inst.step(&state, Action::ALL[i % 4], 2000).unwrap();
            state = step.state;
            obs = step.observation;
        }
    }
}
