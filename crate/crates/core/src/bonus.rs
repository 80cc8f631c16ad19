//! The common interface every exploration bonus is scored through.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gridworld::{Action, Observation};

/// What a bonus may look at for one step: the frame the action was taken
/// from, the action, and the ground-truth state code. Learned bonuses only
/// read the frame; the count table only reads the state code.
#[derive(Debug, Clone, Copy)]
pub struct StepInput<'a> {
    pub observation: &'a Observation,
    pub ground_truth_state: u64,
    pub action: Action,
}

/// A bonus scored along a stream of steps. Models with memory (the recurrent
/// bonus, the running count table, the predictor trained online) update it
/// inside `score`.
pub trait BonusModel {
    /// Called before the first step of every episode.
    fn begin_episode(&mut self);

    fn score(&mut self, step: &StepInput<'_>) -> Result<f64>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BonusKind {
    Smtw,
    Count,
    Rnd,
}

impl BonusKind {
    pub const ALL: [BonusKind; 3] = [BonusKind::Smtw, BonusKind::Count, BonusKind::Rnd];

    pub fn name(self) -> &'static str {
        match self {
            BonusKind::Smtw => "smtw",
            BonusKind::Count => "count",
            BonusKind::Rnd => "rnd",
        }
    }
}

impl fmt::Display for BonusKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for BonusKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        BonusKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::InvalidConfig(format!("unknown bonus `{s}`")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn names_round_trip() {
        for k in BonusKind::ALL {
            assert_eq!(k.name().parse::<BonusKind>().unwrap(), k);
            assert_eq!(serde_json::to_string(&k).unwrap(), format!("\"{k}\""));
        }
        assert!("nope".parse::<BonusKind>().is_err());
    }
}
