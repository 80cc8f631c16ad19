//! Learning exploration bonuses from exploratory demonstrations.
//!
//! The crate is organised bottom-up:
//!
//! * [`gridworld`]: the KeysDoors environment (generation, dynamics, rendering).
//! * [`behaviors`]: scripted controllers and the demonstration generator.
//! * [`neural`]: a small reverse-mode core (recurrent cell, dense layers, Adam).
//! * [`smtw`]: the cascaded bonus learner (behavioral cloning, Bellman-residual
//!   targets, bonus regression).
//! * [`baselines`]: count-based and random-network-distillation comparators.
//! * [`agent`]: tabular Q-learning driven by any bonus.
//! * [`evalharness`]: bonus distribution analysis over controlled behaviors.
//!
//! Glue: [`bonus`] (the shared scoring trait), [`stats`], [`io`] (file
//! formats), [`rng`] (seed streams), [`runner`] (configuration, pipeline
//! stages, manifests), [`criteria`] and [`verify`].

pub mod agent;
pub mod baselines;
pub mod behaviors;
pub mod bonus;
pub mod criteria;
pub mod error;
pub mod evalharness;
pub mod gridworld;
pub mod io;
pub mod neural;
pub mod rng;
pub mod runner;
pub mod smtw;
pub mod stats;
pub mod verify;

pub use error::{Error, Result};
