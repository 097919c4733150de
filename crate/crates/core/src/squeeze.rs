//! Gaussian Squeeze: a one-step cooperative allocation game.
//!
//! Each of `N` agents allocates an integer amount in `0..=9`; every agent
//! receives the same reward `sum_k x * exp(-(x - mu_k)^2 / sigma_k^2)` where
//! `x` is the total allocation.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fql::State;

/// Number of allocation choices per agent (`0..=9`).
pub const NUM_ACTIONS: usize = 10;

/// Width of the per-agent state encoding.
pub const STATE_DIM: usize = 1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Target {
    pub mean: f64,
    pub std: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SqueezeConfig {
    pub agents: usize,
    pub targets: Vec<Target>,
}

impl Default for SqueezeConfig {
    fn default() -> Self {
        SqueezeConfig {
            agents: 100,
            targets: vec![
                Target {
                    mean: 0.0,
                    std: 100.0,
                },
                Target {
                    mean: 400.0,
                    std: 200.0,
                },
            ],
        }
    }
}

impl SqueezeConfig {
    pub fn with_agents(agents: usize) -> Self {
        SqueezeConfig {
            agents,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.agents == 0 {
            return Err(Error::Config("gaussian squeeze needs at least one agent".into()));
        }
        if self.targets.is_empty() {
            return Err(Error::Config("gaussian squeeze needs at least one target".into()));
        }
        for t in &self.targets {
            if !(t.std > 0.0) || !t.mean.is_finite() || !t.std.is_finite() {
                return Err(Error::Config(format!(
                    "target (mean {}, std {}) needs finite mean and std > 0",
                    t.mean, t.std
                )));
            }
        }
        Ok(())
    }

    /// Largest reachable total allocation.
    pub fn max_total(&self) -> u64 {
        (NUM_ACTIONS as u64 - 1) * self.agents as u64
    }
}

/// Result of the single step of an episode.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SqueezeOutcome {
    pub total: u64,
    pub reward: f64,
    pub done: bool,
}

/// Reward as a function of the total allocation.
pub fn reward_at(config: &SqueezeConfig, total: u64) -> f64 {
    let x = total as f64;
    config
        .targets
        .iter()
        .map(|t| {
            let z = x - t.mean;
            x * (-(z * z) / (t.std * t.std)).exp()
        })
        .sum()
}

fn total_allocation(config: &SqueezeConfig, actions: &[usize]) -> Result<u64> {
    if actions.len() != config.agents {
        return Err(Error::Input(format!(
            "expected {} actions, got {}",
            config.agents,
            actions.len()
        )));
    }
    let mut total = 0u64;
    for (i, &a) in actions.iter().enumerate() {
        if a >= NUM_ACTIONS {
            return Err(Error::Input(format!(
                "agent {i} chose {a}, allocations must lie in 0..={}",
                NUM_ACTIONS - 1
            )));
        }
        total += a as u64;
    }
    Ok(total)
}

/// Shared reward of a joint allocation.
pub fn reward(config: &SqueezeConfig, actions: &[usize]) -> Result<f64> {
    Ok(reward_at(config, total_allocation(config, actions)?))
}

/// Plays the one and only step of an episode.
pub fn step(config: &SqueezeConfig, actions: &[usize]) -> Result<SqueezeOutcome> {
    let total = total_allocation(config, actions)?;
    Ok(SqueezeOutcome {
        total,
        reward: reward_at(config, total),
        done: true,
    })
}

/// The game is stateless: every agent observes the constant encoding `[1]`.
pub fn observe(_config: &SqueezeConfig, _agent: usize) -> State {
    Arc::from(vec![1.0; STATE_DIM])
}

/// Exhaustive scan over every reachable total; ties go to the smallest total.
pub fn optimal_total(config: &SqueezeConfig) -> (u64, f64) {
    let mut best = (0, reward_at(config, 0));
    for x in 1..=config.max_total() {
        let r = reward_at(config, x);
        if r > best.1 {
            best = (x, r);
        }
    }
    best
}
