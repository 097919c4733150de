//! Factorized multi-agent Q-learning.
//!
//! Each agent group shares one composite model made of three networks:
//! an independent action-value head `Q(s, a)`, a per-action embedding
//! `V(s, a)` and a co-agent embedding `U(s', a')`. The value of an agent's
//! action is `Q(s, a) + lambda * <V(s, a), mean_j U(s_j, a_j)>`, and the
//! greedy action is found by a coordinate-ascent scan over the agent's own
//! actions with all co-agents fixed at their last actions.
//!
//! The crate also carries the baselines (independent, dueling and mean-field
//! Q-learning), the Gaussian Squeeze allocation game, a gridworld battle
//! simulator, and a training/evaluation harness with a CLI.

pub mod baselines;
pub mod battle;
pub mod error;
pub mod fql;
pub mod harness;
pub mod nn;
pub mod seeds;
pub mod squeeze;

pub use error::{Error, Result};
