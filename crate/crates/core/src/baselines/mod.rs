//! Comparison learners: independent Q-learning (optionally dueling) and
//! mean-field Q-learning.

mod dueling;
mod iql;
mod mfq;

pub use dueling::{dueling_aggregate, dueling_backward};
pub use iql::IqlModel;
pub use mfq::{boltzmann_probabilities, boltzmann_sample, mean_action, MfqModel};
