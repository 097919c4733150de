use ndarray::Array2;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::config::{AlgorithmKind, MfqExploration, Neighborhood, RunConfig};
use crate::baselines::{boltzmann_sample, IqlModel, MfqModel};
use crate::error::{Error, Result};
use crate::fql::{epsilon_greedy, greedy_action, FactorizedQModel, FqlOptimizer, FqlSpec, GroupModel, GroupView, Transition};
use crate::nn::{Optimizer, Shape};

/// Online and target networks of one algorithm.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Model {
    Fql(GroupModel),
    Iql(IqlModel),
    Mfq(MfqModel),
}

/// How actions are drawn from Q-values.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Exploration {
    Greedy,
    /// Epsilon-greedy; mean-field learners in Boltzmann mode sample from
    /// their softmax instead.
    Explore(f64),
}

/// A group's decision rule: the shared model plus how it reads co-agents.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Policy {
    pub algorithm: AlgorithmKind,
    pub neighbors: Neighborhood,
    pub mfq_exploration: MfqExploration,
    pub model: Model,
}

impl Policy {
    pub fn init(cfg: &RunConfig, state_shape: Shape, num_actions: usize, group_id: usize) -> Result<Self> {
        let model = match cfg.algorithm {
            AlgorithmKind::Fql => {
                let spec = FqlSpec {
                    state_shape,
                    num_actions,
                    embed_dim: cfg.embed_dim,
                    lambda: cfg.lambda,
                    architecture: cfg.network.clone(),
                };
                Model::Fql(GroupModel::new(FactorizedQModel::init(&spec, cfg.seed)?, group_id))
            }
            AlgorithmKind::Iql | AlgorithmKind::Diql => Model::Iql(IqlModel::init(
                state_shape,
                num_actions,
                &cfg.network,
                cfg.algorithm == AlgorithmKind::Diql,
                cfg.seed,
            )?),
            AlgorithmKind::Mfq => {
                let Shape::Flat { len } = state_shape else {
                    return Err(Error::Config("the mean-field learner needs a flat state encoding".into()));
                };
                Model::Mfq(MfqModel::init(len, num_actions, &cfg.network, cfg.temperature, cfg.seed)?)
            }
        };
        Ok(Policy {
            algorithm: cfg.algorithm,
            neighbors: cfg.neighbors,
            mfq_exploration: cfg.mfq_exploration,
            model,
        })
    }

    pub fn num_actions(&self) -> usize {
        match &self.model {
            Model::Fql(m) => m.num_actions(),
            Model::Iql(m) => m.num_actions(),
            Model::Mfq(m) => m.num_actions(),
        }
    }

    pub fn state_shape(&self) -> Shape {
        match &self.model {
            Model::Fql(m) => m.online.state_shape(),
            Model::Iql(m) => m.state_shape(),
            Model::Mfq(m) => m.state_shape(),
        }
    }

    pub fn q_values_for_group(&self, view: &GroupView<'_>) -> Result<Array2<f64>> {
        match &self.model {
            Model::Fql(m) => m.online.q_values_for_group(view),
            Model::Iql(m) => m.q_values_for_group(view),
            Model::Mfq(m) => m.q_values_for_group(view),
        }
    }

    /// One action per group member, drawn in member order.
    pub fn select_actions<R: Rng + ?Sized>(
        &self,
        view: &GroupView<'_>,
        exploration: Exploration,
        rng: &mut R,
    ) -> Result<Vec<usize>> {
        let q = self.q_values_for_group(view)?;
        q.outer_iter()
            .map(|row| {
                let row = row.as_slice().expect("contiguous row");
                match (exploration, &self.model) {
                    (Exploration::Greedy, _) => greedy_action(row),
                    (Exploration::Explore(_), Model::Mfq(m)) if self.mfq_exploration == MfqExploration::Boltzmann => {
                        boltzmann_sample(row, m.temperature, rng)
                    }
                    (Exploration::Explore(eps), _) => epsilon_greedy(row, eps, rng),
                }
            })
            .collect()
    }

    /// Number of (online, target) model instances held.
    pub fn model_instances(&self) -> (usize, usize) {
        (1, 1)
    }

    pub fn embed_dim(&self) -> Option<usize> {
        match &self.model {
            Model::Fql(m) => Some(m.online.embed_dim()),
            _ => None,
        }
    }

    pub fn lambda(&self) -> Option<f64> {
        match &self.model {
            Model::Fql(m) => Some(m.online.lambda()),
            _ => None,
        }
    }
}

#[derive(Debug, Clone)]
enum Optimizers {
    Fql(FqlOptimizer),
    Single(Optimizer),
}

/// A policy together with its optimizer state and training counters.
#[derive(Debug, Clone)]
pub struct Learner {
    pub policy: Policy,
    optim: Optimizers,
    clip_norm: Option<f64>,
    gamma: f64,
    target_sync: u64,
    train_steps: u64,
}

impl Learner {
    pub fn new(cfg: &RunConfig, state_shape: Shape, num_actions: usize, group_id: usize) -> Result<Self> {
        let policy = Policy::init(cfg, state_shape, num_actions, group_id)?;
        let optim = match &policy.model {
            Model::Fql(m) => Optimizers::Fql(FqlOptimizer::new(cfg.optimizer.clone(), &m.online, cfg.clip_norm)?),
            Model::Iql(m) => Optimizers::Single(Optimizer::for_network(cfg.optimizer.clone(), &m.online)?),
            Model::Mfq(m) => Optimizers::Single(Optimizer::for_network(cfg.optimizer.clone(), &m.online)?),
        };
        Ok(Learner {
            policy,
            optim,
            clip_norm: cfg.clip_norm,
            gamma: cfg.gamma,
            target_sync: cfg.target_sync,
            train_steps: 0,
        })
    }

    pub fn train_steps(&self) -> u64 {
        self.train_steps
    }

    /// One TD step on `batch`; copies online into target every `target_sync` steps.
    pub fn train_step(&mut self, batch: &[&Transition]) -> Result<f64> {
        let gamma = self.gamma;
        let loss = match (&mut self.policy.model, &mut self.optim) {
            (Model::Fql(m), Optimizers::Fql(opt)) => m.td_train_step(batch, gamma, opt)?,
            (Model::Iql(m), Optimizers::Single(opt)) => m.td_train_step(batch, gamma, opt, self.clip_norm)?,
            (Model::Mfq(m), Optimizers::Single(opt)) => m.td_train_step(batch, gamma, opt, self.clip_norm)?,
            _ => unreachable!("optimizer built for its model"),
        };
        if !loss.is_finite() {
            return Err(Error::Training(format!("non-finite loss {loss} at train step {}", self.train_steps)));
        }
        self.train_steps += 1;
        if self.train_steps % self.target_sync == 0 {
            self.sync_target();
        }
        Ok(loss)
    }

    pub fn sync_target(&mut self) {
        match &mut self.policy.model {
            Model::Fql(m) => m.sync_target(),
            Model::Iql(m) => m.sync_target(),
            Model::Mfq(m) => m.sync_target(),
        }
    }
}
