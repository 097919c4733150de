use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use super::dueling::{dueling_aggregate, dueling_backward};
use crate::error::{Error, Result};
use crate::fql::{check_gamma, greedy_action, stack_states, GroupView, Transition};
use crate::nn::{clip_global_norm, Architecture, Network, Optimizer, Shape};
use crate::seeds;

/// Independent Q-learner shared by a group, optionally with a dueling head.
///
/// With `dueling`, the network emits `1 + |A|` values: the state value
/// followed by the advantages.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IqlModel {
    pub online: Network,
    pub target: Network,
    state_shape: Shape,
    num_actions: usize,
    dueling: bool,
}

impl IqlModel {
    /// Fresh model; the network draws from the same stream a factorized
    /// model uses for its Q head, so both start from identical weights.
    pub fn init(
        state_shape: Shape,
        num_actions: usize,
        architecture: &Architecture,
        dueling: bool,
        seed: u64,
    ) -> Result<Self> {
        let outputs = if dueling { num_actions + 1 } else { num_actions };
        let online = architecture.build(state_shape, outputs, &mut seeds::stream(seed, seeds::Q_NET))?;
        IqlModel::from_network(online, state_shape, num_actions, dueling)
    }

    pub fn from_network(online: Network, state_shape: Shape, num_actions: usize, dueling: bool) -> Result<Self> {
        let outputs = if dueling { num_actions + 1 } else { num_actions };
        if num_actions == 0 || online.output_len() != outputs || online.input_len() != state_shape.len() {
            return Err(Error::Config(format!(
                "IQL network maps {} -> {}, expected {} -> {}",
                online.input_len(),
                online.output_len(),
                state_shape.len(),
                outputs
            )));
        }
        let target = online.clone();
        Ok(IqlModel {
            online,
            target,
            state_shape,
            num_actions,
            dueling,
        })
    }

    pub fn num_actions(&self) -> usize {
        self.num_actions
    }

    pub fn is_dueling(&self) -> bool {
        self.dueling
    }

    pub fn state_shape(&self) -> Shape {
        self.state_shape
    }

    pub fn sync_target(&mut self) {
        self.target
            .copy_params_from(&self.online)
            .expect("online and target share layer specs");
    }

    fn values(&self, net: &Network, states: ArrayView2<f64>) -> Result<Array2<f64>> {
        let raw = net.forward_batch(states)?;
        Ok(if self.dueling { dueling_aggregate(&raw) } else { raw })
    }

    /// Online Q-values of one state.
    pub fn q_values(&self, state: &[f64]) -> Result<Vec<f64>> {
        let x = stack_states([state], self.state_shape.len())?;
        Ok(self.values(&self.online, x.view())?.into_raw_vec_and_offset().0)
    }

    /// Dueling aggregation of the online network at `state`.
    pub fn dueling_q_values(&self, state: &[f64]) -> Result<Vec<f64>> {
        if !self.dueling {
            return Err(Error::Config("model has no dueling head".into()));
        }
        self.q_values(state)
    }

    /// Online Q-values for each agent of the group; co-agents are ignored.
    pub fn q_values_for_group(&self, view: &GroupView<'_>) -> Result<Array2<f64>> {
        view.validate()?;
        let x = stack_states(view.states.iter().map(|s| &s[..]), self.state_shape.len())?;
        let raw = self.online.forward_distinct(x.view())?;
        Ok(if self.dueling { dueling_aggregate(&raw) } else { raw })
    }

    /// Double-DQN target; co-agent fields are ignored.
    pub fn iql_target(&self, tr: &Transition, gamma: f64) -> Result<f64> {
        Ok(self.targets(&[tr], gamma)?[0])
    }

    pub fn targets(&self, batch: &[&Transition], gamma: f64) -> Result<Vec<f64>> {
        check_gamma(gamma)?;
        let mut out: Vec<f64> = batch.iter().map(|t| t.reward).collect();
        let live: Vec<usize> = (0..batch.len()).filter(|&b| !batch[b].is_terminal()).collect();
        if live.is_empty() || gamma == 0.0 {
            return Ok(out);
        }
        let next = stack_states(
            live.iter().map(|&b| &batch[b].next_state.as_ref().expect("non-terminal")[..]),
            self.state_shape.len(),
        )?;
        let online_q = self.values(&self.online, next.view())?;
        let target_q = self.values(&self.target, next.view())?;
        for (k, &b) in live.iter().enumerate() {
            let a_star = greedy_action(online_q.row(k).as_slice().expect("contiguous row"))?;
            out[b] += gamma * target_q[(k, a_star)];
        }
        Ok(out)
    }

    pub fn loss_and_gradient(&self, batch: &[&Transition], gamma: f64) -> Result<(f64, Vec<f64>)> {
        if batch.is_empty() {
            return Err(Error::Degenerate("training batch is empty".into()));
        }
        for tr in batch {
            tr.validate(self.num_actions)?;
        }
        let targets = self.targets(batch, gamma)?;
        let x = stack_states(batch.iter().map(|t| &t.state[..]), self.state_shape.len())?;
        let trace = self.online.forward_trace(x.view())?;
        let q = if self.dueling {
            dueling_aggregate(trace.output())
        } else {
            trace.output().clone()
        };
        let n = batch.len() as f64;
        let mut loss = 0.0;
        let mut up = Array2::zeros(q.dim());
        let mut residual = Vec::with_capacity(batch.len());
        for (b, tr) in batch.iter().enumerate() {
            let diff = q[(b, tr.action)] - targets[b];
            loss += diff * diff;
            residual.push(diff);
        }
        loss /= n;
        if !loss.is_finite() {
            return Err(Error::Training(format!("non-finite TD loss {loss}")));
        }
        for (b, tr) in batch.iter().enumerate() {
            up[(b, tr.action)] = 2.0 * residual[b] / n;
        }
        let upstream = if self.dueling { dueling_backward(&up) } else { up };
        Ok((loss, self.online.backward(&trace, upstream.view())?))
    }

    pub fn td_train_step(
        &mut self,
        batch: &[&Transition],
        gamma: f64,
        opt: &mut Optimizer,
        clip_norm: Option<f64>,
    ) -> Result<f64> {
        let (loss, mut grad) = self.loss_and_gradient(batch, gamma)?;
        if let Some(max) = clip_norm {
            clip_global_norm(&mut [&mut grad], max);
        }
        opt.step(&mut self.online, &grad)?;
        Ok(loss)
    }
}
