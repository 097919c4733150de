use std::collections::HashMap;
use std::sync::Arc;

use ndarray::{Array2, ArrayView2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::policy::{epsilon_greedy, greedy_action};
use super::transition::{CoAgentRef, GroupView, State, Transition};
use crate::error::{Error, Result};
use crate::nn::{clip_global_norm, Architecture, Network, Optimizer, OptimizerConfig, Shape};
use crate::seeds;

/// `lambda = lambda_pair * (n_agents - 1)`.
pub fn lambda_from_pair_weight(lambda_pair: f64, n_agents: usize) -> f64 {
    lambda_pair * n_agents.saturating_sub(1) as f64
}

/// Shape and hyper-parameters of a factorized model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FqlSpec {
    pub state_shape: Shape,
    pub num_actions: usize,
    pub embed_dim: usize,
    pub lambda: f64,
    pub architecture: Architecture,
}

/// The composite Q/V/U model of one agent group.
///
/// `q_net: s -> |A|`, `v_net: s -> d * |A|` (row `a` is the embedding of
/// action `a`), `u_net: (s', a') -> d`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FactorizedQModel {
    pub q_net: Network,
    pub v_net: Network,
    pub u_net: Network,
    state_shape: Shape,
    num_actions: usize,
    embed_dim: usize,
    lambda: f64,
}

/// Encodes a co-agent's `(state, action)` pair as the co-agent network input:
/// the one-hot action is appended as a flat tail, or as one constant plane
/// per action for planar states.
pub fn pair_input_shape(state: Shape, num_actions: usize) -> Shape {
    match state {
        Shape::Flat { len } => Shape::flat(len + num_actions),
        Shape::Planes {
            channels,
            height,
            width,
        } => Shape::planes(channels + num_actions, height, width),
    }
}

fn encode_pair(state_shape: Shape, state: &[f64], action: usize, out: &mut [f64]) {
    let n = state_shape.len();
    out[..n].copy_from_slice(state);
    match state_shape {
        Shape::Flat { .. } => out[n + action] = 1.0,
        Shape::Planes { height, width, .. } => {
            let plane = height * width;
            out[n + action * plane..n + (action + 1) * plane].fill(1.0);
        }
    }
}

/// Stacks state encodings into a `[rows x width]` matrix.
pub(crate) fn stack_states<'a, I>(states: I, width: usize) -> Result<Array2<f64>>
where
    I: IntoIterator<Item = &'a [f64]>,
{
    let mut data = Vec::new();
    let mut rows = 0;
    for s in states {
        if s.len() != width {
            return Err(Error::Shape {
                context: "state encoding",
                expected: width,
                actual: s.len(),
            });
        }
        data.extend_from_slice(s);
        rows += 1;
    }
    Array2::from_shape_vec((rows, width), data).map_err(|e| Error::Config(e.to_string()))
}

/// Distinct co-agent `(state, action)` inputs of a batch, and for each batch
/// item the weights that average them into its mean embedding.
///
/// Inputs are deduplicated by state allocation and action, so co-agents that
/// share an encoding are evaluated once.
#[derive(Debug, Default)]
pub(crate) struct Mixtures {
    pub rows: Vec<(State, usize)>,
    pub items: Vec<Vec<(usize, f64)>>,
    index: HashMap<(usize, usize), usize>,
}

impl Mixtures {
    pub fn push_item<'a, I>(&mut self, pairs: I)
    where
        I: IntoIterator<Item = (&'a State, usize)>,
    {
        let mut local: Vec<(usize, f64)> = Vec::new();
        let mut pos: HashMap<usize, usize> = HashMap::new();
        let mut n = 0usize;
        for (state, action) in pairs {
            let key = (Arc::as_ptr(state) as *const f64 as usize, action);
            let next = self.rows.len();
            let row = *self.index.entry(key).or_insert_with(|| next);
            if row == next {
                self.rows.push((state.clone(), action));
            }
            match pos.get(&row) {
                Some(&p) => local[p].1 += 1.0,
                None => {
                    pos.insert(row, local.len());
                    local.push((row, 1.0));
                }
            }
            n += 1;
        }
        for entry in &mut local {
            entry.1 /= n as f64;
        }
        self.items.push(local);
    }
}

impl FactorizedQModel {
    /// Fresh model; each network draws from its own stream of `seed`.
    pub fn init(spec: &FqlSpec, seed: u64) -> Result<Self> {
        if spec.num_actions == 0 || spec.embed_dim == 0 {
            return Err(Error::Config("action count and embedding dimension must be >= 1".into()));
        }
        let q_net = spec.architecture.build(
            spec.state_shape,
            spec.num_actions,
            &mut seeds::stream(seed, seeds::Q_NET),
        )?;
        let v_net = spec.architecture.build(
            spec.state_shape,
            spec.embed_dim * spec.num_actions,
            &mut seeds::stream(seed, seeds::V_NET),
        )?;
        let u_net = spec.architecture.build(
            pair_input_shape(spec.state_shape, spec.num_actions),
            spec.embed_dim,
            &mut seeds::stream(seed, seeds::U_NET),
        )?;
        FactorizedQModel::from_networks(q_net, v_net, u_net, spec.state_shape, spec.embed_dim, spec.lambda)
    }

    /// Assembles a model from existing networks, checking that their widths agree.
    pub fn from_networks(
        q_net: Network,
        v_net: Network,
        u_net: Network,
        state_shape: Shape,
        embed_dim: usize,
        lambda: f64,
    ) -> Result<Self> {
        let num_actions = q_net.output_len();
        if !(lambda >= 0.0 && lambda.is_finite()) {
            return Err(Error::Config(format!("lambda must be finite and >= 0, got {lambda}")));
        }
        if embed_dim == 0 {
            return Err(Error::Config("embedding dimension must be >= 1".into()));
        }
        let checks = [
            ("q_net input", q_net.input_len(), state_shape.len()),
            ("v_net input", v_net.input_len(), state_shape.len()),
            ("v_net output", v_net.output_len(), embed_dim * num_actions),
            (
                "u_net input",
                u_net.input_len(),
                pair_input_shape(state_shape, num_actions).len(),
            ),
            ("u_net output", u_net.output_len(), embed_dim),
        ];
        for (what, actual, expected) in checks {
            if actual != expected {
                return Err(Error::Config(format!(
                    "{what} has width {actual}, expected {expected}"
                )));
            }
        }
        Ok(FactorizedQModel {
            q_net,
            v_net,
            u_net,
            state_shape,
            num_actions,
            embed_dim,
            lambda,
        })
    }

    pub fn num_actions(&self) -> usize {
        self.num_actions
    }

    pub fn embed_dim(&self) -> usize {
        self.embed_dim
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn state_shape(&self) -> Shape {
        self.state_shape
    }

    pub fn param_count(&self) -> usize {
        self.q_net.param_count() + self.v_net.param_count() + self.u_net.param_count()
    }

    fn same_layout(&self, other: &FactorizedQModel) -> bool {
        self.q_net.layers() == other.q_net.layers()
            && self.v_net.layers() == other.v_net.layers()
            && self.u_net.layers() == other.u_net.layers()
    }

    pub fn copy_params_from(&mut self, src: &FactorizedQModel) -> Result<()> {
        self.q_net.copy_params_from(&src.q_net)?;
        self.v_net.copy_params_from(&src.v_net)?;
        self.u_net.copy_params_from(&src.u_net)
    }

    fn check_action(&self, action: usize) -> Result<()> {
        if action >= self.num_actions {
            return Err(Error::Input(format!(
                "action {action} outside [0, {})",
                self.num_actions
            )));
        }
        Ok(())
    }

    fn check_embedding(&self, mean_embed: &[f64]) -> Result<()> {
        if mean_embed.len() != self.embed_dim {
            return Err(Error::Shape {
                context: "mean embedding",
                expected: self.embed_dim,
                actual: mean_embed.len(),
            });
        }
        Ok(())
    }

    /// Co-agent network input rows for the given pairs.
    pub fn pair_inputs<'a, I>(&self, pairs: I) -> Result<Array2<f64>>
    where
        I: IntoIterator<Item = (&'a [f64], usize)>,
    {
        let width = self.u_net.input_len();
        let mut data = Vec::new();
        let mut rows = 0;
        for (state, action) in pairs {
            if state.len() != self.state_shape.len() {
                return Err(Error::Shape {
                    context: "co-agent state",
                    expected: self.state_shape.len(),
                    actual: state.len(),
                });
            }
            self.check_action(action)?;
            let start = data.len();
            data.resize(start + width, 0.0);
            encode_pair(self.state_shape, state, action, &mut data[start..]);
            rows += 1;
        }
        Array2::from_shape_vec((rows, width), data).map_err(|e| Error::Config(e.to_string()))
    }

    /// Mean of the co-agent embeddings over the given co-agents.
    pub fn mean_embedding(&self, co_states: &[&[f64]], co_actions: &[usize]) -> Result<Vec<f64>> {
        if co_states.len() != co_actions.len() {
            return Err(Error::Input(format!(
                "{} co-agent states but {} actions",
                co_states.len(),
                co_actions.len()
            )));
        }
        if co_states.is_empty() {
            return Err(Error::Degenerate("mean embedding over zero co-agents".into()));
        }
        let inputs = self.pair_inputs(co_states.iter().copied().zip(co_actions.iter().copied()))?;
        let u = self.u_net.forward_batch(inputs.view())?;
        let n = co_states.len() as f64;
        Ok(u.sum_axis(Axis(0)).iter().map(|v| v / n).collect())
    }

    /// `Q(s, a) + lambda * <V(s, a), mean_embed>` for one action.
    pub fn q_value(&self, state: &[f64], action: usize, mean_embed: &[f64]) -> Result<f64> {
        self.check_action(action)?;
        Ok(self.q_values_all_actions(state, mean_embed)?[action])
    }

    /// Factorized value of every own action, from one pass of the Q and V heads.
    pub fn q_values_all_actions(&self, state: &[f64], mean_embed: &[f64]) -> Result<Vec<f64>> {
        self.check_embedding(mean_embed)?;
        let states = stack_states([state], self.state_shape.len())?;
        let ubar = ArrayView2::from_shape((1, self.embed_dim), mean_embed)
            .map_err(|e| Error::Config(e.to_string()))?;
        Ok(self
            .q_values_batch(states.view(), ubar)?
            .into_raw_vec_and_offset()
            .0)
    }

    /// Row `b` holds the factorized values of `states[b]` under `mean_embeds[b]`.
    pub fn q_values_batch(
        &self,
        states: ArrayView2<f64>,
        mean_embeds: ArrayView2<f64>,
    ) -> Result<Array2<f64>> {
        if mean_embeds.dim() != (states.nrows(), self.embed_dim) {
            return Err(Error::Shape {
                context: "mean embeddings",
                expected: states.nrows() * self.embed_dim,
                actual: mean_embeds.len(),
            });
        }
        let q = self.q_net.forward_batch(states)?;
        let v = self.v_net.forward_batch(states)?;
        Ok(self.combine(&q, &v, mean_embeds))
    }

    fn combine(&self, q: &Array2<f64>, v: &Array2<f64>, ubar: ArrayView2<f64>) -> Array2<f64> {
        let d = self.embed_dim;
        let mut out = q.clone();
        for ((mut row, vrow), urow) in out.outer_iter_mut().zip(v.outer_iter()).zip(ubar.outer_iter()) {
            for (a, qa) in row.iter_mut().enumerate() {
                let mut dot = 0.0;
                for k in 0..d {
                    dot += vrow[a * d + k] * urow[k];
                }
                *qa += self.lambda * dot;
            }
        }
        out
    }

    /// Coordinate-ascent step: the own action maximizing the factorized
    /// value with co-agents held at the actions summarized in `mean_embed`.
    pub fn best_response_action(&self, state: &[f64], mean_embed: &[f64]) -> Result<usize> {
        greedy_action(&self.q_values_all_actions(state, mean_embed)?)
    }

    fn mixture_embeddings(&self, u_net: &Network, mix: &Mixtures) -> Result<Array2<f64>> {
        let mut out = Array2::zeros((mix.items.len(), self.embed_dim));
        if mix.rows.is_empty() {
            return Ok(out);
        }
        let inputs = self.pair_inputs(mix.rows.iter().map(|(s, a)| (&s[..], *a)))?;
        let u = u_net.forward_batch(inputs.view())?;
        accumulate_mixtures(&u, mix, &mut out);
        Ok(out)
    }

    /// Factorized values for every agent of a group, using the co-agents'
    /// last actions. Agents without co-agents (or before any action was
    /// taken) get a zero embedding.
    pub fn q_values_for_group(&self, view: &GroupView<'_>) -> Result<Array2<f64>> {
        view.validate()?;
        let n = view.len();
        let d = self.embed_dim;
        let states = stack_states(view.states.iter().map(|s| &s[..]), self.state_shape.len())?;
        let mut ubar = Array2::zeros((n, d));
        if let Some(last) = view.last_actions {
            if n > 0 {
                let inputs = self.pair_inputs(view.states.iter().map(|s| &s[..]).zip(last.iter().copied()))?;
                let u = self.u_net.forward_distinct(inputs.view())?;
                let total = u.sum_axis(Axis(0));
                for (i, co) in view.co_agents.iter().enumerate() {
                    let count = co.count(n);
                    if count == 0 {
                        continue;
                    }
                    let mut row = ubar.row_mut(i);
                    match co {
                        super::CoAgents::All => row.assign(&total),
                        super::CoAgents::AllExcept(me) => {
                            row.assign(&total);
                            row -= &u.row(*me);
                        }
                        super::CoAgents::Indices(ix) => {
                            for &j in ix.iter() {
                                row += &u.row(j as usize);
                            }
                        }
                    }
                    row /= count as f64;
                }
            }
        }
        let q = self.q_net.forward_distinct(states.view())?;
        let v = self.v_net.forward_distinct(states.view())?;
        Ok(self.combine(&q, &v, ubar.view()))
    }
}

fn accumulate_mixtures(u: &Array2<f64>, mix: &Mixtures, out: &mut Array2<f64>) {
    for (mut row, item) in out.outer_iter_mut().zip(&mix.items) {
        for &(r, w) in item {
            row.scaled_add(w, &u.row(r));
        }
    }
}

/// Parameter gradients of the three heads.
#[derive(Debug, Clone, PartialEq)]
pub struct FqlGradients {
    pub q: Vec<f64>,
    pub v: Vec<f64>,
    pub u: Vec<f64>,
}

impl FqlGradients {
    pub fn flatten(&self) -> Vec<f64> {
        let mut all = self.q.clone();
        all.extend_from_slice(&self.v);
        all.extend_from_slice(&self.u);
        all
    }
}

/// One optimizer per head.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FqlOptimizer {
    pub q: Optimizer,
    pub v: Optimizer,
    pub u: Optimizer,
    pub clip_norm: Option<f64>,
}

impl FqlOptimizer {
    pub fn new(config: OptimizerConfig, model: &FactorizedQModel, clip_norm: Option<f64>) -> Result<Self> {
        Ok(FqlOptimizer {
            q: Optimizer::for_network(config.clone(), &model.q_net)?,
            v: Optimizer::for_network(config.clone(), &model.v_net)?,
            u: Optimizer::for_network(config, &model.u_net)?,
            clip_norm,
        })
    }
}

/// Online and target model shared by every agent of one group.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupModel {
    pub online: FactorizedQModel,
    pub target: FactorizedQModel,
    pub group_id: usize,
}

pub(crate) fn check_gamma(gamma: f64) -> Result<()> {
    if !(0.0..1.0).contains(&gamma) {
        return Err(Error::Config(format!("discount {gamma} outside [0, 1)")));
    }
    Ok(())
}

fn next_pairs<'a>(tr: &'a Transition) -> impl Iterator<Item = (&'a State, usize)> + 'a {
    tr.co_agents()
        .filter_map(|c: CoAgentRef<'a>| c.next_state.map(|s| (s, c.action)))
}

impl GroupModel {
    pub fn new(online: FactorizedQModel, group_id: usize) -> Self {
        let target = online.clone();
        GroupModel {
            online,
            target,
            group_id,
        }
    }

    pub fn num_actions(&self) -> usize {
        self.online.num_actions
    }

    /// Copies all three online heads into the target model.
    pub fn sync_target(&mut self) {
        self.target
            .copy_params_from(&self.online)
            .expect("online and target share layer specs");
    }

    /// Epsilon-greedy choice around [`FactorizedQModel::best_response_action`].
    pub fn select_action<R: Rng + ?Sized>(
        &self,
        state: &[f64],
        mean_embed: &[f64],
        epsilon: f64,
        rng: &mut R,
    ) -> Result<usize> {
        let values = self.online.q_values_all_actions(state, mean_embed)?;
        epsilon_greedy(&values, epsilon, rng)
    }

    /// Bootstrapped target for one transition.
    ///
    /// The next own action is the online model's best response at `s'` with
    /// co-agents' next states paired with their step-`t` actions; its value is
    /// read from the target model under the same pairing.
    pub fn target_value(&self, tr: &Transition, gamma: f64) -> Result<f64> {
        Ok(self.targets(&[tr], gamma)?[0])
    }

    /// Targets for a batch, with one batched pass per head.
    pub fn targets(&self, batch: &[&Transition], gamma: f64) -> Result<Vec<f64>> {
        check_gamma(gamma)?;
        let mut out: Vec<f64> = batch.iter().map(|t| t.reward).collect();
        let live: Vec<usize> = (0..batch.len()).filter(|&b| !batch[b].is_terminal()).collect();
        if live.is_empty() || gamma == 0.0 {
            return Ok(out);
        }
        let width = self.online.state_shape.len();
        let next = stack_states(
            live.iter().map(|&b| &batch[b].next_state.as_ref().expect("non-terminal")[..]),
            width,
        )?;
        let mut mix = Mixtures::default();
        for &b in &live {
            mix.push_item(next_pairs(batch[b]));
        }
        let ubar_online = self.online.mixture_embeddings(&self.online.u_net, &mix)?;
        let online_q = self.online.q_values_batch(next.view(), ubar_online.view())?;
        let ubar_target = self.target.mixture_embeddings(&self.target.u_net, &mix)?;
        let target_q = self.target.q_values_batch(next.view(), ubar_target.view())?;
        for (k, &b) in live.iter().enumerate() {
            let a_star = greedy_action(online_q.row(k).as_slice().expect("contiguous row"))?;
            out[b] += gamma * target_q[(k, a_star)];
        }
        Ok(out)
    }

    /// Mean squared TD error of the batch and its gradient with respect to
    /// all three online heads. Targets are treated as constants.
    pub fn loss_and_gradients(&self, batch: &[&Transition], gamma: f64) -> Result<(f64, FqlGradients)> {
        if batch.is_empty() {
            return Err(Error::Degenerate("training batch is empty".into()));
        }
        for tr in batch {
            tr.validate(self.online.num_actions)?;
        }
        let targets = self.targets(batch, gamma)?;
        let model = &self.online;
        let d = model.embed_dim;
        let states = stack_states(batch.iter().map(|t| &t.state[..]), model.state_shape.len())?;

        let mut mix = Mixtures::default();
        for tr in batch {
            mix.push_item(tr.co_agents().map(|c| (c.state, c.action)));
        }
        let q_trace = model.q_net.forward_trace(states.view())?;
        let v_trace = model.v_net.forward_trace(states.view())?;
        let u_trace = if mix.rows.is_empty() {
            None
        } else {
            let inputs = model.pair_inputs(mix.rows.iter().map(|(s, a)| (&s[..], *a)))?;
            Some(model.u_net.forward_trace(inputs.view())?)
        };
        let mut ubar = Array2::zeros((batch.len(), d));
        if let Some(trace) = &u_trace {
            accumulate_mixtures(trace.output(), &mix, &mut ubar);
        }
        let q_all = model.combine(q_trace.output(), v_trace.output(), ubar.view());

        let n = batch.len() as f64;
        let mut loss = 0.0;
        let mut residual = Vec::with_capacity(batch.len());
        for (b, tr) in batch.iter().enumerate() {
            let diff = q_all[(b, tr.action)] - targets[b];
            loss += diff * diff;
            residual.push(diff);
        }
        loss /= n;
        if !loss.is_finite() {
            return Err(Error::Training(format!("non-finite TD loss {loss}")));
        }

        let a_count = model.num_actions;
        let mut up_q = Array2::zeros((batch.len(), a_count));
        let mut up_v = Array2::zeros((batch.len(), d * a_count));
        let mut up_u = Array2::zeros((mix.rows.len(), d));
        for (b, tr) in batch.iter().enumerate() {
            let g = 2.0 * residual[b] / n;
            let a = tr.action;
            up_q[(b, a)] = g;
            let gl = g * model.lambda;
            if gl == 0.0 {
                continue;
            }
            for k in 0..d {
                up_v[(b, a * d + k)] = gl * ubar[(b, k)];
            }
            let vrow = v_trace.output().row(b);
            for &(r, w) in &mix.items[b] {
                for k in 0..d {
                    up_u[(r, k)] += gl * w * vrow[a * d + k];
                }
            }
        }
        let grads = FqlGradients {
            q: model.q_net.backward(&q_trace, up_q.view())?,
            v: model.v_net.backward(&v_trace, up_v.view())?,
            u: match &u_trace {
                Some(trace) => model.u_net.backward(trace, up_u.view())?,
                None => vec![0.0; model.u_net.param_count()],
            },
        };
        Ok((loss, grads))
    }

    /// One gradient step on the squared TD error; returns the pre-step loss.
    /// Target parameters are never touched.
    pub fn td_train_step(
        &mut self,
        batch: &[&Transition],
        gamma: f64,
        opt: &mut FqlOptimizer,
    ) -> Result<f64> {
        let (loss, mut grads) = self.loss_and_gradients(batch, gamma)?;
        if let Some(max) = opt.clip_norm {
            clip_global_norm(&mut [&mut grads.q, &mut grads.v, &mut grads.u], max);
        }
        for g in [&grads.q, &grads.v, &grads.u] {
            if let Some(v) = g.iter().find(|v| !v.is_finite()) {
                return Err(Error::Training(format!("non-finite gradient component {v}")));
            }
        }
        opt.q.step(&mut self.online.q_net, &grads.q)?;
        opt.v.step(&mut self.online.v_net, &grads.v)?;
        opt.u.step(&mut self.online.u_net, &grads.u)?;
        Ok(loss)
    }

    pub fn validate(&self) -> Result<()> {
        if !self.online.same_layout(&self.target) {
            return Err(Error::Config("online and target models differ in layout".into()));
        }
        Ok(())
    }
}
