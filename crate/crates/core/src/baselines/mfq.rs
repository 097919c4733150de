use ndarray::Array2;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fql::{check_gamma, greedy_action, GroupView, Transition};
use crate::nn::{clip_global_norm, Architecture, Network, Optimizer, Shape};
use crate::seeds;

/// Average one-hot encoding of `actions`.
pub fn mean_action(actions: &[usize], num_actions: usize) -> Result<Vec<f64>> {
    if actions.is_empty() {
        return Err(Error::Degenerate("mean action over zero co-agents".into()));
    }
    let mut out = vec![0.0; num_actions];
    for &a in actions {
        if a >= num_actions {
            return Err(Error::Input(format!("action {a} outside [0, {num_actions})")));
        }
        out[a] += 1.0;
    }
    let n = actions.len() as f64;
    out.iter_mut().for_each(|v| *v /= n);
    Ok(out)
}

/// Softmax of `values / temperature`.
pub fn boltzmann_probabilities(values: &[f64], temperature: f64) -> Result<Vec<f64>> {
    if !(temperature > 0.0) {
        return Err(Error::Config(format!("Boltzmann temperature must be > 0, got {temperature}")));
    }
    if values.is_empty() {
        return Err(Error::Degenerate("no actions".into()));
    }
    if let Some(v) = values.iter().find(|v| !v.is_finite()) {
        return Err(Error::Training(format!("non-finite Q-value {v}")));
    }
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let weights: Vec<f64> = values.iter().map(|v| ((v - max) / temperature).exp()).collect();
    let total: f64 = weights.iter().sum();
    Ok(weights.into_iter().map(|w| w / total).collect())
}

/// Draws an action from the Boltzmann distribution with a single uniform draw.
pub fn boltzmann_sample<R: Rng + ?Sized>(values: &[f64], temperature: f64, rng: &mut R) -> Result<usize> {
    let probs = boltzmann_probabilities(values, temperature)?;
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    for (a, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return Ok(a);
        }
    }
    // rounding left u above the cumulative sum: fall back to the last non-zero entry
    Ok(probs.iter().rposition(|&p| p > 0.0).unwrap_or(0))
}

/// Mean-field Q-learner: `Q(s, a, mean co-agent action)` shared per group.
///
/// Agents without co-agents condition on the zero vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MfqModel {
    pub online: Network,
    pub target: Network,
    state_shape: Shape,
    num_actions: usize,
    pub temperature: f64,
}

impl MfqModel {
    pub fn init(
        state_dim: usize,
        num_actions: usize,
        architecture: &Architecture,
        temperature: f64,
        seed: u64,
    ) -> Result<Self> {
        let input = Shape::flat(state_dim + num_actions);
        let online = architecture.build(input, num_actions, &mut seeds::stream(seed, seeds::Q_NET))?;
        MfqModel::from_network(online, Shape::flat(state_dim), num_actions, temperature)
    }

    pub fn from_network(online: Network, state_shape: Shape, num_actions: usize, temperature: f64) -> Result<Self> {
        if !(temperature > 0.0) {
            return Err(Error::Config(format!("Boltzmann temperature must be > 0, got {temperature}")));
        }
        if online.input_len() != state_shape.len() + num_actions || online.output_len() != num_actions {
            return Err(Error::Config(format!(
                "MF-Q network maps {} -> {}, expected {} -> {}",
                online.input_len(),
                online.output_len(),
                state_shape.len() + num_actions,
                num_actions
            )));
        }
        let target = online.clone();
        Ok(MfqModel {
            online,
            target,
            state_shape,
            num_actions,
            temperature,
        })
    }

    pub fn num_actions(&self) -> usize {
        self.num_actions
    }

    pub fn state_shape(&self) -> Shape {
        self.state_shape
    }

    pub fn sync_target(&mut self) {
        self.target
            .copy_params_from(&self.online)
            .expect("online and target share layer specs");
    }

    fn inputs<'a, I>(&self, rows: I) -> Result<Array2<f64>>
    where
        I: IntoIterator<Item = (&'a [f64], Vec<f64>)>,
    {
        let width = self.state_shape.len() + self.num_actions;
        let mut data = Vec::new();
        let mut n = 0;
        for (state, mean) in rows {
            if state.len() != self.state_shape.len() || mean.len() != self.num_actions {
                return Err(Error::Shape {
                    context: "mean-field input",
                    expected: width,
                    actual: state.len() + mean.len(),
                });
            }
            data.extend_from_slice(state);
            data.extend_from_slice(&mean);
            n += 1;
        }
        Array2::from_shape_vec((n, width), data).map_err(|e| Error::Config(e.to_string()))
    }

    fn mean_or_zero(&self, actions: &[usize]) -> Result<Vec<f64>> {
        if actions.is_empty() {
            Ok(vec![0.0; self.num_actions])
        } else {
            mean_action(actions, self.num_actions)
        }
    }

    pub fn q_values(&self, state: &[f64], mean: &[f64]) -> Result<Vec<f64>> {
        let x = self.inputs([(state, mean.to_vec())])?;
        Ok(self.online.forward_batch(x.view())?.into_raw_vec_and_offset().0)
    }

    /// Boltzmann (temperature `tau`) or, when `epsilon` is given, epsilon-greedy choice.
    pub fn mfq_select_action<R: Rng + ?Sized>(
        &self,
        state: &[f64],
        mean: &[f64],
        tau: f64,
        epsilon: Option<f64>,
        rng: &mut R,
    ) -> Result<usize> {
        let values = self.q_values(state, mean)?;
        match epsilon {
            Some(eps) => crate::fql::epsilon_greedy(&values, eps, rng),
            None => boltzmann_sample(&values, tau, rng),
        }
    }

    /// Q-values for each agent given the co-agents' last actions.
    pub fn q_values_for_group(&self, view: &GroupView<'_>) -> Result<Array2<f64>> {
        view.validate()?;
        let n = view.len();
        let a_count = self.num_actions;
        let mut means = Vec::with_capacity(n);
        match view.last_actions {
            Some(last) => {
                let mut totals = vec![0.0; a_count];
                for &a in last {
                    if a >= a_count {
                        return Err(Error::Input(format!("action {a} outside [0, {a_count})")));
                    }
                    totals[a] += 1.0;
                }
                for co in view.co_agents.iter() {
                    let count = co.count(n);
                    let mut m = vec![0.0; a_count];
                    if count > 0 {
                        match co {
                            crate::fql::CoAgents::All => m.copy_from_slice(&totals),
                            crate::fql::CoAgents::AllExcept(me) => {
                                m.copy_from_slice(&totals);
                                m[last[*me]] -= 1.0;
                            }
                            crate::fql::CoAgents::Indices(ix) => {
                                for &j in ix.iter() {
                                    m[last[j as usize]] += 1.0;
                                }
                            }
                        }
                        m.iter_mut().for_each(|v| *v /= count as f64);
                    }
                    means.push(m);
                }
            }
            None => means.resize(n, vec![0.0; a_count]),
        }
        let x = self.inputs(view.states.iter().map(|s| &s[..]).zip(means))?;
        self.online.forward_distinct(x.view())
    }

    /// Double-DQN target at the next state, conditioned on the step-`t` mean action.
    pub fn mfq_target(&self, tr: &Transition, gamma: f64) -> Result<f64> {
        Ok(self.targets(&[tr], gamma)?[0])
    }

    pub fn targets(&self, batch: &[&Transition], gamma: f64) -> Result<Vec<f64>> {
        check_gamma(gamma)?;
        let mut out: Vec<f64> = batch.iter().map(|t| t.reward).collect();
        let live: Vec<usize> = (0..batch.len()).filter(|&b| !batch[b].is_terminal()).collect();
        if live.is_empty() || gamma == 0.0 {
            return Ok(out);
        }
        let rows = live
            .iter()
            .map(|&b| {
                let tr = batch[b];
                Ok((&tr.next_state.as_ref().expect("non-terminal")[..], self.mean_or_zero(&tr.co_actions())?))
            })
            .collect::<Result<Vec<_>>>()?;
        let x = self.inputs(rows)?;
        let online_q = self.online.forward_batch(x.view())?;
        let target_q = self.target.forward_batch(x.view())?;
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
        let rows = batch
            .iter()
            .map(|tr| Ok((&tr.state[..], self.mean_or_zero(&tr.co_actions())?)))
            .collect::<Result<Vec<_>>>()?;
        let x = self.inputs(rows)?;
        let trace = self.online.forward_trace(x.view())?;
        let q = trace.output();
        let n = batch.len() as f64;
        let mut loss = 0.0;
        let mut up = Array2::zeros(q.dim());
        for (b, tr) in batch.iter().enumerate() {
            let diff = q[(b, tr.action)] - targets[b];
            loss += diff * diff;
            up[(b, tr.action)] = 2.0 * diff / n;
        }
        loss /= n;
        if !loss.is_finite() {
            return Err(Error::Training(format!("non-finite TD loss {loss}")));
        }
        Ok((loss, self.online.backward(&trace, up.view())?))
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

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::fql::{CoAgents, State};

    #[test]
    fn mean_action_examples() {
        assert_eq!(mean_action(&[2], 3).unwrap(), vec![0.0, 0.0, 1.0]);
        assert_eq!(mean_action(&[0, 1], 2).unwrap(), vec![0.5, 0.5]);
        assert!(matches!(mean_action(&[], 2), Err(Error::Degenerate(_))));
        assert!(mean_action(&[3], 3).is_err());
    }

    #[test]
    fn equal_values_are_exactly_uniform() {
        let p = boltzmann_probabilities(&[1.5; 4], 0.7).unwrap();
        assert!(p.iter().all(|&x| x == 0.25));
        assert!(boltzmann_probabilities(&[1.0], 0.0).is_err());
        assert!(boltzmann_probabilities(&[1.0], -1.0).is_err());
    }

    #[test]
    fn hot_temperature_is_uniform_chi_square() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let values: Vec<f64> = (0..10).map(|a| a as f64 * 0.1).collect();
        let draws = 100_000;
        let mut counts = [0f64; 10];
        for _ in 0..draws {
            counts[boltzmann_sample(&values, 1e9, &mut rng).unwrap()] += 1.0;
        }
        let expected = draws as f64 / 10.0;
        let chi2: f64 = counts.iter().map(|c| (c - expected).powi(2) / expected).sum();
        // 9 degrees of freedom, p = 0.001 critical value
        assert!(chi2 < 27.877, "chi2 = {chi2}");
    }

    #[test]
    fn cold_temperature_is_greedy() {
        let mut rng = ChaCha8Rng::seed_from_u64(18);
        let values = [0.1, 0.4, 0.35, -1.0];
        let draws = 100_000;
        let hits = (0..draws)
            .filter(|_| boltzmann_sample(&values, 1e-6, &mut rng).unwrap() == 1)
            .count();
        assert!(hits as f64 / draws as f64 >= 0.999);
    }

    fn st(v: &[f64]) -> State {
        Arc::from(v.to_vec())
    }

    #[test]
    fn target_conditions_on_step_mean_action() {
        let arch = Architecture::Mlp { hidden: vec![4] };
        let model = MfqModel::init(1, 3, &arch, 1.0, 9).unwrap();
        let tr = Transition::new(
            st(&[1.0]),
            0,
            vec![st(&[1.0]), st(&[1.0])],
            vec![0, 2],
            0.3,
            Some((st(&[0.5]), vec![Some(st(&[1.0])), None])),
        )
        .unwrap();
        let mean = [0.5, 0.0, 0.5];
        let online = model.q_values(&[0.5], &mean).unwrap();
        let a_star = greedy_action(&online).unwrap();
        let x = model.inputs([(&[0.5][..], mean.to_vec())]).unwrap();
        let tq = model.target.forward_batch(x.view()).unwrap();
        let expected = 0.3 + 0.9 * tq[(0, a_star)];
        assert_eq!(model.mfq_target(&tr, 0.9).unwrap(), expected);
        let terminal = Transition::new(st(&[1.0]), 0, vec![], vec![], 4.0, None).unwrap();
        assert_eq!(model.mfq_target(&terminal, 0.9).unwrap(), 4.0);
    }

    #[test]
    fn group_means_leave_self_out() {
        let arch = Architecture::Mlp { hidden: vec![4] };
        let model = MfqModel::init(1, 2, &arch, 1.0, 9).unwrap();
        let s = st(&[1.0]);
        let states = vec![s.clone(), s.clone(), s];
        let last = vec![0, 1, 1];
        let co: Vec<CoAgents> = (0..3).map(CoAgents::AllExcept).collect();
        let view = GroupView {
            states: &states,
            last_actions: Some(&last),
            co_agents: &co,
        };
        let q = model.q_values_for_group(&view).unwrap();
        assert_eq!(q.row(0).to_vec(), model.q_values(&[1.0], &[0.0, 1.0]).unwrap());
        assert_eq!(q.row(1).to_vec(), model.q_values(&[1.0], &[0.5, 0.5]).unwrap());
    }

    #[test]
    fn rejects_non_positive_temperature() {
        let arch = Architecture::Mlp { hidden: vec![4] };
        assert!(matches!(MfqModel::init(1, 2, &arch, 0.0, 1), Err(Error::Config(_))));
    }

    proptest! {
        #[test]
        fn mean_action_is_probability_vector(actions in proptest::collection::vec(0usize..6, 1..30)) {
            let m = mean_action(&actions, 6).unwrap();
            prop_assert!(m.iter().all(|&p| (0.0..=1.0).contains(&p)));
            prop_assert!((m.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            let mut rev = actions.clone();
            rev.reverse();
            prop_assert_eq!(mean_action(&rev, 6).unwrap(), m);
        }
    }
}
