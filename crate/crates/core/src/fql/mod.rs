//! Factorized Q-learning: the composite Q/V/U model, coordinate-ascent
//! target estimation and the TD training step, all shared per agent group.

mod model;
mod policy;
mod transition;

pub use model::{
    lambda_from_pair_weight, pair_input_shape, FactorizedQModel, FqlGradients, FqlOptimizer,
    FqlSpec, GroupModel,
};
pub(crate) use model::{check_gamma, stack_states};
pub use policy::{epsilon_greedy, greedy_action};
pub use transition::{CoAgentRef, CoAgents, GroupView, Peers, State, Transition};

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::error::Error;
    use crate::nn::{numeric_gradient, LayerSpec, Network, OptimizerConfig, Shape};

    fn constant_net(inputs: usize, outputs: &[f64]) -> Network {
        let mut net = Network::zeros(vec![LayerSpec::dense(inputs, outputs.len())]).unwrap();
        let w = inputs * outputs.len();
        net.params_mut()[w..].copy_from_slice(outputs);
        net
    }

    /// Dense layer whose weight matrix is `weights` (row-major, outputs x inputs), zero bias.
    fn linear_net(inputs: usize, outputs: usize, weights: &[f64]) -> Network {
        let mut net = Network::zeros(vec![LayerSpec::dense(inputs, outputs)]).unwrap();
        net.params_mut()[..inputs * outputs].copy_from_slice(weights);
        net
    }

    /// Single-state model with `|A|` actions whose co-agent embedding of
    /// action `a` is `u_per_action[a]` (d = 1).
    fn stub_model(q: &[f64], v: &[f64], u_per_action: &[f64], lambda: f64) -> FactorizedQModel {
        let n_a = q.len();
        let q_net = constant_net(1, q);
        let v_net = constant_net(1, v);
        let mut w = vec![0.0];
        w.extend_from_slice(u_per_action);
        let u_net = linear_net(1 + n_a, 1, &w);
        FactorizedQModel::from_networks(q_net, v_net, u_net, Shape::flat(1), 1, lambda).unwrap()
    }

    fn st(v: &[f64]) -> State {
        Arc::from(v.to_vec())
    }

    #[test]
    fn lambda_scales_with_co_agents() {
        assert_eq!(lambda_from_pair_weight(0.5, 11), 5.0);
        assert_eq!(lambda_from_pair_weight(0.5, 1), 0.0);
    }

    #[test]
    fn mean_embedding_examples() {
        let m = stub_model(&[0.0, 0.0], &[0.0, 0.0], &[3.0, 5.0], 1.0);
        let s = [1.0];
        assert_eq!(m.mean_embedding(&[&s], &[0]).unwrap(), vec![3.0]);
        assert_eq!(m.mean_embedding(&[&s, &s], &[0, 1]).unwrap(), vec![4.0]);
        let fwd = m.mean_embedding(&[&s, &s, &s], &[0, 1, 1]).unwrap();
        let rev = m.mean_embedding(&[&s, &s, &s], &[1, 1, 0]).unwrap();
        assert!((fwd[0] - rev[0]).abs() <= 1e-9);
    }

    #[test]
    fn mean_embedding_rejects_empty_and_ragged() {
        let m = stub_model(&[0.0], &[0.0], &[1.0], 1.0);
        assert!(matches!(m.mean_embedding(&[], &[]), Err(Error::Degenerate(_))));
        assert!(matches!(m.mean_embedding(&[&[1.0]], &[]), Err(Error::Input(_))));
    }

    #[test]
    fn q_value_examples() {
        let m = stub_model(&[1.0], &[2.0], &[4.0], 0.5);
        assert_eq!(m.q_value(&[1.0], 0, &[4.0]).unwrap(), 5.0);
        let m0 = stub_model(&[1.0], &[2.0], &[4.0], 0.0);
        assert_eq!(m0.q_value(&[1.0], 0, &[4.0]).unwrap(), 1.0);
        assert_eq!(m.q_value(&[1.0], 0, &[0.0]).unwrap(), 1.0);
        assert!(matches!(m.q_value(&[1.0], 0, &[0.0, 1.0]), Err(Error::Shape { .. })));
        assert!(matches!(m.q_value(&[1.0], 1, &[0.0]), Err(Error::Input(_))));
    }

    #[test]
    fn all_actions_match_hand_computation() {
        // Q = q + lambda * v_a * u
        let m = stub_model(&[1.0, -2.0, 0.5], &[0.5, 1.0, -1.0], &[1.0, 1.0, 1.0], 2.0);
        let values = m.q_values_all_actions(&[1.0], &[3.0]).unwrap();
        assert_eq!(values, vec![1.0 + 2.0 * 0.5 * 3.0, -2.0 + 2.0 * 3.0, 0.5 - 2.0 * 3.0]);
        for (a, v) in values.iter().enumerate() {
            assert_eq!(*v, m.q_value(&[1.0], a, &[3.0]).unwrap());
        }
        let single = stub_model(&[0.7], &[1.0], &[1.0], 1.0);
        assert_eq!(single.q_values_all_actions(&[1.0], &[2.0]).unwrap(), vec![2.7]);
    }

    #[test]
    fn action_scan_is_one_pass_per_head() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let spec = FqlSpec {
            state_shape: Shape::flat(3),
            num_actions: 7,
            embed_dim: 4,
            lambda: 1.0,
            architecture: crate::nn::Architecture::Mlp { hidden: vec![8] },
        };
        let m = FactorizedQModel::init(&spec, rng.gen()).unwrap();
        m.best_response_action(&[0.1, 0.2, 0.3], &[0.0; 4]).unwrap();
        assert_eq!((m.q_net.forward_count(), m.v_net.forward_count()), (1, 1));
        assert_eq!(m.u_net.forward_count(), 0);
    }

    #[test]
    fn best_response_examples() {
        let m = stub_model(&[0.1, 0.9, 0.3], &[0.0; 3], &[0.0; 3], 1.0);
        assert_eq!(m.best_response_action(&[1.0], &[0.0]).unwrap(), 1);
        let tie = stub_model(&[0.5, 0.5], &[0.0; 2], &[0.0; 2], 1.0);
        assert_eq!(tie.best_response_action(&[1.0], &[0.0]).unwrap(), 0);
        let one = stub_model(&[-3.0], &[0.0], &[0.0], 1.0);
        assert_eq!(one.best_response_action(&[1.0], &[0.0]).unwrap(), 0);
    }

    fn terminal(r: f64) -> Transition {
        Transition::new(st(&[1.0]), 0, vec![st(&[1.0])], vec![0], r, None).unwrap()
    }

    #[test]
    fn target_value_trivial_cases() {
        let g = GroupModel::new(stub_model(&[1.0, 2.0], &[0.0; 2], &[0.0; 2], 1.0), 0);
        assert_eq!(g.target_value(&terminal(2.0), 0.9).unwrap(), 2.0);
        let live = Transition::new(
            st(&[1.0]),
            0,
            vec![st(&[1.0])],
            vec![1],
            1.0,
            Some((st(&[1.0]), vec![Some(st(&[1.0]))])),
        )
        .unwrap();
        assert_eq!(g.target_value(&live, 0.0).unwrap(), 1.0);
        assert!(matches!(g.target_value(&live, 1.0), Err(Error::Config(_))));
        assert!(matches!(g.target_value(&live, -0.1), Err(Error::Config(_))));
    }

    #[test]
    fn target_uses_online_argmax_and_target_value() {
        // online prefers action 2 under the co-agent's embedding, target values differ
        let online = stub_model(&[0.0, 1.0, 0.5], &[0.0, 0.0, 1.0], &[2.0, 0.0, 0.0], 1.0);
        let target = stub_model(&[10.0, 20.0, 30.0], &[1.0, 1.0, 1.0], &[2.0, 0.0, 0.0], 1.0);
        let group = GroupModel {
            online: online.clone(),
            target: target.clone(),
            group_id: 0,
        };
        let tr = Transition::new(
            st(&[1.0]),
            1,
            vec![st(&[1.0])],
            vec![0],
            0.5,
            Some((st(&[1.0]), vec![Some(st(&[1.0]))])),
        )
        .unwrap();
        // brute-force scan of own actions with the co-agent pinned at its step-t action
        let ubar_online = online.mean_embedding(&[&[1.0]], &[0]).unwrap();
        let ubar_target = target.mean_embedding(&[&[1.0]], &[0]).unwrap();
        let mut best = 0;
        for a in 0..3 {
            if online.q_value(&[1.0], a, &ubar_online).unwrap()
                > online.q_value(&[1.0], best, &ubar_online).unwrap()
            {
                best = a;
            }
        }
        assert_eq!(best, 2);
        let expected = 0.5 + 0.9 * target.q_value(&[1.0], best, &ubar_target).unwrap();
        assert_eq!(group.target_value(&tr, 0.9).unwrap(), expected);
        assert_eq!(expected, 0.5 + 0.9 * 32.0);
    }

    #[test]
    fn dead_co_agents_are_dropped_from_bootstrap() {
        let online = stub_model(&[0.0, 1.0], &[5.0, -5.0], &[1.0, 1.0], 1.0);
        let group = GroupModel::new(online, 0);
        let tr = Transition::new(
            st(&[1.0]),
            0,
            vec![st(&[1.0])],
            vec![0],
            0.0,
            Some((st(&[1.0]), vec![None])),
        )
        .unwrap();
        // zero embedding: values are the bare q head, best is action 1
        assert_eq!(group.target_value(&tr, 0.5).unwrap(), 0.5);
    }

    fn random_batch(rng: &mut ChaCha8Rng, n: usize, state_dim: usize, n_actions: usize) -> Vec<Transition> {
        let mut state = || -> State {
            Arc::from((0..state_dim).map(|_| rng.gen_range(-1.0..1.0)).collect::<Vec<f64>>())
        };
        let mut out = Vec::new();
        for k in 0..n {
            let co = 1 + k % 3;
            let co_states: Vec<State> = (0..co).map(|_| state()).collect();
            let next_co: Vec<Option<State>> = (0..co).map(|_| Some(state())).collect();
            let s = state();
            let ns = state();
            out.push((s, co_states, next_co, ns));
        }
        out.into_iter()
            .enumerate()
            .map(|(k, (s, co_states, next_co, ns))| {
                let co_actions = (0..co_states.len()).map(|j| (k + j) % n_actions).collect();
                let next = if k % 2 == 0 { Some((ns, next_co)) } else { None };
                Transition::new(s, k % n_actions, co_states, co_actions, k as f64 * 0.3 - 0.2, next).unwrap()
            })
            .collect()
    }

    fn random_group(seed: u64, lambda: f64) -> GroupModel {
        let spec = FqlSpec {
            state_shape: Shape::flat(3),
            num_actions: 4,
            embed_dim: 3,
            lambda,
            architecture: crate::nn::Architecture::Mlp { hidden: vec![6] },
        };
        let mut g = GroupModel::new(FactorizedQModel::init(&spec, seed).unwrap(), 0);
        // distinct target weights so the bootstrap is non-trivial
        let other = FactorizedQModel::init(&spec, seed + 1000).unwrap();
        g.target.copy_params_from(&other).unwrap();
        g
    }

    #[test]
    fn composite_loss_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let group = random_group(5, 0.7);
        let batch = random_batch(&mut rng, 2, 3, 4);
        let refs: Vec<&Transition> = batch.iter().collect();
        let (_, grads) = group.loss_and_gradients(&refs, 0.9).unwrap();
        let analytic = grads.flatten();
        let nq = group.online.q_net.param_count();
        let nv = group.online.v_net.param_count();
        let targets = group.targets(&refs, 0.9).unwrap();
        let mut probe = group.online.clone();
        // targets stay fixed while the online parameters move
        let numeric = numeric_gradient(&analytic.iter().map(|_| 0.0).collect::<Vec<_>>(), 1e-5, |delta| {
            let mut p = group.online.q_net.params().to_vec();
            p.iter_mut().zip(&delta[..nq]).for_each(|(x, d)| *x += d);
            probe.q_net.set_params(&p).unwrap();
            let mut p = group.online.v_net.params().to_vec();
            p.iter_mut().zip(&delta[nq..nq + nv]).for_each(|(x, d)| *x += d);
            probe.v_net.set_params(&p).unwrap();
            let mut p = group.online.u_net.params().to_vec();
            p.iter_mut().zip(&delta[nq + nv..]).for_each(|(x, d)| *x += d);
            probe.u_net.set_params(&p).unwrap();
            let mut loss = 0.0;
            for (tr, y) in refs.iter().zip(&targets) {
                let states: Vec<&[f64]> = tr.co_agents().map(|c| &c.state[..]).collect();
                let ubar = probe.mean_embedding(&states, &tr.co_actions()).unwrap();
                let q = probe.q_value(&tr.state, tr.action, &ubar).unwrap();
                loss += (y - q).powi(2);
            }
            loss / refs.len() as f64
        });
        let err = crate::nn::max_relative_error(&analytic, &numeric);
        assert!(err <= 1e-4, "max relative error {err}");
    }

    #[test]
    fn zero_residual_leaves_parameters() {
        let m = stub_model(&[2.0, 0.0], &[0.0, 0.0], &[1.0, 1.0], 1.0);
        let mut group = GroupModel::new(m, 0);
        let before = group.online.clone();
        let mut opt = FqlOptimizer::new(OptimizerConfig::sgd(0.1), &group.online, None).unwrap();
        let tr = terminal(2.0);
        let loss = group.td_train_step(&[&tr], 0.9, &mut opt).unwrap();
        assert_eq!(loss, 0.0);
        assert_eq!(group.online, before);
    }

    #[test]
    fn lambda_zero_step_is_plain_dqn_step() {
        let mut rng = ChaCha8Rng::seed_from_u64(22);
        let mut group = random_group(7, 0.0);
        let batch = random_batch(&mut rng, 1, 3, 4);
        let tr = &batch[0];
        let (_, grads) = group.loss_and_gradients(&[tr], 0.9).unwrap();
        assert!(grads.v.iter().all(|&g| g == 0.0));
        assert!(grads.u.iter().all(|&g| g == 0.0));

        // plain DQN on q_net alone
        let q = group.online.q_net.clone();
        let y = group.target_value(tr, 0.9).unwrap();
        let x = ndarray::Array2::from_shape_vec((1, 3), tr.state.to_vec()).unwrap();
        let trace = q.forward_trace(x.view()).unwrap();
        let mut up = ndarray::Array2::zeros((1, 4));
        up[(0, tr.action)] = 2.0 * (trace.output()[(0, tr.action)] - y);
        let dqn_grad = q.backward(&trace, up.view()).unwrap();
        assert_eq!(grads.q, dqn_grad);

        let mut opt = FqlOptimizer::new(OptimizerConfig::sgd(0.05), &group.online, None).unwrap();
        let v_before = group.online.v_net.clone();
        group.td_train_step(&[tr], 0.9, &mut opt).unwrap();
        let expected: Vec<f64> = q.params().iter().zip(&dqn_grad).map(|(p, g)| p - 0.05 * g).collect();
        assert_eq!(group.online.q_net.params(), &expected[..]);
        assert_eq!(group.online.v_net, v_before);
    }

    #[test]
    fn target_isolation_between_syncs() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let mut group = random_group(8, 0.5);
        let batch = random_batch(&mut rng, 6, 3, 4);
        let refs: Vec<&Transition> = batch.iter().collect();
        let target_before = group.target.clone();
        let probe = &batch[0];
        let ns = probe.next_state.clone().unwrap();
        let pairs: Vec<(&[f64], usize)> = probe
            .co_agents()
            .map(|c| (&c.next_state.unwrap()[..], c.action))
            .collect();
        let states: Vec<&[f64]> = pairs.iter().map(|p| p.0).collect();
        let actions: Vec<usize> = pairs.iter().map(|p| p.1).collect();
        let pinned = |g: &GroupModel| {
            let ubar = g.target.mean_embedding(&states, &actions).unwrap();
            g.target.q_values_all_actions(&ns, &ubar).unwrap()
        };
        let values_before = pinned(&group);
        let mut opt = FqlOptimizer::new(OptimizerConfig::adam(1e-2), &group.online, None).unwrap();
        for _ in 0..5 {
            group.td_train_step(&refs, 0.9, &mut opt).unwrap();
        }
        assert_eq!(group.target, target_before);
        assert_eq!(pinned(&group), values_before);
        assert_ne!(group.online, target_before);
        group.sync_target();
        assert_eq!(group.target.q_net.params(), group.online.q_net.params());
        assert_eq!(group.target.v_net.params(), group.online.v_net.params());
        assert_eq!(group.target.u_net.params(), group.online.u_net.params());
    }

    #[test]
    fn empty_batch_is_rejected() {
        let mut group = random_group(9, 1.0);
        let mut opt = FqlOptimizer::new(OptimizerConfig::sgd(0.1), &group.online, None).unwrap();
        assert!(matches!(group.td_train_step(&[], 0.9, &mut opt), Err(Error::Degenerate(_))));
    }

    #[test]
    fn select_action_epsilon_extremes() {
        let group = GroupModel::new(stub_model(&[0.0, 3.0, 1.0, 2.0], &[0.0; 4], &[0.0; 4], 1.0), 0);
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        for _ in 0..50 {
            assert_eq!(group.select_action(&[1.0], &[0.0], 0.0, &mut rng).unwrap(), 1);
        }
        let draws = 100_000;
        let mut counts = [0usize; 4];
        for _ in 0..draws {
            counts[group.select_action(&[1.0], &[0.0], 1.0, &mut rng).unwrap()] += 1;
        }
        let p = 0.25;
        let sigma = (draws as f64 * p * (1.0 - p)).sqrt();
        for c in counts {
            assert!((c as f64 - draws as f64 * p).abs() <= 3.0 * sigma, "{counts:?}");
        }
        let run = |seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            (0..200)
                .map(|_| group.select_action(&[1.0], &[0.0], 0.4, &mut rng).unwrap())
                .collect::<Vec<_>>()
        };
        assert_eq!(run(5), run(5));
    }

    #[test]
    fn group_values_use_leave_one_out_embeddings() {
        let m = stub_model(&[0.0, 0.0], &[1.0, -1.0], &[2.0, 6.0], 1.0);
        let s = st(&[1.0]);
        let states = vec![s.clone(), s.clone(), s.clone()];
        let co = vec![CoAgents::AllExcept(0), CoAgents::AllExcept(1), CoAgents::AllExcept(2)];
        let last = vec![0, 1, 1];
        let view = GroupView {
            states: &states,
            last_actions: Some(&last),
            co_agents: &co,
        };
        let values = m.q_values_for_group(&view).unwrap();
        // agent 0 sees actions [1, 1] -> 6, agent 1 sees [0, 1] -> 4
        assert_eq!(values.row(0).to_vec(), vec![6.0, -6.0]);
        assert_eq!(values.row(1).to_vec(), vec![4.0, -4.0]);
        let none = GroupView {
            states: &states,
            last_actions: None,
            co_agents: &co,
        };
        assert_eq!(m.q_values_for_group(&none).unwrap().row(2).to_vec(), vec![0.0, 0.0]);
    }

    /// Two agents with one-hot identity states; agent i values
    /// `q_i[a_i] + M_i[a_i, a_j]` with `M_1 = M`, `M_2 = M^T`, an exact potential game.
    fn potential_game(q1: &[f64], q2: &[f64], m: &[f64], n_a: usize) -> FactorizedQModel {
        let mut wq = vec![0.0; n_a * 2];
        for a in 0..n_a {
            wq[a * 2] = q1[a];
            wq[a * 2 + 1] = q2[a];
        }
        let d = n_a;
        let mut wv = vec![0.0; d * n_a * 2];
        for a in 0..n_a {
            for k in 0..d {
                wv[(a * d + k) * 2] = m[a * n_a + k];
                wv[(a * d + k) * 2 + 1] = m[k * n_a + a];
            }
        }
        let mut wu = vec![0.0; d * (2 + n_a)];
        for k in 0..d {
            wu[k * (2 + n_a) + 2 + k] = 1.0;
        }
        FactorizedQModel::from_networks(
            linear_net(2, n_a, &wq),
            linear_net(2, d * n_a, &wv),
            linear_net(2 + n_a, d, &wu),
            Shape::flat(2),
            d,
            1.0,
        )
        .unwrap()
    }

    #[test]
    fn alternating_best_responses_reach_a_coordinate_maximum() {
        let mut rng = ChaCha8Rng::seed_from_u64(41);
        let s = [[1.0, 0.0], [0.0, 1.0]];
        for _ in 0..200 {
            let n_a = rng.gen_range(1..=4);
            let q1: Vec<f64> = (0..n_a).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let q2: Vec<f64> = (0..n_a).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let m: Vec<f64> = (0..n_a * n_a).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let model = potential_game(&q1, &q2, &m, n_a);
            let mut joint = [rng.gen_range(0..n_a), rng.gen_range(0..n_a)];
            let mut converged = false;
            for _ in 0..100 {
                let before = joint;
                for i in 0..2 {
                    let j = 1 - i;
                    let ubar = model.mean_embedding(&[&s[j]], &[joint[j]]).unwrap();
                    joint[i] = model.best_response_action(&s[i], &ubar).unwrap();
                }
                if joint == before {
                    converged = true;
                    break;
                }
            }
            assert!(converged);
            for i in 0..2 {
                let j = 1 - i;
                let ubar = model.mean_embedding(&[&s[j]], &[joint[j]]).unwrap();
                let values = model.q_values_all_actions(&s[i], &ubar).unwrap();
                assert!(values.iter().all(|&v| v <= values[joint[i]]));
            }
        }
    }

    proptest! {
        #[test]
        fn mean_embedding_is_permutation_invariant(
            seed in 0u64..1000,
            actions in proptest::collection::vec(0usize..4, 1..12),
            shift in 0usize..12,
        ) {
            let group = random_group(seed, 1.0);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let states: Vec<Vec<f64>> = actions.iter().map(|_| (0..3).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect();
            let refs: Vec<&[f64]> = states.iter().map(|s| &s[..]).collect();
            let base = group.online.mean_embedding(&refs, &actions).unwrap();
            let k = shift % actions.len();
            let mut rs = refs.clone();
            rs.rotate_left(k);
            rs.reverse();
            let mut ra = actions.clone();
            ra.rotate_left(k);
            ra.reverse();
            let permuted = group.online.mean_embedding(&rs, &ra).unwrap();
            for (x, y) in base.iter().zip(&permuted) {
                prop_assert!((x - y).abs() <= 1e-9);
            }
            let own = [0.2, -0.3, 0.9];
            prop_assert_eq!(
                group.online.best_response_action(&own, &base).unwrap(),
                group.online.best_response_action(&own, &permuted).unwrap()
            );
        }

        #[test]
        fn best_response_matches_brute_force(seed in 0u64..5000, lambda in 0.0f64..3.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut group = random_group(seed, lambda);
            group.online = FactorizedQModel::from_networks(
                group.online.q_net.clone(), group.online.v_net.clone(), group.online.u_net.clone(),
                Shape::flat(3), 3, lambda).unwrap();
            let s: Vec<f64> = (0..3).map(|_| rng.gen_range(-2.0..2.0)).collect();
            let ubar: Vec<f64> = (0..3).map(|_| rng.gen_range(-2.0..2.0)).collect();
            let m = &group.online;
            let q = m.q_net.forward(&s).unwrap();
            let v = m.v_net.forward(&s).unwrap();
            let mut best = 0;
            let mut best_v = f64::NEG_INFINITY;
            for a in 0..4 {
                let val = q[a] + lambda * (0..3).map(|k| v[a * 3 + k] * ubar[k]).sum::<f64>();
                if val > best_v { best_v = val; best = a; }
            }
            prop_assert_eq!(m.best_response_action(&s, &ubar).unwrap(), best);
        }
    }
}
