//! Finite-difference gradient suite run by `grad-check` and the acceptance tests.

use std::sync::Arc;

use ndarray::{Array2, ArrayView2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::fql::{FactorizedQModel, FqlSpec, GroupModel, State, Transition};
use crate::nn::{gradient_check, max_relative_error, numeric_gradient, Architecture, LayerSpec, Network, Shape};

pub const FD_STEP: f64 = 1e-5;

/// Instances with a ReLU input closer than this to zero are redrawn: a
/// finite-difference step there straddles the kink.
pub const KINK_MARGIN: f64 = 1e-3;

/// Worst relative error of one kind of check over all its instances.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradCase {
    pub kind: &'static str,
    pub instances: usize,
    /// Draws discarded for sitting next to a ReLU kink.
    pub redrawn: usize,
    pub max_relative_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradReport {
    pub cases: Vec<GradCase>,
}

impl GradReport {
    pub fn max_relative_error(&self) -> f64 {
        self.cases.iter().map(|c| c.max_relative_error).fold(0.0, f64::max)
    }
}

fn input(rng: &mut ChaCha8Rng, len: usize) -> Vec<f64> {
    (0..len).map(|_| rng.gen_range(-1.0..1.0)).collect()
}

/// Zero-initialized biases under a dead ReLU channel put later
/// pre-activations exactly on the kink; shift every parameter off it.
fn jitter(net: &mut Network, rng: &mut ChaCha8Rng) {
    for p in net.params_mut() {
        *p += rng.gen_range(-0.1..0.1);
    }
}

fn check_net(net: &Network, x: &[f64]) -> Result<Option<f64>> {
    let row = ArrayView2::from_shape((1, x.len()), x).map_err(|e| Error::Config(e.to_string()))?;
    if net.relu_margin(row)? < KINK_MARGIN {
        return Ok(None);
    }
    gradient_check(net, x, FD_STEP).map(Some)
}

fn dense_instance(rng: &mut ChaCha8Rng) -> Result<Option<f64>> {
    let (i, o) = (rng.gen_range(1..8), rng.gen_range(1..6));
    let mut net = Network::init(vec![LayerSpec::dense(i, o)], rng)?;
    jitter(&mut net, rng);
    check_net(&net, &input(rng, i))
}

fn relu_instance(rng: &mut ChaCha8Rng) -> Result<Option<f64>> {
    let i = rng.gen_range(2..9);
    let hidden: Vec<usize> = (0..rng.gen_range(1..3)).map(|_| rng.gen_range(4..17)).collect();
    let mut net = Network::mlp(i, &hidden, rng.gen_range(1..5), rng)?;
    jitter(&mut net, rng);
    check_net(&net, &input(rng, i))
}

fn conv_instance(rng: &mut ChaCha8Rng) -> Result<Option<f64>> {
    let (c, h, w) = (rng.gen_range(1..4), rng.gen_range(3..7), rng.gen_range(3..7));
    let out = rng.gen_range(1..4);
    let kernel = if rng.gen_bool(0.5) { 3 } else { 1 };
    let planes = Shape::planes(out, h, w);
    let layers = vec![
        LayerSpec::Conv2d {
            in_channels: c,
            out_channels: out,
            height: h,
            width: w,
            kernel,
        },
        LayerSpec::Relu { shape: planes },
        LayerSpec::Dense {
            input: planes,
            outputs: 2,
        },
    ];
    let mut net = Network::init(layers, rng)?;
    jitter(&mut net, rng);
    check_net(&net, &input(rng, c * h * w))
}

fn random_batch(rng: &mut ChaCha8Rng, state_len: usize, num_actions: usize) -> Result<Vec<Transition>> {
    let state = |rng: &mut ChaCha8Rng| -> State { Arc::from(input(rng, state_len)) };
    (0..rng.gen_range(1..4))
        .map(|_| {
            let co = rng.gen_range(0..4);
            let s = state(rng);
            let co_states: Vec<State> = (0..co).map(|_| state(rng)).collect();
            let co_actions = (0..co).map(|_| rng.gen_range(0..num_actions)).collect();
            let next = if rng.gen_bool(0.7) {
                let ns = state(rng);
                let next_co = (0..co).map(|_| rng.gen_bool(0.8).then(|| state(rng))).collect();
                Some((ns, next_co))
            } else {
                None
            };
            let action = rng.gen_range(0..num_actions);
            let reward = rng.gen_range(-1.0..1.0);
            Transition::new(s, action, co_states, co_actions, reward, next)
        })
        .collect()
}

/// Mean squared TD error with fixed targets: gradient of the online
/// parameters against finite differences.
fn fql_instance(rng: &mut ChaCha8Rng, conv: bool) -> Result<Option<f64>> {
    let num_actions = rng.gen_range(2..5);
    let (state_shape, architecture) = if conv {
        (
            Shape::planes(2, 3, 3),
            Architecture::Conv {
                channels: [2, 2],
                kernel: 3,
                hidden: 5,
            },
        )
    } else {
        (
            Shape::flat(rng.gen_range(2..5)),
            Architecture::Mlp {
                hidden: vec![rng.gen_range(3..8)],
            },
        )
    };
    let spec = FqlSpec {
        state_shape,
        num_actions,
        embed_dim: rng.gen_range(1..4),
        lambda: rng.gen_range(0.1..2.0),
        architecture,
    };
    let mut group = GroupModel::new(FactorizedQModel::init(&spec, rng.gen())?, 0);
    group.target.copy_params_from(&FactorizedQModel::init(&spec, rng.gen())?)?;
    for net in [&mut group.online.q_net, &mut group.online.v_net, &mut group.online.u_net] {
        jitter(net, rng);
    }
    let gamma = rng.gen_range(0.0..0.99);
    let batch = random_batch(rng, state_shape.len(), num_actions)?;
    let refs: Vec<&Transition> = batch.iter().collect();

    let online = &group.online;
    let states = Array2::from_shape_vec(
        (refs.len(), state_shape.len()),
        refs.iter().flat_map(|tr| tr.state.iter().copied()).collect(),
    )
    .map_err(|e| Error::Config(e.to_string()))?;
    let mut margin = online.q_net.relu_margin(states.view())?.min(online.v_net.relu_margin(states.view())?);
    let pairs: Vec<(&[f64], usize)> = refs
        .iter()
        .flat_map(|tr| tr.co_agents().map(|c| (&c.state[..], c.action)))
        .collect();
    if !pairs.is_empty() {
        margin = margin.min(online.u_net.relu_margin(online.pair_inputs(pairs)?.view())?);
    }
    if margin < KINK_MARGIN {
        return Ok(None);
    }

    let (_, grads) = group.loss_and_gradients(&refs, gamma)?;
    let analytic = grads.flatten();
    let targets = group.targets(&refs, gamma)?;
    let base = &group.online;
    let (nq, nv) = (base.q_net.param_count(), base.v_net.param_count());
    let mut probe = base.clone();
    let mut flat = base.q_net.params().to_vec();
    flat.extend_from_slice(base.v_net.params());
    flat.extend_from_slice(base.u_net.params());
    let numeric = numeric_gradient(&flat, FD_STEP, |p| {
        probe.q_net.set_params(&p[..nq]).expect("q length");
        probe.v_net.set_params(&p[nq..nq + nv]).expect("v length");
        probe.u_net.set_params(&p[nq + nv..]).expect("u length");
        let mut loss = 0.0;
        for (tr, y) in refs.iter().zip(&targets) {
            let states: Vec<&[f64]> = tr.co_agents().map(|c| &c.state[..]).collect();
            let ubar = if states.is_empty() {
                vec![0.0; probe.embed_dim()]
            } else {
                probe.mean_embedding(&states, &tr.co_actions()).expect("valid pairs")
            };
            let q = probe.q_value(&tr.state, tr.action, &ubar).expect("valid state");
            loss += (y - q).powi(2);
        }
        loss / refs.len() as f64
    });
    Ok(Some(max_relative_error(&analytic, &numeric)))
}

/// Runs `instances` random checks of every layer kind and of the composite loss.
pub fn gradient_suite(instances: usize, seed: u64) -> Result<GradReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    type Check = fn(&mut ChaCha8Rng) -> Result<Option<f64>>;
    let checks: [(&'static str, Check); 5] = [
        ("dense", dense_instance),
        ("relu_mlp", relu_instance),
        ("conv2d", conv_instance),
        ("fql_loss_mlp", |r| fql_instance(r, false)),
        ("fql_loss_conv", |r| fql_instance(r, true)),
    ];
    let mut cases = Vec::new();
    for (kind, check) in checks {
        let (mut worst, mut accepted, mut redrawn) = (0.0f64, 0, 0);
        while accepted < instances {
            match check(&mut rng)? {
                Some(err) => {
                    worst = worst.max(err);
                    accepted += 1;
                }
                None => redrawn += 1,
            }
        }
        cases.push(GradCase {
            kind,
            instances,
            redrawn,
            max_relative_error: worst,
        });
    }
    Ok(GradReport { cases })
}
