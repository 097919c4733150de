use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::config::{EnvironmentKind, Neighborhood, RunConfig};
use super::learner::{Exploration, Learner, Policy};
use super::replay::ReplayBuffer;
use crate::battle::{self, ArmyMetrics, BattleConfig, Encoding, EpisodeRecord, GridState};
use crate::error::{Error, Result};
use crate::fql::{CoAgents, GroupView, Peers, State, Transition};
use crate::seeds;
use crate::squeeze;

/// One learning-curve row of a Gaussian Squeeze run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SqueezeRow {
    pub episode: u64,
    pub raw_reward: f64,
    pub smoothed_reward: f64,
    pub epsilon: f64,
    /// `None` until the buffer first holds a batch.
    pub loss: Option<f64>,
    pub total: u64,
}

/// One learning-curve row of a battle self-play run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BattleRow {
    pub round: u64,
    pub armies: [ArmyMetrics; 2],
}

#[derive(Debug, Clone)]
pub enum Curve {
    Squeeze(Vec<SqueezeRow>),
    Battle(Vec<BattleRow>),
}

/// Output of a training run: one learner per agent group and the curve.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub learners: Vec<Learner>,
    pub curve: Curve,
}

impl TrainOutcome {
    pub fn squeeze_curve(&self) -> Option<&[SqueezeRow]> {
        match &self.curve {
            Curve::Squeeze(rows) => Some(rows),
            Curve::Battle(_) => None,
        }
    }

    pub fn battle_curve(&self) -> Option<&[BattleRow]> {
        match &self.curve {
            Curve::Battle(rows) => Some(rows),
            Curve::Squeeze(_) => None,
        }
    }
}

pub fn train(cfg: &RunConfig) -> Result<TrainOutcome> {
    match cfg.environment {
        EnvironmentKind::Squeeze => train_squeeze(cfg),
        EnvironmentKind::Battle => train_battle_selfplay(cfg),
    }
}

fn train_round(learner: &mut Learner, buffer: &mut ReplayBuffer<Transition>, cfg: &RunConfig) -> Result<Option<f64>> {
    if buffer.len() < cfg.batch_size {
        return Ok(None);
    }
    let mut loss = 0.0;
    for _ in 0..cfg.train_steps_per_round {
        let batch = buffer.sample(cfg.batch_size)?;
        loss = learner.train_step(&batch).map_err(|e| match e {
            Error::Training(msg) => Error::Training(format!("{msg} (round diverged; lower the learning rate or set clip_norm)")),
            other => other,
        })?;
    }
    Ok(Some(loss))
}

/// Gaussian Squeeze: every episode each agent allocates once, all agents
/// share the reward, and one terminal transition per agent enters the
/// group's replay buffer.
pub fn train_squeeze(cfg: &RunConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    if cfg.environment != EnvironmentKind::Squeeze {
        return Err(Error::Config("train_squeeze needs environment = \"squeeze\"".into()));
    }
    let env = &cfg.squeeze;
    let n = env.agents;
    let mut learner = Learner::new(cfg, crate::nn::Shape::flat(squeeze::STATE_DIM), squeeze::NUM_ACTIONS, 0)?;
    let mut buffer = ReplayBuffer::new(cfg.buffer_capacity, seeds::stream(cfg.seed, seeds::REPLAY))?;
    let mut explore = seeds::stream(cfg.seed, seeds::EXPLORATION);

    // the observation never changes, so every agent shares one allocation
    let state: State = squeeze::observe(env, 0);
    let states: Vec<State> = vec![state; n];
    let co_agents: Vec<CoAgents> = (0..n).map(CoAgents::AllExcept).collect();
    let mut last_actions: Option<Vec<usize>> = None;
    let mut rows = Vec::with_capacity(cfg.rounds as usize);
    let mut smoothed = None;

    for episode in 0..cfg.rounds {
        let epsilon = cfg.epsilon.value(episode);
        let view = GroupView {
            states: &states,
            last_actions: last_actions.as_deref(),
            co_agents: &co_agents,
        };
        let actions = learner
            .policy
            .select_actions(&view, Exploration::Explore(epsilon), &mut explore)?;
        let outcome = squeeze::step(env, &actions)?;
        let peers = Arc::new(Peers {
            states: states.clone(),
            actions: actions.clone(),
            next_states: vec![None; n],
        });
        for (i, &a) in actions.iter().enumerate() {
            buffer.push(Transition {
                state: states[i].clone(),
                action: a,
                reward: outcome.reward,
                next_state: None,
                peers: peers.clone(),
                co_agents: co_agents[i].clone(),
            });
        }
        let loss = train_round(&mut learner, &mut buffer, cfg)?;
        let ema = match smoothed {
            None => outcome.reward,
            Some(prev) => cfg.smoothing * prev + (1.0 - cfg.smoothing) * outcome.reward,
        };
        smoothed = Some(ema);
        rows.push(SqueezeRow {
            episode,
            raw_reward: outcome.reward,
            smoothed_reward: ema,
            epsilon,
            loss,
            total: outcome.total,
        });
        if (episode + 1) % 1000 == 0 {
            log::info!(
                "episode {} reward {:.2} ema {:.2} eps {:.3}",
                episode + 1,
                outcome.reward,
                ema,
                epsilon
            );
        }
        last_actions = Some(actions);
    }
    Ok(TrainOutcome {
        learners: vec![learner],
        curve: Curve::Squeeze(rows),
    })
}

/// Greedy joint allocation of a trained squeeze policy. Each sweep lets
/// every agent respond to the previous sweep's actions.
pub fn squeeze_greedy(policy: &Policy, env: &squeeze::SqueezeConfig, sweeps: usize) -> Result<squeeze::SqueezeOutcome> {
    env.validate()?;
    let n = env.agents;
    let states: Vec<State> = vec![squeeze::observe(env, 0); n];
    let co_agents: Vec<CoAgents> = (0..n).map(CoAgents::AllExcept).collect();
    let mut unused = rand::rngs::mock::StepRng::new(0, 0);
    let mut last: Option<Vec<usize>> = None;
    for _ in 0..sweeps.max(1) {
        let view = GroupView {
            states: &states,
            last_actions: last.as_deref(),
            co_agents: &co_agents,
        };
        last = Some(policy.select_actions(&view, Exploration::Greedy, &mut unused)?);
    }
    squeeze::step(env, &last.expect("at least one sweep"))
}

/// Decision inputs of one army at one step.
pub(crate) struct ArmyView {
    /// Alive agent ids in ascending order.
    pub ids: Vec<usize>,
    pub states: Vec<State>,
    pub last_actions: Option<Vec<usize>>,
    pub co_agents: Vec<CoAgents>,
}

impl ArmyView {
    pub fn group_view(&self) -> GroupView<'_> {
        GroupView {
            states: &self.states,
            last_actions: self.last_actions.as_deref(),
            co_agents: &self.co_agents,
        }
    }
}

pub(crate) fn army_view(
    state: &GridState,
    config: &BattleConfig,
    group: u8,
    encoding: Encoding,
    neighbors: Neighborhood,
) -> Result<ArmyView> {
    let ids: Vec<usize> = (0..state.agents.len())
        .filter(|&i| state.agents[i].alive && state.agents[i].group == group)
        .collect();
    let states = ids
        .iter()
        .map(|&i| Ok(State::from(battle::encode(&battle::observe(state, config, i)?, encoding))))
        .collect::<Result<Vec<_>>>()?;
    let last: Option<Vec<usize>> = ids.iter().map(|&i| state.agents[i].last_action).collect();
    let co_agents = match neighbors {
        Neighborhood::All => (0..ids.len()).map(CoAgents::AllExcept).collect(),
        Neighborhood::Local => {
            let mut local = vec![u32::MAX; state.agents.len()];
            for (k, &i) in ids.iter().enumerate() {
                local[i] = k as u32;
            }
            ids.iter()
                .map(|&i| {
                    let near: Vec<u32> = battle::neighbor_agents(state, i, config.neighbor_radius)
                        .into_iter()
                        .map(|j| local[j])
                        .collect();
                    CoAgents::Indices(near.into())
                })
                .collect()
        }
    };
    Ok(ArmyView {
        ids,
        states,
        last_actions: last,
        co_agents,
    })
}

/// Per-round environment seed.
pub(crate) fn episode_seed(seed: u64, round: u64) -> u64 {
    seeds::mix64(seeds::mix64(seed) ^ round)
}

/// Self-play: one shared model drives both armies; each alive agent adds a
/// transition per step, with co-agents drawn from its own army.
pub fn train_battle_selfplay(cfg: &RunConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    if cfg.environment != EnvironmentKind::Battle {
        return Err(Error::Config("train_battle_selfplay needs environment = \"battle\"".into()));
    }
    let env = &cfg.battle;
    let shape = battle::state_shape(env, cfg.encoding);
    let mut learner = Learner::new(cfg, shape, env.num_actions(), 0)?;
    let mut buffer = ReplayBuffer::new(cfg.buffer_capacity, seeds::stream(cfg.seed, seeds::REPLAY))?;
    let mut explore = seeds::stream(cfg.seed, seeds::EXPLORATION);
    let mut rows = Vec::new();

    for round in 0..cfg.rounds {
        let epsilon = cfg.epsilon.value(round);
        let record = play_training_episode(
            &learner.policy,
            env,
            cfg.encoding,
            episode_seed(cfg.seed, round),
            Exploration::Explore(epsilon),
            &mut explore,
            &mut |tr| buffer.push(tr),
        )?;
        train_round(&mut learner, &mut buffer, cfg)?;
        if round % cfg.curve_every == 0 || round + 1 == cfg.rounds {
            let armies = battle::episode_metrics(&record);
            log::info!(
                "round {round} eps {epsilon:.3} kills {}/{} total {:.2}/{:.2}",
                armies[0].killing_index,
                armies[1].killing_index,
                armies[0].total_rewards,
                armies[1].total_rewards
            );
            rows.push(BattleRow { round, armies });
        }
    }
    Ok(TrainOutcome {
        learners: vec![learner],
        curve: Curve::Battle(rows),
    })
}

/// Plays one self-play episode with `policy` on both sides, handing every
/// transition to `sink`.
pub fn play_training_episode<R: rand::Rng + ?Sized>(
    policy: &Policy,
    env: &BattleConfig,
    encoding: Encoding,
    seed: u64,
    exploration: Exploration,
    rng: &mut R,
    sink: &mut dyn FnMut(Transition),
) -> Result<EpisodeRecord> {
    let mut state = battle::reset(env, seed)?;
    let mut record = EpisodeRecord::new(env, seed);
    let mut views = [
        army_view(&state, env, 1, encoding, policy.neighbors)?,
        army_view(&state, env, 2, encoding, policy.neighbors)?,
    ];
    loop {
        let mut actions: Vec<Option<usize>> = vec![None; state.agents.len()];
        let mut chosen: [Vec<usize>; 2] = [Vec::new(), Vec::new()];
        for (g, view) in views.iter().enumerate() {
            if view.ids.is_empty() {
                continue;
            }
            chosen[g] = policy.select_actions(&view.group_view(), exploration, rng)?;
            for (&i, &a) in view.ids.iter().zip(&chosen[g]) {
                actions[i] = Some(a);
            }
        }
        let result = battle::step(&mut state, env, &actions)?;
        record.push(&actions, &result, &state);
        let done = record.verdict.is_done();
        let next = [
            army_view(&state, env, 1, encoding, policy.neighbors)?,
            army_view(&state, env, 2, encoding, policy.neighbors)?,
        ];
        for g in 0..2 {
            let view = &views[g];
            if view.ids.is_empty() {
                continue;
            }
            let next_states: Vec<Option<State>> = view
                .ids
                .iter()
                .map(|&i| {
                    if done {
                        return None;
                    }
                    next[g].ids.binary_search(&i).ok().map(|k| next[g].states[k].clone())
                })
                .collect();
            let peers = Arc::new(Peers {
                states: view.states.clone(),
                actions: chosen[g].clone(),
                next_states: next_states.clone(),
            });
            for (k, &i) in view.ids.iter().enumerate() {
                sink(Transition {
                    state: view.states[k].clone(),
                    action: chosen[g][k],
                    reward: result.rewards[i],
                    next_state: next_states[k].clone(),
                    peers: peers.clone(),
                    co_agents: view.co_agents[k].clone(),
                });
            }
        }
        if done {
            return Ok(record);
        }
        views = next;
    }
}
