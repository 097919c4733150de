use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::learner::{Exploration, Policy};
use super::train::{army_view, episode_seed};
use crate::battle::{self, BattleConfig, Encoding, EpisodeRecord, GridState, Verdict, DIRECTIONS};
use crate::error::{Error, Result};

/// Chooses the actions of one army.
pub trait Controller: Sync {
    /// Writes an action into `actions[i]` for every alive agent `i` of `group`.
    fn act(&self, state: &GridState, config: &BattleConfig, group: u8, actions: &mut [Option<usize>]) -> Result<()>;
}

/// A trained policy acting greedily.
#[derive(Debug, Clone)]
pub struct Greedy<'a> {
    pub policy: &'a Policy,
    pub encoding: Encoding,
}

impl Controller for Greedy<'_> {
    fn act(&self, state: &GridState, config: &BattleConfig, group: u8, actions: &mut [Option<usize>]) -> Result<()> {
        let view = army_view(state, config, group, self.encoding, self.policy.neighbors)?;
        if view.ids.is_empty() {
            return Ok(());
        }
        // greedy selection never touches the rng
        let mut unused = rand::rngs::mock::StepRng::new(0, 0);
        let chosen = self
            .policy
            .select_actions(&view.group_view(), Exploration::Greedy, &mut unused)?;
        for (&i, a) in view.ids.iter().zip(chosen) {
            actions[i] = Some(a);
        }
        Ok(())
    }
}

/// Hand-written reference behaviours.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scripted {
    /// Stays put (needs the idle action).
    Idle,
    /// Attacks an adjacent enemy if there is one, otherwise steps towards
    /// the nearest enemy.
    Aggressor,
}

impl Controller for Scripted {
    fn act(&self, state: &GridState, config: &BattleConfig, group: u8, actions: &mut [Option<usize>]) -> Result<()> {
        for (i, me) in state.agents.iter().enumerate() {
            if !me.alive || me.group != group {
                continue;
            }
            actions[i] = Some(match self {
                Scripted::Idle => {
                    if !config.idle_action {
                        return Err(Error::Config("the idle script needs idle_action = true".into()));
                    }
                    16
                }
                Scripted::Aggressor => aggressor_action(state, i),
            });
        }
        Ok(())
    }
}

fn aggressor_action(state: &GridState, me: usize) -> usize {
    let a = &state.agents[me];
    let (w, h) = (state.width() as i64, state.height() as i64);
    for (dir, &(dx, dy)) in DIRECTIONS.iter().enumerate() {
        let (x, y) = (a.x as i64 + dx, a.y as i64 + dy);
        if x < 0 || y < 0 || x >= w || y >= h {
            continue;
        }
        if let Some(j) = state.occupant(x as usize, y as usize) {
            if state.agents[j].group != a.group {
                return 8 + dir;
            }
        }
    }
    let target = state
        .agents
        .iter()
        .filter(|b| b.alive && b.group != a.group)
        .min_by_key(|b| b.x.abs_diff(a.x).max(b.y.abs_diff(a.y)));
    let Some(t) = target else { return 0 };
    let step = |from: usize, to: usize| (to as i64 - from as i64).signum();
    let want = (step(a.x, t.x), step(a.y, t.y));
    DIRECTIONS.iter().position(|&d| d == want).unwrap_or(0)
}

/// Plays one episode with `first` commanding army 1 and `second` army 2.
pub fn play_episode(
    first: &dyn Controller,
    second: &dyn Controller,
    config: &BattleConfig,
    seed: u64,
) -> Result<EpisodeRecord> {
    let mut state = battle::reset(config, seed)?;
    let mut record = EpisodeRecord::new(config, seed);
    while !record.verdict.is_done() {
        let mut actions = vec![None; state.agents.len()];
        first.act(&state, config, 1, &mut actions)?;
        second.act(&state, config, 2, &mut actions)?;
        let result = battle::step(&mut state, config, &actions)?;
        record.push(&actions, &result, &state);
    }
    Ok(record)
}

/// Mean and population standard deviation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Stat {
    pub mean: f64,
    pub std: f64,
}

impl Stat {
    pub fn of(values: &[f64]) -> Stat {
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        Stat { mean, std: var.sqrt() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SideReport {
    pub killing_index: Stat,
    pub mean_rewards: Stat,
    pub total_rewards: Stat,
    pub wins: u32,
    /// `(wins + draws / 2) / battles`.
    pub win_rate: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CrossPlayReport {
    pub battles: u32,
    pub draws: u32,
    pub a: SideReport,
    pub b: SideReport,
}

/// Outcome of one battle from the point of view of contestants A and B.
#[derive(Debug, Clone, Copy, PartialEq)]
struct BattleResult {
    a: battle::ArmyMetrics,
    b: battle::ArmyMetrics,
    /// +1 A won, -1 B won, 0 draw.
    sign: i8,
}

fn one_battle(a: &dyn Controller, b: &dyn Controller, config: &BattleConfig, seed: u64, k: u32) -> Result<BattleResult> {
    let s = episode_seed(seed, k as u64);
    let a_first = k % 2 == 0;
    let record = if a_first {
        play_episode(a, b, config, s)?
    } else {
        play_episode(b, a, config, s)?
    };
    let m = battle::episode_metrics(&record);
    let (ia, ib) = if a_first { (0, 1) } else { (1, 0) };
    let a_group = if a_first { 1 } else { 2 };
    let sign = match record.verdict {
        Verdict::Won(g) if g == a_group => 1,
        Verdict::Won(_) => -1,
        _ => 0,
    };
    Ok(BattleResult { a: m[ia], b: m[ib], sign })
}

fn side(results: &[BattleResult], pick: fn(&BattleResult) -> battle::ArmyMetrics, sign: i8) -> SideReport {
    let n = results.len() as f64;
    let col = |f: fn(&battle::ArmyMetrics) -> f64| Stat::of(&results.iter().map(|r| f(&pick(r))).collect::<Vec<_>>());
    let wins = results.iter().filter(|r| r.sign == sign).count() as u32;
    let draws = results.iter().filter(|r| r.sign == 0).count() as f64;
    SideReport {
        killing_index: col(|m| m.killing_index as f64),
        mean_rewards: col(|m| m.mean_rewards),
        total_rewards: col(|m| m.total_rewards),
        wins,
        win_rate: (wins as f64 + 0.5 * draws) / n,
    }
}

/// `battles` episodes between A and B, alternating sides every episode.
pub fn cross_play(
    a: &dyn Controller,
    b: &dyn Controller,
    config: &BattleConfig,
    battles: u32,
    seed: u64,
    parallel: bool,
) -> Result<CrossPlayReport> {
    if battles == 0 {
        return Err(Error::Config("cross-play needs at least one battle".into()));
    }
    config.validate()?;
    let results: Vec<BattleResult> = if parallel {
        (0..battles)
            .into_par_iter()
            .map(|k| one_battle(a, b, config, seed, k))
            .collect::<Result<_>>()?
    } else {
        (0..battles)
            .map(|k| one_battle(a, b, config, seed, k))
            .collect::<Result<_>>()?
    };
    Ok(CrossPlayReport {
        battles,
        draws: results.iter().filter(|r| r.sign == 0).count() as u32,
        a: side(&results, |r| r.a, 1),
        b: side(&results, |r| r.b, -1),
    })
}

/// Greedy cross-play between two trained policies.
pub fn cross_play_policies(
    a: &Policy,
    b: &Policy,
    config: &BattleConfig,
    encoding: Encoding,
    battles: u32,
    seed: u64,
    parallel: bool,
) -> Result<CrossPlayReport> {
    for p in [a, b] {
        let expect = battle::state_shape(config, encoding);
        if p.state_shape() != expect || p.num_actions() != config.num_actions() {
            return Err(Error::Config(format!(
                "{} policy expects {:?} with {} actions; the battle gives {:?} with {}",
                p.algorithm.name(),
                p.state_shape(),
                p.num_actions(),
                expect,
                config.num_actions()
            )));
        }
    }
    let ga = Greedy { policy: a, encoding };
    let gb = Greedy { policy: b, encoding };
    cross_play(&ga, &gb, config, battles, seed, parallel)
}
