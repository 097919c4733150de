use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::BattleConfig;
use super::grid::{is_done, reset, step, Event, GridState, StepResult, Verdict};
use crate::error::{Error, Result};

pub const EPISODE_RECORD_VERSION: u32 = 1;

/// Everything needed to re-simulate an episode, plus its per-agent tallies.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRecord {
    pub version: u32,
    pub config: BattleConfig,
    pub seed: u64,
    /// Joint action per step; `None` for agents dead at that step.
    pub actions: Vec<Vec<Option<u8>>>,
    /// Summed reward of each agent.
    pub rewards: Vec<f64>,
    /// Steps each agent was alive to act.
    pub survival: Vec<u32>,
    /// Deaths suffered by army 1 and army 2.
    pub deaths: [u32; 2],
    pub verdict: Verdict,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ArmyMetrics {
    /// Enemies destroyed by this army.
    pub killing_index: u32,
    pub mean_rewards: f64,
    pub total_rewards: f64,
}

impl EpisodeRecord {
    pub fn new(config: &BattleConfig, seed: u64) -> Self {
        let n = config.num_agents();
        EpisodeRecord {
            version: EPISODE_RECORD_VERSION,
            config: config.clone(),
            seed,
            actions: Vec::new(),
            rewards: vec![0.0; n],
            survival: vec![0; n],
            deaths: [0, 0],
            verdict: Verdict::Ongoing,
        }
    }

    /// Appends one step. `state` is the state after the step.
    pub fn push(&mut self, actions: &[Option<usize>], result: &StepResult, state: &GridState) {
        let mut joint = Vec::with_capacity(actions.len());
        for (i, a) in actions.iter().enumerate() {
            let acted = result.acted[i];
            joint.push(if acted { a.map(|a| a as u8) } else { None });
            if acted {
                self.survival[i] += 1;
            }
            self.rewards[i] += result.rewards[i];
        }
        for e in &result.events {
            if let Event::Death { agent } = *e {
                self.deaths[(state.agents[agent].group - 1) as usize] += 1;
            }
        }
        self.actions.push(joint);
        self.verdict = is_done(state, &self.config);
    }

    pub fn army_size(&self) -> usize {
        self.config.army_size
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string(self)?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let rec: EpisodeRecord = serde_json::from_str(&text)?;
        if rec.version != EPISODE_RECORD_VERSION {
            return Err(Error::Serde(format!(
                "episode record version {} (expected {EPISODE_RECORD_VERSION})",
                rec.version
            )));
        }
        Ok(rec)
    }
}

/// `(1/N) sum_i R_i / T_i`; agents with `T_i = 0` are left out with a warning.
pub fn mean_rewards(rewards: &[f64], survival: &[u32]) -> f64 {
    let mut total = 0.0;
    let mut counted = 0usize;
    for (r, &t) in rewards.iter().zip(survival) {
        if t == 0 {
            log::warn!("agent with zero survival time left out of mean rewards");
            continue;
        }
        total += r / t as f64;
        counted += 1;
    }
    if counted == 0 {
        0.0
    } else {
        total / counted as f64
    }
}

/// Killing index, mean rewards and total rewards of army 1 and army 2.
pub fn episode_metrics(record: &EpisodeRecord) -> [ArmyMetrics; 2] {
    let n = record.army_size();
    let army = |g: usize| {
        let span = g * n..(g + 1) * n;
        ArmyMetrics {
            killing_index: record.deaths[1 - g],
            mean_rewards: mean_rewards(&record.rewards[span.clone()], &record.survival[span.clone()]),
            total_rewards: record.rewards[span].iter().sum(),
        }
    };
    [army(0), army(1)]
}

/// Replays the stored joint actions from a fresh reset.
pub fn resimulate(record: &EpisodeRecord) -> Result<EpisodeRecord> {
    let mut state = reset(&record.config, record.seed)?;
    let mut out = EpisodeRecord::new(&record.config, record.seed);
    for joint in &record.actions {
        let actions: Vec<Option<usize>> = joint.iter().map(|a| a.map(usize::from)).collect();
        let result = step(&mut state, &record.config, &actions)?;
        out.push(&actions, &result, &state);
    }
    Ok(out)
}
