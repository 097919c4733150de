use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::battle::{BattleConfig, Encoding};
use crate::error::{Error, Result};
use crate::nn::{Architecture, OptimizerConfig};
use crate::squeeze::SqueezeConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AlgorithmKind {
    Fql,
    Iql,
    /// Independent Q-learning with a dueling head.
    Diql,
    Mfq,
}

impl AlgorithmKind {
    pub fn name(self) -> &'static str {
        match self {
            AlgorithmKind::Fql => "fql",
            AlgorithmKind::Iql => "iql",
            AlgorithmKind::Diql => "diql",
            AlgorithmKind::Mfq => "mfq",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnvironmentKind {
    Squeeze,
    Battle,
}

/// Which group members count as an agent's co-agents.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Neighborhood {
    /// Every other alive member of the group.
    #[default]
    All,
    /// Members within the battle config's `neighbor_radius`.
    Local,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum MfqExploration {
    #[default]
    Boltzmann,
    Epsilon,
}

/// Linear decay from `start` to `end` over `decay_steps` rounds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EpsilonSchedule {
    pub start: f64,
    pub end: f64,
    pub decay_steps: u64,
}

impl Default for EpsilonSchedule {
    fn default() -> Self {
        EpsilonSchedule {
            start: 1.0,
            end: 0.05,
            decay_steps: 10_000,
        }
    }
}

impl EpsilonSchedule {
    pub fn value(&self, round: u64) -> f64 {
        if round >= self.decay_steps {
            return self.end;
        }
        let frac = round as f64 / self.decay_steps as f64;
        self.start + (self.end - self.start) * frac
    }
}

/// One training run, read from TOML.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub algorithm: AlgorithmKind,
    pub environment: EnvironmentKind,
    pub seed: u64,
    pub gamma: f64,
    /// Episodes (squeeze) or self-play rounds (battle).
    pub rounds: u64,
    pub batch_size: usize,
    pub buffer_capacity: usize,
    /// Train steps between target-network copies.
    pub target_sync: u64,
    /// Gradient steps after each episode once the buffer holds a batch.
    pub train_steps_per_round: usize,
    pub lambda: f64,
    pub embed_dim: usize,
    pub clip_norm: Option<f64>,
    pub neighbors: Neighborhood,
    /// Boltzmann temperature of the mean-field learner.
    pub temperature: f64,
    pub mfq_exploration: MfqExploration,
    /// Learning-curve exponential moving average factor.
    pub smoothing: f64,
    /// Battle rounds between learning-curve rows.
    pub curve_every: u64,
    pub epsilon: EpsilonSchedule,
    pub optimizer: OptimizerConfig,
    pub network: Architecture,
    pub encoding: Encoding,
    pub squeeze: SqueezeConfig,
    pub battle: BattleConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            algorithm: AlgorithmKind::Fql,
            environment: EnvironmentKind::Squeeze,
            seed: 0,
            gamma: 0.95,
            rounds: 20_000,
            batch_size: 64,
            buffer_capacity: 1 << 16,
            target_sync: 500,
            train_steps_per_round: 1,
            lambda: 1.0,
            embed_dim: 32,
            clip_norm: None,
            neighbors: Neighborhood::All,
            temperature: 1.0,
            mfq_exploration: MfqExploration::Boltzmann,
            smoothing: 0.9,
            curve_every: 10,
            epsilon: EpsilonSchedule::default(),
            optimizer: OptimizerConfig::default(),
            network: Architecture::default(),
            encoding: Encoding::Flat,
            squeeze: SqueezeConfig::default(),
            battle: BattleConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        RunConfig::from_toml(&text)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Serde(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if !(0.0..1.0).contains(&self.gamma) {
            return bad(format!("gamma must lie in [0, 1), got {}", self.gamma));
        }
        let e = &self.epsilon;
        if !(0.0..=1.0).contains(&e.start) || !(0.0..=1.0).contains(&e.end) {
            return bad(format!("epsilon schedule {} -> {} leaves [0, 1]", e.start, e.end));
        }
        if self.rounds == 0
            || self.batch_size == 0
            || self.buffer_capacity == 0
            || self.target_sync == 0
            || self.train_steps_per_round == 0
            || self.embed_dim == 0
            || self.curve_every == 0
        {
            return bad("rounds, batch_size, buffer_capacity, target_sync, train_steps_per_round, embed_dim and curve_every must be positive".into());
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return bad(format!("lambda must be finite and >= 0, got {}", self.lambda));
        }
        if !(self.temperature > 0.0) {
            return bad(format!("temperature must be > 0, got {}", self.temperature));
        }
        if !(0.0..1.0).contains(&self.smoothing) {
            return bad(format!("smoothing must lie in [0, 1), got {}", self.smoothing));
        }
        if let Some(c) = self.clip_norm {
            if !(c > 0.0) {
                return bad(format!("clip_norm must be > 0, got {c}"));
            }
        }
        self.optimizer.validate()?;
        match self.environment {
            EnvironmentKind::Squeeze => self.squeeze.validate(),
            EnvironmentKind::Battle => {
                if matches!(self.network, Architecture::Conv { .. }) && self.encoding != Encoding::Planes {
                    return bad("the conv network needs encoding = \"planes\"".into());
                }
                self.battle.validate()
            }
        }
    }
}
