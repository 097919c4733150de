use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::config::{AlgorithmKind, EnvironmentKind, Neighborhood, RunConfig};
use super::learner::Policy;
use super::train::{BattleRow, Curve, SqueezeRow, TrainOutcome};
use crate::battle::{BattleConfig, Encoding};
use crate::error::{Error, Result};
use crate::squeeze::SqueezeConfig;

pub const CHECKPOINT_VERSION: u32 = 1;

/// A group's trained policy with the metadata needed to reuse it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    pub algorithm: AlgorithmKind,
    pub group_id: usize,
    pub num_actions: usize,
    pub embed_dim: Option<usize>,
    pub lambda: Option<f64>,
    pub neighbors: Neighborhood,
    pub environment: EnvironmentKind,
    pub encoding: Encoding,
    pub squeeze: Option<SqueezeConfig>,
    pub battle: Option<BattleConfig>,
    pub policy: Policy,
}

impl Checkpoint {
    pub fn new(cfg: &RunConfig, group_id: usize, policy: &Policy) -> Self {
        Checkpoint {
            version: CHECKPOINT_VERSION,
            algorithm: policy.algorithm,
            group_id,
            num_actions: policy.num_actions(),
            embed_dim: policy.embed_dim(),
            lambda: policy.lambda(),
            neighbors: policy.neighbors,
            environment: cfg.environment,
            encoding: cfg.encoding,
            squeeze: (cfg.environment == EnvironmentKind::Squeeze).then(|| cfg.squeeze.clone()),
            battle: (cfg.environment == EnvironmentKind::Battle).then(|| cfg.battle.clone()),
            policy: policy.clone(),
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let ck: Checkpoint = serde_json::from_str(&text)?;
        if ck.version != CHECKPOINT_VERSION {
            return Err(Error::Serde(format!(
                "checkpoint version {} (expected {CHECKPOINT_VERSION})",
                ck.version
            )));
        }
        if ck.num_actions != ck.policy.num_actions() || ck.algorithm != ck.policy.algorithm {
            return Err(Error::Serde("checkpoint header disagrees with its model".into()));
        }
        Ok(ck)
    }
}

/// Run metadata written next to the outputs. Holds no timestamp so that
/// equal runs produce equal files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub code_version: String,
    pub seed: u64,
    pub config: RunConfig,
    pub files: Vec<String>,
}

pub fn squeeze_csv(rows: &[SqueezeRow]) -> String {
    let mut out = String::from("episode,raw_reward,smoothed_reward,epsilon,loss\n");
    for r in rows {
        let loss = r.loss.map(|l| l.to_string()).unwrap_or_default();
        writeln!(out, "{},{},{},{},{}", r.episode, r.raw_reward, r.smoothed_reward, r.epsilon, loss).unwrap();
    }
    out
}

pub fn battle_csv(rows: &[BattleRow]) -> String {
    let mut out = String::from(
        "round,killing_index_1,mean_rewards_1,total_rewards_1,killing_index_2,mean_rewards_2,total_rewards_2\n",
    );
    for r in rows {
        let [a, b] = r.armies;
        writeln!(
            out,
            "{},{},{},{},{},{},{}",
            r.round, a.killing_index, a.mean_rewards, a.total_rewards, b.killing_index, b.mean_rewards, b.total_rewards
        )
        .unwrap();
    }
    out
}

/// Creates `<root>/<UTC timestamp>-seed<seed>`, adding a counter on collision.
pub fn create_run_dir(root: &Path, seed: u64) -> Result<PathBuf> {
    std::fs::create_dir_all(root).map_err(|e| Error::io(root, e))?;
    let stamp = chrono::Utc::now().format("%Y%m%dT%H%M%SZ");
    let base = format!("{stamp}-seed{seed}");
    for k in 0.. {
        let name = if k == 0 { base.clone() } else { format!("{base}-{k}") };
        let dir = root.join(name);
        match std::fs::create_dir(&dir) {
            Ok(()) => return Ok(dir),
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => continue,
            Err(e) => return Err(Error::io(dir, e)),
        }
    }
    unreachable!()
}

/// Writes curve, checkpoints and manifest of a finished run into `dir`.
pub fn write_run(dir: &Path, cfg: &RunConfig, outcome: &TrainOutcome) -> Result<RunManifest> {
    let write = |name: &str, text: &str| {
        let path = dir.join(name);
        std::fs::write(&path, text).map_err(|e| Error::io(path, e))
    };
    let mut files = Vec::new();
    let csv = match &outcome.curve {
        Curve::Squeeze(rows) => squeeze_csv(rows),
        Curve::Battle(rows) => battle_csv(rows),
    };
    write("curve.csv", &csv)?;
    files.push("curve.csv".to_string());
    for (g, learner) in outcome.learners.iter().enumerate() {
        let name = format!("checkpoint-group{g}.json");
        write(&name, &Checkpoint::new(cfg, g, &learner.policy).to_json()?)?;
        files.push(name);
    }
    write("config.toml", &cfg.to_toml()?)?;
    files.push("config.toml".to_string());
    let manifest = RunManifest {
        code_version: env!("CARGO_PKG_VERSION").to_string(),
        seed: cfg.seed,
        config: cfg.clone(),
        files,
    };
    write("manifest.json", &serde_json::to_string_pretty(&manifest)?)?;
    Ok(manifest)
}
