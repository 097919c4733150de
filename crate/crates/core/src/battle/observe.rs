use serde::{Deserialize, Serialize};

use super::config::{BattleConfig, SPATIAL_CHANNELS};
use super::grid::GridState;
use crate::error::{Error, Result};
use crate::nn::Shape;

pub const OBSTACLE: usize = 0;
pub const FRIEND: usize = 1;
pub const FRIEND_HP: usize = 2;
pub const ENEMY: usize = 3;
pub const ENEMY_HP: usize = 4;

/// What one agent sees: `SPATIAL_CHANNELS` planes of `view x view` cells
/// (channel-major, row-major inside a plane) plus a feature vector of
/// group one-hot, last-action one-hot and last reward.
#[derive(Debug, Clone, PartialEq)]
pub struct AgentObservation {
    pub view: usize,
    pub spatial: Vec<f64>,
    pub features: Vec<f64>,
}

impl AgentObservation {
    /// Spatial value at window offset `(dx, dy)` from the agent.
    pub fn at(&self, channel: usize, dx: i64, dy: i64) -> f64 {
        let h = (self.view / 2) as i64;
        let idx = channel * self.view * self.view + ((dy + h) as usize) * self.view + (dx + h) as usize;
        self.spatial[idx]
    }
}

/// How observations are laid out as network input.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Encoding {
    /// Spatial planes flattened, followed by the feature vector.
    #[default]
    Flat,
    /// Spatial planes followed by one constant plane per feature.
    Planes,
}

pub fn feature_len(config: &BattleConfig) -> usize {
    2 + config.num_actions() + 1
}

pub fn state_shape(config: &BattleConfig, encoding: Encoding) -> Shape {
    let v = config.view;
    match encoding {
        Encoding::Flat => Shape::flat(SPATIAL_CHANNELS * v * v + feature_len(config)),
        Encoding::Planes => Shape::planes(SPATIAL_CHANNELS + feature_len(config), v, v),
    }
}

pub fn observe(state: &GridState, config: &BattleConfig, agent: usize) -> Result<AgentObservation> {
    let me = state
        .agents
        .get(agent)
        .ok_or_else(|| Error::Query(format!("no agent {agent}")))?;
    if !me.alive {
        return Err(Error::Query(format!("agent {agent} is dead")));
    }
    let v = config.view;
    let h = (v / 2) as i64;
    let plane = v * v;
    let mut spatial = vec![0.0; SPATIAL_CHANNELS * plane];
    let max_hp = config.max_hp as f64;
    for wy in 0..v {
        for wx in 0..v {
            let x = me.x as i64 + wx as i64 - h;
            let y = me.y as i64 + wy as i64 - h;
            let cell = wy * v + wx;
            if x < 0 || y < 0 || x >= state.width() as i64 || y >= state.height() as i64 {
                spatial[OBSTACLE * plane + cell] = 1.0;
                continue;
            }
            if let Some(id) = state.occupant(x as usize, y as usize) {
                let other = &state.agents[id];
                let (presence, hp) = if other.group == me.group { (FRIEND, FRIEND_HP) } else { (ENEMY, ENEMY_HP) };
                spatial[presence * plane + cell] = 1.0;
                spatial[hp * plane + cell] = other.hp as f64 / max_hp;
            }
        }
    }
    let mut features = vec![0.0; feature_len(config)];
    features[(me.group - 1) as usize] = 1.0;
    if let Some(a) = me.last_action {
        features[2 + a] = 1.0;
    }
    features[2 + config.num_actions()] = me.last_reward;
    Ok(AgentObservation { view: v, spatial, features })
}

/// Network input for `obs` under `encoding`.
pub fn encode(obs: &AgentObservation, encoding: Encoding) -> Vec<f64> {
    let mut out = obs.spatial.clone();
    match encoding {
        Encoding::Flat => out.extend_from_slice(&obs.features),
        Encoding::Planes => {
            let plane = obs.view * obs.view;
            out.reserve(plane * obs.features.len());
            for &f in &obs.features {
                out.extend(std::iter::repeat_n(f, plane));
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::battle::grid::reset;

    fn lone(x: usize, y: usize) -> (GridState, BattleConfig) {
        let cfg = BattleConfig {
            width: 20,
            height: 20,
            army_size: 1,
            ..Default::default()
        };
        let mut s = reset(&cfg, 0).unwrap();
        s.agents[1].alive = false;
        s.agents[1].hp = 0;
        move_agent(&mut s, 0, x, y);
        (s, cfg)
    }

    fn move_agent(s: &mut GridState, id: usize, x: usize, y: usize) {
        s.agents[id].x = x;
        s.agents[id].y = y;
        s.rebuild_cells();
    }

    #[test]
    fn lone_agent_sees_itself_only() {
        let (s, cfg) = lone(10, 10);
        let obs = observe(&s, &cfg, 0).unwrap();
        let v = cfg.view;
        assert_eq!(obs.spatial.len(), SPATIAL_CHANNELS * v * v);
        assert_eq!(obs.at(FRIEND, 0, 0), 1.0);
        assert_eq!(obs.at(FRIEND_HP, 0, 0), 1.0);
        let friends: f64 = obs.spatial[FRIEND * v * v..(FRIEND + 1) * v * v].iter().sum();
        assert_eq!(friends, 1.0);
        for c in [OBSTACLE, ENEMY, ENEMY_HP] {
            assert!(obs.spatial[c * v * v..(c + 1) * v * v].iter().all(|&x| x == 0.0));
        }
        assert_eq!(&obs.features[..2], &[1.0, 0.0]);
    }

    #[test]
    fn adjacent_enemy_east() {
        let (mut s, cfg) = lone(10, 10);
        s.agents[1].alive = true;
        s.agents[1].hp = 4;
        move_agent(&mut s, 1, 11, 10);
        let obs = observe(&s, &cfg, 0).unwrap();
        assert_eq!(obs.at(ENEMY, 1, 0), 1.0);
        assert_eq!(obs.at(ENEMY_HP, 1, 0), 0.4);
        let v = cfg.view;
        let enemies: f64 = obs.spatial[ENEMY * v * v..(ENEMY + 1) * v * v].iter().sum();
        assert_eq!(enemies, 1.0);
        // and the enemy sees us to its west, with its own group label
        let theirs = observe(&s, &cfg, 1).unwrap();
        assert_eq!(theirs.at(ENEMY, -1, 0), 1.0);
        assert_eq!(&theirs.features[..2], &[0.0, 1.0]);
    }

    #[test]
    fn corner_marks_out_of_bounds_quadrant() {
        let (s, cfg) = lone(0, 0);
        let obs = observe(&s, &cfg, 0).unwrap();
        let h = (cfg.view / 2) as i64;
        for dy in -h..=h {
            for dx in -h..=h {
                let outside = dx < 0 || dy < 0;
                assert_eq!(obs.at(OBSTACLE, dx, dy), if outside { 1.0 } else { 0.0 }, "({dx},{dy})");
            }
        }
        // 13x13 window at the corner: 49 cells on the map
        let v = cfg.view;
        let marked: f64 = obs.spatial[..v * v].iter().sum();
        assert_eq!(marked, (v * v - 49) as f64);
    }

    #[test]
    fn dead_agent_cannot_observe() {
        let (s, cfg) = lone(3, 3);
        assert!(matches!(observe(&s, &cfg, 1), Err(Error::Query(_))));
        assert!(matches!(observe(&s, &cfg, 7), Err(Error::Query(_))));
    }

    #[test]
    fn features_track_last_action_and_reward() {
        let cfg = BattleConfig::default();
        let mut s = reset(&cfg, 1).unwrap();
        let actions: Vec<Option<usize>> = (0..s.agents.len()).map(|i| Some(if i == 0 { 8 } else { 0 })).collect();
        super::super::grid::step(&mut s, &cfg, &actions).unwrap();
        let obs = observe(&s, &cfg, 0).unwrap();
        assert_eq!(obs.features[2 + 8], 1.0);
        assert_eq!(obs.features.iter().skip(2).take(16).sum::<f64>(), 1.0);
        assert_eq!(*obs.features.last().unwrap(), s.agents[0].last_reward);
    }

    #[test]
    fn encodings_match_shapes() {
        let cfg = BattleConfig::default();
        let s = reset(&cfg, 2).unwrap();
        let obs = observe(&s, &cfg, 3).unwrap();
        assert_eq!(encode(&obs, Encoding::Flat).len(), state_shape(&cfg, Encoding::Flat).len());
        assert_eq!(state_shape(&cfg, Encoding::Flat).len(), 864);
        let planes = encode(&obs, Encoding::Planes);
        assert_eq!(planes.len(), state_shape(&cfg, Encoding::Planes).len());
        let plane = cfg.view * cfg.view;
        // the group one-hot becomes a constant plane
        assert!(planes[SPATIAL_CHANNELS * plane..(SPATIAL_CHANNELS + 1) * plane].iter().all(|&x| x == 1.0));
    }
}
