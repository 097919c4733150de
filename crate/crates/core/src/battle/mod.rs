//! Two-army gridworld combat: each agent moves to or attacks one of its 8
//! neighboring cells per step, observing a square window around itself.

mod config;
mod grid;
mod metrics;
mod observe;

pub use config::{BattleConfig, Rewards, DIRECTIONAL_ACTIONS, SPATIAL_CHANNELS};
pub use grid::{
    decode_action, is_done, neighbor_agents, reset, step, ActionKind, Agent, Event, GridState, StepResult, Verdict,
    DIRECTIONS,
};
pub use metrics::{episode_metrics, mean_rewards, resimulate, ArmyMetrics, EpisodeRecord, EPISODE_RECORD_VERSION};
pub use observe::{encode, feature_len, observe, state_shape, AgentObservation, Encoding};
pub use observe::{ENEMY, ENEMY_HP, FRIEND, FRIEND_HP, OBSTACLE};
