//! Training, evaluation and persistence around the learners and environments.

mod arena;
mod cli;
mod config;
mod gradsuite;
mod learner;
mod persist;
mod replay;
mod train;

pub use arena::{
    cross_play, cross_play_policies, play_episode, Controller, CrossPlayReport, Greedy, Scripted, SideReport, Stat,
};
pub use cli::{run_cli, EXIT_FAILURE, EXIT_OK, EXIT_USAGE};
pub use config::{AlgorithmKind, EnvironmentKind, EpsilonSchedule, MfqExploration, Neighborhood, RunConfig};
pub use gradsuite::{gradient_suite, GradCase, GradReport, FD_STEP};
pub use learner::{Exploration, Learner, Model, Policy};
pub use persist::{
    battle_csv, create_run_dir, squeeze_csv, write_run, Checkpoint, RunManifest, CHECKPOINT_VERSION,
};
pub use replay::ReplayBuffer;
pub use train::{play_training_episode, squeeze_greedy, train, train_battle_selfplay, train_squeeze, BattleRow, Curve, SqueezeRow, TrainOutcome};
