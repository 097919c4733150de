//! Minimal differentiable network engine: dense and conv layers, ReLU,
//! backprop into a flat parameter vector, SGD/Adam, and finite-difference
//! gradient checks.

mod arch;
mod gradcheck;
mod layer;
mod network;
mod optim;

pub use arch::Architecture;
pub use gradcheck::{gradient_check, max_relative_error, numeric_gradient};
pub use layer::{validate_chain, LayerSpec, Shape};
pub use network::{mlp_layers, Network, NetworkCheckpoint, Trace, NETWORK_CHECKPOINT_VERSION};
pub use optim::{clip_global_norm, Algorithm, Optimizer, OptimizerConfig};
