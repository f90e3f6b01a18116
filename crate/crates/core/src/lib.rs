//! Numerical core of the off-policy trainer: MLPs with layer norm, Adam,
//! C51 distributional critics, replay, observation normalization, action
//! heads and the soft / deterministic agent update rules.

pub mod adam;
pub mod agents;
pub mod c51;
pub mod error;
pub mod gradcheck;
pub mod matrix;
pub mod mlp;
pub mod normalizer;
pub mod policy;
pub mod replay;
pub mod scalar;

pub use adam::{AdamHyper, AdamState};
pub use agents::{
    polyak_update, update_epoch, AgentConfig, CriticPair, OffPolicyAgent, SacAgent, Td3Agent, UpdateMetrics,
};
pub use c51::{AtomSupport, CombineMode};
pub use error::{CoreError, Result};
pub use gradcheck::{grad_check, GradCheckOptions, GradCheckReport};
pub use matrix::Matrix;
pub use mlp::{Activation, InitScale, Mlp, MlpLayout, Tape};
pub use normalizer::RunningNormalizer;
pub use policy::{compute_action_bounds, squash_scale, ActionBounds, NoiseSchedule, SacSample};
pub use replay::{Minibatch, ReplayBuffer};
pub use scalar::Scalar;
