use anyhow::Result;
use fastrl_envlab::{ChainTrack, PlanarLoco, PushProfile, VecEnv};

use crate::config::{EnvKind, RunConfig};

pub type BoxedEnv = Box<dyn VecEnv + Send>;

/// Builds the configured environment with `num_envs` members on `seed`.
pub fn build_env(cfg: &RunConfig, num_envs: usize, seed: u64) -> Result<BoxedEnv> {
    Ok(match cfg.train.env {
        EnvKind::PlanarLoco => Box::new(PlanarLoco::new(cfg.effective_loco(), num_envs, seed)?),
        EnvKind::ChainTrack => Box::new(ChainTrack::new(cfg.effective_chain(), num_envs, seed)?),
    })
}

/// Push profile the configured environment trains under.
pub fn training_push_profile(cfg: &RunConfig) -> PushProfile {
    match cfg.train.env {
        EnvKind::PlanarLoco => cfg.effective_loco().push_profile,
        EnvKind::ChainTrack => cfg.effective_chain().push_profile,
    }
}
