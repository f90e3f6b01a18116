//! Deterministic-policy evaluation on a fixed seed set.

use anyhow::{bail, Result};
use fastrl_core::RunningNormalizer;
use fastrl_envlab::{EpisodeSummary, PushProfile};
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::env::build_env;
use crate::learner::Learner;
use crate::train::agent_rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalStats {
    pub episodes: usize,
    pub mean_return: f64,
    /// Mean per-step tracking reward.
    pub mean_tracking: f64,
    pub mean_length: f64,
    /// Fraction reaching the time limit or segment end without terminating.
    pub completion_rate: f64,
    /// Fraction terminated early.
    pub fall_rate: f64,
}

impl EvalStats {
    pub fn from_episodes(eps: &[EpisodeSummary]) -> Self {
        let n = eps.len() as f64;
        let mean = |f: &dyn Fn(&EpisodeSummary) -> f64| eps.iter().map(f).sum::<f64>() / n;
        Self {
            episodes: eps.len(),
            mean_return: mean(&|e| e.ret),
            mean_tracking: mean(&|e| e.mean_tracking),
            mean_length: mean(&|e| e.length as f64),
            completion_rate: mean(&|e| e.completed as u8 as f64),
            fall_rate: mean(&|e| e.reason.is_some() as u8 as f64),
        }
    }
}

/// Runs one episode in each of `episodes` envs seeded from `seed`, acting
/// with the noise-free policy on observations normalized by `norm`.
pub fn evaluate(
    cfg: &RunConfig,
    learner: &Learner,
    norm: Option<&RunningNormalizer>,
    episodes: usize,
    profile: PushProfile,
    seed: u64,
) -> Result<EvalStats> {
    if episodes == 0 {
        bail!("evaluation needs at least one episode");
    }
    let mut env = build_env(cfg, episodes, seed)?;
    env.set_push_profile(profile);
    // The deterministic actor draws no randomness; the generator only satisfies the signature.
    let mut rng = agent_rng(seed);
    let mut done: Vec<Option<EpisodeSummary>> = vec![None; episodes];
    let mut obs = env.observations();
    while done.iter().any(Option::is_none) {
        let o = obs.cast::<f32>();
        let o = match norm {
            Some(n) => n.apply(&o),
            None => o,
        };
        let actions = learner.act_deterministic(&o, &mut rng)?;
        let out = env.step(&actions)?;
        for e in out.episodes {
            let slot = &mut done[e.env];
            if slot.is_none() {
                *slot = Some(e);
            }
        }
        obs = out.obs;
    }
    let eps: Vec<EpisodeSummary> = done.into_iter().flatten().collect();
    Ok(EvalStats::from_episodes(&eps))
}
