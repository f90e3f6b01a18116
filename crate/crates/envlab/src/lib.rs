//! Vectorized toy environments with closed-form dynamics.
//!
//! * [`PlanarLoco`]: velocity tracking for a planar body with four posture
//!   joints, pushes, action delay and dynamics randomization.
//! * [`ChainTrack`]: an 8-joint chain tracking procedurally generated
//!   reference motions.
//!
//! All environments step in lock-step, auto-reset finished members and draw
//! randomness from one ChaCha stream per environment index.

mod chain;
mod curriculum;
mod loco;
mod motion;
mod random;

use fastrl_core::{ActionBounds, Matrix};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use chain::{
    chain_forward_kinematics, chain_rewards, ChainConfig, ChainDr, ChainEnvState, ChainSnapshot, ChainTrack,
    ChainWeights, CHAIN_TERMS,
};
pub use curriculum::{ramp_for, Curriculum};
pub use loco::{
    compute_rewards, compute_rewards_mirrored, mirror_action, mirror_obs, mirror_transition, ramped_weights,
    Kinematics, LocoConfig, LocoDr, LocoEnvState, LocoSnapshot, LocoWeights, PlanarLoco, LOCO_ACT_DIM, LOCO_OBS_DIM,
    LOCO_TERMS,
};
pub use motion::{BankConfig, Motion, MotionBank};
pub use random::{
    env_rng, sample_command, sample_push_impulse, sample_push_interval, CommandConfig, Interval, PushConfig,
    PushProfile,
};

#[derive(Debug, Error)]
pub enum EnvError {
    #[error("action batch is {got_rows}×{got_cols}, expected {rows}×{cols}")]
    ActionShape {
        rows: usize,
        cols: usize,
        got_rows: usize,
        got_cols: usize,
    },
    #[error("invalid environment config: {0}")]
    Config(String),
    #[error("motion bank: {0}")]
    Bank(String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("state snapshot: {0}")]
    Snapshot(String),
}

pub type Result<T, E = EnvError> = std::result::Result<T, E>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TerminationReason {
    /// Height analog fell below the threshold.
    Fall,
    /// Pose error exceeded the tracking threshold.
    Tracking,
    /// State became non-finite and was force-reset.
    NonFinite,
}

impl TerminationReason {
    pub fn as_str(self) -> &'static str {
        match self {
            TerminationReason::Fall => "fall",
            TerminationReason::Tracking => "tracking",
            TerminationReason::NonFinite => "non_finite",
        }
    }
}

/// A finished episode reported by `step`.
#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeSummary {
    pub env: usize,
    pub length: u32,
    pub ret: f64,
    /// Mean per-step tracking reward over the episode.
    pub mean_tracking: f64,
    /// Ran to its time limit or segment end without terminating.
    pub completed: bool,
    pub reason: Option<TerminationReason>,
}

#[derive(Debug, Clone)]
pub struct StepOutput {
    /// Observation to act on next; reset observations for finished envs.
    pub obs: Matrix<f64>,
    /// Next observation of the transition just taken (pre-reset for finished envs).
    pub next_obs: Matrix<f64>,
    pub reward: Vec<f64>,
    /// Raw reward terms, one row per env, columns per [`VecEnv::term_names`].
    pub terms: Matrix<f64>,
    /// Weights applied to `terms` this step; `reward[i] = Σ_k weights[k]·terms[i][k]`.
    pub weights: Vec<f64>,
    pub terminated: Vec<bool>,
    pub truncated: Vec<bool>,
    pub reasons: Vec<Option<TerminationReason>>,
    pub episodes: Vec<EpisodeSummary>,
    /// Non-finite states force-reset this step.
    pub incidents: usize,
}

pub trait VecEnv {
    fn num_envs(&self) -> usize;
    fn obs_dim(&self) -> usize;
    fn act_dim(&self) -> usize;
    /// Absolute action limits and the default pose.
    fn action_bounds(&self) -> ActionBounds;
    fn term_names(&self) -> &'static [&'static str];
    /// Tracking quantity reported in learning curves, from one row of raw terms.
    fn tracking_value(&self, terms: &[f64]) -> f64;
    fn observations(&self) -> Matrix<f64>;
    /// Advances every env by one control step with absolute actions.
    fn step(&mut self, actions: &Matrix<f64>) -> Result<StepOutput>;
    fn set_push_profile(&mut self, profile: PushProfile);
    /// Current penalty ramp in `[0, 1]`.
    fn curriculum_ramp(&self) -> f64;
    /// Whether left/right mirroring is defined for this env's transitions.
    fn supports_mirror(&self) -> bool {
        false
    }
    /// Serialized dynamic state (everything except configuration and static data).
    fn save_state(&self) -> Result<Vec<u8>>;
    fn load_state(&mut self, bytes: &[u8]) -> Result<()>;
}

/// Worker cap from `FASTRL_THREADS`, else the available parallelism.
pub fn default_workers() -> usize {
    std::env::var("FASTRL_THREADS")
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .filter(|&n| n > 0)
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
}

/// Applies `f` to every env over contiguous chunks on up to `workers` threads.
/// Results are returned in env order, so the output is independent of `workers`.
pub(crate) fn par_map_envs<S, R, F>(states: &mut [S], workers: usize, f: F) -> Vec<R>
where
    S: Send,
    R: Send,
    F: Fn(usize, &mut S) -> R + Sync,
{
    let n = states.len();
    let workers = workers.clamp(1, n.max(1));
    if workers == 1 {
        return states.iter_mut().enumerate().map(|(i, s)| f(i, s)).collect();
    }
    let chunk = n.div_ceil(workers);
    let f = &f;
    std::thread::scope(|scope| {
        let handles: Vec<_> = states
            .chunks_mut(chunk)
            .enumerate()
            .map(|(c, part)| {
                scope.spawn(move || {
                    part.iter_mut()
                        .enumerate()
                        .map(|(j, s)| f(c * chunk + j, s))
                        .collect::<Vec<R>>()
                })
            })
            .collect();
        handles
            .into_iter()
            .flat_map(|h| h.join().expect("env worker panicked"))
            .collect()
    })
}

pub(crate) fn check_actions(actions: &Matrix<f64>, rows: usize, cols: usize) -> Result<()> {
    if actions.rows() != rows || actions.cols() != cols {
        return Err(EnvError::ActionShape {
            rows,
            cols,
            got_rows: actions.rows(),
            got_cols: actions.cols(),
        });
    }
    Ok(())
}
