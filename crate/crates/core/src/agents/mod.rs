//! Off-policy update rules: twin distributional critics shared by both
//! agents, the soft (tanh-Gaussian) agent and the deterministic agent.

mod critic;
mod sac;
mod td3;

use rand::Rng;
use serde::{Deserialize, Serialize};

pub use critic::CriticPair;
pub use sac::SacAgent;
pub use td3::Td3Agent;

use crate::adam::AdamHyper;
use crate::c51::CombineMode;
use crate::error::{CoreError, Result};
use crate::mlp::Mlp;
use crate::replay::{Minibatch, ReplayBuffer};
use crate::Scalar;

/// Hyperparameters for both agents. Fields not used by one agent are ignored.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AgentConfig {
    pub gamma: f64,
    pub rho: f64,
    pub cdq_mode: CombineMode,
    pub actor_hidden: Vec<usize>,
    pub critic_hidden: Vec<usize>,
    pub layer_norm: bool,
    pub n_atoms: usize,
    pub v_min: f64,
    pub v_max: f64,
    pub actor_lr: f64,
    pub critic_lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub weight_decay: f64,
    pub actor_output_gain: f64,
    pub critic_output_gain: f64,
    pub init_alpha: f64,
    pub alpha_lr: f64,
    pub target_entropy: f64,
    /// Tanh squashing of the soft actor; off gives raw offsets from the default pose.
    pub squash: bool,
    pub sigma_smooth: f64,
    pub noise_clip: f64,
    pub policy_delay: usize,
}

impl Default for AgentConfig {
    fn default() -> Self {
        Self {
            gamma: 0.97,
            rho: 0.995,
            cdq_mode: CombineMode::Average,
            actor_hidden: vec![256, 256],
            critic_hidden: vec![256, 256],
            layer_norm: true,
            n_atoms: 101,
            v_min: -10.0,
            v_max: 10.0,
            actor_lr: 3e-4,
            critic_lr: 3e-4,
            beta1: 0.9,
            beta2: 0.95,
            adam_eps: 1e-8,
            weight_decay: 1e-3,
            actor_output_gain: 0.01,
            critic_output_gain: 0.01,
            init_alpha: 0.001,
            alpha_lr: 3e-4,
            target_entropy: 0.0,
            squash: true,
            sigma_smooth: 0.2,
            noise_clip: 0.5,
            policy_delay: 1,
        }
    }
}

impl AgentConfig {
    pub fn actor_adam(&self) -> AdamHyper {
        AdamHyper {
            lr: self.actor_lr,
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.adam_eps,
            weight_decay: self.weight_decay,
        }
    }

    pub fn critic_adam(&self) -> AdamHyper {
        AdamHyper {
            lr: self.critic_lr,
            ..self.actor_adam()
        }
    }

    /// The temperature is a single scalar and is not decayed.
    pub fn alpha_adam(&self) -> AdamHyper {
        AdamHyper {
            lr: self.alpha_lr,
            weight_decay: 0.0,
            ..self.actor_adam()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |reason: String| {
            Err(CoreError::Invalid {
                what: "agent config",
                reason,
            })
        };
        if !(0.0..1.0).contains(&self.gamma) {
            return bad(format!("gamma {} outside [0, 1)", self.gamma));
        }
        if !(0.0..=1.0).contains(&self.rho) {
            return bad(format!("rho {} outside [0, 1]", self.rho));
        }
        if !(self.init_alpha > 0.0) {
            return bad("init_alpha must be positive".into());
        }
        if self.policy_delay == 0 {
            return bad("policy_delay must be at least 1".into());
        }
        if !(self.sigma_smooth >= 0.0 && self.noise_clip >= 0.0) {
            return bad("smoothing noise parameters must be non-negative".into());
        }
        self.actor_adam().validate()?;
        self.critic_adam().validate()?;
        self.alpha_adam().validate()?;
        crate::c51::AtomSupport::new(self.v_min, self.v_max, self.n_atoms)?;
        Ok(())
    }
}

/// Per-update diagnostics. Entries an agent does not produce stay `None`.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct UpdateMetrics {
    pub critic_loss: f64,
    pub actor_loss: Option<f64>,
    pub alpha: Option<f64>,
    pub alpha_loss: Option<f64>,
    pub entropy: Option<f64>,
    pub mean_q: f64,
}

impl UpdateMetrics {
    /// Column-wise mean, skipping missing entries.
    pub fn mean(rows: &[UpdateMetrics]) -> Option<UpdateMetrics> {
        if rows.is_empty() {
            return None;
        }
        let n = rows.len() as f64;
        let opt = |f: fn(&UpdateMetrics) -> Option<f64>| {
            let v: Vec<f64> = rows.iter().filter_map(f).collect();
            (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
        };
        Some(UpdateMetrics {
            critic_loss: rows.iter().map(|m| m.critic_loss).sum::<f64>() / n,
            actor_loss: opt(|m| m.actor_loss),
            alpha: opt(|m| m.alpha),
            alpha_loss: opt(|m| m.alpha_loss),
            entropy: opt(|m| m.entropy),
            mean_q: rows.iter().map(|m| m.mean_q).sum::<f64>() / n,
        })
    }
}

/// Common interface the training loop drives.
pub trait OffPolicyAgent<T: Scalar> {
    /// One full gradient step on an already normalized minibatch.
    fn update<R: Rng + ?Sized>(&mut self, batch: &Minibatch<T>, rng: &mut R) -> Result<UpdateMetrics>;

    /// Number of `update` calls made so far.
    fn grad_steps(&self) -> u64;
}

/// `target ← ρ·target + (1 − ρ)·online`.
pub fn polyak_update<T: Scalar>(target: &mut Mlp<T>, online: &Mlp<T>, rho: f64) -> Result<()> {
    if target.layout() != online.layout() {
        return Err(CoreError::Layout("polyak target and online networks differ".into()));
    }
    if !(0.0..=1.0).contains(&rho) {
        return Err(CoreError::Invalid {
            what: "polyak coefficient",
            reason: format!("rho {rho} outside [0, 1]"),
        });
    }
    let k = T::lit(1.0 - rho);
    for (t, &o) in target.params_mut().iter_mut().zip(online.params()) {
        *t += k * (o - *t);
    }
    Ok(())
}

/// Runs `num_updates` sample-and-update cycles. `prepare` turns a raw
/// sampled minibatch into the one the agent sees (normalization, mirroring).
pub fn update_epoch<T, A, R, F>(
    agent: &mut A,
    buffer: &ReplayBuffer<T>,
    batch_size: usize,
    num_updates: usize,
    rng: &mut R,
    mut prepare: F,
) -> Result<Vec<UpdateMetrics>>
where
    T: Scalar,
    A: OffPolicyAgent<T>,
    R: Rng + ?Sized,
    F: FnMut(Minibatch<T>) -> Result<Minibatch<T>>,
{
    if num_updates == 0 {
        return Ok(Vec::new());
    }
    if buffer.is_empty() {
        return Err(CoreError::EmptyBuffer);
    }
    let mut out = Vec::with_capacity(num_updates);
    for _ in 0..num_updates {
        let raw = buffer.sample(batch_size, rng)?;
        let batch = prepare(raw)?;
        out.push(agent.update(&batch, rng)?);
    }
    Ok(out)
}
