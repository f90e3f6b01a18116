use rand::Rng;

use crate::adam::AdamState;
use crate::error::{CoreError, Result};
use crate::matrix::Matrix;
use crate::mlp::{InitScale, Mlp, MlpLayout};
use crate::policy::{tanh_backward, tanh_forward, td3_target_smooth, ActionBounds};
use crate::replay::Minibatch;
use crate::Scalar;

use super::{polyak_update, AgentConfig, CriticPair, OffPolicyAgent, UpdateMetrics};

/// Deterministic actor with twin distributional critics and target smoothing.
#[derive(Debug, Clone, PartialEq)]
pub struct Td3Agent<T> {
    pub actor: Mlp<T>,
    pub actor_target: Mlp<T>,
    pub actor_optim: AdamState<T>,
    pub critics: CriticPair<T>,
    pub bounds: ActionBounds,
    pub config: AgentConfig,
    pub steps: u64,
}

impl<T: Scalar> Td3Agent<T> {
    pub fn new<R: Rng + ?Sized>(
        obs_dim: usize,
        bounds: ActionBounds,
        config: AgentConfig,
        rng: &mut R,
    ) -> Result<Self> {
        config.validate()?;
        let a = bounds.dim();
        let layout = MlpLayout::new(obs_dim, &config.actor_hidden, a).with_layer_norm(config.layer_norm);
        let actor = Mlp::new(
            layout,
            InitScale {
                output_gain: config.actor_output_gain,
                ..InitScale::default()
            },
            rng,
        )?;
        let critics = CriticPair::new(obs_dim, a, &config, rng)?;
        Ok(Self {
            actor_target: actor.clone(),
            actor_optim: AdamState::new(actor.num_params(), config.actor_adam())?,
            actor,
            critics,
            bounds,
            config,
            steps: 0,
        })
    }

    /// Deterministic normalized action `tanh(actor(o))`.
    pub fn act(&self, obs: &Matrix<T>) -> Result<Matrix<T>> {
        Ok(tanh_forward(&self.actor.forward(obs)?))
    }

    pub fn critic_target<R: Rng + ?Sized>(&self, batch: &Minibatch<T>, rng: &mut R) -> Result<Matrix<T>> {
        let next = tanh_forward(&self.actor_target.forward(&batch.next_obs)?);
        let next = td3_target_smooth(&next, self.config.sigma_smooth, self.config.noise_clip, rng);
        let bonus = vec![T::zero(); batch.len()];
        self.critics.target_pmf(
            &batch.next_obs,
            &next,
            &batch.reward,
            &batch.done,
            self.config.gamma,
            &bonus,
            self.config.cdq_mode,
        )
    }

    /// `−mean ½(Q₁ + Q₂)(o, tanh(actor(o)))` and its actor gradient.
    pub fn actor_loss(&self, obs: &Matrix<T>) -> Result<(T, Vec<T>)> {
        let b = obs.rows();
        let inv_b = T::lit(1.0 / b as f64);
        let (raw, tape) = self.actor.forward_train(obs)?;
        let t = tanh_forward(&raw);
        let (q, dq_dt) = self.critics.q_and_action_grad(obs, &t, &vec![inv_b; b])?;
        let loss = -q.iter().copied().sum::<T>() * inv_b;
        let d_raw = tanh_backward(&t, &dq_dt.map(|g| -g));
        Ok((loss, self.actor.backward(&tape, &d_raw)?.params))
    }

    /// Critic step every call; actor and all targets every `policy_delay` calls.
    pub fn td3_update<R: Rng + ?Sized>(
        &mut self,
        batch: &Minibatch<T>,
        step_index: u64,
        rng: &mut R,
    ) -> Result<UpdateMetrics> {
        batch.validate()?;
        let target = self.critic_target(batch, rng)?;
        let (critic_loss, mean_q) = self.critics.update(&batch.obs, &batch.action, &target)?;
        let mut actor_loss = None;
        if step_index % self.config.policy_delay as u64 == 0 {
            let (loss, grads) = self.actor_loss(&batch.obs)?;
            if !loss.is_finite() {
                return Err(CoreError::Diverged { stage: "actor" });
            }
            self.actor_optim
                .step(self.actor.params_mut(), &grads)
                .map_err(|_| CoreError::Diverged { stage: "actor" })?;
            self.critics.polyak(self.config.rho)?;
            polyak_update(&mut self.actor_target, &self.actor, self.config.rho)?;
            actor_loss = Some(loss.as_f64());
        }
        self.steps += 1;
        Ok(UpdateMetrics {
            critic_loss,
            actor_loss,
            alpha: None,
            alpha_loss: None,
            entropy: None,
            mean_q,
        })
    }
}

impl<T: Scalar> OffPolicyAgent<T> for Td3Agent<T> {
    fn update<R: Rng + ?Sized>(&mut self, batch: &Minibatch<T>, rng: &mut R) -> Result<UpdateMetrics> {
        let step = self.steps;
        self.td3_update(batch, step, rng)
    }

    fn grad_steps(&self) -> u64 {
        self.steps
    }
}
