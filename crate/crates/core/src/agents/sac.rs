use rand::Rng;

use crate::adam::AdamState;
use crate::error::{CoreError, Result};
use crate::matrix::Matrix;
use crate::mlp::{InitScale, Mlp, MlpLayout};
use crate::policy::{ActionBounds, SacSample};
use crate::replay::Minibatch;
use crate::Scalar;

use super::{AgentConfig, CriticPair, OffPolicyAgent, UpdateMetrics};

/// Soft actor-critic with a tanh-Gaussian actor and an auto-tuned temperature.
#[derive(Debug, Clone, PartialEq)]
pub struct SacAgent<T> {
    pub actor: Mlp<T>,
    pub actor_optim: AdamState<T>,
    pub critics: CriticPair<T>,
    pub log_alpha: f64,
    pub alpha_optim: AdamState<f64>,
    pub bounds: ActionBounds,
    pub config: AgentConfig,
    pub steps: u64,
}

/// Actor loss pieces, exposed so the full loss can be gradient-checked.
#[derive(Debug, Clone)]
pub struct ActorLoss<T> {
    pub loss: T,
    pub grads: Vec<T>,
    pub log_prob: Vec<T>,
    pub mean_q: f64,
}

impl<T: Scalar> SacAgent<T> {
    pub fn new<R: Rng + ?Sized>(
        obs_dim: usize,
        bounds: ActionBounds,
        config: AgentConfig,
        rng: &mut R,
    ) -> Result<Self> {
        config.validate()?;
        let a = bounds.dim();
        let layout = MlpLayout::new(obs_dim, &config.actor_hidden, 2 * a).with_layer_norm(config.layer_norm);
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
            actor_optim: AdamState::new(actor.num_params(), config.actor_adam())?,
            actor,
            critics,
            log_alpha: config.init_alpha.ln(),
            alpha_optim: AdamState::new(1, config.alpha_adam())?,
            bounds,
            config,
            steps: 0,
        })
    }

    pub fn alpha(&self) -> f64 {
        self.log_alpha.exp()
    }

    /// Samples actions for normalized observations; `eval` returns the squashed mean.
    pub fn act<R: Rng + ?Sized>(&self, obs: &Matrix<T>, eval: bool, rng: &mut R) -> Result<SacSample<T>> {
        let head = self.actor.forward(obs)?;
        SacSample::draw(&head, &self.bounds, self.config.squash, eval, rng)
    }

    /// `mean(α·logπ(ã|o) − ½(Q₁ + Q₂)(o, ã))` with frozen noise `eps`.
    pub fn actor_loss(&self, obs: &Matrix<T>, eps: &Matrix<T>) -> Result<ActorLoss<T>> {
        let b = obs.rows();
        let inv_b = T::lit(1.0 / b as f64);
        let alpha = T::lit(self.alpha());
        let (head, tape) = self.actor.forward_train(obs)?;
        let sample = SacSample::with_noise(&head, eps, &self.bounds, self.config.squash)?;
        let weights = vec![inv_b; b];
        let (q, dq_dt) = self.critics.q_and_action_grad(obs, &sample.t, &weights)?;
        let mut loss = T::zero();
        for (&lp, &qv) in sample.log_prob.iter().zip(&q) {
            loss += alpha * lp - qv;
        }
        loss *= inv_b;
        let d_t = dq_dt.map(|g| -g);
        let d_lp = vec![alpha * inv_b; b];
        let d_head = sample.backward(&d_t, &d_lp);
        let grads = self.actor.backward(&tape, &d_head)?.params;
        let mean_q = q.iter().map(|v| v.as_f64()).sum::<f64>() / b.max(1) as f64;
        Ok(ActorLoss {
            loss,
            grads,
            log_prob: sample.log_prob,
            mean_q,
        })
    }

    /// Gradient step on `−α·mean(logπ + H_target)` in log-α. Returns the loss.
    pub fn temperature_update(&mut self, log_prob: &[T]) -> Result<f64> {
        let n = log_prob.len().max(1) as f64;
        let gap = log_prob.iter().map(|l| l.as_f64()).sum::<f64>() / n + self.config.target_entropy;
        let alpha = self.alpha();
        let loss = -alpha * gap;
        if !loss.is_finite() {
            return Err(CoreError::Diverged { stage: "temperature" });
        }
        let mut p = [self.log_alpha];
        self.alpha_optim
            .step(&mut p, &[-alpha * gap])
            .map_err(|_| CoreError::Diverged { stage: "temperature" })?;
        self.log_alpha = p[0];
        Ok(loss)
    }

    /// Target distribution with a fresh next-action sample.
    pub fn critic_target<R: Rng + ?Sized>(&self, batch: &Minibatch<T>, rng: &mut R) -> Result<Matrix<T>> {
        let next = self.act(&batch.next_obs, false, rng)?;
        let alpha = self.alpha();
        let bonus: Vec<T> = next.log_prob.iter().map(|&lp| T::lit(-alpha * lp.as_f64())).collect();
        self.critics.target_pmf(
            &batch.next_obs,
            &next.t,
            &batch.reward,
            &batch.done,
            self.config.gamma,
            &bonus,
            self.config.cdq_mode,
        )
    }
}

impl<T: Scalar> OffPolicyAgent<T> for SacAgent<T> {
    fn update<R: Rng + ?Sized>(&mut self, batch: &Minibatch<T>, rng: &mut R) -> Result<UpdateMetrics> {
        batch.validate()?;
        let target = self.critic_target(batch, rng)?;
        let (critic_loss, mean_q) = self.critics.update(&batch.obs, &batch.action, &target)?;

        let eps = Matrix::from_fn(batch.len(), self.bounds.dim(), |_, _| T::sample_normal(rng));
        let al = self.actor_loss(&batch.obs, &eps)?;
        if !al.loss.is_finite() {
            return Err(CoreError::Diverged { stage: "actor" });
        }
        self.actor_optim
            .step(self.actor.params_mut(), &al.grads)
            .map_err(|_| CoreError::Diverged { stage: "actor" })?;

        let alpha_loss = self.temperature_update(&al.log_prob)?;
        self.critics.polyak(self.config.rho)?;
        self.steps += 1;

        let n = al.log_prob.len().max(1) as f64;
        Ok(UpdateMetrics {
            critic_loss,
            actor_loss: Some(al.loss.as_f64()),
            alpha: Some(self.alpha()),
            alpha_loss: Some(alpha_loss),
            entropy: Some(-al.log_prob.iter().map(|l| l.as_f64()).sum::<f64>() / n),
            mean_q,
        })
    }

    fn grad_steps(&self) -> u64 {
        self.steps
    }
}
