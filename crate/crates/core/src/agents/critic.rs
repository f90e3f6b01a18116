use rand::Rng;

use crate::adam::AdamState;
use crate::c51::{
    bellman_shift, combine_targets, cross_entropy_loss, expectation, expectation_grad_logits, project, softmax,
    AtomSupport,
};
use crate::error::{CoreError, Result};
use crate::matrix::Matrix;
use crate::mlp::{InitScale, Mlp, MlpLayout};
use crate::Scalar;

use super::{polyak_update, AgentConfig};

/// Twin C51 critics over `[obs, normalized action]`, their targets and optimizers.
#[derive(Debug, Clone, PartialEq)]
pub struct CriticPair<T> {
    pub online: [Mlp<T>; 2],
    pub target: [Mlp<T>; 2],
    pub optim: [AdamState<T>; 2],
    pub support: AtomSupport,
}

impl<T: Scalar> CriticPair<T> {
    pub fn new<R: Rng + ?Sized>(obs_dim: usize, act_dim: usize, cfg: &AgentConfig, rng: &mut R) -> Result<Self> {
        let support = AtomSupport::new(cfg.v_min, cfg.v_max, cfg.n_atoms)?;
        let layout = MlpLayout::new(obs_dim + act_dim, &cfg.critic_hidden, cfg.n_atoms).with_layer_norm(cfg.layer_norm);
        let init = InitScale {
            output_gain: cfg.critic_output_gain,
            ..InitScale::default()
        };
        let a = Mlp::new(layout.clone(), init, rng)?;
        let b = Mlp::new(layout, init, rng)?;
        let n = a.num_params();
        Ok(Self {
            target: [a.clone(), b.clone()],
            online: [a, b],
            optim: [
                AdamState::new(n, cfg.critic_adam())?,
                AdamState::new(n, cfg.critic_adam())?,
            ],
            support,
        })
    }

    fn input(obs: &Matrix<T>, act: &Matrix<T>) -> Result<Matrix<T>> {
        obs.hcat(act)
    }

    /// Combined target distribution for `(o', a')` under the shifted support.
    #[allow(clippy::too_many_arguments)]
    pub fn target_pmf(
        &self,
        next_obs: &Matrix<T>,
        next_act: &Matrix<T>,
        reward: &[T],
        done: &[T],
        gamma: f64,
        entropy_bonus: &[T],
        mode: crate::c51::CombineMode,
    ) -> Result<Matrix<T>> {
        let x = Self::input(next_obs, next_act)?;
        let shifted = bellman_shift(reward, done, gamma, &self.support, entropy_bonus)?;
        let pa = project(&shifted, &softmax(&self.target[0].forward(&x)?), &self.support)?;
        let pb = project(&shifted, &softmax(&self.target[1].forward(&x)?), &self.support)?;
        combine_targets(&pa, &pb, mode, &self.support)
    }

    /// Cross-entropy losses of both online critics and their parameter gradients.
    pub fn loss_and_grads(
        &self,
        obs: &Matrix<T>,
        act: &Matrix<T>,
        target: &Matrix<T>,
    ) -> Result<([T; 2], [Vec<T>; 2], Vec<T>)> {
        let x = Self::input(obs, act)?;
        let mut losses = [T::zero(); 2];
        let mut grads: [Vec<T>; 2] = [Vec::new(), Vec::new()];
        let mut q = vec![T::zero(); obs.rows()];
        for k in 0..2 {
            let (logits, tape) = self.online[k].forward_train(&x)?;
            let (loss, dlogits) = cross_entropy_loss(&logits, target)?;
            for (acc, e) in q.iter_mut().zip(expectation(&softmax(&logits), &self.support)) {
                *acc += T::lit(0.5) * e;
            }
            losses[k] = loss;
            grads[k] = self.online[k].backward(&tape, &dlogits)?.params;
        }
        Ok((losses, grads, q))
    }

    /// One optimizer step per critic. Returns the mean loss and mean Q.
    pub fn update(&mut self, obs: &Matrix<T>, act: &Matrix<T>, target: &Matrix<T>) -> Result<(f64, f64)> {
        let (losses, grads, q) = self.loss_and_grads(obs, act, target)?;
        if losses.iter().any(|l| !l.is_finite()) {
            return Err(CoreError::Diverged { stage: "critic" });
        }
        for k in 0..2 {
            let (net, opt) = (&mut self.online[k], &mut self.optim[k]);
            opt.step(net.params_mut(), &grads[k])
                .map_err(|_| CoreError::Diverged { stage: "critic" })?;
        }
        let mean_q = q.iter().map(|v| v.as_f64()).sum::<f64>() / q.len().max(1) as f64;
        Ok((0.5 * (losses[0].as_f64() + losses[1].as_f64()), mean_q))
    }

    /// Mean of the two online expectations per row and `∂(Σ_r w_r·Q_r)/∂act`.
    pub fn q_and_action_grad(&self, obs: &Matrix<T>, act: &Matrix<T>, weights: &[T]) -> Result<(Vec<T>, Matrix<T>)> {
        let x = Self::input(obs, act)?;
        let half: Vec<T> = weights.iter().map(|&w| w * T::lit(0.5)).collect();
        let mut q = vec![T::zero(); obs.rows()];
        let mut dx: Option<Matrix<T>> = None;
        for k in 0..2 {
            let (logits, tape) = self.online[k].forward_train(&x)?;
            let probs = softmax(&logits);
            for (acc, e) in q.iter_mut().zip(expectation(&probs, &self.support)) {
                *acc += T::lit(0.5) * e;
            }
            let dlogits = expectation_grad_logits(&probs, &self.support, &half);
            let d = self.online[k].backward_input(&tape, &dlogits)?;
            dx = Some(match dx {
                None => d,
                Some(mut acc) => {
                    for (a, &b) in acc.as_mut_slice().iter_mut().zip(d.as_slice()) {
                        *a += b;
                    }
                    acc
                }
            });
        }
        let dx = dx.expect("two critics");
        Ok((q, dx.col_slice(obs.cols(), x.cols())))
    }

    pub fn polyak(&mut self, rho: f64) -> Result<()> {
        for k in 0..2 {
            polyak_update(&mut self.target[k], &self.online[k], rho)?;
        }
        Ok(())
    }
}
