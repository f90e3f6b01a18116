//! The agent the training loop drives, with its exploration state.

use anyhow::{bail, Result};
use fastrl_core::policy::td3_explore;
use fastrl_core::{
    update_epoch, ActionBounds, AdamState, Matrix, Minibatch, Mlp, NoiseSchedule, OffPolicyAgent, ReplayBuffer,
    SacAgent, Td3Agent, UpdateMetrics,
};
use rand_chacha::ChaCha8Rng;

use crate::config::{Algorithm, RunConfig};

/// Actions for one vector step.
pub struct Acting {
    /// Normalized actions as stored in replay.
    pub t: Matrix<f32>,
    /// Absolute actions sent to the environment.
    pub action: Matrix<f64>,
}

pub enum Learner {
    Sac(SacAgent<f32>),
    Td3 {
        agent: Td3Agent<f32>,
        noise: NoiseSchedule,
        /// Exploration σ per env, redrawn when that env's episode ends.
        sigma: Vec<f64>,
    },
}

impl Learner {
    pub fn new(cfg: &RunConfig, obs_dim: usize, bounds: ActionBounds, rng: &mut ChaCha8Rng) -> Result<Self> {
        let agent_cfg = cfg.effective_agent();
        Ok(match cfg.train.algorithm {
            Algorithm::Fastsac => Learner::Sac(SacAgent::new(obs_dim, bounds, agent_cfg, rng)?),
            Algorithm::Fasttd3 => {
                let agent = Td3Agent::new(obs_dim, bounds, agent_cfg, rng)?;
                let noise = cfg.train.noise;
                let sigma = (0..cfg.train.num_envs).map(|_| noise.sample(rng)).collect();
                Learner::Td3 { agent, noise, sigma }
            }
        })
    }

    pub fn bounds(&self) -> &ActionBounds {
        match self {
            Learner::Sac(a) => &a.bounds,
            Learner::Td3 { agent, .. } => &agent.bounds,
        }
    }

    /// Exploratory actions for normalized observations.
    pub fn explore(&self, obs: &Matrix<f32>, rng: &mut ChaCha8Rng) -> Result<Acting> {
        match self {
            Learner::Sac(a) => {
                let s = a.act(obs, false, rng)?;
                Ok(Acting {
                    t: s.t,
                    action: s.action.cast(),
                })
            }
            Learner::Td3 { agent, sigma, .. } => {
                let t = td3_explore(&agent.act(obs)?, sigma, rng)?;
                let action = agent.bounds.scale(&t).cast();
                Ok(Acting { t, action })
            }
        }
    }

    /// Deterministic absolute actions.
    pub fn act_deterministic(&self, obs: &Matrix<f32>, rng: &mut ChaCha8Rng) -> Result<Matrix<f64>> {
        match self {
            Learner::Sac(a) => Ok(a.act(obs, true, rng)?.action.cast()),
            Learner::Td3 { agent, .. } => Ok(agent.bounds.scale(&agent.act(obs)?).cast()),
        }
    }

    /// Called once per finished episode, in env order.
    pub fn episode_finished(&mut self, env: usize, rng: &mut ChaCha8Rng) {
        if let Learner::Td3 { noise, sigma, .. } = self {
            sigma[env] = noise.sample(rng);
        }
    }

    pub fn update_epoch<F>(
        &mut self,
        buffer: &ReplayBuffer<f32>,
        batch_size: usize,
        num_updates: usize,
        rng: &mut ChaCha8Rng,
        prepare: F,
    ) -> fastrl_core::Result<Vec<UpdateMetrics>>
    where
        F: FnMut(Minibatch<f32>) -> fastrl_core::Result<Minibatch<f32>>,
    {
        match self {
            Learner::Sac(a) => update_epoch(a, buffer, batch_size, num_updates, rng, prepare),
            Learner::Td3 { agent, .. } => update_epoch(agent, buffer, batch_size, num_updates, rng, prepare),
        }
    }

    pub fn grad_steps(&self) -> u64 {
        match self {
            Learner::Sac(a) => a.grad_steps(),
            Learner::Td3 { agent, .. } => agent.grad_steps(),
        }
    }

    /// Network parameters in checkpoint order: actor, online critics,
    /// target critics, then the deterministic actor's target.
    pub fn tensors(&self) -> Vec<(&'static str, Vec<f32>)> {
        let mut out = Vec::new();
        let (actor, critics) = match self {
            Learner::Sac(a) => (&a.actor, &a.critics),
            Learner::Td3 { agent, .. } => (&agent.actor, &agent.critics),
        };
        out.push(("actor", actor.params().to_vec()));
        out.push(("critic0", critics.online[0].params().to_vec()));
        out.push(("critic1", critics.online[1].params().to_vec()));
        out.push(("critic0_target", critics.target[0].params().to_vec()));
        out.push(("critic1_target", critics.target[1].params().to_vec()));
        if let Learner::Td3 { agent, .. } = self {
            out.push(("actor_target", agent.actor_target.params().to_vec()));
        }
        out
    }

    pub fn set_tensors(&mut self, tensors: &[(String, Vec<f32>)]) -> Result<()> {
        let expected = self.tensors();
        if tensors.len() != expected.len() {
            bail!(
                "checkpoint holds {} tensors, expected {}",
                tensors.len(),
                expected.len()
            );
        }
        for ((name, _), (got, _)) in expected.iter().zip(tensors) {
            if name != got {
                bail!("checkpoint tensor `{got}` where `{name}` was expected");
            }
        }
        let nets: Vec<&mut Mlp<f32>> = match self {
            Learner::Sac(a) => {
                let [c0, c1] = &mut a.critics.online;
                let [t0, t1] = &mut a.critics.target;
                vec![&mut a.actor, c0, c1, t0, t1]
            }
            Learner::Td3 { agent, .. } => {
                let [c0, c1] = &mut agent.critics.online;
                let [t0, t1] = &mut agent.critics.target;
                vec![&mut agent.actor, c0, c1, t0, t1, &mut agent.actor_target]
            }
        };
        for (net, (_, values)) in nets.into_iter().zip(tensors) {
            net.set_params(values)?;
        }
        Ok(())
    }

    /// Optimizer states in checkpoint order: actor, critic0, critic1.
    pub fn optimizers(&self) -> [&AdamState<f32>; 3] {
        let (actor, critics) = match self {
            Learner::Sac(a) => (&a.actor_optim, &a.critics),
            Learner::Td3 { agent, .. } => (&agent.actor_optim, &agent.critics),
        };
        [actor, &critics.optim[0], &critics.optim[1]]
    }

    pub fn optimizers_mut(&mut self) -> [&mut AdamState<f32>; 3] {
        let (actor, critics) = match self {
            Learner::Sac(a) => (&mut a.actor_optim, &mut a.critics),
            Learner::Td3 { agent, .. } => (&mut agent.actor_optim, &mut agent.critics),
        };
        let [c0, c1] = &mut critics.optim;
        [actor, c0, c1]
    }

    /// Scalar state outside the networks and optimizers.
    pub fn scalars(&self) -> LearnerScalars {
        match self {
            Learner::Sac(a) => LearnerScalars {
                steps: a.steps,
                log_alpha: Some(a.log_alpha),
                alpha_optim: Some(adam_parts(&a.alpha_optim)),
                sigma: None,
            },
            Learner::Td3 { agent, sigma, .. } => LearnerScalars {
                steps: agent.steps,
                log_alpha: None,
                alpha_optim: None,
                sigma: Some(sigma.clone()),
            },
        }
    }

    pub fn set_scalars(&mut self, s: &LearnerScalars) -> Result<()> {
        match self {
            Learner::Sac(a) => {
                let (Some(log_alpha), Some((m, v, k))) = (s.log_alpha, s.alpha_optim.as_ref()) else {
                    bail!("checkpoint lacks the temperature state");
                };
                a.steps = s.steps;
                a.log_alpha = log_alpha;
                if m.len() != 1 || v.len() != 1 {
                    bail!("temperature optimizer state has the wrong length");
                }
                a.alpha_optim.first_moment = m.clone();
                a.alpha_optim.second_moment = v.clone();
                a.alpha_optim.step_count = *k;
            }
            Learner::Td3 { agent, sigma, .. } => {
                let Some(saved) = &s.sigma else {
                    bail!("checkpoint lacks the exploration noise state");
                };
                if saved.len() != sigma.len() {
                    bail!(
                        "checkpoint noise state covers {} envs, expected {}",
                        saved.len(),
                        sigma.len()
                    );
                }
                agent.steps = s.steps;
                sigma.clone_from(saved);
            }
        }
        Ok(())
    }
}

fn adam_parts(a: &AdamState<f64>) -> (Vec<f64>, Vec<f64>, u64) {
    (a.first_moment.clone(), a.second_moment.clone(), a.step_count)
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct LearnerScalars {
    pub steps: u64,
    pub log_alpha: Option<f64>,
    pub alpha_optim: Option<(Vec<f64>, Vec<f64>, u64)>,
    pub sigma: Option<Vec<f64>>,
}
