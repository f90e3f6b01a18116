//! The outer loop: act on every env, store the transitions, run the update
//! epoch, log, evaluate and checkpoint.
//!
//! A run directory holds `config.toml` (the resolved configuration),
//! `metrics.csv`, `timing.csv`, `summary.json` and `checkpoints/` with
//! `step_<env steps>.frlc` files plus a copy of the newest as `latest.frlc`.

use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, Context, Result};
use fastrl_core::{CoreError, Matrix, Minibatch, ReplayBuffer, RunningNormalizer};
use fastrl_envlab::{env_rng, mirror_transition};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::checkpoint::{decode_optimizers_into, decode_tensors, encode_optimizers, encode_tensors, Checkpoint};
use crate::config::{RunConfig, SymmetryMode};
use crate::env::{build_env, training_push_profile, BoxedEnv};
use crate::eval::evaluate;
use crate::learner::{Learner, LearnerScalars};
use crate::metrics::{MetricsTable, MetricsWriter, RowCounters, TimingWriter, Window};

/// Stream of the agent's generator; env members use streams `0..num_envs`.
const AGENT_STREAM: u64 = u64::MAX;

pub fn agent_rng(seed: u64) -> ChaCha8Rng {
    env_rng(seed, AGENT_STREAM)
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Counters {
    /// Transitions collected.
    pub env_steps: u64,
    /// Lock-step steps of the whole env batch.
    pub vector_steps: u64,
    pub next_log: u64,
    pub next_eval: u64,
    pub next_checkpoint: u64,
    /// Wall-clock seconds spent before the current process.
    pub elapsed_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub run_dir: PathBuf,
    pub env_steps: u64,
    pub vector_steps: u64,
    pub grad_steps: u64,
    /// A stop target was reached before `total_env_steps`.
    pub stopped_early: bool,
    /// Diagnostic of a non-finite training signal that aborted the run.
    pub diverged: Option<String>,
    pub final_tracking: Option<f64>,
    pub best_tracking: Option<f64>,
    pub wall_clock_s: f64,
}

pub struct Trainer {
    cfg: RunConfig,
    env: BoxedEnv,
    learner: Learner,
    buffer: ReplayBuffer<f32>,
    norm: Option<RunningNormalizer>,
    rng: ChaCha8Rng,
    window: Window,
    counters: Counters,
}

impl Trainer {
    pub fn new(cfg: RunConfig) -> Result<Self> {
        cfg.validate()?;
        let t = &cfg.train;
        let env = build_env(&cfg, t.num_envs, t.seed)?;
        let mut rng = agent_rng(t.seed);
        let learner = Learner::new(&cfg, env.obs_dim(), env.action_bounds(), &mut rng)?;
        let buffer = ReplayBuffer::new(t.num_envs, t.buffer_capacity, env.obs_dim(), env.act_dim())?;
        let norm = t
            .obs_norm
            .then(|| RunningNormalizer::new(env.obs_dim(), t.obs_norm_warmup));
        let counters = Counters {
            next_log: t.log_interval,
            next_eval: t.eval_interval,
            next_checkpoint: t.checkpoint_interval,
            ..Counters::default()
        };
        Ok(Self {
            cfg,
            env,
            learner,
            buffer,
            norm,
            rng,
            window: Window::default(),
            counters,
        })
    }

    pub fn config(&self) -> &RunConfig {
        &self.cfg
    }

    pub fn counters(&self) -> &Counters {
        &self.counters
    }

    pub fn learner(&self) -> &Learner {
        &self.learner
    }

    pub fn normalizer(&self) -> Option<&RunningNormalizer> {
        self.norm.as_ref()
    }

    pub fn checkpoint(&self) -> Result<Checkpoint> {
        let mut c = Checkpoint::default();
        c.push("CONFIG", self.cfg.to_toml()?.into_bytes());
        c.push("COUNTERS", serde_json::to_vec(&self.counters)?);
        c.push("AGENT", encode_tensors(&self.learner.tensors()));
        c.push("OPTIM", encode_optimizers(&self.learner.optimizers()));
        c.push("LEARNER", serde_json::to_vec(&self.learner.scalars())?);
        c.push("NORM", serde_json::to_vec(&self.norm)?);
        c.push("RNG", serde_json::to_vec(&self.rng)?);
        c.push("ENV", self.env.save_state()?);
        c.push("REPLAY", self.buffer.to_bytes());
        c.push("METRICS", serde_json::to_vec(&self.window)?);
        Ok(c)
    }

    /// Rebuilds a trainer from a checkpoint, optionally with a changed config
    /// (for example a larger `total_env_steps`).
    pub fn from_checkpoint(ck: &Checkpoint, cfg: Option<RunConfig>) -> Result<Self> {
        let saved = config_of(ck)?;
        let cfg = cfg.unwrap_or(saved);
        let mut t = Trainer::new(cfg)?;
        t.counters = serde_json::from_slice(ck.get("COUNTERS")?).context("COUNTERS")?;
        t.learner.set_tensors(&decode_tensors(ck.get("AGENT")?)?)?;
        decode_optimizers_into(ck.get("OPTIM")?, &mut t.learner.optimizers_mut())?;
        let scalars: LearnerScalars = serde_json::from_slice(ck.get("LEARNER")?).context("LEARNER")?;
        t.learner.set_scalars(&scalars)?;
        let norm: Option<RunningNormalizer> = serde_json::from_slice(ck.get("NORM")?).context("NORM")?;
        if norm.as_ref().map(|n| n.dim()) != t.norm.as_ref().map(|n| n.dim()) {
            bail!("checkpoint normalizer does not match the configuration");
        }
        t.norm = norm;
        t.rng = serde_json::from_slice(ck.get("RNG")?).context("RNG")?;
        t.env.load_state(ck.get("ENV")?)?;
        let buffer = ReplayBuffer::from_bytes(ck.get("REPLAY")?)?;
        if (buffer.num_envs(), buffer.capacity()) != (t.buffer.num_envs(), t.buffer.capacity()) {
            bail!("checkpoint replay layout does not match the configuration");
        }
        t.buffer = buffer;
        t.window = serde_json::from_slice(ck.get("METRICS")?).context("METRICS")?;
        Ok(t)
    }

    fn normalized(&self, obs: &Matrix<f32>) -> Matrix<f32> {
        match &self.norm {
            Some(n) => n.apply(obs),
            None => obs.clone(),
        }
    }

    /// One lock-step env step followed by the update epoch.
    pub fn step(&mut self) -> Result<Option<String>> {
        let t = &self.cfg.train;
        let obs = self.env.observations();
        if let Some(n) = &mut self.norm {
            n.update(&obs)?;
        }
        let obs32 = obs.cast::<f32>();
        let acting = self.learner.explore(&self.normalized(&obs32), &mut self.rng)?;
        let out = self.env.step(&acting.action)?;
        let env = &self.env;
        self.window.record_step(&out, |row| env.tracking_value(row));
        for e in &out.episodes {
            self.learner.episode_finished(e.env, &mut self.rng);
        }
        self.buffer.push(&Minibatch {
            obs: obs32,
            action: acting.t,
            next_obs: out.next_obs.cast(),
            reward: out.reward.iter().map(|&r| r as f32).collect(),
            // Time-limit truncation bootstraps; only termination cuts the return.
            done: out.terminated.iter().map(|&d| d as u8 as f32).collect(),
        })?;
        self.counters.env_steps += out.reward.len() as u64;
        self.counters.vector_steps += 1;
        if self.counters.env_steps <= t.learning_starts {
            return Ok(None);
        }
        let norm = self.norm.as_ref();
        let mirror = t.symmetry.then_some(t.symmetry_mode);
        let prepare = |raw: Minibatch<f32>| prepare_batch(raw, mirror, norm);
        match self
            .learner
            .update_epoch(&self.buffer, t.batch_size, t.num_updates, &mut self.rng, prepare)
        {
            Ok(updates) => {
                self.window.record_updates(&updates);
                Ok(None)
            }
            Err(e @ (CoreError::Diverged { .. } | CoreError::NonFinite { .. })) => Ok(Some(e.to_string())),
            Err(e) => Err(e.into()),
        }
    }

    /// Trains until `total_env_steps`, a stop target, or divergence.
    pub fn run(&mut self, run_dir: &Path, resumed: bool) -> Result<RunSummary> {
        let ckpt_dir = run_dir.join("checkpoints");
        std::fs::create_dir_all(&ckpt_dir)?;
        std::fs::write(run_dir.join("config.toml"), self.cfg.to_toml()?)?;
        let metrics_path = run_dir.join("metrics.csv");
        let mut metrics = if resumed && metrics_path.exists() {
            MetricsWriter::resume(&metrics_path, self.counters.env_steps)?
        } else {
            MetricsWriter::create(&metrics_path)?
        };
        let mut timing = TimingWriter::open(&run_dir.join("timing.csv"), !resumed, Some(self.counters.env_steps))?;
        let started = Instant::now();
        let t = self.cfg.train.clone();
        let mut diverged = None;
        let mut stopped_early = false;
        let eval_profile = training_push_profile(&self.cfg);

        while self.counters.env_steps < t.total_env_steps {
            if let Some(msg) = self.step()? {
                diverged = Some(msg);
                break;
            }
            let c = &mut self.counters;
            if t.eval_interval > 0 && c.env_steps >= c.next_eval {
                while c.next_eval <= c.env_steps {
                    c.next_eval += t.eval_interval;
                }
                let stats = evaluate(
                    &self.cfg,
                    &self.learner,
                    self.norm.as_ref(),
                    t.eval_episodes,
                    eval_profile,
                    t.eval_seed,
                )?;
                self.window.record_eval(stats);
            }
            let c = &mut self.counters;
            if c.env_steps >= c.next_log {
                while c.next_log <= c.env_steps {
                    c.next_log += t.log_interval;
                }
                let wall = c.elapsed_s + started.elapsed().as_secs_f64();
                let counters = RowCounters {
                    wall_clock_s: (!t.deterministic).then_some(wall),
                    env_steps: c.env_steps,
                    vector_steps: c.vector_steps,
                    grad_steps: self.learner.grad_steps(),
                };
                let env_steps = c.env_steps;
                let row = self
                    .window
                    .close(counters, self.env.term_names(), self.env.curriculum_ramp());
                metrics.write(&row)?;
                timing.write(env_steps, wall)?;
                let hit_tracking = t
                    .target_tracking
                    .is_some_and(|x| row.get("tracking_mean").is_some_and(|v| v >= x));
                let hit_eval = t
                    .target_eval_completion
                    .is_some_and(|x| row.get("eval_completion").is_some_and(|v| v >= x));
                if hit_tracking || hit_eval {
                    stopped_early = true;
                    break;
                }
            }
            let c = &mut self.counters;
            if t.checkpoint_interval > 0 && c.env_steps >= c.next_checkpoint && c.env_steps < t.total_env_steps {
                while c.next_checkpoint <= c.env_steps {
                    c.next_checkpoint += t.checkpoint_interval;
                }
                self.save_checkpoint(&ckpt_dir, started)?;
            }
        }
        self.save_checkpoint(&ckpt_dir, started)?;

        let table = MetricsTable::read(&metrics_path)?;
        let summary = RunSummary {
            run_dir: run_dir.to_path_buf(),
            env_steps: self.counters.env_steps,
            vector_steps: self.counters.vector_steps,
            grad_steps: self.learner.grad_steps(),
            stopped_early,
            diverged,
            final_tracking: table.last("tracking_mean")?,
            best_tracking: table.best("tracking_mean")?,
            wall_clock_s: self.counters.elapsed_s + started.elapsed().as_secs_f64(),
        };
        std::fs::write(run_dir.join("summary.json"), serde_json::to_string_pretty(&summary)?)?;
        Ok(summary)
    }

    fn save_checkpoint(&mut self, dir: &Path, started: Instant) -> Result<()> {
        let elapsed_before = self.counters.elapsed_s;
        self.counters.elapsed_s += started.elapsed().as_secs_f64();
        let ck = self.checkpoint();
        self.counters.elapsed_s = elapsed_before;
        let ck = ck?;
        let path = dir.join(format!("step_{}.frlc", self.counters.env_steps));
        ck.save(&path)?;
        std::fs::copy(&path, dir.join("latest.frlc"))?;
        Ok(())
    }
}

/// Applies mirroring and normalization to a raw replay sample.
pub fn prepare_batch(
    raw: Minibatch<f32>,
    mirror: Option<SymmetryMode>,
    norm: Option<&RunningNormalizer>,
) -> fastrl_core::Result<Minibatch<f32>> {
    let mut batch = match mirror {
        None => raw,
        Some(SymmetryMode::Double) => {
            let m = mirror_transition(&raw);
            raw.concat(&m)?
        }
        Some(SymmetryMode::ReplaceHalf) => {
            let mut out = raw;
            let half = out.len() / 2;
            for r in half..out.len() {
                fastrl_envlab::mirror_obs(out.obs.row_mut(r));
                fastrl_envlab::mirror_obs(out.next_obs.row_mut(r));
                fastrl_envlab::mirror_action(out.action.row_mut(r));
            }
            out
        }
    };
    if let Some(n) = norm {
        batch.obs = n.apply(&batch.obs);
        batch.next_obs = n.apply(&batch.next_obs);
    }
    Ok(batch)
}

pub fn config_of(ck: &Checkpoint) -> Result<RunConfig> {
    let text = std::str::from_utf8(ck.get("CONFIG")?).context("CONFIG section")?;
    RunConfig::from_toml(text, &[]).context("CONFIG section")
}

pub fn latest_checkpoint(run_dir: &Path) -> PathBuf {
    run_dir.join("checkpoints").join("latest.frlc")
}

/// Trains `cfg` into `run_dir` from scratch.
pub fn train(cfg: RunConfig, run_dir: &Path) -> Result<RunSummary> {
    std::fs::create_dir_all(run_dir)?;
    Trainer::new(cfg)?.run(run_dir, false)
}

/// Continues the run in `run_dir` from its latest checkpoint. Overrides
/// apply on top of the checkpointed configuration.
pub fn resume(run_dir: &Path, overrides: &[String]) -> Result<RunSummary> {
    let ck = Checkpoint::load(&latest_checkpoint(run_dir))?;
    let cfg = config_of(&ck)?.with_overrides(overrides)?;
    Trainer::from_checkpoint(&ck, Some(cfg))?.run(run_dir, true)
}
