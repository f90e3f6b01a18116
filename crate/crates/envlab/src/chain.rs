//! Reference-motion tracking analog on an n-joint planar chain.
//!
//! Observation layout (5n): `q`, `q̇`, reference angles and velocities of the
//! next frame, previous action. Actions are absolute PD targets.

use std::ops::Range;
use std::path::PathBuf;
use std::sync::Arc;

use fastrl_core::{compute_action_bounds, ActionBounds, Matrix};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::motion::{BankConfig, MotionBank};
use crate::random::{env_rng, interval_to_steps, sample_push_interval, Interval, PushConfig, PushProfile};
use crate::{
    check_actions, default_workers, par_map_envs, EnvError, EpisodeSummary, Result, StepOutput, TerminationReason,
    VecEnv,
};

pub const CHAIN_TERMS: [&str; 5] = [
    "joint_pos_track",
    "joint_vel_track",
    "end_effector_track",
    "action_rate_pen",
    "alive",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ChainWeights {
    pub joint_pos_track: f64,
    pub joint_vel_track: f64,
    pub end_effector_track: f64,
    pub action_rate_pen: f64,
    pub alive: f64,
}

impl Default for ChainWeights {
    fn default() -> Self {
        Self {
            joint_pos_track: 1.0,
            joint_vel_track: 0.5,
            end_effector_track: 1.0,
            action_rate_pen: 0.01,
            alive: 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ChainDr {
    pub kp_scale: Interval,
    pub kd_scale: Interval,
    /// Constant offset added to every PD target.
    pub joint_bias: Interval,
    pub mass_scale: Interval,
}

impl Default for ChainDr {
    fn default() -> Self {
        Self {
            kp_scale: Interval::new(0.8, 1.2),
            kd_scale: Interval::new(0.8, 1.2),
            joint_bias: Interval::new(-0.03, 0.03),
            mass_scale: Interval::new(0.8, 1.2),
        }
    }
}

impl ChainDr {
    pub fn nominal() -> Self {
        Self {
            kp_scale: Interval::point(1.0),
            kd_scale: Interval::point(1.0),
            joint_bias: Interval::point(0.0),
            mass_scale: Interval::point(1.0),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ChainConfig {
    pub episode_steps: u32,
    pub joint_limit: f64,
    pub kp: f64,
    pub kd: f64,
    pub torque_limit: f64,
    pub link_length: f64,
    /// Largest per-joint deviation from the reference before termination.
    pub termination_threshold: f64,
    pub sigma2_pos: f64,
    pub sigma2_vel: f64,
    pub sigma2_ee: f64,
    pub weights: ChainWeights,
    pub push: PushConfig,
    pub push_profile: PushProfile,
    pub dr: ChainDr,
    pub bank: BankConfig,
    /// Load the bank from this file instead of generating it.
    pub bank_path: Option<PathBuf>,
}

impl Default for ChainConfig {
    fn default() -> Self {
        Self {
            episode_steps: 500,
            joint_limit: 1.5,
            kp: 50.0,
            kd: 5.0,
            torque_limit: 200.0,
            link_length: 0.25,
            termination_threshold: 0.5,
            sigma2_pos: 0.04,
            sigma2_vel: 1.0,
            sigma2_ee: 0.01,
            weights: ChainWeights::default(),
            push: PushConfig {
                magnitude: Interval::new(0.2, 0.6),
                ..PushConfig::default()
            },
            push_profile: PushProfile::Normal,
            dr: ChainDr::default(),
            bank: BankConfig::default(),
            bank_path: None,
        }
    }
}

impl ChainConfig {
    pub fn nominal() -> Self {
        Self {
            dr: ChainDr::nominal(),
            push_profile: PushProfile::Off,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(EnvError::Config(format!("chain: {msg}")));
        for (name, v) in [
            ("joint_limit", self.joint_limit),
            ("kp", self.kp),
            ("torque_limit", self.torque_limit),
            ("link_length", self.link_length),
            ("termination_threshold", self.termination_threshold),
            ("sigma2_pos", self.sigma2_pos),
            ("sigma2_vel", self.sigma2_vel),
            ("sigma2_ee", self.sigma2_ee),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return bad(format!("{name} must be positive, got {v}"));
            }
        }
        if self.episode_steps == 0 {
            return bad("episode_steps must be positive".into());
        }
        for (name, i) in [
            ("dr.kp_scale", self.dr.kp_scale),
            ("dr.kd_scale", self.dr.kd_scale),
            ("dr.joint_bias", self.dr.joint_bias),
            ("dr.mass_scale", self.dr.mass_scale),
            ("push.normal_interval", self.push.normal_interval),
            ("push.strong_interval", self.push.strong_interval),
            ("push.magnitude", self.push.magnitude),
        ] {
            if !i.is_valid() {
                return bad(format!("{name} must be a finite [lo, hi] with lo ≤ hi"));
            }
        }
        if self.dr.mass_scale.lo <= 0.0 || self.push.normal_interval.lo <= 0.0 || self.push.strong_interval.lo <= 0.0 {
            return bad("mass scale and push intervals must be positive".into());
        }
        Ok(())
    }
}

/// Planar end-effector position of a chain with equal links and cumulative angles.
pub fn chain_forward_kinematics(q: &[f64], link: f64) -> [f64; 2] {
    let mut angle = 0.0;
    let mut p = [0.0; 2];
    for &qi in q {
        angle += qi;
        p[0] += link * angle.cos();
        p[1] += link * angle.sin();
    }
    p
}

fn mean_sq(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>() / a.len() as f64
}

/// Raw terms in [`CHAIN_TERMS`] order.
pub fn chain_rewards(
    q: &[f64],
    qd: &[f64],
    q_ref: &[f64],
    qd_ref: &[f64],
    action: &[f64],
    prev_action: &[f64],
    cfg: &ChainConfig,
) -> [f64; 5] {
    let pos = (-mean_sq(q, q_ref) / cfg.sigma2_pos).exp();
    let vel = (-mean_sq(qd, qd_ref) / cfg.sigma2_vel).exp();
    let ee = chain_forward_kinematics(q, cfg.link_length);
    let ee_ref = chain_forward_kinematics(q_ref, cfg.link_length);
    let ee_err = (ee[0] - ee_ref[0]).powi(2) + (ee[1] - ee_ref[1]).powi(2);
    let ee_track = (-ee_err / cfg.sigma2_ee).exp();
    let rate = -action
        .iter()
        .zip(prev_action)
        .map(|(a, b)| (a - b).powi(2))
        .sum::<f64>();
    [pos, vel, ee_track, rate, 1.0]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainEnvState {
    pub q: Vec<f64>,
    pub qd: Vec<f64>,
    pub prev_action: Vec<f64>,
    pub motion: usize,
    pub start: u32,
    /// Reference frame the joints currently correspond to.
    pub frame: u32,
    /// Last frame of the segment.
    pub end: u32,
    pub kp: f64,
    pub kd: f64,
    pub mass: f64,
    pub bias: Vec<f64>,
    pub step: u32,
    pub next_push_step: Option<u32>,
    pub last_push: Option<Vec<f64>>,
    pub ep_return: f64,
    pub ep_tracking: f64,
    pub rng: ChaCha8Rng,
}

impl ChainEnvState {
    fn is_finite(&self) -> bool {
        self.q
            .iter()
            .chain(&self.qd)
            .chain(&self.prev_action)
            .all(|x| x.is_finite())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainSnapshot {
    pub envs: Vec<ChainEnvState>,
    pub push_profile: PushProfile,
}

pub struct ChainTrack {
    cfg: ChainConfig,
    bank: Arc<MotionBank>,
    envs: Vec<ChainEnvState>,
    push_profile: PushProfile,
    bounds: ActionBounds,
    workers: usize,
}

impl ChainTrack {
    pub fn new(cfg: ChainConfig, num_envs: usize, seed: u64) -> Result<Self> {
        Self::with_streams(cfg, seed, 0..num_envs as u64)
    }

    pub fn with_streams(cfg: ChainConfig, seed: u64, streams: Range<u64>) -> Result<Self> {
        let bank = match &cfg.bank_path {
            Some(p) => MotionBank::load(p)?,
            None => MotionBank::generate(&cfg.bank)?,
        };
        Self::with_bank(cfg, Arc::new(bank), seed, streams)
    }

    pub fn with_bank(cfg: ChainConfig, bank: Arc<MotionBank>, seed: u64, streams: Range<u64>) -> Result<Self> {
        cfg.validate()?;
        if streams.is_empty() {
            return Err(EnvError::Config("chain: need at least one env".into()));
        }
        let n = bank.joints();
        let limit = cfg.joint_limit;
        let bounds = compute_action_bounds(&vec![-limit; n], &vec![limit; n], &vec![0.0; n])
            .map_err(|e| EnvError::Config(e.to_string()))?;
        let push_profile = cfg.push_profile;
        let envs = streams
            .map(|s| fresh_state(&cfg, &bank, push_profile, env_rng(seed, s)))
            .collect();
        Ok(Self {
            cfg,
            bank,
            envs,
            push_profile,
            bounds,
            workers: default_workers(),
        })
    }

    /// Caps stepping threads; outputs do not depend on the count.
    pub fn with_workers(mut self, workers: usize) -> Self {
        self.workers = workers.max(1);
        self
    }

    pub fn config(&self) -> &ChainConfig {
        &self.cfg
    }

    pub fn bank(&self) -> &MotionBank {
        &self.bank
    }

    pub fn states(&self) -> &[ChainEnvState] {
        &self.envs
    }

    pub fn state_mut(&mut self, i: usize) -> &mut ChainEnvState {
        &mut self.envs[i]
    }

    /// Reference angles and velocities at `frame` of env `i`'s motion.
    pub fn reference(&self, i: usize, frame: u32) -> (Vec<f64>, Vec<f64>) {
        reference(&self.bank, self.envs[i].motion, frame)
    }

    pub fn snapshot(&self) -> ChainSnapshot {
        ChainSnapshot {
            envs: self.envs.clone(),
            push_profile: self.push_profile,
        }
    }

    pub fn restore(&mut self, snap: ChainSnapshot) -> Result<()> {
        if snap.envs.len() != self.envs.len() {
            return Err(EnvError::Snapshot(format!(
                "snapshot holds {} envs, expected {}",
                snap.envs.len(),
                self.envs.len()
            )));
        }
        if let Some(s) = snap.envs.iter().find(|s| s.motion >= self.bank.len()) {
            return Err(EnvError::Snapshot(format!("motion {} not in bank", s.motion)));
        }
        self.envs = snap.envs;
        self.push_profile = snap.push_profile;
        Ok(())
    }

    fn observe(&self, i: usize) -> Vec<f64> {
        observe(&self.envs[i], &self.bank)
    }
}

struct ChainStep {
    next_obs: Vec<f64>,
    obs: Vec<f64>,
    terms: [f64; 5],
    reward: f64,
    reason: Option<TerminationReason>,
    truncated: bool,
    episode: Option<EpisodeSummary>,
}

fn reference(bank: &MotionBank, motion: usize, frame: u32) -> (Vec<f64>, Vec<f64>) {
    let m = bank.motion(motion);
    let f = (frame as usize).min(m.frames() - 1);
    (m.angles(f).collect(), m.velocities(f).to_vec())
}

fn observe(s: &ChainEnvState, bank: &MotionBank) -> Vec<f64> {
    let (q_ref, qd_ref) = reference(bank, s.motion, s.frame + 1);
    let mut o = Vec::with_capacity(5 * s.q.len());
    o.extend_from_slice(&s.q);
    o.extend_from_slice(&s.qd);
    o.extend_from_slice(&q_ref);
    o.extend_from_slice(&qd_ref);
    o.extend_from_slice(&s.prev_action);
    o
}

fn fresh_state(cfg: &ChainConfig, bank: &MotionBank, profile: PushProfile, mut rng: ChaCha8Rng) -> ChainEnvState {
    let n = bank.joints();
    let (motion, start) = bank.sample_segment(&mut rng);
    let frames = bank.motion(motion).frames();
    let end = (start + cfg.episode_steps as usize).min(frames - 1);
    let kp = cfg.kp * cfg.dr.kp_scale.sample(&mut rng);
    let kd = cfg.kd * cfg.dr.kd_scale.sample(&mut rng);
    let mass = cfg.dr.mass_scale.sample(&mut rng);
    let bias = (0..n).map(|_| cfg.dr.joint_bias.sample(&mut rng)).collect();
    let dt = 1.0 / bank.rate;
    let next_push_step = sample_push_interval(&mut rng, profile, &cfg.push).map(|s| interval_to_steps(s, dt));
    let (q, qd) = reference(bank, motion, start as u32);
    ChainEnvState {
        prev_action: q.clone(),
        q,
        qd,
        motion,
        start: start as u32,
        frame: start as u32,
        end: end as u32,
        kp,
        kd,
        mass,
        bias,
        step: 0,
        next_push_step,
        last_push: None,
        ep_return: 0.0,
        ep_tracking: 0.0,
        rng,
    }
}

impl VecEnv for ChainTrack {
    fn num_envs(&self) -> usize {
        self.envs.len()
    }

    fn obs_dim(&self) -> usize {
        5 * self.bank.joints()
    }

    fn act_dim(&self) -> usize {
        self.bank.joints()
    }

    fn action_bounds(&self) -> ActionBounds {
        self.bounds.clone()
    }

    fn term_names(&self) -> &'static [&'static str] {
        &CHAIN_TERMS
    }

    /// Sum of the three tracking terms.
    fn tracking_value(&self, terms: &[f64]) -> f64 {
        terms[0] + terms[1] + terms[2]
    }

    fn observations(&self) -> Matrix<f64> {
        let mut m = Matrix::zeros(self.envs.len(), self.obs_dim());
        for i in 0..self.envs.len() {
            m.row_mut(i).copy_from_slice(&self.observe(i));
        }
        m
    }

    fn step(&mut self, actions: &Matrix<f64>) -> Result<StepOutput> {
        let n_envs = self.envs.len();
        let n = self.bank.joints();
        let obs_dim = self.obs_dim();
        check_actions(actions, n_envs, n)?;
        let w = &self.cfg.weights;
        let weights = [
            w.joint_pos_track,
            w.joint_vel_track,
            w.end_effector_track,
            w.action_rate_pen,
            w.alive,
        ];
        let mut out = StepOutput {
            obs: Matrix::zeros(n_envs, obs_dim),
            next_obs: Matrix::zeros(n_envs, obs_dim),
            reward: vec![0.0; n_envs],
            terms: Matrix::zeros(n_envs, CHAIN_TERMS.len()),
            weights: weights.to_vec(),
            terminated: vec![false; n_envs],
            truncated: vec![false; n_envs],
            reasons: vec![None; n_envs],
            episodes: Vec::new(),
            incidents: 0,
        };
        let dt = 1.0 / self.bank.rate;
        let cfg = &self.cfg;
        let bank = &self.bank;
        let profile = self.push_profile;
        let results = par_map_envs(&mut self.envs, self.workers, |i, s| {
            let a = actions.row(i);
            for j in 0..n {
                let tau =
                    (s.kp * (a[j] + s.bias[j] - s.q[j]) - s.kd * s.qd[j]).clamp(-cfg.torque_limit, cfg.torque_limit);
                s.qd[j] += dt * tau / s.mass;
                s.q[j] += dt * s.qd[j];
                if s.q[j].abs() > cfg.joint_limit {
                    s.q[j] = s.q[j].clamp(-cfg.joint_limit, cfg.joint_limit);
                    s.qd[j] = 0.0;
                }
            }
            s.step += 1;
            s.frame += 1;
            s.last_push = None;
            if s.next_push_step == Some(s.step) {
                let dir: Vec<f64> = (0..n).map(|_| StandardNormal.sample(&mut s.rng)).collect();
                let norm = dir.iter().map(|x| x * x).sum::<f64>().sqrt().max(f64::MIN_POSITIVE);
                let mag = cfg.push.magnitude.sample(&mut s.rng);
                let kick: Vec<f64> = dir.iter().map(|x| mag * x / norm).collect();
                for (v, k) in s.qd.iter_mut().zip(&kick) {
                    *v += k;
                }
                s.last_push = Some(kick);
                s.next_push_step =
                    sample_push_interval(&mut s.rng, profile, &cfg.push).map(|sec| s.step + interval_to_steps(sec, dt));
            }

            let (q_ref, qd_ref) = reference(bank, s.motion, s.frame);
            let terms = chain_rewards(&s.q, &s.qd, &q_ref, &qd_ref, a, &s.prev_action, cfg);
            s.prev_action.copy_from_slice(a);
            let finite = s.is_finite() && terms.iter().all(|t| t.is_finite());
            let terms = if finite { terms } else { [0.0; 5] };
            let reward: f64 = weights.iter().zip(&terms).map(|(w, t)| w * t).sum();
            let deviation = s.q.iter().zip(&q_ref).map(|(x, r)| (x - r).abs()).fold(0.0, f64::max);
            let reason = if !finite {
                Some(TerminationReason::NonFinite)
            } else if deviation > cfg.termination_threshold {
                Some(TerminationReason::Tracking)
            } else {
                None
            };
            let truncated = reason.is_none() && s.frame >= s.end;
            s.ep_return += reward;
            s.ep_tracking += terms[0] + terms[1] + terms[2];

            let next_obs = finite.then(|| observe(s, bank));
            let episode = (reason.is_some() || truncated).then(|| {
                let summary = EpisodeSummary {
                    env: i,
                    length: s.step,
                    ret: s.ep_return,
                    mean_tracking: s.ep_tracking / s.step as f64,
                    completed: truncated,
                    reason,
                };
                let rng = s.rng.clone();
                *s = fresh_state(cfg, bank, profile, rng);
                summary
            });
            let obs = observe(s, bank);
            ChainStep {
                next_obs: next_obs.unwrap_or_else(|| obs.clone()),
                obs,
                terms,
                reward,
                reason,
                truncated,
                episode,
            }
        });
        for (i, r) in results.into_iter().enumerate() {
            out.next_obs.row_mut(i).copy_from_slice(&r.next_obs);
            out.obs.row_mut(i).copy_from_slice(&r.obs);
            out.terms.row_mut(i).copy_from_slice(&r.terms);
            out.reward[i] = r.reward;
            out.terminated[i] = r.reason.is_some();
            out.truncated[i] = r.truncated;
            out.reasons[i] = r.reason;
            if r.reason == Some(TerminationReason::NonFinite) {
                out.incidents += 1;
            }
            out.episodes.extend(r.episode);
        }
        Ok(out)
    }

    fn set_push_profile(&mut self, profile: PushProfile) {
        if profile == self.push_profile {
            return;
        }
        self.push_profile = profile;
        let dt = 1.0 / self.bank.rate;
        for s in &mut self.envs {
            s.next_push_step = sample_push_interval(&mut s.rng, profile, &self.cfg.push)
                .map(|sec| s.step + interval_to_steps(sec, dt));
        }
    }

    fn curriculum_ramp(&self) -> f64 {
        1.0
    }

    fn save_state(&self) -> Result<Vec<u8>> {
        serde_json::to_vec(&self.snapshot()).map_err(|e| EnvError::Snapshot(e.to_string()))
    }

    fn load_state(&mut self, bytes: &[u8]) -> Result<()> {
        let snap: ChainSnapshot = serde_json::from_slice(bytes).map_err(|e| EnvError::Snapshot(e.to_string()))?;
        self.restore(snap)
    }
}
