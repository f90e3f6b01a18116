//! Planar locomotion analog.
//!
//! Observation layout (24):
//!
//! | index | content |
//! |-------|---------|
//! | 0..3   | command `(v_x*, v_y*, ω*)` |
//! | 3      | posture height `1 − Σ wᵢqᵢ²` (terrain slope excluded) |
//! | 4..6   | body-frame velocity |
//! | 6      | yaw rate |
//! | 7..11  | joint angles `[L pitch, R pitch, L roll, R roll]` |
//! | 11..15 | joint velocities |
//! | 15..22 | previous action |
//! | 22..24 | `sin 2πφ`, `cos 2πφ` |
//!
//! Action layout (7): body force `(f_x, f_y)`, yaw torque, four joint PD targets.
//! Roll angles share one body-frame sign convention, so mirroring negates and swaps them.

use std::ops::Range;

use fastrl_core::{compute_action_bounds, ActionBounds, Matrix, Minibatch, Scalar};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::curriculum::Curriculum;
use crate::random::{
    env_rng, interval_to_steps, sample_command, sample_push_impulse, sample_push_interval, CommandConfig, Interval,
    PushConfig, PushProfile,
};
use crate::{
    check_actions, default_workers, par_map_envs, EnvError, EpisodeSummary, Result, StepOutput, TerminationReason,
    VecEnv,
};

pub const LOCO_OBS_DIM: usize = 24;
pub const LOCO_ACT_DIM: usize = 7;
pub const LOCO_TERMS: [&str; 8] = [
    "lin_vel_track",
    "ang_vel_track",
    "foot_height_track",
    "default_pose_pen",
    "feet_pen",
    "alive",
    "upright_pen",
    "action_rate_pen",
];

/// Indices into [`LOCO_TERMS`] that the curriculum ramps.
const PENALTY_TERMS: [usize; 4] = [3, 4, 6, 7];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LocoWeights {
    pub lin_vel_track: f64,
    pub ang_vel_track: f64,
    pub foot_height_track: f64,
    pub default_pose_pen: f64,
    pub feet_pen: f64,
    pub alive: f64,
    pub upright_pen: f64,
    pub action_rate_pen: f64,
}

impl Default for LocoWeights {
    fn default() -> Self {
        Self {
            lin_vel_track: 1.0,
            ang_vel_track: 0.5,
            foot_height_track: 0.2,
            default_pose_pen: 0.5,
            feet_pen: 1.0,
            alive: 0.5,
            upright_pen: 2.0,
            action_rate_pen: 0.01,
        }
    }
}

impl LocoWeights {
    fn as_array(&self) -> [f64; 8] {
        [
            self.lin_vel_track,
            self.ang_vel_track,
            self.foot_height_track,
            self.default_pose_pen,
            self.feet_pen,
            self.alive,
            self.upright_pen,
            self.action_rate_pen,
        ]
    }
}

/// Dynamics randomization applied at every reset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LocoDr {
    pub mass_scale: Interval,
    pub damping_scale: Interval,
    pub kp_scale: Interval,
    pub kd_scale: Interval,
    /// Center-of-mass offset per axis; used only when `com_enabled`.
    pub com_offset: Interval,
    pub com_enabled: bool,
    /// Probability that an episode runs on a slope.
    pub rough_prob: f64,
    pub slope: Interval,
    /// Probability that an episode applies actions one step late.
    pub action_delay_prob: f64,
}

impl Default for LocoDr {
    fn default() -> Self {
        Self {
            mass_scale: Interval::new(0.8, 1.2),
            damping_scale: Interval::new(0.8, 1.2),
            kp_scale: Interval::new(0.8, 1.2),
            kd_scale: Interval::new(0.8, 1.2),
            com_offset: Interval::new(-0.1, 0.1),
            com_enabled: false,
            rough_prob: 0.5,
            slope: Interval::new(-0.15, 0.15),
            action_delay_prob: 0.5,
        }
    }
}

impl LocoDr {
    /// Every range collapsed to its nominal value.
    pub fn nominal() -> Self {
        Self {
            mass_scale: Interval::point(1.0),
            damping_scale: Interval::point(1.0),
            kp_scale: Interval::point(1.0),
            kd_scale: Interval::point(1.0),
            com_offset: Interval::point(0.0),
            com_enabled: false,
            rough_prob: 0.0,
            slope: Interval::point(0.0),
            action_delay_prob: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LocoConfig {
    pub dt: f64,
    pub max_steps: u32,
    pub mass: f64,
    pub damping: f64,
    pub kp: f64,
    pub kd: f64,
    pub torque_limit: f64,
    pub force_limit: f64,
    pub yaw_torque_limit: f64,
    pub pitch_limit: f64,
    pub roll_limit: f64,
    /// Joint bias per unit center-of-mass offset.
    pub com_joint_gain: f64,
    /// Body-frame force per unit center-of-mass offset.
    pub com_force_gain: f64,
    /// Joint velocity kick per unit body-frame push.
    pub push_joint_gain: f64,
    pub fall_height: f64,
    pub height_weights: [f64; 4],
    pub gait_freq: f64,
    pub foot_amplitude: f64,
    pub sigma2_lin: f64,
    pub sigma2_ang: f64,
    pub sigma2_foot: f64,
    pub weights: LocoWeights,
    pub curriculum: bool,
    pub curriculum_l_ref: f64,
    pub curriculum_decay: f64,
    pub command: CommandConfig,
    pub push: PushConfig,
    pub push_profile: PushProfile,
    pub dr: LocoDr,
}

impl Default for LocoConfig {
    fn default() -> Self {
        Self {
            dt: 0.02,
            max_steps: 1000,
            mass: 1.0,
            damping: 1.0,
            kp: 25.0,
            kd: 1.5,
            torque_limit: 20.0,
            force_limit: 2.0,
            yaw_torque_limit: 2.0,
            pitch_limit: 0.6,
            roll_limit: 0.4,
            com_joint_gain: 1.0,
            com_force_gain: 1.0,
            push_joint_gain: 2.5,
            fall_height: 0.5,
            height_weights: [1.0; 4],
            gait_freq: 1.25,
            foot_amplitude: 0.3,
            sigma2_lin: 0.25,
            sigma2_ang: 0.25,
            sigma2_foot: 0.01,
            weights: LocoWeights::default(),
            curriculum: true,
            curriculum_l_ref: 500.0,
            curriculum_decay: 0.99,
            command: CommandConfig::default(),
            push: PushConfig::default(),
            push_profile: PushProfile::Normal,
            dr: LocoDr::default(),
        }
    }
}

impl LocoConfig {
    /// Deterministic dynamics: randomization collapsed and pushes off.
    pub fn nominal() -> Self {
        Self {
            dr: LocoDr::nominal(),
            push_profile: PushProfile::Off,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(EnvError::Config(format!("loco: {msg}")));
        let positive = [
            ("dt", self.dt),
            ("mass", self.mass),
            ("kp", self.kp),
            ("torque_limit", self.torque_limit),
            ("force_limit", self.force_limit),
            ("yaw_torque_limit", self.yaw_torque_limit),
            ("pitch_limit", self.pitch_limit),
            ("roll_limit", self.roll_limit),
            ("sigma2_lin", self.sigma2_lin),
            ("sigma2_ang", self.sigma2_ang),
            ("sigma2_foot", self.sigma2_foot),
            ("curriculum_l_ref", self.curriculum_l_ref),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return bad(&format!("{name} must be positive, got {v}"));
            }
        }
        if self.max_steps == 0 || self.command.resample_steps == 0 {
            return bad("max_steps and command.resample_steps must be positive");
        }
        if !(0.0..=1.0).contains(&self.curriculum_decay) {
            return bad("curriculum_decay must lie in [0, 1]");
        }
        for (name, p) in [
            ("command.zero_prob", self.command.zero_prob),
            ("dr.rough_prob", self.dr.rough_prob),
            ("dr.action_delay_prob", self.dr.action_delay_prob),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return bad(&format!("{name} must lie in [0, 1], got {p}"));
            }
        }
        for (name, i) in [
            ("command.vx", self.command.vx),
            ("command.vy", self.command.vy),
            ("command.yaw", self.command.yaw),
            ("push.normal_interval", self.push.normal_interval),
            ("push.strong_interval", self.push.strong_interval),
            ("push.magnitude", self.push.magnitude),
            ("dr.mass_scale", self.dr.mass_scale),
            ("dr.damping_scale", self.dr.damping_scale),
            ("dr.kp_scale", self.dr.kp_scale),
            ("dr.kd_scale", self.dr.kd_scale),
            ("dr.com_offset", self.dr.com_offset),
            ("dr.slope", self.dr.slope),
        ] {
            if !i.is_valid() {
                return bad(&format!("{name} must be a finite [lo, hi] with lo ≤ hi"));
            }
        }
        if self.dr.mass_scale.lo <= 0.0 || self.push.normal_interval.lo <= 0.0 || self.push.strong_interval.lo <= 0.0 {
            return bad("mass scale and push intervals must be positive");
        }
        Ok(())
    }

    fn joint_limits(&self) -> [f64; 4] {
        [self.pitch_limit, self.pitch_limit, self.roll_limit, self.roll_limit]
    }

    pub fn action_bounds(&self) -> ActionBounds {
        let j = self.joint_limits();
        let upper = [
            self.force_limit,
            self.force_limit,
            self.yaw_torque_limit,
            j[0],
            j[1],
            j[2],
            j[3],
        ];
        let lower: Vec<f64> = upper.iter().map(|u| -u).collect();
        compute_action_bounds(&lower, &upper, &[0.0; LOCO_ACT_DIM]).expect("validated limits are positive")
    }
}

/// Dynamic state of one environment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocoEnvState {
    pub p: [f64; 2],
    pub v: [f64; 2],
    pub theta: f64,
    pub omega: f64,
    pub q: [f64; 4],
    pub qd: [f64; 4],
    pub phase: f64,
    pub prev_action: [f64; 7],
    pub pending: [f64; 7],
    pub cmd: [f64; 3],
    pub step: u32,
    pub next_push_step: Option<u32>,
    /// World-frame impulse applied on the latest step, if any.
    pub last_push: Option<[f64; 2]>,
    pub mass: f64,
    pub damping: f64,
    pub kp: f64,
    pub kd: f64,
    pub com: [f64; 2],
    pub slope: f64,
    pub delayed: bool,
    pub ep_return: f64,
    pub ep_tracking: f64,
    pub rng: ChaCha8Rng,
}

impl LocoEnvState {
    pub fn body_velocity(&self) -> [f64; 2] {
        rotate(self.v, -self.theta)
    }

    /// Terrain-aware height used for falls and the upright penalty.
    pub fn height(&self, cfg: &LocoConfig) -> f64 {
        height(&self.q, self.slope, &cfg.height_weights)
    }

    pub fn is_finite(&self) -> bool {
        self.p
            .iter()
            .chain(&self.v)
            .chain(&self.q)
            .chain(&self.qd)
            .all(|x| x.is_finite())
            && self.theta.is_finite()
            && self.omega.is_finite()
            && self.phase.is_finite()
            && self.prev_action.iter().chain(&self.pending).all(|x| x.is_finite())
    }

    pub fn observe(&self, cfg: &LocoConfig) -> [f64; LOCO_OBS_DIM] {
        let mut o = [0.0; LOCO_OBS_DIM];
        o[0..3].copy_from_slice(&self.cmd);
        o[3] = height(&self.q, 0.0, &cfg.height_weights);
        o[4..6].copy_from_slice(&self.body_velocity());
        o[6] = self.omega;
        o[7..11].copy_from_slice(&self.q);
        o[11..15].copy_from_slice(&self.qd);
        o[15..22].copy_from_slice(&self.prev_action);
        let angle = std::f64::consts::TAU * self.phase;
        o[22] = angle.sin();
        o[23] = angle.cos();
        o
    }

    fn kinematics(&self) -> Kinematics {
        Kinematics {
            v_body: self.body_velocity(),
            omega: self.omega,
            q: self.q,
            phase: self.phase,
            slope: self.slope,
        }
    }
}

/// Quantities the reward reads from the state.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Kinematics {
    pub v_body: [f64; 2],
    pub omega: f64,
    pub q: [f64; 4],
    pub phase: f64,
    pub slope: f64,
}

impl Kinematics {
    pub fn mirrored(&self) -> Self {
        Self {
            v_body: [self.v_body[0], -self.v_body[1]],
            omega: -self.omega,
            q: mirror_joints(self.q),
            phase: self.phase,
            slope: self.slope,
        }
    }
}

fn rotate(v: [f64; 2], angle: f64) -> [f64; 2] {
    let (s, c) = angle.sin_cos();
    [c * v[0] - s * v[1], s * v[0] + c * v[1]]
}

fn wrap_angle(a: f64) -> f64 {
    let w = (a + std::f64::consts::PI).rem_euclid(std::f64::consts::TAU) - std::f64::consts::PI;
    if w.is_finite() {
        w
    } else {
        a
    }
}

fn height(q: &[f64; 4], slope: f64, w: &[f64; 4]) -> f64 {
    let offset = [slope, slope, 0.0, 0.0];
    1.0 - (0..4).map(|i| w[i] * (q[i] - offset[i]).powi(2)).sum::<f64>()
}

fn mirror_joints<T: Copy + std::ops::Neg<Output = T>>(q: [T; 4]) -> [T; 4] {
    [q[1], q[0], -q[3], -q[2]]
}

/// Raw reward terms in [`LOCO_TERMS`] order.
pub fn compute_rewards(
    k: &Kinematics,
    action: &[f64; 7],
    prev_action: &[f64; 7],
    cmd: &[f64; 3],
    cfg: &LocoConfig,
) -> [f64; 8] {
    let dvx = k.v_body[0] - cmd[0];
    let dvy = k.v_body[1] - cmd[1];
    let lin = (-(dvx * dvx + dvy * dvy) / cfg.sigma2_lin).exp();
    let dw = k.omega - cmd[2];
    let ang = (-(dw * dw) / cfg.sigma2_ang).exp();
    let target = cfg.foot_amplitude * (std::f64::consts::PI * k.phase).sin().powi(2);
    let df = (k.q[0] - k.q[1]).abs() - target;
    let foot = (-(df * df) / cfg.sigma2_foot).exp();
    let pose = -k.q.iter().map(|x| x * x).sum::<f64>();
    let feet = -(k.q[2] * k.q[3]).max(0.0);
    let h = height(&k.q, k.slope, &cfg.height_weights);
    let upright = -(1.0 - h).powi(2);
    let rate = -action
        .iter()
        .zip(prev_action)
        .map(|(a, b)| (a - b).powi(2))
        .sum::<f64>();
    [lin, ang, foot, pose, feet, 1.0, upright, rate]
}

/// Term weights after the curriculum ramp.
pub fn ramped_weights(weights: &LocoWeights, ramp: f64) -> [f64; 8] {
    let mut w = weights.as_array();
    for &i in &PENALTY_TERMS {
        w[i] *= ramp;
    }
    w
}

/// Mirrors one observation row in place.
pub fn mirror_obs<T: Copy + std::ops::Neg<Output = T>>(o: &mut [T]) {
    for i in [1, 2, 5, 6] {
        o[i] = -o[i];
    }
    for base in [7, 11] {
        let q = mirror_joints([o[base], o[base + 1], o[base + 2], o[base + 3]]);
        o[base..base + 4].copy_from_slice(&q);
    }
    mirror_action(&mut o[15..22]);
}

/// Mirrors one action row in place (absolute or normalized).
pub fn mirror_action<T: Copy + std::ops::Neg<Output = T>>(a: &mut [T]) {
    a[1] = -a[1];
    a[2] = -a[2];
    let q = mirror_joints([a[3], a[4], a[5], a[6]]);
    a[3..7].copy_from_slice(&q);
}

/// Left/right mirror of a batch of PlanarLoco transitions; rewards and done flags are unchanged.
pub fn mirror_transition<T: Scalar>(batch: &Minibatch<T>) -> Minibatch<T> {
    let mut out = batch.clone();
    for r in 0..out.len() {
        mirror_obs(out.obs.row_mut(r));
        mirror_obs(out.next_obs.row_mut(r));
        mirror_action(out.action.row_mut(r));
    }
    out
}

fn mirror_cmd(c: &[f64; 3]) -> [f64; 3] {
    [c[0], -c[1], -c[2]]
}

fn mirror_action_array(a: &[f64; 7]) -> [f64; 7] {
    let mut m = *a;
    mirror_action(&mut m);
    m
}

/// Rewards of the mirrored inputs; equal to [`compute_rewards`] on the originals.
pub fn compute_rewards_mirrored(
    k: &Kinematics,
    action: &[f64; 7],
    prev_action: &[f64; 7],
    cmd: &[f64; 3],
    cfg: &LocoConfig,
) -> [f64; 8] {
    compute_rewards(
        &k.mirrored(),
        &mirror_action_array(action),
        &mirror_action_array(prev_action),
        &mirror_cmd(cmd),
        cfg,
    )
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocoSnapshot {
    pub envs: Vec<LocoEnvState>,
    pub curriculum: Curriculum,
    pub push_profile: PushProfile,
}

pub struct PlanarLoco {
    cfg: LocoConfig,
    envs: Vec<LocoEnvState>,
    curriculum: Curriculum,
    push_profile: PushProfile,
    bounds: ActionBounds,
    workers: usize,
}

impl PlanarLoco {
    pub fn new(cfg: LocoConfig, num_envs: usize, seed: u64) -> Result<Self> {
        Self::with_streams(cfg, seed, 0..num_envs as u64)
    }

    /// Envs drawing from the given substreams of `seed`, one per stream.
    pub fn with_streams(cfg: LocoConfig, seed: u64, streams: Range<u64>) -> Result<Self> {
        cfg.validate()?;
        if streams.is_empty() {
            return Err(EnvError::Config("loco: need at least one env".into()));
        }
        let push_profile = cfg.push_profile;
        let envs = streams
            .map(|s| fresh_state(&cfg, push_profile, env_rng(seed, s)))
            .collect();
        Ok(Self {
            curriculum: Curriculum::new(cfg.curriculum_l_ref, cfg.curriculum_decay, cfg.curriculum),
            bounds: cfg.action_bounds(),
            cfg,
            envs,
            push_profile,
            workers: default_workers(),
        })
    }

    /// Caps stepping threads; outputs do not depend on the count.
    pub fn with_workers(mut self, workers: usize) -> Self {
        self.workers = workers.max(1);
        self
    }

    pub fn config(&self) -> &LocoConfig {
        &self.cfg
    }

    pub fn states(&self) -> &[LocoEnvState] {
        &self.envs
    }

    pub fn state_mut(&mut self, i: usize) -> &mut LocoEnvState {
        &mut self.envs[i]
    }

    pub fn curriculum(&self) -> &Curriculum {
        &self.curriculum
    }

    pub fn snapshot(&self) -> LocoSnapshot {
        LocoSnapshot {
            envs: self.envs.clone(),
            curriculum: self.curriculum.clone(),
            push_profile: self.push_profile,
        }
    }

    pub fn restore(&mut self, snap: LocoSnapshot) -> Result<()> {
        if snap.envs.len() != self.envs.len() {
            return Err(EnvError::Snapshot(format!(
                "snapshot holds {} envs, expected {}",
                snap.envs.len(),
                self.envs.len()
            )));
        }
        self.envs = snap.envs;
        self.curriculum = snap.curriculum;
        self.push_profile = snap.push_profile;
        Ok(())
    }
}

fn step_env(
    cfg: &LocoConfig,
    profile: PushProfile,
    i: usize,
    s: &mut LocoEnvState,
    action: [f64; 7],
    ramp_weights: &[f64; 8],
) -> EnvStep {
    let applied = if s.delayed { s.pending } else { action };
    s.pending = action;
    integrate(s, &applied, cfg);
    s.step += 1;
    s.last_push = None;
    if s.next_push_step == Some(s.step) {
        apply_push(s, cfg, profile);
    }

    let terms = compute_rewards(&s.kinematics(), &action, &s.prev_action, &s.cmd, cfg);
    s.prev_action = action;
    let finite = s.is_finite() && terms.iter().all(|t| t.is_finite());
    let reward: f64 = if finite {
        ramp_weights.iter().zip(&terms).map(|(w, t)| w * t).sum()
    } else {
        0.0
    };
    let terms = if finite { terms } else { [0.0; 8] };

    let reason = if !finite {
        Some(TerminationReason::NonFinite)
    } else if s.height(cfg) < cfg.fall_height {
        Some(TerminationReason::Fall)
    } else {
        None
    };
    let truncated = reason.is_none() && s.step >= cfg.max_steps;
    if reason.is_none() && !truncated && s.step % cfg.command.resample_steps == 0 {
        s.cmd = sample_command(&mut s.rng, &cfg.command);
    }
    s.ep_return += reward;
    s.ep_tracking += terms[0];

    let next_obs = if finite { s.observe(cfg) } else { [0.0; LOCO_OBS_DIM] };
    let mut episode = None;
    if reason.is_some() || truncated {
        episode = Some(EpisodeSummary {
            env: i,
            length: s.step,
            ret: s.ep_return,
            mean_tracking: s.ep_tracking / s.step as f64,
            completed: truncated,
            reason,
        });
        let rng = s.rng.clone();
        *s = fresh_state(cfg, profile, rng);
    }
    let next_obs = if finite { next_obs } else { s.observe(cfg) };
    EnvStep {
        next_obs,
        obs: s.observe(cfg),
        terms,
        reward,
        reason,
        truncated,
        episode,
    }
}

struct EnvStep {
    next_obs: [f64; LOCO_OBS_DIM],
    obs: [f64; LOCO_OBS_DIM],
    terms: [f64; 8],
    reward: f64,
    reason: Option<TerminationReason>,
    truncated: bool,
    episode: Option<EpisodeSummary>,
}

fn fresh_state(cfg: &LocoConfig, profile: PushProfile, mut rng: ChaCha8Rng) -> LocoEnvState {
    let dr = &cfg.dr;
    let mass = cfg.mass * dr.mass_scale.sample(&mut rng);
    let damping = cfg.damping * dr.damping_scale.sample(&mut rng);
    let kp = cfg.kp * dr.kp_scale.sample(&mut rng);
    let kd = cfg.kd * dr.kd_scale.sample(&mut rng);
    let com = if dr.com_enabled {
        [dr.com_offset.sample(&mut rng), dr.com_offset.sample(&mut rng)]
    } else {
        [0.0; 2]
    };
    let slope = if dr.rough_prob > 0.0 && rng.random::<f64>() < dr.rough_prob {
        dr.slope.sample(&mut rng)
    } else {
        0.0
    };
    let delayed = dr.action_delay_prob > 0.0 && rng.random::<f64>() < dr.action_delay_prob;
    let cmd = sample_command(&mut rng, &cfg.command);
    let next_push_step = sample_push_interval(&mut rng, profile, &cfg.push).map(|s| interval_to_steps(s, cfg.dt));
    LocoEnvState {
        p: [0.0; 2],
        v: [0.0; 2],
        theta: 0.0,
        omega: 0.0,
        q: [0.0; 4],
        qd: [0.0; 4],
        phase: 0.0,
        prev_action: [0.0; 7],
        pending: [0.0; 7],
        cmd,
        step: 0,
        next_push_step,
        last_push: None,
        mass,
        damping,
        kp,
        kd,
        com,
        slope,
        delayed,
        ep_return: 0.0,
        ep_tracking: 0.0,
        rng,
    }
}

/// One semi-implicit Euler step of body, yaw and joint dynamics.
fn integrate(s: &mut LocoEnvState, a: &[f64; 7], cfg: &LocoConfig) {
    let dt = cfg.dt;
    let f_body = [
        a[0] + cfg.com_force_gain * s.com[0],
        a[1] + cfg.com_force_gain * s.com[1],
    ];
    let f = rotate(f_body, s.theta);
    for k in 0..2 {
        s.v[k] += dt * (f[k] - s.damping * s.v[k]) / s.mass;
        s.p[k] += dt * s.v[k];
    }
    s.omega += dt * (a[2] - s.damping * s.omega) / s.mass;
    s.theta = wrap_angle(s.theta + dt * s.omega);

    let bias = [s.com[0], s.com[0], s.com[1], s.com[1]].map(|c| cfg.com_joint_gain * c);
    let limits = cfg.joint_limits();
    for j in 0..4 {
        let tau = (s.kp * (a[3 + j] - s.q[j] - bias[j]) - s.kd * s.qd[j]).clamp(-cfg.torque_limit, cfg.torque_limit);
        s.qd[j] += dt * tau;
        s.q[j] += dt * s.qd[j];
        if s.q[j].abs() > limits[j] {
            s.q[j] = s.q[j].clamp(-limits[j], limits[j]);
            s.qd[j] = 0.0;
        }
    }
    let phase = (s.phase + dt * cfg.gait_freq).fract();
    s.phase = if phase.is_finite() { phase } else { s.phase };
}

fn apply_push(s: &mut LocoEnvState, cfg: &LocoConfig, profile: PushProfile) {
    let dv = sample_push_impulse(&mut s.rng, cfg.push.magnitude);
    s.v[0] += dv[0];
    s.v[1] += dv[1];
    let b = rotate(dv, -s.theta);
    let c = cfg.push_joint_gain;
    s.qd[0] += c * b[0];
    s.qd[1] += c * b[0];
    s.qd[2] += c * b[1];
    s.qd[3] += c * b[1];
    s.last_push = Some(dv);
    s.next_push_step =
        sample_push_interval(&mut s.rng, profile, &cfg.push).map(|sec| s.step + interval_to_steps(sec, cfg.dt));
}

impl VecEnv for PlanarLoco {
    fn num_envs(&self) -> usize {
        self.envs.len()
    }

    fn obs_dim(&self) -> usize {
        LOCO_OBS_DIM
    }

    fn act_dim(&self) -> usize {
        LOCO_ACT_DIM
    }

    fn action_bounds(&self) -> ActionBounds {
        self.bounds.clone()
    }

    fn term_names(&self) -> &'static [&'static str] {
        &LOCO_TERMS
    }

    fn tracking_value(&self, terms: &[f64]) -> f64 {
        terms[0]
    }

    fn observations(&self) -> Matrix<f64> {
        let mut m = Matrix::zeros(self.envs.len(), LOCO_OBS_DIM);
        for (i, s) in self.envs.iter().enumerate() {
            m.row_mut(i).copy_from_slice(&s.observe(&self.cfg));
        }
        m
    }

    fn step(&mut self, actions: &Matrix<f64>) -> Result<StepOutput> {
        let n = self.envs.len();
        check_actions(actions, n, LOCO_ACT_DIM)?;
        let weights = ramped_weights(&self.cfg.weights, self.curriculum.ramp);
        let mut out = StepOutput {
            obs: Matrix::zeros(n, LOCO_OBS_DIM),
            next_obs: Matrix::zeros(n, LOCO_OBS_DIM),
            reward: vec![0.0; n],
            terms: Matrix::zeros(n, LOCO_TERMS.len()),
            weights: weights.to_vec(),
            terminated: vec![false; n],
            truncated: vec![false; n],
            reasons: vec![None; n],
            episodes: Vec::new(),
            incidents: 0,
        };
        let (cfg, profile) = (&self.cfg, self.push_profile);
        let results = par_map_envs(&mut self.envs, self.workers, |i, s| {
            let mut a = [0.0; LOCO_ACT_DIM];
            a.copy_from_slice(actions.row(i));
            step_env(cfg, profile, i, s, a, &weights)
        });
        for (i, r) in results.into_iter().enumerate() {
            out.obs.row_mut(i).copy_from_slice(&r.obs);
            out.next_obs.row_mut(i).copy_from_slice(&r.next_obs);
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
        let lengths: Vec<u32> = out.episodes.iter().map(|e| e.length).collect();
        self.curriculum.update(&lengths);
        Ok(out)
    }

    fn set_push_profile(&mut self, profile: PushProfile) {
        if profile == self.push_profile {
            return;
        }
        self.push_profile = profile;
        for s in &mut self.envs {
            s.next_push_step = sample_push_interval(&mut s.rng, profile, &self.cfg.push)
                .map(|sec| s.step + interval_to_steps(sec, self.cfg.dt));
        }
    }

    fn curriculum_ramp(&self) -> f64 {
        self.curriculum.ramp
    }

    fn supports_mirror(&self) -> bool {
        true
    }

    fn save_state(&self) -> Result<Vec<u8>> {
        serde_json::to_vec(&self.snapshot()).map_err(|e| EnvError::Snapshot(e.to_string()))
    }

    fn load_state(&mut self, bytes: &[u8]) -> Result<()> {
        let snap: LocoSnapshot = serde_json::from_slice(bytes).map_err(|e| EnvError::Snapshot(e.to_string()))?;
        self.restore(snap)
    }
}
