use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Closed interval `[lo, hi]`; written as a two-element array in config files.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "[f64; 2]", into = "[f64; 2]")]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

impl From<[f64; 2]> for Interval {
    fn from(v: [f64; 2]) -> Self {
        Self { lo: v[0], hi: v[1] }
    }
}

impl From<Interval> for [f64; 2] {
    fn from(i: Interval) -> Self {
        [i.lo, i.hi]
    }
}

impl Interval {
    pub const fn new(lo: f64, hi: f64) -> Self {
        Self { lo, hi }
    }

    pub const fn point(v: f64) -> Self {
        Self { lo: v, hi: v }
    }

    pub fn is_valid(&self) -> bool {
        self.lo.is_finite() && self.hi.is_finite() && self.lo <= self.hi
    }

    pub fn contains(&self, v: f64) -> bool {
        self.lo <= v && v <= self.hi
    }

    /// Uniform draw; a collapsed interval returns its point without consuming randomness.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        if self.lo == self.hi {
            self.lo
        } else {
            rng.random_range(self.lo..=self.hi)
        }
    }
}

/// The generator for environment `stream` of a run seeded with `seed`.
pub fn env_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CommandConfig {
    pub vx: Interval,
    pub vy: Interval,
    pub yaw: Interval,
    pub zero_prob: f64,
    pub resample_steps: u32,
}

impl Default for CommandConfig {
    fn default() -> Self {
        Self {
            vx: Interval::new(-1.0, 1.0),
            vy: Interval::new(-0.5, 0.5),
            yaw: Interval::new(-1.0, 1.0),
            zero_prob: 0.2,
            resample_steps: 500,
        }
    }
}

/// `(v_x*, v_y*, ω*)`, zeroed as a whole with probability `zero_prob`.
pub fn sample_command<R: Rng + ?Sized>(rng: &mut R, cfg: &CommandConfig) -> [f64; 3] {
    if rng.random::<f64>() < cfg.zero_prob {
        return [0.0; 3];
    }
    [cfg.vx.sample(rng), cfg.vy.sample(rng), cfg.yaw.sample(rng)]
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PushProfile {
    Off,
    Normal,
    Strong,
}

impl std::str::FromStr for PushProfile {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "off" => Ok(PushProfile::Off),
            "normal" => Ok(PushProfile::Normal),
            "strong" => Ok(PushProfile::Strong),
            other => Err(format!(
                "unknown push profile `{other}` (expected off, normal or strong)"
            )),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PushConfig {
    /// Seconds between pushes under the normal profile.
    pub normal_interval: Interval,
    /// Seconds between pushes under the strong profile.
    pub strong_interval: Interval,
    /// Impulse magnitude (velocity units).
    pub magnitude: Interval,
}

impl Default for PushConfig {
    fn default() -> Self {
        Self {
            normal_interval: Interval::new(5.0, 10.0),
            strong_interval: Interval::new(1.0, 3.0),
            magnitude: Interval::new(0.5, 1.5),
        }
    }
}

/// Seconds until the next push, or `None` when pushes are off.
pub fn sample_push_interval<R: Rng + ?Sized>(rng: &mut R, profile: PushProfile, cfg: &PushConfig) -> Option<f64> {
    match profile {
        PushProfile::Off => None,
        PushProfile::Normal => Some(cfg.normal_interval.sample(rng)),
        PushProfile::Strong => Some(cfg.strong_interval.sample(rng)),
    }
}

/// Planar impulse with uniform direction and magnitude drawn from `magnitude`.
pub fn sample_push_impulse<R: Rng + ?Sized>(rng: &mut R, magnitude: Interval) -> [f64; 2] {
    let angle = rng.random_range(0.0..std::f64::consts::TAU);
    let m = magnitude.sample(rng);
    [m * angle.cos(), m * angle.sin()]
}

pub(crate) fn interval_to_steps(seconds: f64, dt: f64) -> u32 {
    ((seconds / dt).round() as u32).max(1)
}
