//! Procedural reference motions and their binary file format.
//!
//! File layout, little-endian: magic `FRMB`, version `u32`, motion count `u32`,
//! joint count `u32`, frame rate `f32`, generation seed `u64`; then per motion a
//! frame count `u32` followed by `frames × joints` `f32` joint angles.

use std::io::{Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::random::{env_rng, Interval};
use crate::{EnvError, Result};

const MAGIC: &[u8; 4] = b"FRMB";
const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BankConfig {
    pub num_motions: usize,
    pub seed: u64,
    pub joints: usize,
    pub rate: f64,
    /// Seconds per motion.
    pub duration: Interval,
    pub max_sinusoids: usize,
    /// Sum of sinusoid amplitudes per joint.
    pub amplitude: Interval,
    /// Hz.
    pub frequency: Interval,
    pub offset: Interval,
}

impl Default for BankConfig {
    fn default() -> Self {
        Self {
            num_motions: 16,
            seed: 7,
            joints: 8,
            rate: 50.0,
            duration: Interval::new(10.0, 30.0),
            max_sinusoids: 4,
            amplitude: Interval::new(0.2, 0.6),
            frequency: Interval::new(0.1, 0.5),
            offset: Interval::new(-0.2, 0.2),
        }
    }
}

impl BankConfig {
    /// Largest joint angle any generated motion can reach.
    pub fn max_abs_angle(&self) -> f64 {
        self.offset.lo.abs().max(self.offset.hi.abs()) + self.amplitude.hi
    }
}

/// One reference trajectory sampled at the bank rate.
#[derive(Debug, Clone, PartialEq)]
pub struct Motion {
    joints: usize,
    angles: Vec<f32>,
    velocities: Vec<f64>,
}

impl Motion {
    fn new(joints: usize, angles: Vec<f32>, rate: f64) -> Self {
        let frames = angles.len() / joints;
        let mut velocities = vec![0.0; angles.len()];
        for f in 1..frames {
            for j in 0..joints {
                let d = angles[f * joints + j] as f64 - angles[(f - 1) * joints + j] as f64;
                velocities[f * joints + j] = d * rate;
            }
        }
        if frames > 1 {
            let (first, rest) = velocities.split_at_mut(joints);
            first.copy_from_slice(&rest[..joints]);
        }
        Self {
            joints,
            angles,
            velocities,
        }
    }

    pub fn frames(&self) -> usize {
        self.angles.len() / self.joints
    }

    pub fn angles(&self, frame: usize) -> impl Iterator<Item = f64> + '_ {
        self.angles[frame * self.joints..(frame + 1) * self.joints]
            .iter()
            .map(|&x| x as f64)
    }

    /// Backward-difference velocity; frame 0 copies frame 1.
    pub fn velocities(&self, frame: usize) -> &[f64] {
        &self.velocities[frame * self.joints..(frame + 1) * self.joints]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MotionBank {
    pub seed: u64,
    pub rate: f64,
    joints: usize,
    motions: Vec<Motion>,
}

impl MotionBank {
    pub fn generate(cfg: &BankConfig) -> Result<Self> {
        let bad = |m: &str| Err(EnvError::Bank(m.to_string()));
        if cfg.num_motions == 0 || cfg.joints == 0 || cfg.max_sinusoids == 0 {
            return bad("motion count, joint count and sinusoid count must be positive");
        }
        if !(cfg.rate > 0.0 && cfg.rate.is_finite()) {
            return bad("rate must be positive");
        }
        for i in [cfg.duration, cfg.amplitude, cfg.frequency, cfg.offset] {
            if !i.is_valid() {
                return bad("ranges must be finite with lo ≤ hi");
            }
        }
        if cfg.duration.lo * cfg.rate < 2.0 || cfg.amplitude.lo < 0.0 || cfg.frequency.lo < 0.0 {
            return bad("motions need two frames and non-negative amplitudes and frequencies");
        }
        let mut rng = env_rng(cfg.seed, 0);
        let motions = (0..cfg.num_motions)
            .map(|_| {
                let frames = (cfg.duration.sample(&mut rng) * cfg.rate).round() as usize;
                let per_joint: Vec<_> = (0..cfg.joints).map(|_| joint_curve(cfg, &mut rng)).collect();
                let mut angles = Vec::with_capacity(frames * cfg.joints);
                for f in 0..frames {
                    let t = f as f64 / cfg.rate;
                    angles.extend(per_joint.iter().map(|c| c.eval(t) as f32));
                }
                Motion::new(cfg.joints, angles, cfg.rate)
            })
            .collect();
        Ok(Self {
            seed: cfg.seed,
            rate: cfg.rate,
            joints: cfg.joints,
            motions,
        })
    }

    pub fn joints(&self) -> usize {
        self.joints
    }

    pub fn len(&self) -> usize {
        self.motions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.motions.is_empty()
    }

    pub fn motion(&self, id: usize) -> &Motion {
        &self.motions[id]
    }

    /// Uniform motion, then a start frame uniform over all frames that leave at least one step.
    pub fn sample_segment<R: Rng + ?Sized>(&self, rng: &mut R) -> (usize, usize) {
        let id = rng.random_range(0..self.motions.len());
        let start = rng.random_range(0..self.motions[id].frames() - 1);
        (id, start)
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(MAGIC)?;
        w.write_u32::<LittleEndian>(VERSION)?;
        w.write_u32::<LittleEndian>(self.motions.len() as u32)?;
        w.write_u32::<LittleEndian>(self.joints as u32)?;
        w.write_f32::<LittleEndian>(self.rate as f32)?;
        w.write_u64::<LittleEndian>(self.seed)?;
        for m in &self.motions {
            w.write_u32::<LittleEndian>(m.frames() as u32)?;
            for &x in &m.angles {
                w.write_f32::<LittleEndian>(x)?;
            }
        }
        Ok(())
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(EnvError::Bank("not a motion bank file (bad magic)".into()));
        }
        let version = r.read_u32::<LittleEndian>()?;
        if version != VERSION {
            return Err(EnvError::Bank(format!("unsupported version {version}")));
        }
        let count = r.read_u32::<LittleEndian>()? as usize;
        let joints = r.read_u32::<LittleEndian>()? as usize;
        let rate = r.read_f32::<LittleEndian>()? as f64;
        let seed = r.read_u64::<LittleEndian>()?;
        if count == 0 || joints == 0 || !(rate > 0.0) {
            return Err(EnvError::Bank("empty bank or non-positive rate".into()));
        }
        let mut motions = Vec::with_capacity(count);
        for _ in 0..count {
            let frames = r.read_u32::<LittleEndian>()? as usize;
            if frames < 2 {
                return Err(EnvError::Bank("motion shorter than two frames".into()));
            }
            let mut angles = vec![0f32; frames * joints];
            r.read_f32_into::<LittleEndian>(&mut angles)?;
            motions.push(Motion::new(joints, angles, rate));
        }
        Ok(Self {
            seed,
            rate,
            joints,
            motions,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path)?;
        let mut w = std::io::BufWriter::new(file);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path)?;
        Self::read_from(std::io::BufReader::new(file))
    }
}

struct JointCurve {
    offset: f64,
    terms: Vec<(f64, f64, f64)>,
}

impl JointCurve {
    fn eval(&self, t: f64) -> f64 {
        self.offset + self.terms.iter().map(|&(a, w, p)| a * (w * t + p).sin()).sum::<f64>()
    }
}

/// Amplitudes are normalized so they sum to the drawn total.
fn joint_curve<R: Rng + ?Sized>(cfg: &BankConfig, rng: &mut R) -> JointCurve {
    let k = rng.random_range(1..=cfg.max_sinusoids);
    let total = cfg.amplitude.sample(rng);
    let raw: Vec<f64> = (0..k).map(|_| rng.random_range(0.1..1.0)).collect();
    let norm: f64 = raw.iter().sum();
    let terms = raw
        .iter()
        .map(|&r| {
            let w = std::f64::consts::TAU * cfg.frequency.sample(rng);
            let p = rng.random_range(0.0..std::f64::consts::TAU);
            (total * r / norm, w, p)
        })
        .collect();
    JointCurve {
        offset: cfg.offset.sample(rng),
        terms,
    }
}
