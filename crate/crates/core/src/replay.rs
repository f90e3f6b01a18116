//! Ring replay buffer fed by lock-stepped parallel environments.

use rand::Rng;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::matrix::Matrix;
use crate::Scalar;

/// Transitions in structure-of-arrays layout. Used both for the per-step
/// batch pushed by the environments and for sampled minibatches.
#[derive(Debug, Clone, PartialEq)]
pub struct Minibatch<T> {
    pub obs: Matrix<T>,
    pub action: Matrix<T>,
    pub next_obs: Matrix<T>,
    pub reward: Vec<T>,
    pub done: Vec<T>,
}

impl<T: Scalar> Minibatch<T> {
    pub fn len(&self) -> usize {
        self.reward.len()
    }

    pub fn is_empty(&self) -> bool {
        self.reward.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        let b = self.reward.len();
        for (what, got) in [
            ("obs rows", self.obs.rows()),
            ("action rows", self.action.rows()),
            ("next_obs rows", self.next_obs.rows()),
            ("done length", self.done.len()),
        ] {
            if got != b {
                return Err(CoreError::Shape { what, expected: b, got });
            }
        }
        if let Some(index) = self.done.iter().position(|&d| d != T::zero() && d != T::one()) {
            return Err(CoreError::Invalid {
                what: "done flags",
                reason: format!("entry {index} is not 0 or 1"),
            });
        }
        Ok(())
    }

    /// Stacks two batches row-wise.
    pub fn concat(&self, other: &Minibatch<T>) -> Result<Minibatch<T>> {
        let mut reward = self.reward.clone();
        reward.extend_from_slice(&other.reward);
        let mut done = self.done.clone();
        done.extend_from_slice(&other.done);
        Ok(Minibatch {
            obs: self.obs.vcat(&other.obs)?,
            action: self.action.vcat(&other.action)?,
            next_obs: self.next_obs.vcat(&other.next_obs)?,
            reward,
            done,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Serialize + DeserializeOwned")]
pub struct ReplayBuffer<T> {
    num_envs: usize,
    capacity: usize,
    obs_dim: usize,
    act_dim: usize,
    obs: Vec<T>,
    action: Vec<T>,
    next_obs: Vec<T>,
    reward: Vec<T>,
    done: Vec<T>,
    cursor: usize,
    fill: usize,
}

impl<T: Scalar> ReplayBuffer<T> {
    pub fn new(num_envs: usize, capacity: usize, obs_dim: usize, act_dim: usize) -> Result<Self> {
        if num_envs == 0 || capacity == 0 {
            return Err(CoreError::Invalid {
                what: "replay buffer",
                reason: "num_envs and capacity must be positive".into(),
            });
        }
        let cells = num_envs * capacity;
        Ok(Self {
            num_envs,
            capacity,
            obs_dim,
            act_dim,
            obs: vec![T::zero(); cells * obs_dim],
            action: vec![T::zero(); cells * act_dim],
            next_obs: vec![T::zero(); cells * obs_dim],
            reward: vec![T::zero(); cells],
            done: vec![T::zero(); cells],
            cursor: 0,
            fill: 0,
        })
    }

    pub fn num_envs(&self) -> usize {
        self.num_envs
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn fill(&self) -> usize {
        self.fill
    }

    pub fn cursor(&self) -> usize {
        self.cursor
    }

    pub fn len(&self) -> usize {
        self.fill * self.num_envs
    }

    pub fn is_empty(&self) -> bool {
        self.fill == 0
    }

    #[inline]
    fn cell(&self, env: usize, slot: usize) -> usize {
        env * self.capacity + slot
    }

    /// Writes one transition per environment at the cursor and advances it.
    pub fn push(&mut self, batch: &Minibatch<T>) -> Result<()> {
        batch.validate()?;
        if batch.len() != self.num_envs {
            return Err(CoreError::Shape {
                what: "pushed batch width",
                expected: self.num_envs,
                got: batch.len(),
            });
        }
        for (what, m, dim) in [
            ("obs width", &batch.obs, self.obs_dim),
            ("next_obs width", &batch.next_obs, self.obs_dim),
            ("action width", &batch.action, self.act_dim),
        ] {
            if m.cols() != dim {
                return Err(CoreError::Shape {
                    what,
                    expected: dim,
                    got: m.cols(),
                });
            }
        }
        let (od, ad) = (self.obs_dim, self.act_dim);
        for env in 0..self.num_envs {
            let c = self.cell(env, self.cursor);
            self.obs[c * od..(c + 1) * od].copy_from_slice(batch.obs.row(env));
            self.next_obs[c * od..(c + 1) * od].copy_from_slice(batch.next_obs.row(env));
            self.action[c * ad..(c + 1) * ad].copy_from_slice(batch.action.row(env));
            self.reward[c] = batch.reward[env];
            self.done[c] = batch.done[env];
        }
        self.cursor = (self.cursor + 1) % self.capacity;
        self.fill = (self.fill + 1).min(self.capacity);
        Ok(())
    }

    /// `batch_size` draws with replacement, uniform over (env, filled slot).
    pub fn sample<R: Rng + ?Sized>(&self, batch_size: usize, rng: &mut R) -> Result<Minibatch<T>> {
        if self.fill == 0 {
            return Err(CoreError::EmptyBuffer);
        }
        let cells: Vec<usize> = (0..batch_size)
            .map(|_| {
                let env = rng.random_range(0..self.num_envs);
                let slot = rng.random_range(0..self.fill);
                self.cell(env, slot)
            })
            .collect();
        Ok(self.gather(&cells))
    }

    fn gather(&self, cells: &[usize]) -> Minibatch<T> {
        let (od, ad) = (self.obs_dim, self.act_dim);
        let b = cells.len();
        let mut obs = Vec::with_capacity(b * od);
        let mut next_obs = Vec::with_capacity(b * od);
        let mut action = Vec::with_capacity(b * ad);
        let mut reward = Vec::with_capacity(b);
        let mut done = Vec::with_capacity(b);
        for &c in cells {
            obs.extend_from_slice(&self.obs[c * od..(c + 1) * od]);
            next_obs.extend_from_slice(&self.next_obs[c * od..(c + 1) * od]);
            action.extend_from_slice(&self.action[c * ad..(c + 1) * ad]);
            reward.push(self.reward[c]);
            done.push(self.done[c]);
        }
        Minibatch {
            obs: Matrix::from_vec(b, od, obs).expect("sized above"),
            action: Matrix::from_vec(b, ad, action).expect("sized above"),
            next_obs: Matrix::from_vec(b, od, next_obs).expect("sized above"),
            reward,
            done,
        }
    }

    /// The transition stored for `env` at ring slot `slot`.
    pub fn get(&self, env: usize, slot: usize) -> Option<Minibatch<T>> {
        (env < self.num_envs && slot < self.fill).then(|| self.gather(&[self.cell(env, slot)]))
    }

    /// Little-endian dump: six `u64` header fields (envs, capacity, obs dim,
    /// action dim, cursor, fill), then obs, action, next_obs, reward, done.
    pub fn to_bytes(&self) -> Vec<u8> {
        let cells = self.num_envs * self.capacity;
        let mut out = Vec::with_capacity(48 + cells * (2 * self.obs_dim + self.act_dim + 2) * T::BYTES);
        for v in [
            self.num_envs,
            self.capacity,
            self.obs_dim,
            self.act_dim,
            self.cursor,
            self.fill,
        ] {
            out.extend_from_slice(&(v as u64).to_le_bytes());
        }
        for xs in [&self.obs, &self.action, &self.next_obs, &self.reward, &self.done] {
            for &x in xs.iter() {
                x.write_le(&mut out);
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |reason: String| CoreError::Invalid {
            what: "replay buffer bytes",
            reason,
        };
        if bytes.len() < 48 {
            return Err(bad(format!("{} bytes is shorter than the header", bytes.len())));
        }
        let header: Vec<usize> = bytes[..48]
            .chunks_exact(8)
            .map(|c| u64::from_le_bytes(c.try_into().expect("8-byte chunk")) as usize)
            .collect();
        let (num_envs, capacity, obs_dim, act_dim, cursor, fill) =
            (header[0], header[1], header[2], header[3], header[4], header[5]);
        let mut buf = Self::new(num_envs, capacity, obs_dim, act_dim)?;
        if cursor >= capacity || fill > capacity {
            return Err(bad(format!(
                "cursor {cursor} / fill {fill} outside capacity {capacity}"
            )));
        }
        let expected = 48 + buf.obs.len() * 2 * T::BYTES + (buf.action.len() + 2 * buf.reward.len()) * T::BYTES;
        if bytes.len() != expected {
            return Err(bad(format!("expected {expected} bytes, got {}", bytes.len())));
        }
        let mut chunks = bytes[48..].chunks_exact(T::BYTES);
        for xs in [
            &mut buf.obs,
            &mut buf.action,
            &mut buf.next_obs,
            &mut buf.reward,
            &mut buf.done,
        ] {
            for x in xs.iter_mut() {
                *x = T::read_le(chunks.next().expect("length checked"));
            }
        }
        buf.cursor = cursor;
        buf.fill = fill;
        Ok(buf)
    }
}
