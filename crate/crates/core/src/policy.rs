//! Action heads: joint-limit-aware bounds, the tanh-Gaussian sampler with
//! exact log-probabilities, and deterministic-actor exploration noise.
//!
//! Policies work in a normalized action space `t ∈ [−1, 1]^|A|` (what the
//! critic and the replay buffer see). `ActionBounds::scale` maps `t` to
//! absolute targets so that `t = 0` is the default pose and `t = ±1` are
//! the joint limits.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::matrix::Matrix;
use crate::Scalar;

/// Lower bound of the log standard deviation (σ_floor = e⁻⁵).
pub const LOG_SIGMA_MIN: f64 = -5.0;
/// Upper bound of the log standard deviation (σ_cap = 1).
pub const LOG_SIGMA_MAX: f64 = 0.0;

const HALF_LN_2PI: f64 = 0.918_938_533_204_672_8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActionBounds {
    pub neg_range: Vec<f64>,
    pub pos_range: Vec<f64>,
    pub default: Vec<f64>,
}

/// Ranges are the gaps between each limit and the default pose.
pub fn compute_action_bounds(lower: &[f64], upper: &[f64], default_pose: &[f64]) -> Result<ActionBounds> {
    let n = default_pose.len();
    for (what, len) in [("lower limits", lower.len()), ("upper limits", upper.len())] {
        if len != n {
            return Err(CoreError::Shape {
                what,
                expected: n,
                got: len,
            });
        }
    }
    for i in 0..n {
        if !(lower[i] < default_pose[i] && default_pose[i] < upper[i]) {
            return Err(CoreError::Invalid {
                what: "action bounds",
                reason: format!(
                    "default {} of dim {i} must lie strictly inside ({}, {})",
                    default_pose[i], lower[i], upper[i]
                ),
            });
        }
    }
    Ok(ActionBounds {
        neg_range: default_pose.iter().zip(lower).map(|(d, l)| d - l).collect(),
        pos_range: upper.iter().zip(default_pose).map(|(u, d)| u - d).collect(),
        default: default_pose.to_vec(),
    })
}

impl ActionBounds {
    /// Unit box around zero.
    pub fn symmetric(dim: usize, range: f64) -> Self {
        Self {
            neg_range: vec![range; dim],
            pos_range: vec![range; dim],
            default: vec![0.0; dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.default.len()
    }

    pub fn lower(&self) -> Vec<f64> {
        self.default.iter().zip(&self.neg_range).map(|(d, r)| d - r).collect()
    }

    pub fn upper(&self) -> Vec<f64> {
        self.default.iter().zip(&self.pos_range).map(|(d, r)| d + r).collect()
    }

    /// Range on the side of `t`; the tie at zero takes the positive side.
    #[inline]
    pub fn range_used(&self, i: usize, t: f64) -> f64 {
        if t >= 0.0 {
            self.pos_range[i]
        } else {
            self.neg_range[i]
        }
    }

    /// Piecewise-linear map from normalized `t` to absolute targets.
    pub fn scale<T: Scalar>(&self, t: &Matrix<T>) -> Matrix<T> {
        let mut out = t.clone();
        for r in 0..out.rows() {
            for (i, x) in out.row_mut(r).iter_mut().enumerate() {
                let tv = x.as_f64();
                *x = T::lit(self.default[i] + tv * self.range_used(i, tv));
            }
        }
        out
    }

    /// Absolute targets without squashing: `default + u`.
    pub fn offset<T: Scalar>(&self, u: &Matrix<T>) -> Matrix<T> {
        let mut out = u.clone();
        for r in 0..out.rows() {
            for (i, x) in out.row_mut(r).iter_mut().enumerate() {
                *x = T::lit(self.default[i] + x.as_f64());
            }
        }
        out
    }
}

/// `ln(1 − tanh²u)` without cancellation for large `|u|`.
#[inline]
pub fn log_one_minus_tanh_sq(u: f64) -> f64 {
    let x = -2.0 * u;
    let softplus = x.max(0.0) + (-x.abs()).exp().ln_1p();
    2.0 * (std::f64::consts::LN_2 - u - softplus)
}

/// Tanh squashing plus piecewise scaling for one action vector.
/// Returns the absolute action and `Σ log(1 − t²) + Σ log(range used)`.
pub fn squash_scale(u: &[f64], bounds: &ActionBounds) -> (Vec<f64>, f64) {
    let mut log_det = 0.0;
    let action = u
        .iter()
        .enumerate()
        .map(|(i, &ui)| {
            let t = ui.tanh();
            let r = bounds.range_used(i, t);
            log_det += log_one_minus_tanh_sq(ui) + r.ln();
            bounds.default[i] + t * r
        })
        .collect();
    (action, log_det)
}

/// Maps a raw head output to `log σ ∈ [LOG_SIGMA_MIN, LOG_SIGMA_MAX]`.
#[inline]
pub fn bounded_log_sigma(raw: f64) -> f64 {
    LOG_SIGMA_MIN + 0.5 * (LOG_SIGMA_MAX - LOG_SIGMA_MIN) * (raw.tanh() + 1.0)
}

#[inline]
fn bounded_log_sigma_grad(raw: f64) -> f64 {
    let th = raw.tanh();
    0.5 * (LOG_SIGMA_MAX - LOG_SIGMA_MIN) * (1.0 - th * th)
}

/// Log density of an absolute action produced from pre-squash `u`.
pub fn log_prob_at(u: &[f64], mean: &[f64], log_sigma: &[f64], bounds: &ActionBounds, squash: bool) -> f64 {
    let mut lp = 0.0;
    for i in 0..u.len() {
        let eps = (u[i] - mean[i]) / log_sigma[i].exp();
        lp += -0.5 * eps * eps - log_sigma[i] - HALF_LN_2PI;
    }
    if squash {
        lp -= squash_scale(u, bounds).1;
    }
    lp
}

/// Reparameterized draw from the tanh-Gaussian head for a batch.
///
/// The head output has `2|A|` columns: means, then raw log-σ.
#[derive(Debug, Clone)]
pub struct SacSample<T> {
    /// Normalized action fed to the critic (`tanh u`, or `u` when unsquashed).
    pub t: Matrix<T>,
    /// Absolute action sent to the environment.
    pub action: Matrix<T>,
    pub log_prob: Vec<T>,
    squash: bool,
    eps: Matrix<T>,
    sigma: Matrix<T>,
    raw_log_sigma: Matrix<T>,
}

impl<T: Scalar> SacSample<T> {
    /// Draws `ε ~ N(0, I)` and samples; `eval` uses the mean with no noise.
    pub fn draw<R: Rng + ?Sized>(
        head: &Matrix<T>,
        bounds: &ActionBounds,
        squash: bool,
        eval: bool,
        rng: &mut R,
    ) -> Result<Self> {
        let a = Self::head_dim(head, bounds)?;
        let eps = if eval {
            Matrix::zeros(head.rows(), a)
        } else {
            Matrix::from_fn(head.rows(), a, |_, _| T::sample_normal(rng))
        };
        Self::with_noise(head, &eps, bounds, squash)
    }

    fn head_dim(head: &Matrix<T>, bounds: &ActionBounds) -> Result<usize> {
        let a = bounds.dim();
        if head.cols() != 2 * a {
            return Err(CoreError::Shape {
                what: "gaussian head width",
                expected: 2 * a,
                got: head.cols(),
            });
        }
        Ok(a)
    }

    /// Deterministic sample given frozen noise `eps` (B×|A|).
    pub fn with_noise(head: &Matrix<T>, eps: &Matrix<T>, bounds: &ActionBounds, squash: bool) -> Result<Self> {
        let a = Self::head_dim(head, bounds)?;
        if eps.rows() != head.rows() || eps.cols() != a {
            return Err(CoreError::Shape {
                what: "policy noise",
                expected: head.rows() * a,
                got: eps.rows() * eps.cols(),
            });
        }
        let b = head.rows();
        let mut t = Matrix::zeros(b, a);
        let mut action = Matrix::zeros(b, a);
        let mut sigma = Matrix::zeros(b, a);
        let raw_log_sigma = head.col_slice(a, 2 * a);
        let mut log_prob = Vec::with_capacity(b);
        for r in 0..b {
            let h = head.row(r);
            let mut lp = 0.0;
            for i in 0..a {
                let mu = h[i].as_f64();
                let ls = bounded_log_sigma(h[a + i].as_f64());
                let s = ls.exp();
                let e = eps.get(r, i).as_f64();
                let u = mu + s * e;
                lp += -0.5 * e * e - ls - HALF_LN_2PI;
                let (tv, av) = if squash {
                    let tv = u.tanh();
                    let rng_i = bounds.range_used(i, tv);
                    lp -= log_one_minus_tanh_sq(u) + rng_i.ln();
                    (tv, bounds.default[i] + tv * rng_i)
                } else {
                    (u, bounds.default[i] + u)
                };
                t.set(r, i, T::lit(tv));
                action.set(r, i, T::lit(av));
                sigma.set(r, i, T::lit(s));
            }
            log_prob.push(T::lit(lp));
        }
        Ok(Self {
            t,
            action,
            log_prob,
            squash,
            eps: eps.clone(),
            sigma,
            raw_log_sigma,
        })
    }

    pub fn sigma(&self) -> &Matrix<T> {
        &self.sigma
    }

    /// Gradient with respect to the head output given `dL/dt` and `dL/dlogπ`.
    pub fn backward(&self, d_t: &Matrix<T>, d_log_prob: &[T]) -> Matrix<T> {
        let (b, a) = (self.t.rows(), self.t.cols());
        let mut out = Matrix::zeros(b, 2 * a);
        for r in 0..b {
            let dlp = d_log_prob[r];
            for i in 0..a {
                let tv = self.t.get(r, i);
                // u = μ + σε; t = tanh u; ∂logπ/∂u = 2t under squashing.
                let du = if self.squash {
                    d_t.get(r, i) * (T::one() - tv * tv) + dlp * T::lit(2.0) * tv
                } else {
                    d_t.get(r, i)
                };
                let d_ls = du * self.sigma.get(r, i) * self.eps.get(r, i) - dlp;
                let d_raw = d_ls * T::lit(bounded_log_sigma_grad(self.raw_log_sigma.get(r, i).as_f64()));
                out.set(r, i, du);
                out.set(r, a + i, d_raw);
            }
        }
        out
    }
}

/// Per-environment exploration σ for the deterministic actor.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseSchedule {
    pub sigma_min: f64,
    pub sigma_max: f64,
}

impl Default for NoiseSchedule {
    fn default() -> Self {
        Self {
            sigma_min: 0.01,
            sigma_max: 0.05,
        }
    }
}

impl NoiseSchedule {
    pub fn validate(&self) -> Result<()> {
        if !(0.0 <= self.sigma_min && self.sigma_min <= self.sigma_max) {
            return Err(CoreError::Invalid {
                what: "noise schedule",
                reason: format!(
                    "need 0 ≤ sigma_min ≤ sigma_max, got ({}, {})",
                    self.sigma_min, self.sigma_max
                ),
            });
        }
        Ok(())
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        if self.sigma_max == self.sigma_min {
            return self.sigma_min;
        }
        rng.random_range(self.sigma_min..self.sigma_max)
    }
}

/// Deterministic action `tanh`-space output plus per-row Gaussian noise,
/// clipped to `[−1, 1]`.
pub fn td3_explore<T: Scalar, R: Rng + ?Sized>(t_det: &Matrix<T>, env_sigma: &[f64], rng: &mut R) -> Result<Matrix<T>> {
    if env_sigma.len() != t_det.rows() {
        return Err(CoreError::Shape {
            what: "per-env sigma",
            expected: t_det.rows(),
            got: env_sigma.len(),
        });
    }
    let mut out = t_det.clone();
    for r in 0..out.rows() {
        let s = env_sigma[r];
        for x in out.row_mut(r) {
            let noise = if s > 0.0 {
                s * T::sample_normal(rng).as_f64()
            } else {
                0.0
            };
            *x = T::lit((x.as_f64() + noise).clamp(-1.0, 1.0));
        }
    }
    Ok(out)
}

/// Target-policy smoothing: clipped Gaussian noise, then clip to `[−1, 1]`.
pub fn td3_target_smooth<T: Scalar, R: Rng + ?Sized>(
    t_next: &Matrix<T>,
    sigma: f64,
    clip_c: f64,
    rng: &mut R,
) -> Matrix<T> {
    let mut out = t_next.clone();
    if sigma == 0.0 {
        return out;
    }
    for x in out.as_mut_slice() {
        let noise = (sigma * T::sample_normal(rng).as_f64()).clamp(-clip_c, clip_c);
        *x = T::lit((x.as_f64() + noise).clamp(-1.0, 1.0));
    }
    out
}

/// Deterministic actor output squashed into `[−1, 1]` and its backward.
pub fn tanh_forward<T: Scalar>(raw: &Matrix<T>) -> Matrix<T> {
    raw.map(|x| x.tanh())
}

pub fn tanh_backward<T: Scalar>(t: &Matrix<T>, d_t: &Matrix<T>) -> Matrix<T> {
    let mut out = d_t.clone();
    for (g, &tv) in out.as_mut_slice().iter_mut().zip(t.as_slice()) {
        *g *= T::one() - tv * tv;
    }
    out
}
