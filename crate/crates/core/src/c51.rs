//! Categorical (C51) value distributions over a fixed atom support.

use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::matrix::Matrix;
use crate::Scalar;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AtomSupport {
    v_min: f64,
    v_max: f64,
    n_atoms: usize,
}

impl AtomSupport {
    pub fn new(v_min: f64, v_max: f64, n_atoms: usize) -> Result<Self> {
        if !(v_min < v_max) || !v_min.is_finite() || !v_max.is_finite() {
            return Err(CoreError::Invalid {
                what: "atom support",
                reason: format!("need finite v_min < v_max, got [{v_min}, {v_max}]"),
            });
        }
        if n_atoms < 2 {
            return Err(CoreError::Invalid {
                what: "atom support",
                reason: format!("need at least 2 atoms, got {n_atoms}"),
            });
        }
        Ok(Self { v_min, v_max, n_atoms })
    }

    pub fn v_min(&self) -> f64 {
        self.v_min
    }

    pub fn v_max(&self) -> f64 {
        self.v_max
    }

    pub fn n_atoms(&self) -> usize {
        self.n_atoms
    }

    pub fn delta_z(&self) -> f64 {
        (self.v_max - self.v_min) / (self.n_atoms - 1) as f64
    }

    /// Atom `i`; the last atom is exactly `v_max`.
    pub fn atom(&self, i: usize) -> f64 {
        if i + 1 == self.n_atoms {
            self.v_max
        } else {
            self.v_min + i as f64 * self.delta_z()
        }
    }

    pub fn atoms<T: Scalar>(&self) -> Vec<T> {
        (0..self.n_atoms).map(|i| T::lit(self.atom(i))).collect()
    }
}

/// Which twin-critic target survives: the pmf mixture or the lower-expectation pmf.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CombineMode {
    Average,
    MinExpectation,
}

/// Rows must be nonnegative and sum to one, within 1e-6 (looser in `f32` for wide rows).
pub fn validate_pmf<T: Scalar>(pmf: &Matrix<T>) -> Result<()> {
    let tol = (10.0 * pmf.cols() as f64 * T::epsilon().as_f64()).max(1e-6);
    for (row, r) in pmf.iter_rows().enumerate() {
        let mut sum = 0.0;
        let mut min = f64::INFINITY;
        for &p in r {
            let p = p.as_f64();
            sum += p;
            min = min.min(p);
        }
        if !(min >= -tol) || !((sum - 1.0).abs() <= tol) {
            return Err(CoreError::InvalidPmf { row, sum, min });
        }
    }
    Ok(())
}

fn check_width<T: Scalar>(m: &Matrix<T>, support: &AtomSupport, what: &'static str) -> Result<()> {
    if m.cols() != support.n_atoms() {
        return Err(CoreError::Shape {
            what,
            expected: support.n_atoms(),
            got: m.cols(),
        });
    }
    Ok(())
}

/// Redistributes each source atom's mass, located at `shifted_atoms`, onto the
/// fixed support: positions are clipped to `[v_min, v_max]` and mass is split
/// linearly between the two neighbouring atoms.
pub fn project<T: Scalar>(
    shifted_atoms: &Matrix<T>,
    source_pmf: &Matrix<T>,
    support: &AtomSupport,
) -> Result<Matrix<T>> {
    check_width(shifted_atoms, support, "shifted atoms")?;
    check_width(source_pmf, support, "source pmf")?;
    if shifted_atoms.rows() != source_pmf.rows() {
        return Err(CoreError::Shape {
            what: "projection batch",
            expected: source_pmf.rows(),
            got: shifted_atoms.rows(),
        });
    }
    validate_pmf(source_pmf)?;
    let n = support.n_atoms();
    let v_min = T::lit(support.v_min());
    let v_max = T::lit(support.v_max());
    let dz = T::lit(support.delta_z());
    let top = T::lit((n - 1) as f64);
    let mut out = Matrix::zeros(source_pmf.rows(), n);
    for r in 0..source_pmf.rows() {
        let z = shifted_atoms.row(r);
        let p = source_pmf.row(r);
        let o = out.row_mut(r);
        for j in 0..n {
            if !z[j].is_finite() {
                return Err(CoreError::NonFinite {
                    what: "shifted atoms",
                    index: r * n + j,
                });
            }
            let tz = z[j].max(v_min).min(v_max);
            let b = ((tz - v_min) / dz).max(T::zero()).min(top);
            // b ≥ 0, so truncation is the floor.
            let l = b.to_usize().unwrap_or(0);
            let frac = b - T::lit(l as f64);
            if frac == T::zero() {
                o[l] += p[j];
            } else {
                o[l] += p[j] * (T::one() - frac);
                o[l + 1] += p[j] * frac;
            }
        }
    }
    Ok(out)
}

/// Per-sample affine map of the support: `r + γ·(1 − done)·(z + bonus)`.
///
/// `entropy_bonus` carries `−α·log π(ã'|o')` for the soft target and zeros otherwise.
pub fn bellman_shift<T: Scalar>(
    rewards: &[T],
    dones: &[T],
    gamma: f64,
    support: &AtomSupport,
    entropy_bonus: &[T],
) -> Result<Matrix<T>> {
    let b = rewards.len();
    for (what, len) in [("dones", dones.len()), ("entropy bonus", entropy_bonus.len())] {
        if len != b {
            return Err(CoreError::Shape {
                what,
                expected: b,
                got: len,
            });
        }
    }
    if !(0.0..1.0).contains(&gamma) {
        return Err(CoreError::Invalid {
            what: "discount",
            reason: format!("gamma must lie in [0, 1), got {gamma}"),
        });
    }
    let atoms: Vec<T> = support.atoms();
    let g = T::lit(gamma);
    let mut out = Matrix::zeros(b, atoms.len());
    for r in 0..b {
        let disc = g * (T::one() - dones[r]);
        let row = out.row_mut(r);
        for (o, &z) in row.iter_mut().zip(&atoms) {
            *o = rewards[r] + disc * (z + entropy_bonus[r]);
        }
    }
    Ok(out)
}

pub fn expectation<T: Scalar>(pmf: &Matrix<T>, support: &AtomSupport) -> Vec<T> {
    let atoms: Vec<T> = support.atoms();
    pmf.iter_rows()
        .map(|row| row.iter().zip(&atoms).map(|(&p, &z)| p * z).sum())
        .collect()
}

pub fn combine_targets<T: Scalar>(
    pmf_a: &Matrix<T>,
    pmf_b: &Matrix<T>,
    mode: CombineMode,
    support: &AtomSupport,
) -> Result<Matrix<T>> {
    check_width(pmf_a, support, "pmf a")?;
    check_width(pmf_b, support, "pmf b")?;
    if pmf_a.rows() != pmf_b.rows() {
        return Err(CoreError::Shape {
            what: "combined batch",
            expected: pmf_a.rows(),
            got: pmf_b.rows(),
        });
    }
    validate_pmf(pmf_a)?;
    validate_pmf(pmf_b)?;
    let mut out = pmf_a.clone();
    match mode {
        CombineMode::Average => {
            let half = T::lit(0.5);
            for (o, &q) in out.as_mut_slice().iter_mut().zip(pmf_b.as_slice()) {
                *o = half * (*o + q);
            }
        }
        CombineMode::MinExpectation => {
            let ea = expectation(pmf_a, support);
            let eb = expectation(pmf_b, support);
            for r in 0..out.rows() {
                if eb[r] < ea[r] {
                    out.row_mut(r).copy_from_slice(pmf_b.row(r));
                }
            }
        }
    }
    Ok(out)
}

/// Row-wise softmax.
pub fn softmax<T: Scalar>(logits: &Matrix<T>) -> Matrix<T> {
    let mut out = logits.clone();
    for r in 0..out.rows() {
        let row = out.row_mut(r);
        let max = row.iter().copied().fold(T::neg_infinity(), T::max);
        for v in row.iter_mut() {
            *v = (*v - max).fast_exp();
        }
        let sum: T = row.iter().copied().sum();
        for v in row.iter_mut() {
            *v /= sum;
        }
    }
    out
}

/// Mean categorical cross-entropy of `softmax(pred_logits)` against `target`,
/// and its gradient with respect to the logits.
pub fn cross_entropy_loss<T: Scalar>(pred_logits: &Matrix<T>, target_pmf: &Matrix<T>) -> Result<(T, Matrix<T>)> {
    if pred_logits.rows() != target_pmf.rows() || pred_logits.cols() != target_pmf.cols() {
        return Err(CoreError::Shape {
            what: "cross-entropy operands",
            expected: target_pmf.rows() * target_pmf.cols(),
            got: pred_logits.rows() * pred_logits.cols(),
        });
    }
    validate_pmf(target_pmf)?;
    let b = pred_logits.rows();
    let inv_b = T::one() / T::lit(b.max(1) as f64);
    let mut loss = T::zero();
    let mut grad = Matrix::zeros(b, pred_logits.cols());
    for r in 0..b {
        let l = pred_logits.row(r);
        let t = target_pmf.row(r);
        let max = l.iter().copied().fold(T::neg_infinity(), T::max);
        let lse = max + l.iter().map(|&v| (v - max).fast_exp()).sum::<T>().ln();
        let g = grad.row_mut(r);
        for j in 0..l.len() {
            let logp = l[j] - lse;
            loss -= t[j] * logp;
            g[j] = (logp.fast_exp() - t[j]) * inv_b;
        }
    }
    Ok((loss * inv_b, grad))
}

/// Gradient of `Σ_r w_r·E_r` with respect to the logits, where `E_r` is the
/// expectation of `softmax(logits_r)` under the support.
pub fn expectation_grad_logits<T: Scalar>(probs: &Matrix<T>, support: &AtomSupport, weights: &[T]) -> Matrix<T> {
    let atoms: Vec<T> = support.atoms();
    let mut out = Matrix::zeros(probs.rows(), probs.cols());
    for r in 0..probs.rows() {
        let p = probs.row(r);
        let e: T = p.iter().zip(&atoms).map(|(&a, &z)| a * z).sum();
        for (j, o) in out.row_mut(r).iter_mut().enumerate() {
            *o = weights[r] * p[j] * (atoms[j] - e);
        }
    }
    out
}
