//! Running observation normalizer with batched (parallel) variance updates.

use serde::{Deserialize, Serialize};

use crate::error::{check_finite, CoreError, Result};
use crate::matrix::Matrix;
use crate::Scalar;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunningNormalizer {
    count: f64,
    mean: Vec<f64>,
    m2: Vec<f64>,
    pub eps: f64,
    pub clip: f64,
    /// `apply` is the identity until `count` reaches this.
    pub warmup: f64,
    /// Frozen normalizers ignore updates.
    pub frozen: bool,
}

impl RunningNormalizer {
    pub fn new(dim: usize, warmup: f64) -> Self {
        Self {
            count: 0.0,
            mean: vec![0.0; dim],
            m2: vec![0.0; dim],
            eps: 1e-8,
            clip: 10.0,
            warmup,
            frozen: false,
        }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn count(&self) -> f64 {
        self.count
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn m2(&self) -> &[f64] {
        &self.m2
    }

    /// Population variance, `m2 / count`.
    pub fn variance(&self) -> Vec<f64> {
        if self.count == 0.0 {
            return vec![0.0; self.dim()];
        }
        self.m2.iter().map(|m| m / self.count).collect()
    }

    /// Restores raw statistics, e.g. from a checkpoint.
    pub fn from_parts(count: f64, mean: Vec<f64>, m2: Vec<f64>) -> Result<Self> {
        if mean.len() != m2.len() {
            return Err(CoreError::Shape {
                what: "normalizer m2",
                expected: mean.len(),
                got: m2.len(),
            });
        }
        if !(count >= 0.0) || m2.iter().any(|&v| !(v >= 0.0)) {
            return Err(CoreError::Invalid {
                what: "normalizer state",
                reason: "count and m2 must be non-negative".into(),
            });
        }
        let mut n = Self::new(mean.len(), 0.0);
        n.count = count;
        n.mean = mean;
        n.m2 = m2;
        Ok(n)
    }

    /// Folds a batch in with the pairwise combination rule (Chan et al.).
    pub fn update<T: Scalar>(&mut self, obs: &Matrix<T>) -> Result<()> {
        if obs.rows() == 0 || self.frozen {
            return Ok(());
        }
        if obs.cols() != self.dim() {
            return Err(CoreError::Shape {
                what: "observation width",
                expected: self.dim(),
                got: obs.cols(),
            });
        }
        check_finite("observation batch", obs.as_slice())?;
        let nb = obs.rows() as f64;
        let d = self.dim();
        let mut bmean = vec![0.0; d];
        for row in obs.iter_rows() {
            for (m, &x) in bmean.iter_mut().zip(row) {
                *m += x.as_f64();
            }
        }
        for m in &mut bmean {
            *m /= nb;
        }
        let mut bm2 = vec![0.0; d];
        for row in obs.iter_rows() {
            for ((s, &x), &m) in bm2.iter_mut().zip(row).zip(&bmean) {
                let dx = x.as_f64() - m;
                *s += dx * dx;
            }
        }
        let na = self.count;
        let n = na + nb;
        for i in 0..d {
            let delta = bmean[i] - self.mean[i];
            self.mean[i] += delta * nb / n;
            self.m2[i] += bm2[i] + delta * delta * na * nb / n;
        }
        self.count = n;
        Ok(())
    }

    /// `(obs − mean)/√(var + eps)` clipped to `±clip`; identity before warmup.
    pub fn apply<T: Scalar>(&self, obs: &Matrix<T>) -> Matrix<T> {
        if self.count < self.warmup || self.count == 0.0 {
            return obs.clone();
        }
        let scale: Vec<f64> = self.variance().iter().map(|v| 1.0 / (v + self.eps).sqrt()).collect();
        let mut out = obs.clone();
        for r in 0..out.rows() {
            for (i, x) in out.row_mut(r).iter_mut().enumerate() {
                let z = (x.as_f64() - self.mean[i]) * scale[i];
                *x = T::lit(z.clamp(-self.clip, self.clip));
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_stream_centers_to_zero() {
        let mut n = RunningNormalizer::new(2, 1.0);
        let x = Matrix::from_fn(10, 2, |_, c| 3.0 + c as f64);
        n.update(&x).unwrap();
        assert_eq!(n.variance(), vec![0.0, 0.0]);
        assert!(n.apply(&x).as_slice().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn empty_batch_is_noop() {
        let mut n = RunningNormalizer::new(3, 0.0);
        let before = n.clone();
        n.update(&Matrix::<f64>::zeros(0, 3)).unwrap();
        assert_eq!(n, before);
    }

    #[test]
    fn warmup_identity_and_clipping() {
        let mut n = RunningNormalizer::new(1, 4.0);
        let x = Matrix::from_rows(&[vec![1.0], vec![-1.0]]).unwrap();
        n.update(&x).unwrap();
        let far = Matrix::from_rows(&[vec![1e6]]).unwrap();
        assert_eq!(n.apply(&far), far);
        n.update(&x).unwrap();
        assert_eq!(n.apply(&far).get(0, 0), 10.0);
        let at_mean = Matrix::from_rows(&[vec![0.0]]).unwrap();
        assert_eq!(n.apply(&at_mean).get(0, 0), 0.0);
    }

    #[test]
    fn rejects_bad_batches() {
        let mut n = RunningNormalizer::new(2, 0.0);
        assert!(n.update(&Matrix::<f64>::zeros(1, 3)).is_err());
        let mut x = Matrix::<f64>::zeros(1, 2);
        x.set(0, 0, f64::NAN);
        assert!(n.update(&x).is_err());
        assert_eq!(n.count(), 0.0);
    }

    #[test]
    fn frozen_ignores_updates() {
        let mut n = RunningNormalizer::new(1, 0.0);
        n.frozen = true;
        n.update(&Matrix::from_rows(&[vec![5.0f64]]).unwrap()).unwrap();
        assert_eq!(n.count(), 0.0);
    }
}
