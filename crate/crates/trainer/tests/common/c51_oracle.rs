//! Brute-force categorical projection: every clipped source atom scatters
//! its mass through the triangular kernel `max(0, 1 − |x − zᵢ|/Δz)`.

use fastrl_core::c51::{expectation, project};
use fastrl_core::{AtomSupport, Matrix};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const TOL_ORACLE: f64 = 1e-12;
pub const TOL_CONSERVE: f64 = 1e-9;

pub fn scatter_oracle(shifted: &[f64], pmf: &[f64], v_min: f64, v_max: f64) -> Vec<f64> {
    let n = pmf.len();
    let dz = (v_max - v_min) / (n - 1) as f64;
    let mut out = vec![0.0; n];
    for (&x, &p) in shifted.iter().zip(pmf) {
        let x = x.clamp(v_min, v_max);
        for (i, o) in out.iter_mut().enumerate() {
            let z = v_min + i as f64 * dz;
            *o += p * (1.0 - (x - z).abs() / dz).max(0.0);
        }
    }
    out
}

pub struct CaseResult {
    pub max_oracle_err: f64,
    pub max_mass_err: f64,
    pub max_mean_err: f64,
}

/// One randomized case. Every fourth case lands shifts on atoms exactly or
/// pushes them outside the support to exercise clipping.
pub fn case(seed: u64) -> CaseResult {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.random_range(2..=101);
    let v_min = rng.random_range(-50.0..0.0);
    let v_max = v_min + rng.random_range(0.5..60.0);
    let support = AtomSupport::new(v_min, v_max, n).unwrap();
    let rows = rng.random_range(1..=8);
    let mut pmf = Matrix::from_fn(
        rows,
        n,
        |_, _| if rng.random_bool(0.2) { 0.0 } else { rng.random::<f64>() },
    );
    for r in 0..rows {
        let row = pmf.row_mut(r);
        if row.iter().all(|&p| p == 0.0) {
            row[0] = 1.0;
        }
        let s: f64 = row.iter().sum();
        row.iter_mut().for_each(|p| *p /= s);
    }
    let span = v_max - v_min;
    let shifted = Matrix::from_fn(rows, n, |_, j| match seed % 4 {
        0 => support.atom(rng.random_range(0..n)),
        1 => v_max + rng.random_range(0.0..span),
        2 => v_min - rng.random_range(0.0..span),
        _ => {
            let reward = rng.random_range(-span..span) * 0.5;
            reward + rng.random_range(0.0..1.0) * support.atom(j)
        }
    });
    let out = project(&shifted, &pmf, &support).unwrap();
    let mut res = CaseResult {
        max_oracle_err: 0.0,
        max_mass_err: 0.0,
        max_mean_err: 0.0,
    };
    let means = expectation(&out, &support);
    for r in 0..rows {
        let oracle = scatter_oracle(shifted.row(r), pmf.row(r), v_min, v_max);
        for (a, b) in out.row(r).iter().zip(&oracle) {
            res.max_oracle_err = res.max_oracle_err.max((a - b).abs());
        }
        res.max_mass_err = res.max_mass_err.max((out.row(r).iter().sum::<f64>() - 1.0).abs());
        let clipped_mean: f64 = shifted
            .row(r)
            .iter()
            .zip(pmf.row(r))
            .map(|(x, p)| p * x.clamp(v_min, v_max))
            .sum();
        res.max_mean_err = res.max_mean_err.max((means[r] - clipped_mean).abs());
    }
    res
}
