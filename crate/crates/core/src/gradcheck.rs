//! Central finite-difference gradient checker.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone, Copy)]
pub struct GradCheckOptions {
    /// Finite-difference step.
    pub step: f64,
    /// Number of coordinates probed; all of them when the vector is shorter.
    pub coords: usize,
    /// Denominator floor for the relative error, so exact zeros do not divide by zero.
    pub floor: f64,
    pub seed: u64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self {
            step: 1e-5,
            coords: 200,
            floor: 1e-6,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    pub worst_index: Option<usize>,
    pub checked: usize,
    pub tolerance: f64,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.max_rel_err <= self.tolerance
    }
}

/// Compares the analytic gradient returned by `f` at `params` with central
/// differences of its value over a random subset of coordinates.
///
/// `f` returns `(value, gradient)`; only the value is used at perturbed points.
pub fn grad_check<F>(mut f: F, params: &[f64], tolerance: f64, opts: GradCheckOptions) -> GradCheckReport
where
    F: FnMut(&[f64]) -> (f64, Vec<f64>),
{
    let mut report = GradCheckReport {
        max_rel_err: 0.0,
        worst_index: None,
        checked: 0,
        tolerance,
    };
    if params.is_empty() {
        return report;
    }
    let (_, analytic) = f(params);
    assert_eq!(analytic.len(), params.len(), "gradient length must match parameters");
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let idx: Vec<usize> = if params.len() <= opts.coords {
        (0..params.len()).collect()
    } else {
        let mut v = sample(&mut rng, params.len(), opts.coords).into_vec();
        v.sort_unstable();
        v
    };
    let mut probe = params.to_vec();
    for &i in &idx {
        let orig = probe[i];
        probe[i] = orig + opts.step;
        let (fp, _) = f(&probe);
        probe[i] = orig - opts.step;
        let (fm, _) = f(&probe);
        probe[i] = orig;
        let numeric = (fp - fm) / (2.0 * opts.step);
        let a = analytic[i];
        let denom = a.abs().max(numeric.abs()).max(opts.floor);
        let rel = (a - numeric).abs() / denom;
        if report.worst_index.is_none() || rel > report.max_rel_err {
            report.max_rel_err = rel;
            report.worst_index = Some(i);
        }
        report.checked += 1;
    }
    report
}
