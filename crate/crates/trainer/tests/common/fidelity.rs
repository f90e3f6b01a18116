//! Finite-difference checks of every hand-written gradient at 64-bit.

use fastrl_core::c51::{cross_entropy_loss, softmax};
use fastrl_core::{
    compute_action_bounds, grad_check, ActionBounds, AgentConfig, GradCheckOptions, GradCheckReport, InitScale, Matrix,
    Mlp, MlpLayout, SacAgent, SacSample,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const TOL_CORE: f64 = 1e-5;
pub const TOL_ACTOR: f64 = 1e-4;
/// Cross-entropy gradients `(p − t)/B` sit near zero for many logits while
/// central-difference roundoff is about 1e-10; this floor bounds their
/// absolute error by 1e-9.
pub const CE_FLOOR: f64 = 1e-4;

pub fn opts(seed: u64) -> GradCheckOptions {
    GradCheckOptions {
        step: 1e-5,
        coords: 200,
        floor: 1e-6,
        seed,
    }
}

fn uniform(rows: usize, cols: usize, scale: f64, rng: &mut ChaCha8Rng) -> Matrix<f64> {
    Matrix::from_fn(rows, cols, |_, _| rng.random_range(-scale..scale))
}

/// Random joint-limit bounds with an off-center default pose.
pub fn random_bounds(dim: usize, rng: &mut ChaCha8Rng) -> ActionBounds {
    let lower: Vec<f64> = (0..dim).map(|_| -rng.random_range(0.3..2.0)).collect();
    let upper: Vec<f64> = (0..dim).map(|_| rng.random_range(0.3..2.0)).collect();
    let pose: Vec<f64> = lower
        .iter()
        .zip(&upper)
        .map(|(l, u)| rng.random_range(0.5 * l..0.5 * u))
        .collect();
    compute_action_bounds(&lower, &upper, &pose).unwrap()
}

/// (a) `Σ⟨dy, y⟩` of a random MLP against its parameters.
pub fn mlp_case(seed: u64) -> GradCheckReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let depth = rng.random_range(1..=3);
    let hidden: Vec<usize> = (0..depth).map(|_| rng.random_range(2..=64)).collect();
    let (input, output, batch) = (
        rng.random_range(1..=8),
        rng.random_range(1..=6),
        rng.random_range(1..=32),
    );
    let layout = MlpLayout::new(input, &hidden, output).with_layer_norm(rng.random_bool(0.75));
    let mut net = Mlp::<f64>::new(layout, InitScale::default(), &mut rng).unwrap();
    for p in net.params_mut() {
        *p += rng.random_range(-0.1..0.1);
    }
    let x = uniform(batch, input, 2.0, &mut rng);
    let dy = uniform(batch, output, 1.0, &mut rng);
    let params = net.params().to_vec();
    grad_check(
        |p| {
            net.params_mut().copy_from_slice(p);
            let (y, tape) = net.forward_train(&x).unwrap();
            let value = y.as_slice().iter().zip(dy.as_slice()).map(|(a, b)| a * b).sum();
            (value, net.backward(&tape, &dy).unwrap().params)
        },
        &params,
        TOL_CORE,
        opts(seed),
    )
}

/// (b) Categorical cross-entropy against the logits.
pub fn cross_entropy_case(seed: u64) -> GradCheckReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (b, n) = (rng.random_range(1..=16), rng.random_range(2..=101));
    let logits = uniform(b, n, 3.0, &mut rng);
    let target = softmax(&uniform(b, n, 3.0, &mut rng));
    grad_check(
        |p| {
            let l = Matrix::from_vec(b, n, p.to_vec()).unwrap();
            let (loss, d) = cross_entropy_loss(&l, &target).unwrap();
            (loss, d.into_vec())
        },
        logits.as_slice(),
        TOL_CORE,
        GradCheckOptions {
            floor: CE_FLOOR,
            ..opts(seed)
        },
    )
}

/// (c) `Σ w·logπ + Σ⟨c, t⟩` of the tanh-Gaussian head against the head output.
pub fn log_prob_case(seed: u64) -> GradCheckReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (b, a) = (rng.random_range(1..=16), rng.random_range(1..=8));
    let bounds = random_bounds(a, &mut rng);
    let head = uniform(b, 2 * a, 1.5, &mut rng);
    // Keep pre-squash values away from zero, where the piecewise scale switches.
    let eps = loop {
        let eps = uniform(b, a, 2.0, &mut rng);
        let s = SacSample::with_noise(&head, &eps, &bounds, true).unwrap();
        if s.t.as_slice().iter().all(|t| t.abs() > 1e-2) {
            break eps;
        }
    };
    let w: Vec<f64> = (0..b).map(|_| rng.random_range(-1.0..1.0)).collect();
    let c = uniform(b, a, 1.0, &mut rng);
    grad_check(
        |p| {
            let h = Matrix::from_vec(b, 2 * a, p.to_vec()).unwrap();
            let s = SacSample::with_noise(&h, &eps, &bounds, true).unwrap();
            let value = s.log_prob.iter().zip(&w).map(|(l, w)| l * w).sum::<f64>()
                + s.t.as_slice().iter().zip(c.as_slice()).map(|(t, c)| t * c).sum::<f64>();
            (value, s.backward(&c, &w).into_vec())
        },
        head.as_slice(),
        TOL_CORE,
        opts(seed),
    )
}

/// (d) The full soft actor loss against the actor parameters.
pub fn actor_loss_case(seed: u64) -> GradCheckReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (obs_dim, a, b) = (
        rng.random_range(1..=10),
        rng.random_range(1..=6),
        rng.random_range(1..=16),
    );
    let cfg = AgentConfig {
        actor_hidden: vec![rng.random_range(4..=32); rng.random_range(1..=2)],
        critic_hidden: vec![rng.random_range(4..=32)],
        n_atoms: rng.random_range(5..=51),
        v_min: -5.0,
        v_max: 5.0,
        layer_norm: rng.random_bool(0.75),
        init_alpha: rng.random_range(0.01..1.0),
        actor_output_gain: 1.0,
        critic_output_gain: 1.0,
        ..AgentConfig::default()
    };
    let bounds = random_bounds(a, &mut rng);
    let agent = SacAgent::<f64>::new(obs_dim, bounds.clone(), cfg, &mut rng).unwrap();
    let obs = uniform(b, obs_dim, 2.0, &mut rng);
    let eps = loop {
        let eps = uniform(b, a, 2.0, &mut rng);
        let head = agent.actor.forward(&obs).unwrap();
        let s = SacSample::with_noise(&head, &eps, &bounds, true).unwrap();
        if s.t.as_slice().iter().all(|t| t.abs() > 1e-2) {
            break eps;
        }
    };
    let params = agent.actor.params().to_vec();
    let mut probe = agent.clone();
    grad_check(
        |p| {
            probe.actor.params_mut().copy_from_slice(p);
            let l = probe.actor_loss(&obs, &eps).unwrap();
            (l.loss, l.grads)
        },
        &params,
        TOL_ACTOR,
        opts(seed),
    )
}
