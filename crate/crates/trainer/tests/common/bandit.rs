//! Two-state, one-step continuous bandit with a closed-form optimal Q.
//!
//! Observations are one-hot; every transition is terminal, so for any policy
//! `Q(s, a) = r(s, a) = R_s − (a − a*_s)²`.

use fastrl_core::{
    update_epoch, ActionBounds, AgentConfig, Matrix, Minibatch, OffPolicyAgent, ReplayBuffer, SacAgent, Td3Agent,
};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub const BASE: [f64; 2] = [0.5, -0.3];
pub const BEST: [f64; 2] = [0.3, -0.4];
pub const TARGET_ENTROPY: f64 = -1.0;
const ENVS_PER_STATE: usize = 8;

pub fn reward(state: usize, a: f64) -> f64 {
    BASE[state] - (a - BEST[state]).powi(2)
}

pub fn config() -> AgentConfig {
    AgentConfig {
        gamma: 0.9,
        actor_hidden: vec![32, 32],
        critic_hidden: vec![64, 64],
        n_atoms: 101,
        v_min: -3.0,
        v_max: 1.0,
        actor_lr: 1e-3,
        critic_lr: 1e-3,
        alpha_lr: 1e-2,
        target_entropy: TARGET_ENTROPY,
        ..AgentConfig::default()
    }
}

fn obs(n: usize) -> Matrix<f64> {
    Matrix::from_fn(n, 2, |r, c| ((r % 2) == c) as u8 as f64)
}

fn push(buf: &mut ReplayBuffer<f64>, t: &Matrix<f64>) {
    let n = t.rows();
    let o = obs(n);
    let batch = Minibatch {
        reward: (0..n).map(|r| reward(r % 2, t.get(r, 0))).collect(),
        done: vec![1.0; n],
        next_obs: o.clone(),
        obs: o,
        action: t.clone(),
    };
    buf.push(&batch).unwrap();
}

pub struct BanditOutcome {
    /// `(critic expectation, analytic Q)` at the greedy action and at `a*` per state.
    pub q_pairs: Vec<(f64, f64)>,
    pub entropy: Option<f64>,
}

fn critic_q(critics: &fastrl_core::CriticPair<f64>, state: usize, a: f64) -> f64 {
    let o = Matrix::from_fn(1, 2, |_, c| (c == state) as u8 as f64);
    let t = Matrix::from_vec(1, 1, vec![a]).unwrap();
    critics.q_and_action_grad(&o, &t, &[1.0]).unwrap().0[0]
}

pub fn run_sac(seed: u64, updates: usize) -> BanditOutcome {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = 2 * ENVS_PER_STATE;
    let mut agent = SacAgent::<f64>::new(2, ActionBounds::symmetric(1, 1.0), config(), &mut rng).unwrap();
    let mut buf = ReplayBuffer::new(n, 256, 2, 1).unwrap();
    for _ in 0..updates {
        let s = agent.act(&obs(n), false, &mut rng).unwrap();
        push(&mut buf, &s.t);
        update_epoch(&mut agent, &buf, 256, 1, &mut rng, Ok).unwrap();
    }
    assert_eq!(agent.grad_steps(), updates as u64);
    let mut q_pairs = Vec::new();
    for state in 0..2 {
        let o = Matrix::from_fn(1, 2, |_, c| (c == state) as u8 as f64);
        let greedy = agent.act(&o, true, &mut rng).unwrap().t.get(0, 0);
        for a in [greedy, BEST[state]] {
            q_pairs.push((critic_q(&agent.critics, state, a), reward(state, a)));
        }
    }
    let probe = obs(20_000);
    let s = agent.act(&probe, false, &mut rng).unwrap();
    let entropy = -s.log_prob.iter().sum::<f64>() / s.log_prob.len() as f64;
    BanditOutcome {
        q_pairs,
        entropy: Some(entropy),
    }
}

pub fn run_td3(seed: u64, updates: usize) -> BanditOutcome {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = 2 * ENVS_PER_STATE;
    let mut agent = Td3Agent::<f64>::new(2, ActionBounds::symmetric(1, 1.0), config(), &mut rng).unwrap();
    let mut buf = ReplayBuffer::new(n, 256, 2, 1).unwrap();
    // A wide behavior spread keeps the critic informed away from the greedy action.
    let sigma = vec![0.3; n];
    for _ in 0..updates {
        let t = agent.act(&obs(n)).unwrap();
        let t = fastrl_core::policy::td3_explore(&t, &sigma, &mut rng).unwrap();
        push(&mut buf, &t);
        update_epoch(&mut agent, &buf, 256, 1, &mut rng, Ok).unwrap();
    }
    let mut q_pairs = Vec::new();
    for state in 0..2 {
        let o = Matrix::from_fn(1, 2, |_, c| (c == state) as u8 as f64);
        let greedy = agent.act(&o).unwrap().get(0, 0);
        for a in [greedy, BEST[state]] {
            q_pairs.push((critic_q(&agent.critics, state, a), reward(state, a)));
        }
    }
    BanditOutcome { q_pairs, entropy: None }
}
