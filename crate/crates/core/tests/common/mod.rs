#![allow(dead_code)]

use rainflow_dqn::dqn::{bellman_loss_grad, QNetwork, Transition};
use rainflow_dqn::env::{Environment, Observation, StepOutcome, OBS_DIM};
use rainflow_dqn::{Exec, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn random_transitions(rng: &mut ChaCha8Rng, n: usize, actions: usize) -> Vec<Transition> {
    let obs = |rng: &mut ChaCha8Rng| {
        let mut o = [0.0; OBS_DIM];
        for x in &mut o {
            *x = rng.random_range(-1.0..1.0);
        }
        o
    };
    (0..n)
        .map(|_| Transition {
            obs: obs(rng),
            action: rng.random_range(0..actions),
            reward: rng.random_range(-1.0..1.0),
            next_obs: obs(rng),
            terminal: rng.random_bool(0.2),
        })
        .collect()
}

/// Which hidden units are active for every sample of the batch.
fn activation_pattern(net: &QNetwork, batch: &[&Transition]) -> Vec<bool> {
    let mut pattern = Vec::new();
    for t in batch {
        let mut x = t.obs.to_vec();
        for l in 0..net.num_layers() - 1 {
            let (off, n_in, n_out) = net.layer_range(l);
            let p = net.params();
            x = (0..n_out)
                .map(|o| {
                    let z: f64 = (0..n_in).map(|i| p[off + o * n_in + i] * x[i]).sum::<f64>()
                        + p[off + n_in * n_out + o];
                    pattern.push(z > 0.0);
                    z.max(0.0)
                })
                .collect();
        }
    }
    pattern
}

pub struct GradCheck {
    pub max_relative_error: f64,
    pub checked: usize,
    pub skipped: usize,
}

/// Central finite differences of the Bellman loss against the analytic
/// gradient. Coordinates whose perturbation flips any ReLU are skipped.
pub fn gradient_check(
    online: &QNetwork,
    target: &QNetwork,
    batch: &[Transition],
    h: f64,
) -> GradCheck {
    let refs: Vec<&Transition> = batch.iter().collect();
    let analytic = bellman_loss_grad(online, target, &refs, 1.0, Exec::Sequential).unwrap();
    let base_pattern = activation_pattern(online, &refs);
    let mut probe = online.clone();
    let mut out = GradCheck {
        max_relative_error: 0.0,
        checked: 0,
        skipped: 0,
    };
    for i in 0..online.params().len() {
        let theta = online.params()[i];
        probe.params_mut()[i] = theta + h;
        let plus_pattern = activation_pattern(&probe, &refs);
        let plus = bellman_loss_grad(&probe, target, &refs, 1.0, Exec::Sequential)
            .unwrap()
            .loss;
        probe.params_mut()[i] = theta - h;
        let minus_pattern = activation_pattern(&probe, &refs);
        let minus = bellman_loss_grad(&probe, target, &refs, 1.0, Exec::Sequential)
            .unwrap()
            .loss;
        probe.params_mut()[i] = theta;
        if plus_pattern != base_pattern || minus_pattern != base_pattern {
            out.skipped += 1;
            continue;
        }
        let fd = (plus - minus) / (2.0 * h);
        let g = analytic.grad[i];
        let err = (g - fd).abs() / g.abs().max(fd.abs()).max(1e-6);
        out.max_relative_error = out.max_relative_error.max(err);
        out.checked += 1;
    }
    out
}

/// One state, two actions paying 0 and 1; every step ends the episode.
pub struct Bandit {
    pub done: bool,
}

impl Environment for Bandit {
    fn num_actions(&self) -> usize {
        2
    }

    fn horizon(&self) -> usize {
        1
    }

    fn observe(&self) -> Observation {
        [0.5; OBS_DIM]
    }

    fn step(&mut self, action: usize) -> Result<StepOutcome> {
        self.done = true;
        let payoff = if action == 1 { 1.0 } else { 0.0 };
        Ok(StepOutcome {
            observation: [0.5; OBS_DIM],
            reward: rainflow_dqn::env::RewardBreakdown::from_costs(-payoff, 0.0, 0.0),
            done: true,
        })
    }
}

pub fn seeded(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
