//! Observation attacks used by the Naive and Grad baselines.
//!
//! Both minimize `Q(s, mu(s~))` over perturbed observations `s~` in the
//! l-infinity ball of radius `epsilon` around the true state `s`.

use std::str::FromStr;

use ndarray::Array1;
use rand::Rng;

use crate::config::AttackConfig;
use crate::env::Env;
use crate::error::{Error, Result};
use crate::losses::policy_gradient_point;
use crate::network::Network;
use crate::zonotope::sgn;

fn q_value(actor: &Network, critic: &Network, s: &Array1<f64>, observed: &Array1<f64>) -> Result<f64> {
    let a = actor.eval(observed)?;
    let x = ndarray::concatenate![ndarray::Axis(0), *s, a];
    Ok(critic.eval(&x)?[0])
}

/// Best of `samples` uniform draws from the ball, with `s` itself as a candidate.
pub fn naive_attack<R: Rng + ?Sized>(
    actor: &Network,
    critic: &Network,
    s: &Array1<f64>,
    epsilon: f64,
    samples: usize,
    rng: &mut R,
) -> Result<Array1<f64>> {
    if epsilon == 0.0 || samples == 0 {
        return Ok(s.clone());
    }
    let mut best = s.clone();
    let mut best_q = q_value(actor, critic, s, s)?;
    for _ in 0..samples {
        let cand = s.mapv(|v| v + rng.random_range(-epsilon..=epsilon));
        let q = q_value(actor, critic, s, &cand)?;
        if q < best_q {
            best_q = q;
            best = cand;
        }
    }
    Ok(best)
}

/// Iterated sign-gradient descent on `Q(s, mu(s~))` with step `epsilon / steps`.
pub fn grad_attack(actor: &Network, critic: &Network, s: &Array1<f64>, epsilon: f64, steps: usize) -> Result<Array1<f64>> {
    if epsilon == 0.0 || steps == 0 {
        return Ok(s.clone());
    }
    let step = epsilon / steps as f64;
    let mut obs = s.clone();
    for _ in 0..steps {
        let (a, cache) = actor.forward_point(&obs)?;
        let d_a = policy_gradient_point(critic, s, &a)?;
        let (_, d_obs) = actor.backward_point(&cache, &d_a)?;
        for ((o, &g), &center) in obs.iter_mut().zip(d_obs.iter()).zip(s.iter()) {
            *o = (*o - step * sgn(g)).clamp(center - epsilon, center + epsilon);
        }
    }
    Ok(obs)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AttackKind {
    Naive,
    Grad,
}

impl AttackKind {
    pub fn name(self) -> &'static str {
        match self {
            AttackKind::Naive => "naive",
            AttackKind::Grad => "grad",
        }
    }
}

impl FromStr for AttackKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<AttackKind> {
        match s.to_ascii_lowercase().as_str() {
            "naive" => Ok(AttackKind::Naive),
            "grad" => Ok(AttackKind::Grad),
            _ => Err(Error::InvalidConfig {
                key: "attack".into(),
                reason: format!("unknown attack `{s}` (expected naive or grad)"),
            }),
        }
    }
}

/// Adversarial observation for `s` under the chosen attack.
pub fn perturb<R: Rng + ?Sized>(
    kind: AttackKind,
    actor: &Network,
    critic: &Network,
    s: &Array1<f64>,
    epsilon: f64,
    config: &AttackConfig,
    rng: &mut R,
) -> Result<Array1<f64>> {
    match kind {
        AttackKind::Naive => naive_attack(actor, critic, s, epsilon, config.naive_samples, rng),
        AttackKind::Grad => grad_attack(actor, critic, s, epsilon, config.grad_steps),
    }
}

/// Discounted return of a fixed-horizon Euler rollout from `env.eval_start`
/// with every observation attacked. Uses the verifier's discretization, so
/// the result can be compared with its lower bound.
#[allow(clippy::too_many_arguments)]
pub fn attacked_return<R: Rng + ?Sized>(
    env: &Env,
    actor: &Network,
    critic: &Network,
    kind: AttackKind,
    epsilon: f64,
    config: &AttackConfig,
    horizon: usize,
    gamma: f64,
    rng: &mut R,
) -> Result<f64> {
    let mut s = env.eval_start.clone();
    let (mut total, mut discount) = (0.0, 1.0);
    for _ in 0..horizon {
        let obs = perturb(kind, actor, critic, &s, epsilon, config, rng)?;
        let a = env.to_physical(&actor.eval(&obs)?);
        s = env.euler(&s, &a);
        total += discount * env.reward(&s);
        discount *= gamma;
    }
    Ok(total)
}
