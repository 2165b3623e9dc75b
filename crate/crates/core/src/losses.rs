//! Critic losses and policy gradients, point-based and set-based.
//!
//! Policy gradient functions return ascent directions; callers negate them
//! before backpropagating through the actor.

use ndarray::{s, Array1, Array2};
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::network::{BackwardMode, GradientZonotope, Network, SetTrace};
use crate::zonotope::{ln_dia, ln_dia_grad, Zonotope};

/// Radii below this are treated as this value when dividing by `epsilon`.
pub const EPSILON_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub eta_q: f64,
    pub eta_mu: f64,
    pub omega: f64,
    pub epsilon: f64,
    pub lambda_q: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            eta_q: 0.01,
            eta_mu: 0.1,
            omega: 0.5,
            epsilon: 0.1,
            lambda_q: 0.01,
        }
    }
}

fn volume_factor(eta: f64, epsilon: f64) -> f64 {
    if eta == 0.0 {
        0.0
    } else {
        eta / epsilon.max(EPSILON_FLOOR)
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let check = |key: &str, ok: bool, reason: &str| {
            if ok {
                Ok(())
            } else {
                Err(Error::InvalidConfig {
                    key: key.into(),
                    reason: reason.into(),
                })
            }
        };
        check("omega", (0.0..=1.0).contains(&self.omega), "must lie in [0, 1]")?;
        check("epsilon", self.epsilon >= 0.0 && self.epsilon.is_finite(), "must be finite and >= 0")?;
        check("eta_q", self.eta_q >= 0.0, "must be >= 0")?;
        check("eta_mu", self.eta_mu >= 0.0, "must be >= 0")?;
        check("lambda_q", self.lambda_q >= 0.0, "must be >= 0")
    }

    /// `eta_Q / epsilon`, or 0 when `eta_Q = 0`.
    pub fn critic_volume_factor(&self) -> f64 {
        volume_factor(self.eta_q, self.epsilon)
    }

    /// `eta_mu / epsilon`, or 0 when `eta_mu = 0`.
    pub fn actor_volume_factor(&self) -> f64 {
        volume_factor(self.eta_mu, self.epsilon)
    }
}

/// Set-based regression loss of a scalar Q-value set against target `y`.
pub fn set_regression_loss(y: f64, q: &Zonotope, weights: &LossWeights) -> Result<(f64, GradientZonotope)> {
    check_dim("Q-value set", 1, q.dim())?;
    let k = weights.critic_volume_factor();
    let c = q.center()[0];
    let g = q.generators();
    let volume = if k == 0.0 { 0.0 } else { k * ln_dia(g)[0] };
    let loss = 0.5 * (c - y) * (c - y) + volume;
    let d_generators = if k == 0.0 {
        Array2::zeros(g.raw_dim())
    } else {
        ln_dia_grad(g) * k
    };
    Ok((loss, GradientZonotope::new(Array1::from_elem(1, c - y), d_generators)?))
}

/// Squared-error critic loss with L2 on the critic's weight matrices.
///
/// Returns `(loss, d_q)`; the regularizer's parameter gradient is added by
/// [`crate::network::Gradients::add_weight_decay`].
pub fn point_critic_loss(y: f64, q: f64, lambda_q: f64, critic: &Network) -> (f64, f64) {
    let reg = if lambda_q == 0.0 {
        0.0
    } else {
        0.5 * lambda_q * critic.weight_sq_norm()
    };
    (0.5 * (q - y) * (q - y) + reg, q - y)
}

/// `grad_a Q(s, a)` for a scalar critic on the concatenated input `[s, a]`.
pub fn policy_gradient_point(critic: &Network, s: &Array1<f64>, a: &Array1<f64>) -> Result<Array1<f64>> {
    check_dim("critic input", critic.input_dim(), s.len() + a.len())?;
    check_dim("critic output", 1, critic.output_dim())?;
    let x = ndarray::concatenate![ndarray::Axis(0), *s, *a];
    let (_, cache) = critic.forward_point(&x)?;
    let (_, d_in) = critic.backward_point(&cache, &Array1::ones(1))?;
    Ok(d_in.slice(s![s.len()..]).to_owned())
}

/// Set-based actor gradient with a point critic.
pub fn policy_gradient_sa_pc(a: &Zonotope, dq_dc: &Array1<f64>, weights: &LossWeights) -> Result<GradientZonotope> {
    check_dim("SA-PC center gradient", a.dim(), dq_dc.len())?;
    let generator = actor_volume_ascent(a, weights);
    GradientZonotope::new(dq_dc.clone(), generator)
}

fn actor_volume_ascent(a: &Zonotope, weights: &LossWeights) -> Array2<f64> {
    let k = weights.actor_volume_factor();
    if k == 0.0 {
        Array2::zeros(a.generators().raw_dim())
    } else {
        ln_dia_grad(a.generators()) * -k
    }
}

/// Joint critic input `<s, eps I> x A`.
pub fn critic_input_set(s: &Array1<f64>, epsilon: f64, a: &Zonotope) -> Zonotope {
    Zonotope::linf_ball(s.clone(), epsilon).cartesian_product(a)
}

/// Set-based actor gradient with a set-based critic.
///
/// `q` and `critic_trace` come from `critic.forward_set` on
/// [`critic_input_set`]`(s, epsilon, a)`, whose first `state_dim` rows and
/// columns belong to the state.
pub fn policy_gradient_sa_sc(
    critic: &Network,
    a: &Zonotope,
    q: &Zonotope,
    critic_trace: &SetTrace,
    state_dim: usize,
    weights: &LossWeights,
    mode: BackwardMode,
) -> Result<GradientZonotope> {
    check_dim("Q-value set", 1, q.dim())?;
    let input = critic_trace
        .inputs()
        .first()
        .ok_or(Error::StaleTrace("empty critic trace"))?;
    check_dim("critic input rows", state_dim + a.dim(), input.dim())?;
    if input.num_generators() < state_dim || input.num_generators() - state_dim != a.num_generators() {
        return Err(Error::StaleTrace("critic trace generators differ from the action set"));
    }
    let (rows, cols) = (state_dim.., state_dim..);

    let center_seed = GradientZonotope::center_only(Array1::ones(1), q.num_generators());
    let (_, d_center) = critic.backward_set(critic_trace, &center_seed, mode)?;
    let center = d_center.d_center.slice(s![rows.clone()]).to_owned();

    let k = weights.actor_volume_factor();
    let omega = weights.omega;
    let mut generator = if omega == 0.0 {
        Array2::zeros(a.generators().raw_dim())
    } else {
        ln_dia_grad(a.generators()) * omega
    };
    if omega < 1.0 {
        let seed = GradientZonotope::new(Array1::zeros(1), ln_dia_grad(q.generators()))?;
        let (_, d_in) = critic.backward_set(critic_trace, &seed, mode)?;
        generator.scaled_add(1.0 - omega, &d_in.d_generators.slice(s![rows, cols]));
    }
    let generator = if k == 0.0 {
        Array2::zeros(a.generators().raw_dim())
    } else {
        generator * -k
    };
    GradientZonotope::new(center, generator)
}

/// Bellman target `r + gamma * Q'(s', mu'(s'))`, or `r` on terminal steps.
pub fn critic_target(
    r: f64,
    s_next: &Array1<f64>,
    terminal: bool,
    actor_target: &Network,
    critic_target: &Network,
    gamma: f64,
) -> Result<f64> {
    if terminal || gamma == 0.0 {
        return Ok(r);
    }
    let a = actor_target.eval(s_next)?;
    let x = ndarray::concatenate![ndarray::Axis(0), *s_next, a];
    Ok(r + gamma * critic_target.eval(&x)?[0])
}
