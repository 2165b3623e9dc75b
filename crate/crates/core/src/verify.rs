//! Closed-loop reachability of environment and actor, and certified
//! lower-bound returns.
//!
//! One step over a state zonotope `S` with `q` generators:
//!
//! 1. The observation set is `S + [-eps, eps]^n`, i.e. `q + n` columns.
//! 2. The actor's set pass maps it to an action zonotope whose first `q + n`
//!    columns are images of the observation columns; the rest are fresh
//!    approximation errors.
//! 3. State and action are stacked over those shared columns, so the
//!    dynamics see the correlation between `s` and `a`.
//! 4. The Euler map `s + dt f(s, a)` is linearized at the joint center. For
//!    nonlinear fields the mean-value remainder `(J([Z]) - J(c)) (z - c)` is
//!    bounded with interval arithmetic and added as a box.
//! 5. Columns beyond the budget are collapsed into a box.
//!
//! The lower bound sums, for each reached set, the exact maximum of
//! `w^T |s - s*|` over the zonotope plus any obstacle penalty the hull may
//! incur.

use ndarray::{s, Array1, Array2, Axis};
use rand::Rng;

use crate::env::Env;
use crate::error::{Error, Result};
use crate::interval::{Interval, IntervalBox};
use crate::network::{Activation, Layer, Network};
use crate::zonotope::{row_abs_sums, Zonotope};

pub const DEFAULT_BUDGET: usize = 50;
pub const DIVERGENCE_WIDTH: f64 = 1e6;
pub const DEFAULT_EPSILONS: [f64; 6] = [0.0, 0.02, 0.05, 0.1, 0.15, 0.2];

// Relative inflation of boxed columns; covers summation-order rounding.
const BOX_INFLATION: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct ReachConfig {
    pub epsilon: f64,
    pub horizon: usize,
    pub budget: usize,
    pub gamma: f64,
    /// Re-add the observation ball at every step; otherwise only at `t = 0`.
    pub accumulate: bool,
}

impl ReachConfig {
    pub fn new(epsilon: f64, horizon: usize, gamma: f64) -> ReachConfig {
        ReachConfig {
            epsilon,
            horizon,
            budget: DEFAULT_BUDGET,
            gamma,
            accumulate: true,
        }
    }

    pub fn validate(&self, state_dim: usize) -> Result<()> {
        let bad = |key: &str, reason: String| Err(Error::InvalidConfig { key: key.into(), reason });
        if !(self.epsilon >= 0.0 && self.epsilon.is_finite()) {
            return bad("epsilon", format!("must be finite and >= 0, got {}", self.epsilon));
        }
        if self.horizon == 0 {
            return bad("horizon", "must be at least 1".into());
        }
        if self.budget < state_dim {
            return bad("budget", format!("{} is below the state dimension {state_dim}", self.budget));
        }
        if !(0.0..=1.0).contains(&self.gamma) {
            return bad("gamma", format!("must lie in [0, 1], got {}", self.gamma));
        }
        Ok(())
    }

    /// Perturbation radius applied to the observation at step `t`.
    pub fn epsilon_at(&self, t: usize) -> f64 {
        if self.accumulate || t == 0 {
            self.epsilon
        } else {
            0.0
        }
    }
}

#[derive(Debug, Clone)]
pub struct ReachResult {
    /// `S_0 .. S_T`.
    pub sets: Vec<Zonotope>,
    /// Worst-case `-reward` over each `S_t`; entry 0 is informational.
    pub worst_terms: Vec<f64>,
    pub v_lower: f64,
    pub safe: bool,
}

fn require_tanh_output(actor: &Network) -> Result<()> {
    if has_tanh_output(actor) {
        return Ok(());
    }
    Err(Error::InvalidConfig {
        key: "actor".into(),
        reason: "verification needs a Tanh output layer so actions stay in [-1, 1]".into(),
    })
}

/// Propagate `state` through one closed-loop Euler step.
pub fn reach_step(env: &Env, state: &Zonotope, actor: &Network, epsilon: f64, budget: usize) -> Result<Zonotope> {
    let (n, m) = (env.state_dim, env.action_dim);
    crate::error::check_dim("reach state", n, state.dim())?;
    crate::error::check_dim("actor input", n, actor.input_dim())?;
    crate::error::check_dim("actor output", m, actor.output_dim())?;
    require_tanh_output(actor)?;

    let q = state.num_generators();
    let observation = if epsilon > 0.0 {
        state.minkowski_interval(&IntervalBox::symmetric(n, epsilon))?
    } else {
        state.clone()
    };
    let qo = observation.num_generators();
    let (action, _) = actor.forward_set(&observation)?;
    let cols = action.num_generators();

    // joint [s; a_phys] over the action's columns; state rows only use the first q
    let mut jc = Array1::zeros(n + m);
    jc.slice_mut(s![..n]).assign(state.center());
    jc.slice_mut(s![n..]).assign(&(action.center() * env.action_scale));
    let mut jg = Array2::zeros((n + m, cols));
    jg.slice_mut(s![..n, ..q]).assign(state.generators());
    jg.slice_mut(s![n.., ..]).assign(&(action.generators() * env.action_scale));
    debug_assert!(cols >= qo);

    let (cs, ca) = (jc.slice(s![..n]).to_owned(), jc.slice(s![n..]).to_owned());
    let jac = env.jacobian(&cs, &ca);
    let center = &cs + &(env.field(&cs, &ca) * env.dt);
    let mut gens = jg.slice(s![..n, ..]).to_owned();
    gens.scaled_add(env.dt, &jac.dot(&jg));

    let mut next = Zonotope::from_parts(center, gens);
    if !env.is_linear() {
        let r = row_abs_sums(&jg);
        let hull: Vec<Interval> = (0..n + m).map(|i| Interval::new(jc[i] - r[i], jc[i] + r[i])).collect();
        let jbox = env.jacobian_interval(&hull[..n], &hull[n..]);
        let remainder: Array1<f64> = (0..n)
            .map(|i| {
                let row: f64 = (0..n + m).map(|k| (jbox[[i, k]] - Interval::point(jac[[i, k]])).mag() * r[k]).sum();
                env.dt * row
            })
            .collect();
        next = next.minkowski_interval(&IntervalBox::from_parts_unchecked(-&remainder, remainder))?;
    }
    Ok(reduce(&next, budget))
}

/// Keep the `budget - n` columns of largest infinity norm and enclose the
/// rest in an axis-aligned box of `n` columns.
pub fn reduce(z: &Zonotope, budget: usize) -> Zonotope {
    let (n, q) = z.generators().dim();
    if q <= budget || budget < n {
        return z.clone();
    }
    let g = z.generators();
    let norms: Vec<f64> = g.axis_iter(Axis(1)).map(|c| c.iter().fold(0.0, |a: f64, v| a.max(v.abs()))).collect();
    let mut order: Vec<usize> = (0..q).collect();
    // descending by norm, ties by index for determinism
    order.sort_by(|&a, &b| norms[b].total_cmp(&norms[a]).then(a.cmp(&b)));
    let keep = budget - n;
    let mut kept: Vec<usize> = order[..keep].to_vec();
    kept.sort_unstable();
    let boxed = row_abs_sums(&g.select(Axis(1), &order[keep..])) * (1.0 + BOX_INFLATION);
    let mut out = Array2::zeros((n, budget));
    out.slice_mut(s![.., ..keep]).assign(&g.select(Axis(1), &kept));
    for i in 0..n {
        out[[i, keep + i]] = boxed[i];
    }
    Zonotope::from_parts(z.center().clone(), out)
}

fn check_supported_reward(env: &Env) -> Result<()> {
    if env.reward_weights.iter().any(|&w| !(w >= 0.0 && w.is_finite())) {
        return Err(Error::UnsupportedReward(format!(
            "weights must be finite and non-negative, got {:?}",
            env.reward_weights.to_vec()
        )));
    }
    if env.reward_weights.len() != env.state_dim || env.target.len() != env.state_dim {
        return Err(Error::UnsupportedReward("weights and target must match the state dimension".into()));
    }
    Ok(())
}

/// Exact `max_{s in Z} w^T |s - target|`, by enumerating sign patterns on the
/// weighted coordinates.
pub fn worst_weighted_distance(z: &Zonotope, w: &Array1<f64>, target: &Array1<f64>) -> f64 {
    let dims: Vec<usize> = (0..w.len()).filter(|&i| w[i] > 0.0).collect();
    let g = z.generators();
    let mut best = 0.0f64;
    for mask in 0u64..(1u64 << dims.len()) {
        let sigma = |k: usize| if mask >> k & 1 == 1 { -1.0 } else { 1.0 };
        let mut val = 0.0;
        for (k, &i) in dims.iter().enumerate() {
            val += sigma(k) * w[i] * (z.center()[i] - target[i]);
        }
        for col in g.axis_iter(Axis(1)) {
            let dot: f64 = dims.iter().enumerate().map(|(k, &i)| sigma(k) * w[i] * col[i]).sum();
            val += dot.abs();
        }
        best = best.max(val);
    }
    best
}

/// `w^T |c - target| + |w^T G| 1`: centre distance plus half the diameter of
/// the `w`-projection. Not an upper bound on `w^T |s - target|` in general
/// (generators can cancel in the projection); see [`worst_weighted_distance`].
pub fn projected_weighted_distance(z: &Zonotope, w: &Array1<f64>, target: &Array1<f64>) -> f64 {
    let centre: f64 = w.iter().zip(z.center().iter().zip(target.iter())).map(|(w, (c, t))| w * (c - t).abs()).sum();
    centre + w.dot(z.generators()).iter().map(|v| v.abs()).sum::<f64>()
}

/// Worst-case cost of arriving somewhere in `z`.
pub fn worst_cost(env: &Env, z: &Zonotope) -> f64 {
    let penalty = match &env.obstacle {
        Some(o) if z.interval_hull().project(&o.dims).intersects(&o.region) => o.penalty,
        _ => 0.0,
    };
    worst_weighted_distance(z, &env.reward_weights, &env.target) + penalty
}

/// `-sum_{t=0}^{T-1} gamma^t worst(S_{t+1})` over `S_0 .. S_T`.
pub fn lower_bound_return(env: &Env, sets: &[Zonotope], gamma: f64) -> Result<f64> {
    check_supported_reward(env)?;
    Ok(-discounted(sets.iter().skip(1).map(|z| worst_cost(env, z)), gamma))
}

/// The same sum with [`projected_weighted_distance`] and no obstacle term.
pub fn projected_lower_bound_return(env: &Env, sets: &[Zonotope], gamma: f64) -> Result<f64> {
    check_supported_reward(env)?;
    let terms = sets
        .iter()
        .skip(1)
        .map(|z| projected_weighted_distance(z, &env.reward_weights, &env.target));
    Ok(-discounted(terms, gamma))
}

fn discounted(terms: impl Iterator<Item = f64>, gamma: f64) -> f64 {
    let mut total = 0.0;
    let mut discount = 1.0;
    for v in terms {
        total += discount * v;
        discount *= gamma;
    }
    total
}

/// Safe iff no `S_t`'s interval hull, projected to the obstacle dims, meets
/// the (closed) obstacle box. Environments without an obstacle are safe.
pub fn verify_safety(env: &Env, sets: &[Zonotope]) -> bool {
    match &env.obstacle {
        None => true,
        Some(o) => sets
            .iter()
            .all(|z| !z.interval_hull().project(&o.dims).intersects(&o.region)),
    }
}

/// Reach sets from `start` for `config.horizon` steps.
pub fn reach(env: &Env, actor: &Network, start: &Zonotope, config: &ReachConfig) -> Result<ReachResult> {
    config.validate(env.state_dim)?;
    check_supported_reward(env)?;
    let mut sets = vec![start.clone()];
    for t in 0..config.horizon {
        let next = reach_step(env, &sets[t], actor, config.epsilon_at(t), config.budget)?;
        let width = next.diameter().iter().fold(0.0, |a: f64, &w| if w.is_nan() { f64::NAN } else { a.max(w) });
        if !(width <= DIVERGENCE_WIDTH) {
            return Err(Error::Diverged { step: t + 1, width });
        }
        sets.push(next);
    }
    let worst_terms = sets.iter().map(|z| worst_cost(env, z)).collect();
    let v_lower = lower_bound_return(env, &sets, config.gamma)?;
    let safe = verify_safety(env, &sets);
    Ok(ReachResult {
        sets,
        worst_terms,
        v_lower,
        safe,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CurvePoint {
    pub epsilon: f64,
    /// `-inf` when the reach sets diverged.
    pub v_lower: f64,
    pub safe: bool,
}

/// `V_lower` from `env.eval_start` for each epsilon, sorted by epsilon.
pub fn robustness_curve(env: &Env, actor: &Network, epsilons: &[f64], base: &ReachConfig) -> Result<Vec<CurvePoint>> {
    let mut eps = epsilons.to_vec();
    eps.sort_by(f64::total_cmp);
    let start = Zonotope::point(env.eval_start.clone());
    eps.into_iter()
        .map(|e| {
            let cfg = ReachConfig { epsilon: e, ..base.clone() };
            match reach(env, actor, &start, &cfg) {
                Ok(r) => Ok(CurvePoint {
                    epsilon: e,
                    v_lower: r.v_lower,
                    safe: r.safe,
                }),
                Err(Error::Diverged { .. }) => Ok(CurvePoint {
                    epsilon: e,
                    v_lower: f64::NEG_INFINITY,
                    safe: false,
                }),
                Err(err) => Err(err),
            }
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct Rollout {
    /// `s_0 .. s_T`.
    pub states: Vec<Array1<f64>>,
    pub rewards: Vec<f64>,
    pub discounted_return: f64,
}

/// Euler rollout matching the verifier: at each step the actor sees
/// `s + delta` with `delta` uniform in the ball of radius
/// `config.epsilon_at(t)`. No early termination.
pub fn perturbed_rollout<R: Rng + ?Sized>(
    env: &Env,
    actor: &Network,
    start: &Array1<f64>,
    config: &ReachConfig,
    rng: &mut R,
) -> Result<Rollout> {
    let mut states = vec![start.clone()];
    let mut rewards = Vec::with_capacity(config.horizon);
    for t in 0..config.horizon {
        let s = &states[t];
        let eps = config.epsilon_at(t);
        let obs = if eps > 0.0 {
            s.mapv(|v| v + rng.random_range(-eps..=eps))
        } else {
            s.clone()
        };
        let a = env.to_physical(&actor.eval(&obs)?);
        let next = env.euler(s, &a);
        rewards.push(env.reward(&next));
        states.push(next);
    }
    let discounted_return = -discounted(rewards.iter().map(|r| -r), config.gamma);
    Ok(Rollout {
        states,
        rewards,
        discounted_return,
    })
}

/// Is the actor's output layer a Tanh (required by [`reach`])?
pub fn has_tanh_output(actor: &Network) -> bool {
    matches!(actor.layers().last().and_then(Layer::activation), Some(Activation::Tanh))
}

pub fn reach_csv(result: &ReachResult) -> String {
    let n = result.sets.first().map_or(0, Zonotope::dim);
    let mut out = String::from("t");
    for i in 0..n {
        out.push_str(&format!(",l{i},u{i}"));
    }
    out.push_str(",worst_reward_term\n");
    for (t, (z, w)) in result.sets.iter().zip(&result.worst_terms).enumerate() {
        let h = z.interval_hull();
        out.push_str(&t.to_string());
        for i in 0..n {
            out.push_str(&format!(",{},{}", h.lower()[i], h.upper()[i]));
        }
        out.push_str(&format!(",{w}\n"));
    }
    out
}

pub fn curve_csv(curve: &[CurvePoint]) -> String {
    let mut out = String::from("epsilon,V_lower,safe\n");
    for p in curve {
        out.push_str(&format!("{},{},{}\n", p.epsilon, p.v_lower, p.safe));
    }
    out
}
