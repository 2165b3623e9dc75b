//! Control benchmarks: 1D quadrocopter, inverted pendulum, unicycle
//! navigation and 2D quadrocopter.
//!
//! Agents act in the normalized box `[-1, 1]^m`; [`Env::to_physical`] clips
//! and scales to the physical action box (only the pendulum differs, with
//! torques in `[-15, 15]`).

use std::f64::consts::{FRAC_PI_3, SQRT_2};

use ndarray::{array, Array1, Array2};
use rand::Rng;

use crate::error::{check_dim, Error, Result};
use crate::interval::{Interval, IntervalBox};

const G: f64 = 9.81;

/// Reward assigned to a step whose state leaves the finite range.
pub const NON_FINITE_REWARD: f64 = -1e3;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EnvKind {
    Quad1d,
    Pendulum,
    Navigation,
    Quad2d,
}

impl EnvKind {
    pub const ALL: [EnvKind; 4] = [EnvKind::Quad1d, EnvKind::Pendulum, EnvKind::Navigation, EnvKind::Quad2d];

    pub fn name(self) -> &'static str {
        match self {
            EnvKind::Quad1d => "quad1d",
            EnvKind::Pendulum => "pendulum",
            EnvKind::Navigation => "navigation",
            EnvKind::Quad2d => "quad2d",
        }
    }
}

impl std::str::FromStr for EnvKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<EnvKind> {
        EnvKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::UnknownEnv(s.to_string()))
    }
}

/// Penalized region in two state coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct Obstacle {
    pub dims: [usize; 2],
    pub region: IntervalBox,
    pub penalty: f64,
}

impl Obstacle {
    pub fn contains(&self, s: &Array1<f64>) -> bool {
        self.region.contains(&array![s[self.dims[0]], s[self.dims[1]]], 0.0)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepResult {
    pub next_state: Array1<f64>,
    pub reward: f64,
    pub terminal: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Env {
    pub kind: EnvKind,
    pub state_dim: usize,
    pub action_dim: usize,
    /// Physical action = `action_scale * clip(normalized, -1, 1)`.
    pub action_scale: f64,
    pub reward_weights: Array1<f64>,
    pub target: Array1<f64>,
    pub obstacle: Option<Obstacle>,
    /// Sampling box for training start states.
    pub initial: IntervalBox,
    /// Start state used for verification and attack rollouts.
    pub eval_start: Array1<f64>,
    pub dt: f64,
    pub max_steps: usize,
    /// Episodes end early once the position is this close to the target.
    pub goal_radius: Option<f64>,
}

impl Env {
    pub fn new(kind: EnvKind) -> Env {
        let base = |n: usize, m: usize, weights: Array1<f64>, initial: IntervalBox, start: Array1<f64>| Env {
            kind,
            state_dim: n,
            action_dim: m,
            action_scale: 1.0,
            reward_weights: weights,
            target: Array1::zeros(n),
            obstacle: None,
            initial,
            eval_start: start,
            dt: 0.05,
            max_steps: 100,
            goal_radius: None,
        };
        match kind {
            EnvKind::Quad1d => base(
                2,
                1,
                array![1.0, 0.01],
                IntervalBox::from_vecs(vec![-4.0, 0.0], vec![4.0, 0.0]).unwrap(),
                array![-4.0, 0.0],
            ),
            EnvKind::Pendulum => Env {
                action_scale: 15.0,
                ..base(
                    2,
                    1,
                    array![1.0, 0.01],
                    IntervalBox::from_vecs(vec![-FRAC_PI_3, 0.0], vec![FRAC_PI_3, 0.0]).unwrap(),
                    array![0.5, 0.0],
                )
            },
            EnvKind::Navigation => {
                let s0 = array![3.0, 3.0, 0.0, 0.0];
                Env {
                    obstacle: Some(Obstacle {
                        dims: [0, 1],
                        region: IntervalBox::from_vecs(vec![1.0, 1.0], vec![2.0, 2.0]).unwrap(),
                        penalty: 1.0,
                    }),
                    goal_radius: Some(0.1),
                    ..base(4, 2, array![1.0, 1.0, 0.0, 0.0], IntervalBox::point(&s0), s0)
                }
            }
            EnvKind::Quad2d => {
                let s0 = array![1.0, 0.0, 1.0, 0.0, 0.0, 0.0];
                base(6, 2, array![1.0, 0.01, 1.0, 0.01, 0.0, 0.0], IntervalBox::point(&s0), s0)
            }
        }
    }

    pub fn by_name(name: &str) -> Result<Env> {
        Ok(Env::new(name.parse()?))
    }

    pub fn name(&self) -> &'static str {
        self.kind.name()
    }

    pub fn to_physical(&self, a: &Array1<f64>) -> Array1<f64> {
        a.mapv(|v| self.action_scale * v.clamp(-1.0, 1.0))
    }

    /// Continuous-time vector field with a physical action.
    pub fn field(&self, s: &Array1<f64>, a: &Array1<f64>) -> Array1<f64> {
        match self.kind {
            EnvKind::Quad1d => {
                let m = 0.05;
                array![s[1], (a[0] + 1.0) / (2.0 * m) - G]
            }
            EnvKind::Pendulum => {
                let (m, l) = (1.0, 1.0);
                array![s[1], G / l * s[0].sin() + a[0] / (m * l * l)]
            }
            EnvKind::Navigation => array![s[3] * s[2].cos(), s[3] * s[2].sin(), a[0], a[1]],
            EnvKind::Quad2d => {
                let thrust = quad2d_thrust_per_mass(a[0] + a[1]);
                array![
                    s[1],
                    s[4].sin() * thrust,
                    s[3],
                    s[4].cos() * thrust - G,
                    s[5],
                    QUAD2D_TORQUE * (a[1] - a[0]),
                ]
            }
        }
    }

    /// Jacobian of the field w.r.t. `[s, a]` (physical action).
    pub fn jacobian(&self, s: &Array1<f64>, a: &Array1<f64>) -> Array2<f64> {
        let pt = |x: f64| Interval::point(x);
        let sv: Vec<Interval> = s.iter().map(|&x| pt(x)).collect();
        let av: Vec<Interval> = a.iter().map(|&x| pt(x)).collect();
        self.jacobian_interval(&sv, &av).mapv(|iv| iv.lo)
    }

    /// Interval enclosure of the Jacobian over a box of states and physical actions.
    pub fn jacobian_interval(&self, s: &[Interval], a: &[Interval]) -> Array2<Interval> {
        let n = self.state_dim;
        let mut j = Array2::from_elem((n, n + self.action_dim), Interval::point(0.0));
        match self.kind {
            EnvKind::Quad1d => {
                j[[0, 1]] = Interval::point(1.0);
                j[[1, 2]] = Interval::point(1.0 / (2.0 * 0.05));
            }
            EnvKind::Pendulum => {
                j[[0, 1]] = Interval::point(1.0);
                j[[1, 0]] = s[0].cos().scale(G);
                j[[1, 2]] = Interval::point(1.0);
            }
            EnvKind::Navigation => {
                let (c, sn, v) = (s[2].cos(), s[2].sin(), s[3]);
                j[[0, 2]] = (v * sn).scale(-1.0);
                j[[0, 3]] = c;
                j[[1, 2]] = v * c;
                j[[1, 3]] = sn;
                j[[2, 4]] = Interval::point(1.0);
                j[[3, 5]] = Interval::point(1.0);
            }
            EnvKind::Quad2d => {
                let (c, sn) = (s[4].cos(), s[4].sin());
                let thrust = (a[0] + a[1]).scale(G / 4.0) + Interval::point(G);
                j[[0, 1]] = Interval::point(1.0);
                j[[1, 4]] = c * thrust;
                j[[1, 6]] = sn.scale(G / 4.0);
                j[[1, 7]] = sn.scale(G / 4.0);
                j[[2, 3]] = Interval::point(1.0);
                j[[3, 4]] = (sn * thrust).scale(-1.0);
                j[[3, 6]] = c.scale(G / 4.0);
                j[[3, 7]] = c.scale(G / 4.0);
                j[[4, 5]] = Interval::point(1.0);
                j[[5, 6]] = Interval::point(-QUAD2D_TORQUE);
                j[[5, 7]] = Interval::point(QUAD2D_TORQUE);
            }
        }
        j
    }

    /// Whether the field is affine in `[s, a]`.
    pub fn is_linear(&self) -> bool {
        matches!(self.kind, EnvKind::Quad1d)
    }

    /// Classic RK4 step with the action held constant.
    pub fn rk4(&self, s: &Array1<f64>, a: &Array1<f64>, dt: f64) -> Array1<f64> {
        let k1 = self.field(s, a);
        let k2 = self.field(&(s + &(&k1 * (0.5 * dt))), a);
        let k3 = self.field(&(s + &(&k2 * (0.5 * dt))), a);
        let k4 = self.field(&(s + &(&k3 * dt)), a);
        s + &((k1 + &k2 * 2.0 + &k3 * 2.0 + k4) * (dt / 6.0))
    }

    /// Explicit Euler step, the discretization used by the verifier.
    pub fn euler(&self, s: &Array1<f64>, a: &Array1<f64>) -> Array1<f64> {
        s + &(self.field(s, a) * self.dt)
    }

    /// Reward for arriving in `s_next`.
    pub fn reward(&self, s_next: &Array1<f64>) -> f64 {
        let dist: f64 = self
            .reward_weights
            .iter()
            .zip(s_next.iter().zip(self.target.iter()))
            .map(|(w, (s, t))| w * (s - t).abs())
            .sum();
        let penalty = match &self.obstacle {
            Some(o) if o.contains(s_next) => o.penalty,
            _ => 0.0,
        };
        -dist - penalty
    }

    /// One environment step from `s` under normalized action `a`.
    pub fn step(&self, s: &Array1<f64>, a: &Array1<f64>) -> Result<StepResult> {
        check_dim("env state", self.state_dim, s.len())?;
        check_dim("env action", self.action_dim, a.len())?;
        let next = self.rk4(s, &self.to_physical(a), self.dt);
        if next.iter().any(|v| !v.is_finite()) {
            return Ok(StepResult {
                next_state: next,
                reward: NON_FINITE_REWARD,
                terminal: true,
            });
        }
        let reward = self.reward(&next);
        let terminal = self
            .goal_radius
            .is_some_and(|r| (next[0] - self.target[0]).hypot(next[1] - self.target[1]) < r);
        Ok(StepResult {
            next_state: next,
            reward,
            terminal,
        })
    }

    pub fn reset<R: Rng + ?Sized>(&self, rng: &mut R) -> Array1<f64> {
        self.initial.sample(rng)
    }
}

const QUAD2D_MASS: f64 = 0.027;
const QUAD2D_ARM: f64 = 0.0397;
const QUAD2D_INERTIA: f64 = 1.4e-4;
/// `theta'' = QUAD2D_TORQUE * (a2 - a1)`, from `l (a~2 - a~1) / (sqrt(2) J)` with `a~ = (1 + a/2) m g / 2`.
const QUAD2D_TORQUE: f64 = QUAD2D_ARM * QUAD2D_MASS * G / (4.0 * SQRT_2 * QUAD2D_INERTIA);

/// `(a~1 + a~2) / m` for rotor command sum `a1 + a2`.
fn quad2d_thrust_per_mass(sum: f64) -> f64 {
    G * (1.0 + sum / 4.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn quad1d_field_examples() {
        let env = Env::new(EnvKind::Quad1d);
        let hover = 2.0 * 0.05 * G - 1.0;
        assert!(env.field(&array![0.0, 0.0], &array![hover])[1].abs() < 1e-12);
        assert!((env.field(&array![0.0, 0.0], &array![1.0])[1] - 10.19).abs() < 1e-12);
        assert!((env.field(&array![0.0, 0.0], &array![-1.0])[1] + 9.81).abs() < 1e-12);
    }

    #[test]
    fn pendulum_field_examples() {
        let env = Env::new(EnvKind::Pendulum);
        assert_eq!(env.field(&array![0.0, 0.0], &array![0.0]), array![0.0, 0.0]);
        assert!((env.field(&array![std::f64::consts::FRAC_PI_2, 0.0], &array![0.0])[1] - 9.81).abs() < 1e-12);
        assert_eq!(env.field(&array![0.0, 0.0], &array![15.0])[1], 15.0);
        assert_eq!(env.to_physical(&array![2.0]), array![15.0]);
    }

    #[test]
    fn navigation_field_examples() {
        let env = Env::new(EnvKind::Navigation);
        let ds = env.field(&array![1.0, 2.0, 0.7, 0.0], &array![0.3, -0.2]);
        assert_eq!((ds[0], ds[1]), (0.0, 0.0));
        assert_eq!(env.field(&array![0.0, 0.0, 0.0, 1.0], &array![0.0, 0.0]), array![1.0, 0.0, 0.0, 0.0]);
        assert_eq!(env.eval_start, array![3.0, 3.0, 0.0, 0.0]);
    }

    #[test]
    fn quad2d_hover_and_symmetry() {
        let env = Env::new(EnvKind::Quad2d);
        let ds = env.field(&Array1::zeros(6), &array![0.0, 0.0]);
        assert!(ds.iter().all(|v| v.abs() < 1e-12));
        let ds = env.field(&Array1::zeros(6), &array![1.0, 1.0]);
        assert!((ds[3] - 0.5 * G).abs() < 1e-12);
        assert_eq!(ds[5], 0.0);
        let ds = env.field(&Array1::zeros(6), &array![0.3, 0.3]);
        assert_eq!(ds[5], 0.0);
    }

    #[test]
    fn rewards() {
        let env = Env::new(EnvKind::Pendulum);
        let r = env.step(&array![0.0, 0.0], &array![0.0]).unwrap();
        assert_eq!(r.reward, 0.0);
        let env = Env::new(EnvKind::Quad1d);
        assert!((env.reward(&array![-2.0, 3.0]) + 2.03).abs() < 1e-15);
        let nav = Env::new(EnvKind::Navigation);
        assert!((nav.reward(&array![1.5, 1.5, 0.0, 0.0]) + 4.0).abs() < 1e-15);
        assert!((nav.reward(&array![2.5, 1.5, 0.0, 0.0]) + 4.0).abs() < 1e-15);
    }

    #[test]
    fn registry() {
        for k in EnvKind::ALL {
            assert_eq!(Env::by_name(k.name()).unwrap().kind, k);
        }
        assert!(matches!(Env::by_name("cartpole"), Err(Error::UnknownEnv(_))));
    }

    fn random_point<R: Rng>(env: &Env, rng: &mut R) -> (Array1<f64>, Array1<f64>) {
        let s = Array1::from_shape_simple_fn(env.state_dim, || rng.random_range(-1.0..1.0));
        let a = Array1::from_shape_simple_fn(env.action_dim, || rng.random_range(-1.0..1.0));
        (s, env.to_physical(&a))
    }

    fn max_abs(x: &Array1<f64>) -> f64 {
        x.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    #[test]
    fn rk4_step_halving() {
        let mut rng = ChaCha8Rng::seed_from_u64(40);
        for kind in EnvKind::ALL {
            let env = Env::new(kind);
            let mut worst = 0.0f64;
            for _ in 0..100 {
                let (s, a) = random_point(&env, &mut rng);
                let coarse = env.rk4(&s, &a, env.dt);
                let fine = env.rk4(&env.rk4(&s, &a, env.dt / 2.0), &a, env.dt / 2.0);
                worst = worst.max(max_abs(&(coarse - fine)));
            }
            // full-torque pendulum and quad2d attitude steps carry large fifth derivatives
            let tol = if matches!(kind, EnvKind::Pendulum | EnvKind::Quad2d) { 1e-5 } else { 1e-6 };
            assert!(worst < tol, "{kind:?} step-halving difference {worst:e}");
        }
    }

    #[test]
    fn rk4_global_error_is_fourth_order() {
        let mut rng = ChaCha8Rng::seed_from_u64(44);
        for kind in EnvKind::ALL {
            let env = Env::new(kind);
            let (s, a) = random_point(&env, &mut rng);
            let run = |h: f64, steps: usize| (0..steps).fold(s.clone(), |x, _| env.rk4(&x, &a, h));
            let horizon = 1.0;
            let reference = run(horizon / 1600.0, 1600);
            let e1 = max_abs(&(run(horizon / 20.0, 20) - &reference));
            let e2 = max_abs(&(run(horizon / 40.0, 40) - &reference));
            if e1 < 1e-12 {
                // polynomial trajectories are integrated exactly
                continue;
            }
            let ratio = e1 / e2;
            assert!((12.0..20.0).contains(&ratio), "{kind:?} error ratio {ratio}");
        }
    }

    #[test]
    fn jacobian_matches_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(41);
        for kind in EnvKind::ALL {
            let env = Env::new(kind);
            let (s, a) = random_point(&env, &mut rng);
            let j = env.jacobian(&s, &a);
            let x = ndarray::concatenate![ndarray::Axis(0), s, a];
            let n = env.state_dim;
            let f = |x: &Array1<f64>| env.field(&x.slice(ndarray::s![..n]).to_owned(), &x.slice(ndarray::s![n..]).to_owned());
            for col in 0..x.len() {
                let h = 1e-6;
                let mut xp = x.clone();
                xp[col] += h;
                let mut xm = x.clone();
                xm[col] -= h;
                let fd = (f(&xp) - f(&xm)) / (2.0 * h);
                for row in 0..n {
                    assert!((fd[row] - j[[row, col]]).abs() < 1e-5 * (1.0 + fd[row].abs()), "{kind:?} [{row},{col}]");
                }
            }
        }
    }

    #[test]
    fn interval_jacobian_encloses_samples() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        for kind in EnvKind::ALL {
            let env = Env::new(kind);
            let n = env.state_dim;
            let m = env.action_dim;
            let lo: Vec<f64> = (0..n + m).map(|_| rng.random_range(-1.0..0.5)).collect();
            let hi: Vec<f64> = lo.iter().map(|l| l + rng.random_range(0.0..1.0)).collect();
            let iv: Vec<Interval> = lo.iter().zip(&hi).map(|(&l, &h)| Interval::new(l, h)).collect();
            let j = env.jacobian_interval(&iv[..n], &iv[n..]);
            for _ in 0..200 {
                let x: Vec<f64> = lo.iter().zip(&hi).map(|(&l, &h)| rng.random_range(l..=h)).collect();
                let jp = env.jacobian(&Array1::from(x[..n].to_vec()), &Array1::from(x[n..].to_vec()));
                for ((r, c), v) in jp.indexed_iter() {
                    let b = j[[r, c]];
                    assert!(b.lo - 1e-12 <= *v && *v <= b.hi + 1e-12, "{kind:?} [{r},{c}]");
                }
            }
        }
    }

    #[test]
    fn reset_respects_initial_box() {
        let mut rng = ChaCha8Rng::seed_from_u64(43);
        let env = Env::new(EnvKind::Quad1d);
        for _ in 0..100 {
            let s = env.reset(&mut rng);
            assert!(s[0].abs() <= 4.0 && s[1] == 0.0);
        }
    }
}
