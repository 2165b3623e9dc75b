//! DDPG and TD3 training for the point-based and set-based algorithms.

use std::time::Instant;

use ndarray::{concatenate, Array1, Array2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::attack::{grad_attack, naive_attack};
use crate::config::{Algorithm, Learner, TrainConfig};
use crate::env::Env;
use crate::error::{Error, Result};
use crate::losses::{
    critic_input_set, point_critic_loss, policy_gradient_point, policy_gradient_sa_pc, policy_gradient_sa_sc,
    set_regression_loss, LossWeights,
};
use crate::network::{Activation, BackwardMode, GradientZonotope, Gradients, Network};
use crate::optim::Adam;
use crate::replay::{ReplayBuffer, StoredAction, Transition};
use crate::zonotope::Zonotope;

/// One row of the episode log.
#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeRecord {
    pub episode: usize,
    pub steps: usize,
    pub undiscounted_return: f64,
    /// Mean critic loss over this episode's updates (0 without updates).
    pub critic_loss_mean: f64,
    /// Mean norm of the actor gradient over this episode's actor updates.
    pub actor_grad_norm: f64,
    pub wall_ms: f64,
}

#[derive(Debug, Clone)]
pub struct Agent {
    pub actor: Network,
    pub critics: Vec<Network>,
    pub actor_target: Network,
    pub critic_targets: Vec<Network>,
    pub actor_opt: Adam,
    pub critic_opts: Vec<Adam>,
}

impl Agent {
    pub fn new<R: Rng + ?Sized>(config: &TrainConfig, env: &Env, rng: &mut R) -> Agent {
        let (n, m) = (env.state_dim, env.action_dim);
        let actor = Network::mlp(n, &config.network.actor_hidden, m, Some(Activation::Tanh), rng);
        let twins = if config.run.learner == Learner::Td3 { 2 } else { 1 };
        let critics: Vec<Network> = (0..twins)
            .map(|_| Network::mlp(n + m, &config.network.critic_hidden, 1, None, rng))
            .collect();
        Agent {
            actor_opt: Adam::new(&actor, config.hyper.actor_lr, config.adam),
            critic_opts: critics
                .iter()
                .map(|c| Adam::new(c, config.hyper.critic_lr, config.adam))
                .collect(),
            actor_target: actor.clone(),
            critic_targets: critics.clone(),
            actor,
            critics,
        }
    }
}

/// Update counters, exposed for tests of the warm-up and delay logic.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct UpdateCounts {
    pub critic: u64,
    pub actor: u64,
}

pub struct Trainer {
    pub config: TrainConfig,
    pub env: Env,
    pub agent: Agent,
    pub buffer: ReplayBuffer,
    pub counts: UpdateCounts,
    weights: LossWeights,
    rng: ChaCha8Rng,
    episode: usize,
}

fn stack_rows(rows: &[&Array1<f64>]) -> Array2<f64> {
    let views: Vec<_> = rows.iter().map(|r| r.view()).collect();
    ndarray::stack(Axis(0), &views).expect("rows of equal length")
}

impl Trainer {
    pub fn new(config: TrainConfig) -> Result<Trainer> {
        config.validate()?;
        let mut env = Env::by_name(&config.run.env)?;
        env.dt = config.run.dt;
        env.max_steps = config.run.max_steps;
        let mut rng = ChaCha8Rng::seed_from_u64(config.run.seed);
        let agent = Agent::new(&config, &env, &mut rng);
        Ok(Trainer {
            buffer: ReplayBuffer::new(config.hyper.buffer_size),
            weights: config.loss_weights(),
            config,
            env,
            agent,
            counts: UpdateCounts::default(),
            rng,
            episode: 0,
        })
    }

    pub fn episodes_done(&self) -> usize {
        self.episode
    }

    /// Observation the actor sees at rollout time.
    fn observe(&mut self, s: &Array1<f64>) -> Result<Array1<f64>> {
        let eps = self.config.set.epsilon;
        let agent = &self.agent;
        match self.config.run.algorithm {
            Algorithm::Naive => naive_attack(
                &agent.actor,
                &agent.critics[0],
                s,
                eps,
                self.config.attack.naive_samples,
                &mut self.rng,
            ),
            Algorithm::Grad => grad_attack(&agent.actor, &agent.critics[0], s, eps, self.config.attack.grad_steps),
            _ => Ok(s.clone()),
        }
    }

    /// Proposed (unclipped, noisy) action and what goes into the buffer.
    fn act(&mut self, s: &Array1<f64>) -> Result<(Array1<f64>, StoredAction)> {
        let sigma = self.config.hyper.noise_std;
        let m = self.env.action_dim;
        let noise: Array1<f64> = if sigma > 0.0 {
            let normal = Normal::new(0.0, sigma).expect("finite std");
            (0..m).map(|_| normal.sample(&mut self.rng)).collect()
        } else {
            Array1::zeros(m)
        };
        match self.config.run.algorithm {
            Algorithm::SaPc | Algorithm::SaSc => {
                let input = Zonotope::linf_ball(s.clone(), self.config.set.epsilon);
                let (a, _) = self.agent.actor.forward_set(&input)?;
                let noisy = a.translate(&noise)?;
                let executed = noisy.center().clone();
                let stored = if self.config.run.algorithm == Algorithm::SaSc {
                    StoredAction::Set(noisy)
                } else {
                    StoredAction::Point(executed.mapv(|v| v.clamp(-1.0, 1.0)))
                };
                Ok((executed, stored))
            }
            _ => {
                let obs = self.observe(s)?;
                let a = self.agent.actor.eval(&obs)? + &noise;
                let stored = StoredAction::Point(a.mapv(|v| v.clamp(-1.0, 1.0)));
                Ok((a, stored))
            }
        }
    }

    /// Runs one episode with updates after every step once the buffer holds a batch.
    pub fn run_episode(&mut self) -> Result<EpisodeRecord> {
        let start = Instant::now();
        let mut s = self.env.reset(&mut self.rng);
        let (mut ret, mut steps) = (0.0, 0);
        let (mut loss_sum, mut loss_n) = (0.0, 0usize);
        let (mut grad_sum, mut grad_n) = (0.0, 0usize);
        for _ in 0..self.env.max_steps {
            let (a, stored) = self.act(&s)?;
            let step = self.env.step(&s, &a)?;
            ret += step.reward;
            steps += 1;
            self.buffer.push(Transition {
                state: s.clone(),
                action: stored,
                reward: step.reward,
                next_state: step.next_state.clone(),
                terminal: step.terminal,
            });
            if self.buffer.len() >= self.config.hyper.batch_size {
                let (loss, grad) = self.update()?;
                loss_sum += loss;
                loss_n += 1;
                if let Some(g) = grad {
                    grad_sum += g;
                    grad_n += 1;
                }
            }
            s = step.next_state;
            if step.terminal {
                break;
            }
        }
        self.episode += 1;
        let mean = |sum: f64, n: usize| if n == 0 { 0.0 } else { sum / n as f64 };
        Ok(EpisodeRecord {
            episode: self.episode,
            steps,
            undiscounted_return: ret,
            critic_loss_mean: mean(loss_sum, loss_n),
            actor_grad_norm: mean(grad_sum, grad_n),
            wall_ms: start.elapsed().as_secs_f64() * 1e3,
        })
    }

    /// One training step. Returns the critic loss and, if the actor was
    /// updated, its gradient norm.
    fn update(&mut self) -> Result<(f64, Option<f64>)> {
        let idx = self.buffer.sample_indices(self.config.hyper.batch_size, &mut self.rng);
        let batch: Vec<Transition> = idx.iter().map(|&i| self.buffer.get(i).clone()).collect();
        let targets = self.targets(&batch)?;
        let mut loss = 0.0;
        for k in 0..self.agent.critics.len() {
            loss += self.critic_update(k, &batch, &targets)?;
        }
        loss /= self.agent.critics.len() as f64;
        self.counts.critic += 1;
        let td3 = self.config.run.learner == Learner::Td3;
        let delay = if td3 { self.config.td3.policy_delay as u64 } else { 1 };
        let mut grad_norm = None;
        if self.counts.critic % delay == 0 {
            grad_norm = Some(self.actor_update(&batch)?);
            self.counts.actor += 1;
            self.soft_update_targets();
        } else if !td3 {
            self.soft_update_targets();
        }
        Ok((loss, grad_norm))
    }

    fn soft_update_targets(&mut self) {
        let tau = self.config.hyper.tau;
        let agent = &mut self.agent;
        agent.actor_target.soft_update(&agent.actor, tau);
        for (t, c) in agent.critic_targets.iter_mut().zip(&agent.critics) {
            t.soft_update(c, tau);
        }
    }

    fn targets(&mut self, batch: &[Transition]) -> Result<Array1<f64>> {
        let next: Vec<&Array1<f64>> = batch.iter().map(|t| &t.next_state).collect();
        let s_next = stack_rows(&next);
        let mut a_next = self.agent.actor_target.forward_batch(&s_next)?.0;
        if self.config.run.learner == Learner::Td3 && self.config.td3.target_noise > 0.0 {
            let normal = Normal::new(0.0, self.config.td3.target_noise).expect("finite std");
            let clip = self.config.td3.target_noise_clip;
            for v in a_next.iter_mut() {
                *v = (*v + normal.sample(&mut self.rng).clamp(-clip, clip)).clamp(-1.0, 1.0);
            }
        }
        let x = concatenate![Axis(1), s_next, a_next];
        let mut q_next: Option<Array1<f64>> = None;
        for critic in &self.agent.critic_targets {
            let q = critic.forward_batch(&x)?.0.column(0).to_owned();
            q_next = Some(match q_next {
                None => q,
                Some(prev) => ndarray::Zip::from(&prev).and(&q).map_collect(|a, b| a.min(*b)),
            });
        }
        let q_next = q_next.expect("at least one critic");
        let gamma = self.config.hyper.gamma;
        Ok(batch
            .iter()
            .zip(q_next.iter())
            .map(|(t, q)| if t.terminal { t.reward } else { t.reward + gamma * q })
            .collect())
    }

    fn critic_update(&mut self, k: usize, batch: &[Transition], y: &Array1<f64>) -> Result<f64> {
        let n = batch.len() as f64;
        let lambda = self.config.hyper.lambda_q;
        let critic = &self.agent.critics[k];
        let (mut grads, mut loss) = if self.config.run.algorithm == Algorithm::SaSc {
            let mut grads = Gradients::zeros_like(critic);
            let mut loss = 0.0;
            for (t, &yi) in batch.iter().zip(y.iter()) {
                let a = match &t.action {
                    StoredAction::Set(z) => z.clone(),
                    StoredAction::Point(p) => Zonotope::point(p.clone()),
                };
                let input = critic_input_set(&t.state, self.weights.epsilon, &a);
                let (q, trace) = critic.forward_set(&input)?;
                let (l, d) = set_regression_loss(yi, &q, &self.weights)?;
                let (g, _) = critic.backward_set(&trace, &d, BackwardMode::Frozen)?;
                grads.add_assign(&g);
                loss += l;
            }
            (grads, loss / n)
        } else {
            let rows: Vec<Array1<f64>> = batch
                .iter()
                .map(|t| concatenate![Axis(0), t.state, *t.action.center()])
                .collect();
            let refs: Vec<&Array1<f64>> = rows.iter().collect();
            let x = stack_rows(&refs);
            let (q, cache) = critic.forward_batch(&x)?;
            let mut d = Array2::zeros((batch.len(), 1));
            let mut loss = 0.0;
            for i in 0..batch.len() {
                let (l, dq) = point_critic_loss(y[i], q[[i, 0]], 0.0, critic);
                loss += l;
                d[[i, 0]] = dq;
            }
            let (grads, _) = critic.backward_batch(&cache, &d)?;
            (grads, loss / n)
        };
        grads.scale(1.0 / n);
        grads.add_weight_decay(critic, lambda);
        if lambda > 0.0 {
            loss += 0.5 * lambda * critic.weight_sq_norm();
        }
        let critic = &mut self.agent.critics[k];
        self.agent.critic_opts[k].step(critic, &grads)?;
        if let Some(layer) = critic.first_non_finite_layer() {
            return Err(Error::NonFinite {
                update: self.counts.critic + 1,
                network: if k == 0 { "critic" } else { "critic2" },
                layer,
            });
        }
        Ok(loss)
    }

    fn actor_update(&mut self, batch: &[Transition]) -> Result<f64> {
        let n = batch.len() as f64;
        let eps = self.weights.epsilon;
        let mut grads = Gradients::zeros_like(&self.agent.actor);
        for t in batch {
            let s = &t.state;
            let g = match self.config.run.algorithm {
                Algorithm::SaPc => {
                    let actor = &self.agent.actor;
                    let (a, trace) = actor.forward_set(&Zonotope::linf_ball(s.clone(), eps))?;
                    let dq = policy_gradient_point(&self.agent.critics[0], s, a.center())?;
                    let ascent = policy_gradient_sa_pc(&a, &dq, &self.weights)?;
                    actor.backward_set(&trace, &negate(ascent), BackwardMode::Frozen)?.0
                }
                Algorithm::SaSc => {
                    let actor = &self.agent.actor;
                    let critic = &self.agent.critics[0];
                    let (a, trace) = actor.forward_set(&Zonotope::linf_ball(s.clone(), eps))?;
                    let (q, q_trace) = critic.forward_set(&critic_input_set(s, eps, &a))?;
                    let ascent =
                        policy_gradient_sa_sc(critic, &a, &q, &q_trace, s.len(), &self.weights, BackwardMode::Frozen)?;
                    actor.backward_set(&trace, &negate(ascent), BackwardMode::Frozen)?.0
                }
                algo => {
                    let obs = match algo {
                        Algorithm::PaPc => s.clone(),
                        _ => self.observe(s)?,
                    };
                    let actor = &self.agent.actor;
                    let (a, cache) = actor.forward_point(&obs)?;
                    let dq = policy_gradient_point(&self.agent.critics[0], s, &a)?;
                    actor.backward_point(&cache, &-dq)?.0
                }
            };
            grads.add_assign(&g);
        }
        grads.scale(1.0 / n);
        let norm = grads.norm();
        self.agent.actor_opt.step(&mut self.agent.actor, &grads)?;
        if let Some(layer) = self.agent.actor.first_non_finite_layer() {
            return Err(Error::NonFinite {
                update: self.counts.actor + 1,
                network: "actor",
                layer,
            });
        }
        Ok(norm)
    }
}

fn negate(g: GradientZonotope) -> GradientZonotope {
    GradientZonotope {
        d_center: -g.d_center,
        d_generators: -g.d_generators,
    }
}

/// Trains for `config.run.episodes` episodes.
pub fn train(config: &TrainConfig) -> Result<(Agent, Vec<EpisodeRecord>)> {
    let mut trainer = Trainer::new(config.clone())?;
    let mut log = Vec::with_capacity(config.run.episodes);
    for _ in 0..config.run.episodes {
        log.push(trainer.run_episode()?);
    }
    Ok((trainer.agent, log))
}

/// [`train`] with the TD3 learner.
pub fn td3_train(config: &TrainConfig) -> Result<(Agent, Vec<EpisodeRecord>)> {
    let mut config = config.clone();
    config.run.learner = Learner::Td3;
    train(&config)
}

/// Mean return over the first and last `window` episodes.
pub fn window_means(log: &[EpisodeRecord], window: usize) -> (f64, f64) {
    let w = window.min(log.len()).max(1);
    let mean = |rs: &[EpisodeRecord]| rs.iter().map(|r| r.undiscounted_return).sum::<f64>() / rs.len().max(1) as f64;
    (mean(&log[..w.min(log.len())]), mean(&log[log.len().saturating_sub(w)..]))
}
