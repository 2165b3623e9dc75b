//! Training configuration, stored as TOML with one table per concern.

use std::fmt::{self, Write as _};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::losses::LossWeights;
use crate::optim::AdamConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Algorithm {
    #[serde(rename = "PA-PC")]
    PaPc,
    #[serde(rename = "Naive")]
    Naive,
    #[serde(rename = "Grad")]
    Grad,
    #[serde(rename = "SA-PC")]
    SaPc,
    #[serde(rename = "SA-SC")]
    SaSc,
}

impl Algorithm {
    pub const ALL: [Algorithm; 5] = [
        Algorithm::PaPc,
        Algorithm::Naive,
        Algorithm::Grad,
        Algorithm::SaPc,
        Algorithm::SaSc,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Algorithm::PaPc => "PA-PC",
            Algorithm::Naive => "Naive",
            Algorithm::Grad => "Grad",
            Algorithm::SaPc => "SA-PC",
            Algorithm::SaSc => "SA-SC",
        }
    }

    /// Whether the actor is trained on perturbation sets.
    pub fn set_actor(self) -> bool {
        matches!(self, Algorithm::SaPc | Algorithm::SaSc)
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Algorithm {
    type Err = Error;
    fn from_str(s: &str) -> Result<Algorithm> {
        let norm = s.to_ascii_uppercase().replace('_', "-");
        Algorithm::ALL
            .into_iter()
            .find(|a| a.name().to_ascii_uppercase() == norm)
            .ok_or_else(|| Error::InvalidConfig {
                key: "run.algorithm".into(),
                reason: format!("unknown algorithm `{s}` (expected PA-PC, Naive, Grad, SA-PC or SA-SC)"),
            })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Learner {
    Ddpg,
    Td3,
}

impl FromStr for Learner {
    type Err = Error;
    fn from_str(s: &str) -> Result<Learner> {
        match s.to_ascii_lowercase().as_str() {
            "ddpg" => Ok(Learner::Ddpg),
            "td3" => Ok(Learner::Td3),
            _ => Err(Error::InvalidConfig {
                key: "run.learner".into(),
                reason: format!("unknown learner `{s}` (expected ddpg or td3)"),
            }),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub env: String,
    pub algorithm: Algorithm,
    pub learner: Learner,
    pub seed: u64,
    pub episodes: usize,
    pub max_steps: usize,
    pub dt: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            env: "quad1d".into(),
            algorithm: Algorithm::PaPc,
            learner: Learner::Ddpg,
            seed: 0,
            episodes: 2000,
            max_steps: 100,
            dt: 0.05,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HyperConfig {
    pub actor_lr: f64,
    pub critic_lr: f64,
    pub lambda_q: f64,
    pub gamma: f64,
    pub tau: f64,
    pub noise_std: f64,
    pub batch_size: usize,
    pub buffer_size: usize,
}

impl Default for HyperConfig {
    fn default() -> Self {
        Self {
            actor_lr: 1e-4,
            critic_lr: 1e-3,
            lambda_q: 0.01,
            gamma: 0.99,
            tau: 0.05,
            noise_std: 0.1,
            batch_size: 64,
            buffer_size: 1_000_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SetConfig {
    pub epsilon: f64,
    pub eta_mu: f64,
    pub eta_q: f64,
    pub omega: f64,
}

impl Default for SetConfig {
    fn default() -> Self {
        Self {
            epsilon: 0.1,
            eta_mu: 0.1,
            eta_q: 0.01,
            omega: 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetworkConfig {
    pub actor_hidden: Vec<usize>,
    pub critic_hidden: Vec<usize>,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        Self {
            actor_hidden: vec![64, 32],
            critic_hidden: vec![64, 32],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AttackConfig {
    pub naive_samples: usize,
    pub grad_steps: usize,
}

impl Default for AttackConfig {
    fn default() -> Self {
        Self {
            naive_samples: 10,
            grad_steps: 5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Td3Config {
    pub policy_delay: usize,
    pub target_noise: f64,
    pub target_noise_clip: f64,
}

impl Default for Td3Config {
    fn default() -> Self {
        Self {
            policy_delay: 2,
            target_noise: 0.2,
            target_noise_clip: 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub run: RunConfig,
    pub hyper: HyperConfig,
    pub set: SetConfig,
    pub network: NetworkConfig,
    pub adam: AdamConfig,
    pub attack: AttackConfig,
    pub td3: Td3Config,
}

fn invalid(key: &str, reason: impl Into<String>) -> Error {
    Error::InvalidConfig {
        key: key.into(),
        reason: reason.into(),
    }
}

impl TrainConfig {
    /// Defaults of the TD3 column: no critic weight decay.
    pub fn td3() -> TrainConfig {
        let mut c = TrainConfig::default();
        c.run.learner = Learner::Td3;
        c.hyper.lambda_q = 0.0;
        c
    }

    pub fn loss_weights(&self) -> LossWeights {
        LossWeights {
            eta_q: self.set.eta_q,
            eta_mu: self.set.eta_mu,
            omega: self.set.omega,
            epsilon: self.set.epsilon,
            lambda_q: self.hyper.lambda_q,
        }
    }

    pub fn validate(&self) -> Result<()> {
        crate::env::EnvKind::from_str(&self.run.env)?;
        let positive = [
            ("run.dt", self.run.dt),
            ("hyper.actor_lr", self.hyper.actor_lr),
            ("hyper.critic_lr", self.hyper.critic_lr),
        ];
        for (key, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(invalid(key, format!("must be positive, got {v}")));
            }
        }
        let unit = [("hyper.gamma", self.hyper.gamma), ("hyper.tau", self.hyper.tau)];
        for (key, v) in unit {
            if !(0.0..=1.0).contains(&v) {
                return Err(invalid(key, format!("must lie in [0, 1], got {v}")));
            }
        }
        let non_negative = [
            ("hyper.noise_std", self.hyper.noise_std),
            ("td3.target_noise", self.td3.target_noise),
            ("td3.target_noise_clip", self.td3.target_noise_clip),
        ];
        for (key, v) in non_negative {
            if !(v >= 0.0) {
                return Err(invalid(key, format!("must be >= 0, got {v}")));
            }
        }
        let counts = [
            ("run.max_steps", self.run.max_steps),
            ("hyper.batch_size", self.hyper.batch_size),
            ("td3.policy_delay", self.td3.policy_delay),
        ];
        for (key, v) in counts {
            if v == 0 {
                return Err(invalid(key, "must be at least 1"));
            }
        }
        if self.hyper.buffer_size < self.hyper.batch_size {
            return Err(invalid("hyper.buffer_size", "must be at least hyper.batch_size"));
        }
        self.loss_weights().validate().map_err(|e| match e {
            Error::InvalidConfig { key, reason } => invalid(&format!("set.{key}").replace("set.lambda_q", "hyper.lambda_q"), reason),
            other => other,
        })
    }

    pub fn from_toml(text: &str) -> Result<TrainConfig> {
        let config: TrainConfig = toml::from_str(text).map_err(|e| invalid("config", e.message().to_string() + &span_hint(text, e.span())))?;
        config.validate()?;
        Ok(config)
    }

    /// Sets a dotted key such as `set.omega` from its TOML literal or bare string.
    pub fn apply_override(&mut self, key: &str, value: &str) -> Result<()> {
        let mut doc = toml::Table::try_from(&*self).map_err(|e| invalid(key, e.to_string()))?;
        let parsed: toml::Value = toml::from_str::<toml::Table>(&format!("v = {value}"))
            .ok()
            .and_then(|mut t| t.remove("v"))
            .unwrap_or_else(|| toml::Value::String(value.to_string()));
        let (section, field) = key.split_once('.').ok_or_else(|| invalid(key, "expected `section.field`"))?;
        let table = doc
            .get_mut(section)
            .and_then(|v| v.as_table_mut())
            .ok_or_else(|| invalid(key, format!("unknown section `{section}`")))?;
        if !table.contains_key(field) {
            return Err(invalid(key, "unknown key"));
        }
        table.insert(field.to_string(), parsed);
        let updated: TrainConfig = doc.try_into().map_err(|e: toml::de::Error| invalid(key, e.message().to_string()))?;
        updated.validate()?;
        *self = updated;
        Ok(())
    }

    /// TOML text with the published names of the hyperparameters as comments.
    pub fn to_toml(&self) -> String {
        let f = |v: f64| format!("{v:?}");
        let list = |v: &[usize]| format!("[{}]", v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(", "));
        let r = &self.run;
        let h = &self.hyper;
        let s = &self.set;
        let mut out = String::new();
        let mut line = |key: &str, value: String, comment: &str| {
            if comment.is_empty() {
                writeln!(out, "{key} = {value}").unwrap();
            } else {
                writeln!(out, "{key} = {value}  # {comment}").unwrap();
            }
        };
        line("[run]\nenv", format!("{:?}", r.env), "quad1d | pendulum | navigation | quad2d");
        line("algorithm", format!("{:?}", r.algorithm.name()), "PA-PC | Naive | Grad | SA-PC | SA-SC");
        line("learner", format!("{:?}", if r.learner == Learner::Ddpg { "ddpg" } else { "td3" }), "ddpg | td3");
        line("seed", r.seed.to_string(), "");
        line("episodes", r.episodes.to_string(), "Episodes");
        line("max_steps", r.max_steps.to_string(), "steps per episode");
        line("dt", f(r.dt), "integration step [s]");
        line("\n[hyper]\nactor_lr", f(h.actor_lr), "Actor learning rate");
        line("critic_lr", f(h.critic_lr), "Critic learning rate");
        line("lambda_q", f(h.lambda_q), "Critic L2 weight regularization lambda_Q");
        line("gamma", f(h.gamma), "Discount factor gamma");
        line("tau", f(h.tau), "Target update factor tau");
        line("noise_std", f(h.noise_std), "Exploration noise std. deviation sigma");
        line("batch_size", h.batch_size.to_string(), "Batchsize");
        line("buffer_size", h.buffer_size.to_string(), "Buffersize");
        line("\n[set]\nepsilon", f(s.epsilon), "Perturbation radius epsilon");
        line("eta_mu", f(s.eta_mu), "Actor weighting factor eta_mu");
        line("eta_q", f(s.eta_q), "Critic weighting factor eta_Q");
        line("omega", f(s.omega), "SA-SC mixing omega in [0, 1]");
        line("\n[network]\nactor_hidden", list(&self.network.actor_hidden), "hidden ReLU widths");
        line("critic_hidden", list(&self.network.critic_hidden), "");
        line("\n[adam]\nbeta1", f(self.adam.beta1), "");
        line("beta2", f(self.adam.beta2), "");
        line("eps", f(self.adam.eps), "");
        line("\n[attack]\nnaive_samples", self.attack.naive_samples.to_string(), "Naive: random samples per state");
        line("grad_steps", self.attack.grad_steps.to_string(), "Grad: sign-gradient steps");
        line("\n[td3]\npolicy_delay", self.td3.policy_delay.to_string(), "critic updates per actor update");
        line("target_noise", f(self.td3.target_noise), "target policy smoothing std");
        line("target_noise_clip", f(self.td3.target_noise_clip), "");
        out
    }
}

fn span_hint(text: &str, span: Option<std::ops::Range<usize>>) -> String {
    match span {
        Some(r) => {
            let line = text[..r.start.min(text.len())].matches('\n').count() + 1;
            format!(" (line {line})")
        }
        None => String::new(),
    }
}
