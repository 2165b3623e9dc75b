//! `setrl`: train, verify, attack and plot from the command line.
//!
//! Outputs go to `--out` when given, else under `$SETRL_OUTPUT_ROOT`
//! (default `runs/`). Exit codes: 0 success, 1 domain failure, 2 usage error.

pub mod manifest;
pub mod plot;

use std::ffi::OsString;
use std::fmt::Write as _;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use setrl_core::attack::{attacked_return, AttackKind};
use setrl_core::config::{Learner, TrainConfig};
use setrl_core::env::Env;
use setrl_core::train::{EpisodeRecord, Trainer};
use setrl_core::verify::{self, CurvePoint, ReachConfig, DEFAULT_BUDGET};
use setrl_core::{Error, Network, Zonotope};

use manifest::{unix_ms, ArtifactWriter, RunManifest, MANIFEST_SCHEMA};

pub const OUTPUT_ROOT_VAR: &str = "SETRL_OUTPUT_ROOT";
pub const EPISODES_HEADER: &str = "episode,steps,undiscounted_return,critic_loss_mean,actor_grad_norm";
pub const ATTACK_HEADER: &str = "attack,epsilon,episodes,mean_return,std_return";

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Domain(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Domain(_) => 1,
            CliError::Usage(_) => 2,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "usage error: {m}"),
            CliError::Domain(m) => write!(f, "error: {m}"),
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        match e {
            Error::InvalidConfig { .. } | Error::UnknownEnv(_) => CliError::Usage(e.to_string()),
            other => CliError::Domain(other.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Domain(e.to_string())
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

#[derive(Debug, Parser)]
#[command(name = "setrl", version, about = "Set-based actor-critic training and closed-loop verification")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train an agent and write its episode log, checkpoints and manifest.
    Train(TrainArgs),
    /// Compute certified lower-bound returns over an epsilon grid.
    Verify(VerifyArgs),
    /// Evaluate returns under Naive or Grad observation attacks.
    Attack(AttackArgs),
    /// Merge robustness curves across runs into CSV and SVG.
    ExportPlot(ExportArgs),
    /// Print the effective configuration as TOML.
    DumpConfig(ConfigArgs),
}

#[derive(Debug, Args)]
pub struct ConfigArgs {
    /// TOML configuration file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Start from the TD3 defaults instead of DDPG.
    #[arg(long)]
    pub td3: bool,
    /// `section.key=value` override, applied after the file.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    #[arg(long)]
    pub env: Option<String>,
    #[arg(long)]
    pub algorithm: Option<String>,
    #[arg(long)]
    pub learner: Option<String>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub episodes: Option<usize>,
    #[arg(long)]
    pub epsilon: Option<String>,
    #[arg(long)]
    pub omega: Option<String>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub config: ConfigArgs,
    /// Output directory (default: `$SETRL_OUTPUT_ROOT/<env>-<algorithm>-seed<seed>`).
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Save actor and critic every N episodes (0 disables).
    #[arg(long, default_value_t = 100)]
    pub checkpoint_every: usize,
}

#[derive(Debug, Args)]
pub struct VerifyArgs {
    /// Actor checkpoint.
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub env: String,
    /// Comma-separated perturbation radii.
    #[arg(long, value_delimiter = ',', default_values_t = verify::DEFAULT_EPSILONS.to_vec())]
    pub epsilons: Vec<f64>,
    /// Steps to propagate (default: the env's episode length).
    #[arg(long)]
    pub horizon: Option<usize>,
    #[arg(long, default_value_t = DEFAULT_BUDGET)]
    pub budget: usize,
    #[arg(long, default_value_t = 0.99)]
    pub gamma: f64,
    /// Perturb only the first observation instead of every one.
    #[arg(long)]
    pub single_shot: bool,
    /// Output directory (default: the checkpoint's directory).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct AttackArgs {
    /// Actor checkpoint.
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Critic checkpoint (default: `critic.ckpt` next to the actor).
    #[arg(long)]
    pub critic: Option<PathBuf>,
    #[arg(long)]
    pub env: String,
    /// `naive` or `grad`.
    #[arg(long)]
    pub attack: String,
    #[arg(long)]
    pub epsilon: f64,
    #[arg(long, default_value_t = 100)]
    pub episodes: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub horizon: Option<usize>,
    #[arg(long, default_value_t = 0.99)]
    pub gamma: f64,
    #[arg(long, default_value_t = 10)]
    pub naive_samples: usize,
    #[arg(long, default_value_t = 5)]
    pub grad_steps: usize,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum PlotKind {
    /// Robustness curves (`V_lower` against epsilon).
    Curve,
}

#[derive(Debug, Args)]
pub struct ExportArgs {
    /// Run directories, each with `config.toml` and `curve.csv`.
    #[arg(required = true)]
    pub runs: Vec<PathBuf>,
    #[arg(long, value_enum, default_value_t = PlotKind::Curve)]
    pub kind: PlotKind,
    #[arg(long)]
    pub out: PathBuf,
}

/// Parse arguments, run, and return the process exit code.
pub fn main_with<I, T>(args: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> u8
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            if e.use_stderr() {
                let _ = write!(stderr, "{e}");
                return 2;
            }
            let _ = write!(stdout, "{e}");
            return 0;
        }
    };
    match run(cli.command, stdout) {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(stderr, "{e}");
            e.exit_code()
        }
    }
}

pub fn run(command: Command, stdout: &mut dyn Write) -> CliResult<()> {
    match command {
        Command::Train(a) => cmd_train(&a, stdout),
        Command::Verify(a) => cmd_verify(&a, stdout),
        Command::Attack(a) => cmd_attack(&a, stdout),
        Command::ExportPlot(a) => cmd_export_plot(&a, stdout),
        Command::DumpConfig(a) => {
            let c = load_config(&a)?;
            stdout.write_all(c.to_toml().as_bytes())?;
            Ok(())
        }
    }
}

fn output_root() -> PathBuf {
    std::env::var_os(OUTPUT_ROOT_VAR).map_or_else(|| PathBuf::from("runs"), PathBuf::from)
}

/// File, then `--set` overrides, then the shorthand flags, validating each.
pub fn load_config(a: &ConfigArgs) -> CliResult<TrainConfig> {
    let mut config = match &a.config {
        Some(path) => {
            let text = fs::read_to_string(path).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
            TrainConfig::from_toml(&text)?
        }
        None if a.td3 => TrainConfig::td3(),
        None => TrainConfig::default(),
    };
    for kv in &a.overrides {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| CliError::Usage(format!("override `{kv}` is not KEY=VALUE")))?;
        config.apply_override(k.trim(), v.trim())?;
    }
    let quoted = |s: &str| format!("\"{s}\"");
    let shorthands = [
        ("run.env", a.env.as_deref().map(quoted)),
        ("run.algorithm", a.algorithm.as_deref().map(|s| quoted(&canonical_algorithm(s)))),
        ("run.learner", a.learner.as_deref().map(|s| quoted(&s.to_ascii_lowercase()))),
        ("run.seed", a.seed.map(|s| s.to_string())),
        ("run.episodes", a.episodes.map(|s| s.to_string())),
        ("set.epsilon", a.epsilon.clone()),
        ("set.omega", a.omega.clone()),
    ];
    for (key, value) in shorthands {
        if let Some(v) = value {
            config.apply_override(key, &v)?;
        }
    }
    config.validate()?;
    Ok(config)
}

fn canonical_algorithm(s: &str) -> String {
    s.parse::<setrl_core::config::Algorithm>()
        .map_or_else(|_| s.to_string(), |a| a.name().to_string())
}

pub fn episodes_csv(log: &[EpisodeRecord]) -> String {
    let mut s = String::from(EPISODES_HEADER);
    s.push('\n');
    for r in log {
        let _ = writeln!(
            s,
            "{},{},{},{},{}",
            r.episode, r.steps, r.undiscounted_return, r.critic_loss_mean, r.actor_grad_norm
        );
    }
    s
}

fn timings_json(log: &[EpisodeRecord]) -> String {
    let ms: Vec<f64> = log.iter().map(|r| r.wall_ms).collect();
    serde_json::json!({ "episode_wall_ms": ms }).to_string() + "\n"
}

fn save_agent(out: &mut ArtifactWriter, trainer: &Trainer, prefix: &str, suffix: &str) -> CliResult<()> {
    let agent = &trainer.agent;
    out.write(&format!("{prefix}actor{suffix}.ckpt"), agent.actor.to_checkpoint().as_bytes(), None)?;
    out.write(&format!("{prefix}actor{suffix}.adam"), agent.actor_opt.to_text().as_bytes(), None)?;
    for (k, (c, opt)) in agent.critics.iter().zip(&agent.critic_opts).enumerate() {
        let name = if k == 0 { "critic".to_string() } else { format!("critic{}", k + 1) };
        out.write(&format!("{prefix}{name}{suffix}.ckpt"), c.to_checkpoint().as_bytes(), None)?;
        out.write(&format!("{prefix}{name}{suffix}.adam"), opt.to_text().as_bytes(), None)?;
    }
    Ok(())
}

pub fn cmd_train(a: &TrainArgs, stdout: &mut dyn Write) -> CliResult<()> {
    let config = load_config(&a.config)?;
    let started = unix_ms();
    let dir = a.out.clone().unwrap_or_else(|| {
        output_root().join(format!(
            "{}-{}-seed{}",
            config.run.env,
            config.run.algorithm.name(),
            config.run.seed
        ))
    });
    let mut out = ArtifactWriter::new(&dir)?;
    out.write("config.toml", config.to_toml().as_bytes(), Some("config/1"))?;
    let mut trainer = Trainer::new(config.clone())?;
    let mut log = Vec::with_capacity(config.run.episodes);
    let mut failure = None;
    for ep in 0..config.run.episodes {
        match trainer.run_episode() {
            Ok(rec) => log.push(rec),
            Err(e) => {
                failure = Some(e);
                break;
            }
        }
        if a.checkpoint_every > 0 && (ep + 1) % a.checkpoint_every == 0 && ep + 1 < config.run.episodes {
            save_agent(&mut out, &trainer, "checkpoints/", &format!("-{:06}", ep + 1))?;
        }
    }
    out.write("episodes.csv", episodes_csv(&log).as_bytes(), Some("episodes/1"))?;
    out.write("timings.json", timings_json(&log).as_bytes(), None)?;
    if failure.is_none() {
        save_agent(&mut out, &trainer, "", "")?;
    }
    let manifest = RunManifest {
        schema_version: MANIFEST_SCHEMA,
        command: "train".into(),
        seed: Some(config.run.seed),
        config: config.to_toml(),
        status: if failure.is_some() { "aborted".into() } else { "ok".into() },
        started_unix_ms: started,
        finished_unix_ms: 0,
        artifacts: vec![],
    };
    let path = out.finish("manifest.json", manifest)?;
    if let Some(e) = failure {
        return Err(CliError::Domain(format!("training aborted after {} episodes: {e}", log.len())));
    }
    let learner = match config.run.learner {
        Learner::Ddpg => "DDPG",
        Learner::Td3 => "TD3",
    };
    writeln!(
        stdout,
        "trained {} ({learner}) on {} for {} episodes; manifest {}",
        config.run.algorithm,
        config.run.env,
        log.len(),
        path.display()
    )?;
    Ok(())
}

/// Load an actor and check it against the env's dimensions.
pub fn load_actor(path: &Path, env: &Env) -> CliResult<Network> {
    let actor = Network::load(path).map_err(|e| CliError::Domain(format!("{}: {e}", path.display())))?;
    if actor.input_dim() != env.state_dim {
        return Err(CliError::Domain(format!(
            "actor input dimension {} does not match the state dimension {} of env {}",
            actor.input_dim(),
            env.state_dim,
            env.name()
        )));
    }
    if actor.output_dim() != env.action_dim {
        return Err(CliError::Domain(format!(
            "actor output dimension {} does not match the action dimension {} of env {}",
            actor.output_dim(),
            env.action_dim,
            env.name()
        )));
    }
    Ok(actor)
}

fn eps_tag(e: f64) -> String {
    format!("eps{e}")
}

pub fn cmd_verify(a: &VerifyArgs, stdout: &mut dyn Write) -> CliResult<()> {
    let started = unix_ms();
    let env = Env::by_name(&a.env)?;
    let actor = load_actor(&a.checkpoint, &env)?;
    if a.epsilons.iter().any(|e| !(*e >= 0.0 && e.is_finite())) {
        return Err(CliError::Usage("epsilons must be finite and non-negative".into()));
    }
    let base = ReachConfig {
        epsilon: 0.0,
        horizon: a.horizon.unwrap_or(env.max_steps),
        budget: a.budget,
        gamma: a.gamma,
        accumulate: !a.single_shot,
    };
    base.validate(env.state_dim)?;
    let dir = a
        .out
        .clone()
        .unwrap_or_else(|| a.checkpoint.parent().map_or_else(|| PathBuf::from("."), Path::to_path_buf));
    let mut out = ArtifactWriter::new(&dir)?;
    let mut eps = a.epsilons.clone();
    eps.sort_by(f64::total_cmp);
    eps.dedup();
    let start = Zonotope::point(env.eval_start.clone());
    let mut curve = Vec::with_capacity(eps.len());
    for &e in &eps {
        let cfg = ReachConfig { epsilon: e, ..base.clone() };
        let point = match verify::reach(&env, &actor, &start, &cfg) {
            Ok(res) => {
                out.write(&format!("reach-{}.csv", eps_tag(e)), verify::reach_csv(&res).as_bytes(), Some("reach/1"))?;
                CurvePoint {
                    epsilon: e,
                    v_lower: res.v_lower,
                    safe: res.safe,
                }
            }
            Err(Error::Diverged { step, width }) => {
                writeln!(stdout, "diverged@eps={e}: step {step}, width {width}")?;
                CurvePoint {
                    epsilon: e,
                    v_lower: f64::NEG_INFINITY,
                    safe: false,
                }
            }
            Err(other) => return Err(other.into()),
        };
        writeln!(stdout, "V_lower@eps={e}: {}", point.v_lower)?;
        if env.obstacle.is_some() {
            writeln!(stdout, "safe@eps={e}: {}", point.safe)?;
        }
        curve.push(point);
    }
    out.write("curve.csv", verify::curve_csv(&curve).as_bytes(), Some("curve/1"))?;
    let config = format!(
        "checkpoint = {:?}\nenv = {:?}\nepsilons = {:?}\nhorizon = {}\nbudget = {}\ngamma = {:?}\naccumulate = {}\n",
        a.checkpoint.display().to_string(),
        env.name(),
        eps,
        base.horizon,
        base.budget,
        base.gamma,
        base.accumulate
    );
    out.finish(
        "manifest-verify.json",
        RunManifest {
            schema_version: MANIFEST_SCHEMA,
            command: "verify".into(),
            seed: None,
            config,
            status: "ok".into(),
            started_unix_ms: started,
            finished_unix_ms: 0,
            artifacts: vec![],
        },
    )?;
    Ok(())
}

pub fn cmd_attack(a: &AttackArgs, stdout: &mut dyn Write) -> CliResult<()> {
    let started = unix_ms();
    let env = Env::by_name(&a.env)?;
    let kind: AttackKind = a.attack.parse()?;
    if !(a.epsilon >= 0.0 && a.epsilon.is_finite()) {
        return Err(CliError::Usage(format!("epsilon must be finite and >= 0, got {}", a.epsilon)));
    }
    if a.episodes == 0 {
        return Err(CliError::Usage("episodes must be at least 1".into()));
    }
    let actor = load_actor(&a.checkpoint, &env)?;
    let critic_path = a.critic.clone().unwrap_or_else(|| a.checkpoint.with_file_name("critic.ckpt"));
    let critic = Network::load(&critic_path).map_err(|e| CliError::Domain(format!("{}: {e}", critic_path.display())))?;
    if critic.input_dim() != env.state_dim + env.action_dim || critic.output_dim() != 1 {
        return Err(CliError::Domain(format!(
            "critic maps {} -> {} but env {} needs {} -> 1",
            critic.input_dim(),
            critic.output_dim(),
            env.name(),
            env.state_dim + env.action_dim
        )));
    }
    let cfg = setrl_core::config::AttackConfig {
        naive_samples: a.naive_samples,
        grad_steps: a.grad_steps,
    };
    let horizon = a.horizon.unwrap_or(env.max_steps);
    let mut rng = ChaCha8Rng::seed_from_u64(a.seed);
    let returns = (0..a.episodes)
        .map(|_| attacked_return(&env, &actor, &critic, kind, a.epsilon, &cfg, horizon, a.gamma, &mut rng))
        .collect::<setrl_core::Result<Vec<f64>>>()?;
    let (mean, std) = mean_std(&returns);
    let dir = a
        .out
        .clone()
        .unwrap_or_else(|| a.checkpoint.parent().map_or_else(|| PathBuf::from("."), Path::to_path_buf));
    let mut out = ArtifactWriter::new(&dir)?;
    let csv = format!("{ATTACK_HEADER}\n{},{},{},{mean},{std}\n", kind.name(), a.epsilon, a.episodes);
    out.write(&format!("attack-{}-{}.csv", kind.name(), eps_tag(a.epsilon)), csv.as_bytes(), Some("attack/1"))?;
    writeln!(stdout, "{}@eps={}: mean {mean}, std {std}", kind.name(), a.epsilon)?;
    out.finish(
        &format!("manifest-attack-{}.json", kind.name()),
        RunManifest {
            schema_version: MANIFEST_SCHEMA,
            command: "attack".into(),
            seed: Some(a.seed),
            config: format!(
                "env = {:?}\nattack = {:?}\nepsilon = {:?}\nepisodes = {}\nhorizon = {horizon}\ngamma = {:?}\n",
                env.name(),
                kind.name(),
                a.epsilon,
                a.episodes,
                a.gamma
            ),
            status: "ok".into(),
            started_unix_ms: started,
            finished_unix_ms: 0,
            artifacts: vec![],
        },
    )?;
    Ok(())
}

/// Welford mean and population std; identical samples give exactly zero spread.
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    let (mut mean, mut m2) = (0.0, 0.0);
    for (k, &x) in xs.iter().enumerate() {
        let d = x - mean;
        mean += d / (k + 1) as f64;
        m2 += d * (x - mean);
    }
    (mean, (m2 / xs.len().max(1) as f64).sqrt())
}

pub fn cmd_export_plot(a: &ExportArgs, stdout: &mut dyn Write) -> CliResult<()> {
    let started = unix_ms();
    let PlotKind::Curve = a.kind;
    let missing: Vec<String> = a
        .runs
        .iter()
        .filter(|d| !d.join("config.toml").is_file() || !d.join("curve.csv").is_file())
        .map(|d| d.display().to_string())
        .collect();
    if !missing.is_empty() {
        return Err(CliError::Domain(format!(
            "runs without config.toml and curve.csv: {}",
            missing.join(", ")
        )));
    }
    let mut curves = Vec::with_capacity(a.runs.len());
    for d in &a.runs {
        let config = TrainConfig::from_toml(&fs::read_to_string(d.join("config.toml"))?)
            .map_err(|e| CliError::Domain(format!("{}: {e}", d.display())))?;
        let rows = plot::parse_curve_csv(&fs::read_to_string(d.join("curve.csv"))?)
            .map_err(|e| CliError::Domain(format!("{}: {e}", d.join("curve.csv").display())))?;
        curves.push(plot::RunCurve {
            env: config.run.env.clone(),
            algorithm: config.run.algorithm.name().to_string(),
            rows,
        });
    }
    let merged = plot::merge(&curves);
    let mut out = ArtifactWriter::new(&a.out)?;
    out.write("curves.csv", plot::merged_csv(&merged).as_bytes(), Some("curves/1"))?;
    let mut envs: Vec<&str> = merged.iter().map(|r| r.env.as_str()).collect();
    envs.dedup();
    for env in envs {
        out.write(&format!("curve-{env}.svg"), plot::svg_chart(env, &merged).as_bytes(), None)?;
    }
    writeln!(stdout, "merged {} runs into {} rows", a.runs.len(), merged.len())?;
    out.finish(
        "manifest-export.json",
        RunManifest {
            schema_version: MANIFEST_SCHEMA,
            command: "export-plot".into(),
            seed: None,
            config: a
                .runs
                .iter()
                .map(|d| format!("run = {:?}\n", d.display().to_string()))
                .collect(),
            status: "ok".into(),
            started_unix_ms: started,
            finished_unix_ms: 0,
            artifacts: vec![],
        },
    )?;
    Ok(())
}
