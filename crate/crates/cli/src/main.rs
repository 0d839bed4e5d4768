mod manifest;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};
use drumctl_core::env::{EnvConfig, EnvMode};
use drumctl_core::eval::{default_sigmas, evaluate, noise_sweep, Controller, ControllerFactory};
use drumctl_core::marl::{train_marl, MarlController, MarlOptions};
use drumctl_core::pid::{tune_pid, GainsFile, PidController, PidGains, TuneConfig};
use drumctl_core::ppo::{config_hash, train, write_curve, Checkpoint, EnvPool, PolicyController, PpoConfig, TrainMode, CHECKPOINT_VERSION};
use drumctl_core::profile::{builtin_profiles, LoadProfile};
use drumctl_core::reactor::{ReactorParams, NUM_DRUMS};
use drumctl_core::Error;
use manifest::ManifestBuilder;
use serde::Serialize;

const EXIT_CONFIG: u8 = 2;
const EXIT_RUNTIME: u8 = 3;
const EXIT_EARLY_TERMINATION: u8 = 4;

#[derive(Parser)]
#[command(name = "drumctl", version, about = "Load-following control laboratory for a drum-controlled microreactor")]
struct Cli {
    /// More log output (repeat for debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Export the built-in load profiles as CSV.
    Profiles {
        #[arg(long, env = "DRUMCTL_OUT_DIR", default_value = "runs/profiles")]
        out_dir: PathBuf,
    },
    /// Run one evaluation episode and write its trace and metrics.
    Simulate(SimulateArgs),
    /// Tune PID gains for minimum CAE.
    TunePid(TuneArgs),
    /// Train a PPO policy.
    Train(TrainArgs),
    /// Evaluate controllers over a grid of measurement noise levels.
    NoiseSweep(SweepArgs),
}

#[derive(Args, Clone)]
struct Common {
    /// Built-in profile name or CSV path.
    #[arg(long, env = "DRUMCTL_PROFILE")]
    profile: Option<String>,
    #[arg(long, env = "DRUMCTL_SEED", default_value_t = 0)]
    seed: u64,
    /// Reactor parameter file (`key = value` lines); defaults to the built-in set.
    #[arg(long, env = "DRUMCTL_PARAMS")]
    params: Option<PathBuf>,
    #[arg(long, env = "DRUMCTL_OUT_DIR")]
    out_dir: Option<PathBuf>,
}

#[derive(Args)]
struct SimulateArgs {
    #[command(flatten)]
    common: Common,
    /// pid, single-rl, multi-rl, symmetric-rl or marl.
    #[arg(long, env = "DRUMCTL_CONTROLLER")]
    controller: String,
    /// Policy checkpoint (RL controllers).
    #[arg(long, env = "DRUMCTL_CHECKPOINT")]
    checkpoint: Option<PathBuf>,
    /// Gains JSON for pid; the reference gains (0.078, 0, 0.3) otherwise.
    #[arg(long, env = "DRUMCTL_GAINS")]
    gains: Option<PathBuf>,
    #[arg(long, env = "DRUMCTL_NOISE_SIGMA", default_value_t = 0.0)]
    noise_sigma: f64,
    /// Drum to freeze at its start angle, numbered 1 to 8. Repeatable.
    #[arg(long)]
    disable_drum: Vec<usize>,
}

#[derive(Args)]
struct TuneArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long, default_value_t = 20)]
    population: usize,
    #[arg(long, default_value_t = 200)]
    generations: usize,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    common: Common,
    /// single, multi, symmetric or marl.
    #[arg(long, env = "DRUMCTL_MODE", default_value = "single")]
    mode: String,
    /// Trainer timesteps (for marl, agent timesteps: eight per simulator step).
    #[arg(long, env = "DRUMCTL_TIMESTEPS", default_value_t = 200_000)]
    timesteps: u64,
    #[arg(long, default_value_t = 10)]
    n_envs: usize,
    #[arg(long, default_value_t = 2048)]
    n_steps: usize,
    #[arg(long, default_value_t = 64)]
    batch_size: usize,
    #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
    log_std_init: f64,
    /// Clip actor and critic gradient norms separately.
    #[arg(long)]
    clip_per_network: bool,
    /// Give each drum agent the mean angle of the others as an extra input.
    #[arg(long)]
    marl_mean_angle: bool,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    common: Common,
    /// `pid`, `pid=GAINS.json` or `KIND=CHECKPOINT.json`. Repeatable.
    #[arg(long, required = true)]
    controller: Vec<String>,
    #[arg(long, env = "DRUMCTL_REPS", default_value_t = 50)]
    reps: usize,
    /// Noise levels in SPU; 0 to 5 in steps of 0.5 by default.
    #[arg(long, value_delimiter = ',')]
    sigmas: Option<Vec<f64>>,
}

enum Outcome {
    Done,
    EarlyTermination,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();

    let result = match cli.command {
        Command::Profiles { out_dir } => cmd_profiles(&out_dir),
        Command::Simulate(a) => cmd_simulate(a),
        Command::TunePid(a) => cmd_tune_pid(a),
        Command::Train(a) => cmd_train(a),
        Command::NoiseSweep(a) => cmd_noise_sweep(a),
    };
    match result {
        Ok(Outcome::Done) => ExitCode::SUCCESS,
        Ok(Outcome::EarlyTermination) => ExitCode::from(EXIT_EARLY_TERMINATION),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn exit_code(e: &anyhow::Error) -> u8 {
    match e.downcast_ref::<Error>() {
        Some(Error::Config(_) | Error::Param { .. } | Error::Usage(_) | Error::Json(_) | Error::Csv(_) | Error::Domain(_)) => {
            EXIT_CONFIG
        }
        Some(_) => EXIT_RUNTIME,
        None if e.downcast_ref::<ConfigError>().is_some() => EXIT_CONFIG,
        None => EXIT_RUNTIME,
    }
}

#[derive(Debug)]
struct ConfigError(String);

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for ConfigError {}

fn config_err(msg: impl Into<String>) -> anyhow::Error {
    ConfigError(msg.into()).into()
}

fn out_dir(common: &Common, default: &str) -> anyhow::Result<PathBuf> {
    let dir = common.out_dir.clone().unwrap_or_else(|| PathBuf::from(default));
    std::fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    Ok(dir)
}

fn env_config(common: &Common, default_profile: &str, mode: EnvMode) -> anyhow::Result<EnvConfig> {
    let profile = LoadProfile::resolve(common.profile.as_deref().unwrap_or(default_profile))?;
    let mut cfg = EnvConfig::new(mode, profile).with_seed(common.seed);
    if let Some(path) = &common.params {
        cfg.params = ReactorParams::load(path)?;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn write_json(path: &Path, value: &impl Serialize) -> anyhow::Result<()> {
    std::fs::write(path, serde_json::to_string_pretty(value)? + "\n").with_context(|| format!("writing {}", path.display()))
}

fn cmd_profiles(dir: &Path) -> anyhow::Result<Outcome> {
    std::fs::create_dir_all(dir)?;
    let mut manifest = ManifestBuilder::new("profiles", 0, serde_json::json!({}))?;
    for p in builtin_profiles() {
        let path = dir.join(format!("{}.csv", p.name()));
        p.save(&path)?;
        println!(
            "{:<10} {:>7.0} s  min {:>5.1} SPU  end {:>5.1} SPU  -> {}",
            p.name(),
            p.duration(),
            p.min_setpoint(),
            p.points().last().map(|k| k.1).unwrap_or(f64::NAN),
            path.display()
        );
        manifest.output(path);
    }
    manifest.write(dir)?;
    Ok(Outcome::Done)
}

/// Builds a controller from a kind and an optional artifact path.
fn load_controller(kind: &str, artifact: Option<&Path>) -> anyhow::Result<Box<dyn Controller>> {
    if kind == "pid" {
        let gains = match artifact {
            Some(p) => GainsFile::load(p)?.gains(),
            None => PidGains::reference(),
        };
        return Ok(Box::new(PidController::new(gains)));
    }
    let mode: TrainMode = kind.parse()?;
    let path = artifact.ok_or_else(|| config_err(format!("controller `{kind}` needs --checkpoint")))?;
    let ck = Checkpoint::load(path)?;
    if ck.mode != mode {
        bail!(config_err(format!("checkpoint {} was trained as {:?}, not {kind}", path.display(), ck.mode)));
    }
    Ok(match mode {
        TrainMode::Marl => Box::new(MarlController::new(ck.policy, MarlOptions { mean_angle: ck.marl_mean_angle })?),
        _ => Box::new(PolicyController::new(ck.policy, mode.env_mode())?),
    })
}

fn disabled_indices(drums: &[usize]) -> anyhow::Result<Vec<usize>> {
    drums
        .iter()
        .map(|&d| {
            if (1..=NUM_DRUMS).contains(&d) {
                Ok(d - 1)
            } else {
                Err(config_err(format!("--disable-drum takes 1 to {NUM_DRUMS}, got {d}")))
            }
        })
        .collect()
}

fn cmd_simulate(a: SimulateArgs) -> anyhow::Result<Outcome> {
    let artifact = if a.controller == "pid" { a.gains.as_deref() } else { a.checkpoint.as_deref() };
    let mut ctrl = load_controller(&a.controller, artifact)?;
    let mut cfg = env_config(&a.common, "test", ctrl.mode())?
        .with_noise(a.noise_sigma)
        .with_disabled(&disabled_indices(&a.disable_drum)?);
    cfg.training = false;
    cfg.validate()?;
    let dir = out_dir(&a.common, "runs/simulate")?;
    let mut manifest = ManifestBuilder::new(
        "simulate",
        a.common.seed,
        serde_json::json!({
            "controller": a.controller,
            "artifact": artifact,
            "profile": cfg.profile.name(),
            "noise_sigma": cfg.noise_sigma,
            "disabled_drums": a.disable_drum,
            "params": a.common.params,
        }),
    )?;

    let rec = evaluate(&cfg, ctrl.as_mut())?;
    let trace = dir.join("trace.csv");
    rec.save_trace(&trace)?;
    let metrics = dir.join("metrics.json");
    let report = rec.report();
    write_json(&metrics, &report)?;
    manifest.output(&trace);
    manifest.output(&metrics);
    manifest.write(&dir)?;
    println!(
        "{} on {}: MAE {:.4} SPU, CAE {:.2} SPU·s, control effort {:.2} deg over {} s{}",
        a.controller,
        cfg.profile.name(),
        report.mae,
        report.cae,
        report.control_effort,
        report.episode_length,
        if report.terminated_early { " (terminated early)" } else { "" }
    );
    Ok(if report.terminated_early { Outcome::EarlyTermination } else { Outcome::Done })
}

fn cmd_tune_pid(a: TuneArgs) -> anyhow::Result<Outcome> {
    let cfg = env_config(&a.common, "train", EnvMode::SingleAction)?;
    let tune = TuneConfig {
        population: a.population,
        generations: a.generations,
        max_evaluations: a.population * (a.generations + 1) + 400,
        seed: a.common.seed,
        ..TuneConfig::default()
    };
    let dir = out_dir(&a.common, "runs/tune-pid")?;
    let mut manifest = ManifestBuilder::new("tune-pid", a.common.seed, serde_json::json!({ "profile": cfg.profile.name(), "tuner": tune }))?;
    let result = tune_pid(&cfg, &tune)?;
    let path = dir.join("gains.json");
    result.gains_file().save(&path)?;
    manifest.output(&path);
    manifest.write(&dir)?;
    println!(
        "kp {:.5}  ki {:.6}  kd {:.5}  train CAE {:.3} ({} evaluations, {} generations{})",
        result.gains.kp,
        result.gains.ki,
        result.gains.kd,
        result.train_cae,
        result.evaluations,
        result.generations,
        if result.budget_exhausted { ", budget exhausted" } else { "" }
    );
    Ok(Outcome::Done)
}

fn cmd_train(a: TrainArgs) -> anyhow::Result<Outcome> {
    let mode: TrainMode = a.mode.parse()?;
    let env = mode.configure(env_config(&a.common, "train", mode.env_mode())?);
    let ppo = PpoConfig {
        n_envs: a.n_envs,
        n_steps: a.n_steps,
        batch_size: a.batch_size,
        total_timesteps: a.timesteps,
        log_std_init: a.log_std_init,
        clip_per_network: a.clip_per_network,
        seed: a.common.seed,
        ..PpoConfig::default()
    };
    ppo.validate()?;
    let opts = MarlOptions { mean_angle: a.marl_mean_angle };
    let dir = out_dir(&a.common, "runs/train")?;
    let snapshot = serde_json::json!({
        "mode": mode,
        "profile": env.profile.name(),
        "ppo": ppo,
        "marl_mean_angle": opts.mean_angle,
        "params": a.common.params,
    });
    let hash = config_hash(&snapshot)?;
    let mut manifest = ManifestBuilder::new("train", a.common.seed, &snapshot)?;
    let ck_path = dir.join("checkpoint.json");

    let save = |policy: &drumctl_core::ppo::Policy<f64>, point: &drumctl_core::ppo::CurvePoint| {
        Checkpoint {
            version: CHECKPOINT_VERSION,
            mode,
            config_hash: hash.clone(),
            ppo: ppo.clone(),
            marl_mean_angle: opts.mean_angle,
            best_mean_reward: point.mean_reward,
            rollout_index: point.rollout_index,
            timesteps: point.timesteps,
            policy: policy.clone(),
        }
        .save(&ck_path)
    };
    let out = if mode == TrainMode::Marl {
        train_marl(&env, &ppo, opts, save)?
    } else {
        let mut pool = EnvPool::new(&env, ppo.n_envs)?;
        train(&mut pool, &ppo, save)?
    };

    let curve = dir.join("curve.csv");
    write_curve(&out.curve, std::fs::File::create(&curve)?)?;
    manifest.output(&ck_path);
    manifest.output(&curve);
    manifest.write(&dir)?;
    println!(
        "{} rollouts, {} trainer timesteps, {} simulator steps; best mean reward {:.4} at rollout {}",
        out.curve.len(),
        out.timesteps,
        out.sim_steps,
        out.best_mean_reward,
        out.best_rollout.map_or("-".to_string(), |r| r.to_string())
    );
    if let Some(reason) = out.aborted {
        bail!(Error::Training(reason));
    }
    Ok(Outcome::Done)
}

fn cmd_noise_sweep(a: SweepArgs) -> anyhow::Result<Outcome> {
    let base = env_config(&a.common, "test", EnvMode::SingleAction)?;
    let sigmas = a.sigmas.clone().unwrap_or_else(default_sigmas);
    let mut specs = Vec::new();
    for spec in &a.controller {
        let (kind, path) = match spec.split_once('=') {
            Some((k, p)) => (k.to_string(), Some(PathBuf::from(p))),
            None => (spec.clone(), None),
        };
        // fail fast on bad artifacts before the sweep starts
        load_controller(&kind, path.as_deref())?;
        specs.push((spec.clone(), kind, path));
    }
    let factories: Vec<Box<ControllerFactory<'_>>> = specs
        .iter()
        .map(|(_, kind, path)| {
            let kind = kind.clone();
            let path = path.clone();
            Box::new(move || load_controller(&kind, path.as_deref()).map_err(|e| Error::Config(format!("{e:#}"))))
                as Box<ControllerFactory<'_>>
        })
        .collect();
    let named: Vec<(&str, &ControllerFactory<'_>)> = specs.iter().zip(&factories).map(|((name, _, _), f)| (name.as_str(), f.as_ref())).collect();

    let dir = out_dir(&a.common, "runs/noise-sweep")?;
    let mut manifest = ManifestBuilder::new(
        "noise-sweep",
        a.common.seed,
        serde_json::json!({ "controllers": a.controller, "reps": a.reps, "sigmas": sigmas, "profile": base.profile.name() }),
    )?;
    let report = noise_sweep(&base, &named, &sigmas, a.reps, a.common.seed)?;
    let json = dir.join("sweep.json");
    let csv = dir.join("sweep.csv");
    write_json(&json, &report)?;
    report.write_csv(std::fs::File::create(&csv)?)?;
    manifest.output(&json);
    manifest.output(&csv);
    manifest.write(&dir)?;
    println!("{:<28} {:>5} {:>10} {:>9} {:>10} {:>9}", "controller", "sigma", "CAE mean", "CAE std", "effort", "std");
    for p in &report.points {
        println!(
            "{:<28} {:>5.1} {:>10.2} {:>9.2} {:>10.2} {:>9.2}{}",
            p.controller,
            p.sigma,
            p.cae_mean,
            p.cae_std,
            p.effort_mean,
            p.effort_std,
            if p.failures.is_empty() { String::new() } else { format!("  ({} failed)", p.failures.len()) }
        );
    }
    Ok(Outcome::Done)
}
