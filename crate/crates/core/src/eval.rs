//! Evaluation episodes, trace output and noise sweeps.

use std::io::Write;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::env::{EnvConfig, EnvMode, Observation, ReactorEnv};
use crate::error::{Error, Result};
use crate::metrics::{compute_metrics, EpisodeMetrics};
use crate::reactor::NUM_DRUMS;

/// Anything that maps observations to drum speeds.
pub trait Controller {
    /// Environment mode the controller's actions are shaped for.
    fn mode(&self) -> EnvMode;
    /// Clears per-episode memory.
    fn reset(&mut self);
    fn act(&mut self, obs: &Observation) -> Result<Vec<f64>>;
}

pub type ControllerFactory<'a> = dyn Fn() -> Result<Box<dyn Controller>> + Sync + 'a;

/// Holds every drum still. Handy as a baseline.
#[derive(Debug, Clone, Copy)]
pub struct HoldController(pub EnvMode);

impl Controller for HoldController {
    fn mode(&self) -> EnvMode {
        self.0
    }

    fn reset(&mut self) {}

    fn act(&mut self, _obs: &Observation) -> Result<Vec<f64>> {
        Ok(vec![0.0; self.0.action_dim()])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub t: f64,
    pub true_power: f64,
    pub measured_power: f64,
    pub setpoint: f64,
    pub reward: f64,
    pub theta: [f64; NUM_DRUMS],
    pub u: [f64; NUM_DRUMS],
    pub t_f: f64,
    pub t_m: f64,
    pub t_c: f64,
    pub conc_i: f64,
    pub conc_x: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub mae: f64,
    pub cae: f64,
    pub control_effort: f64,
    pub episode_length: usize,
    pub terminated_early: bool,
}

#[derive(Debug, Clone)]
pub struct EpisodeRecord {
    pub rows: Vec<TraceRow>,
    pub metrics: EpisodeMetrics<f64>,
    pub terminated_early: bool,
    pub total_reward: f64,
}

impl EpisodeRecord {
    pub fn report(&self) -> MetricsReport {
        MetricsReport {
            mae: self.metrics.mae,
            cae: self.metrics.cae,
            control_effort: self.metrics.control_effort,
            episode_length: self.metrics.episode_length,
            terminated_early: self.terminated_early,
        }
    }

    pub fn true_power(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.true_power).collect()
    }

    /// Largest spread of angles among the given drums over the episode.
    pub fn max_angle_spread(&self, drums: &[usize]) -> f64 {
        self.rows
            .iter()
            .map(|r| {
                let (lo, hi) = drums
                    .iter()
                    .map(|&d| r.theta[d])
                    .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), a| (lo.min(a), hi.max(a)));
                if hi >= lo {
                    hi - lo
                } else {
                    0.0
                }
            })
            .fold(0.0, f64::max)
    }

    pub fn write_trace<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header = vec!["t".to_string(), "true_power".into(), "measured_power".into(), "setpoint".into(), "reward".into()];
        header.extend((1..=NUM_DRUMS).map(|i| format!("theta_{i}")));
        header.extend((1..=NUM_DRUMS).map(|i| format!("u_{i}")));
        header.extend(["T_f", "T_m", "T_c", "I", "X"].map(String::from));
        w.write_record(&header)?;
        for r in &self.rows {
            let mut rec = vec![r.t, r.true_power, r.measured_power, r.setpoint, r.reward];
            rec.extend(r.theta);
            rec.extend(r.u);
            rec.extend([r.t_f, r.t_m, r.t_c, r.conc_i, r.conc_x]);
            w.write_record(rec.iter().map(|v| format!("{v:?}")))?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn save_trace(&self, path: impl AsRef<Path>) -> Result<()> {
        let file = std::fs::File::create(path)?;
        self.write_trace(std::io::BufWriter::new(file))
    }
}

/// Reads a trace written by [`EpisodeRecord::write_trace`].
pub fn read_trace<R: std::io::Read>(reader: R) -> Result<Vec<TraceRow>> {
    let mut r = csv::Reader::from_reader(reader);
    let expected = 5 + 2 * NUM_DRUMS + 5;
    let mut rows = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        if rec.len() != expected {
            return Err(Error::config(format!("trace row has {} fields, expected {expected}", rec.len())));
        }
        let v: Vec<f64> = rec
            .iter()
            .map(|s| s.parse::<f64>().map_err(|e| Error::config(format!("bad trace value `{s}`: {e}"))))
            .collect::<Result<_>>()?;
        let mut theta = [0.0; NUM_DRUMS];
        let mut u = [0.0; NUM_DRUMS];
        theta.copy_from_slice(&v[5..5 + NUM_DRUMS]);
        u.copy_from_slice(&v[5 + NUM_DRUMS..5 + 2 * NUM_DRUMS]);
        let k = 5 + 2 * NUM_DRUMS;
        rows.push(TraceRow {
            t: v[0],
            true_power: v[1],
            measured_power: v[2],
            setpoint: v[3],
            reward: v[4],
            theta,
            u,
            t_f: v[k],
            t_m: v[k + 1],
            t_c: v[k + 2],
            conc_i: v[k + 3],
            conc_x: v[k + 4],
        });
    }
    Ok(rows)
}

/// Metrics recomputed from trace rows.
pub fn metrics_from_rows(rows: &[TraceRow]) -> Result<EpisodeMetrics<f64>> {
    let power: Vec<f64> = rows.iter().map(|r| r.true_power).collect();
    let setpoint: Vec<f64> = rows.iter().map(|r| r.setpoint).collect();
    let actions: Vec<[f64; NUM_DRUMS]> = rows.iter().map(|r| r.u).collect();
    compute_metrics(&power, &setpoint, &actions)
}

/// Runs one full episode; the environment is reset first.
pub fn run_episode(env: &mut ReactorEnv, controller: &mut dyn Controller) -> Result<EpisodeRecord> {
    if controller.mode() != env.mode() {
        return Err(Error::usage(format!(
            "controller expects {:?} but the environment is {:?}",
            controller.mode(),
            env.mode()
        )));
    }
    controller.reset();
    let mut obs = env.reset()?;
    let mut rows = Vec::with_capacity(env.config().profile.steps());
    let mut total_reward = 0.0;
    let terminated_early = loop {
        let action = controller.act(&obs)?;
        let out = env.step(&action)?;
        total_reward += out.reward;
        let i = &out.info;
        rows.push(TraceRow {
            t: i.time,
            true_power: i.true_power,
            measured_power: i.measured_power,
            setpoint: i.setpoint,
            reward: out.reward,
            theta: i.theta,
            u: i.applied,
            t_f: i.temperatures[0],
            t_m: i.temperatures[1],
            t_c: i.temperatures[2],
            conc_i: i.conc_i,
            conc_x: i.conc_x,
        });
        if out.done() {
            break out.terminated;
        }
        obs = out.obs;
    };
    let metrics = metrics_from_rows(&rows)?;
    Ok(EpisodeRecord {
        rows,
        metrics,
        terminated_early,
        total_reward,
    })
}

/// Builds an evaluation environment for `controller` and runs one episode.
pub fn evaluate(config: &EnvConfig, controller: &mut dyn Controller) -> Result<EpisodeRecord> {
    let mut cfg = config.clone();
    cfg.mode = controller.mode();
    cfg.training = false;
    let mut env = ReactorEnv::new(cfg)?;
    run_episode(&mut env, controller)
}

/// The default sweep grid: 0 to 5 SPU in steps of 0.5.
pub fn default_sigmas() -> Vec<f64> {
    (0..=10).map(|i| i as f64 * 0.5).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub controller: String,
    pub sigma: f64,
    pub reps: usize,
    pub cae_mean: f64,
    pub cae_std: f64,
    pub effort_mean: f64,
    pub effort_std: f64,
    pub early_terminations: usize,
    pub failures: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseSweepReport {
    pub profile: String,
    pub base_seed: u64,
    pub points: Vec<SweepPoint>,
}

impl NoiseSweepReport {
    pub fn point(&self, controller: &str, sigma: f64) -> Option<&SweepPoint> {
        self.points
            .iter()
            .find(|p| p.controller == controller && (p.sigma - sigma).abs() < 1e-12)
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record([
            "controller", "sigma", "reps", "cae_mean", "cae_std", "effort_mean", "effort_std", "early_terminations", "failures",
        ])?;
        for p in &self.points {
            w.write_record([
                p.controller.clone(),
                p.sigma.to_string(),
                p.reps.to_string(),
                p.cae_mean.to_string(),
                p.cae_std.to_string(),
                p.effort_mean.to_string(),
                p.effort_std.to_string(),
                p.early_terminations.to_string(),
                p.failures.len().to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Sample mean and (n-1) standard deviation; 0 spread for fewer than two values.
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Runs `reps` seeded episodes for every controller and noise level.
///
/// Repetition `r` uses seed `base_seed + r`, so every sigma sees the same
/// seed set. Episode errors are recorded in the point and skipped.
pub fn noise_sweep(
    base: &EnvConfig,
    controllers: &[(&str, &ControllerFactory<'_>)],
    sigmas: &[f64],
    reps: usize,
    base_seed: u64,
) -> Result<NoiseSweepReport> {
    if reps == 0 {
        return Err(Error::config("noise sweep needs at least one repetition"));
    }
    if let Some(s) = sigmas.iter().find(|s| !(**s >= 0.0)) {
        return Err(Error::config(format!("noise sigma must be >= 0, got {s}")));
    }
    let mut points = Vec::new();
    for &(name, factory) in controllers {
        for &sigma in sigmas {
            let results: Vec<Result<EpisodeRecord>> = (0..reps)
                .into_par_iter()
                .map(|r| {
                    let mut ctrl = factory()?;
                    let cfg = base.clone().with_noise(sigma).with_seed(base_seed + r as u64);
                    evaluate(&cfg, ctrl.as_mut())
                })
                .collect();
            let mut caes = Vec::new();
            let mut efforts = Vec::new();
            let mut early = 0;
            let mut failures = Vec::new();
            for res in results {
                match res {
                    Ok(rec) => {
                        caes.push(rec.metrics.cae);
                        efforts.push(rec.metrics.control_effort);
                        early += usize::from(rec.terminated_early);
                    }
                    Err(e) => failures.push(e.to_string()),
                }
            }
            let (cae_mean, cae_std) = mean_std(&caes);
            let (effort_mean, effort_std) = mean_std(&efforts);
            log::info!("sweep {name} sigma={sigma}: CAE {cae_mean:.2} ± {cae_std:.2}");
            points.push(SweepPoint {
                controller: name.to_string(),
                sigma,
                reps,
                cae_mean,
                cae_std,
                effort_mean,
                effort_std,
                early_terminations: early,
                failures,
            });
        }
    }
    Ok(NoiseSweepReport {
        profile: base.profile.name().to_string(),
        base_seed,
        points,
    })
}
