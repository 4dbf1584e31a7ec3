//! Single-trajectory rollouts: no resets, one protocol step per tick.

use nalgebra::SVector;
use rayon::prelude::*;

use crate::car;
use crate::error::{Error, Result};
use crate::optim::{DiffTune, Environment, EpisodeRecord, Fixed, Learner, Mgaps, Oprf};
use crate::plant::{CarEnv, QuadEnv};
use crate::policy;
use crate::quad;
use crate::reference::Reference;

use super::scenario::{Horizon, OptimizerSpec, Platform, RosterEntry, Scenario, SweepPick};

#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    pub t: f64,
    pub x: Vec<f64>,
    pub u: Vec<f64>,
    pub theta: Vec<f64>,
    pub cost: f64,
    /// `‖y‖_F` after the step's update; zero for derivative-free learners.
    pub y_norm: f64,
    pub disturbance: bool,
    /// Squared position error.
    pub tracking: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunLog {
    pub name: String,
    pub dt: f64,
    pub steps: Vec<StepRecord>,
    pub episodes: Vec<EpisodeRecord>,
    /// Error message of the step that stopped the run early.
    pub diverged: Option<String>,
    /// Steps at which the true plant saturated the action.
    pub clamped_steps: usize,
}

impl RunLog {
    pub fn costs(&self) -> Vec<f64> {
        self.steps.iter().map(|s| s.cost).collect()
    }

    pub fn total_cost(&self) -> f64 {
        self.steps.iter().map(|s| s.cost).sum()
    }

    /// `Σ dt ‖p - p_d‖²`.
    pub fn tracking_cost(&self) -> f64 {
        self.steps.iter().map(|s| s.tracking).sum::<f64>() * self.dt
    }

    pub fn final_theta(&self) -> Option<&[f64]> {
        self.steps.last().map(|s| s.theta.as_slice())
    }
}

/// Runs `learner` against `env` for `steps` steps. Per step: read `x_t`, pick
/// `θ_t`, act and pay `c_t`, advance to `x_{t+1}`, then hand the learner the
/// derivatives at `(x_t, u_t)`. A failure ends the log early and is recorded.
pub fn rollout<E, const N: usize, const M: usize, const D: usize>(
    name: &str,
    env: &E,
    learner: &mut dyn Learner<N, M, D>,
    steps: usize,
) -> RunLog
where
    E: Environment<N, M, D>,
{
    let mut log = RunLog {
        name: name.to_owned(),
        dt: env.dt(),
        steps: Vec::with_capacity(steps),
        episodes: Vec::new(),
        diverged: None,
        clamped_steps: 0,
    };
    let mut x = env.initial_state();
    for k in 0..steps {
        let theta = learner.theta();
        let tr = match env.transition(k, &x, &theta, learner.needs_derivatives()) {
            Ok(tr) => tr,
            Err(e) => {
                log.diverged = Some(e.to_string());
                break;
            }
        };
        let tracking = env.tracking_error(k, &x);
        match learner.observe(k, tr.cost, tr.derivs.as_ref()) {
            Ok(Some(ep)) => log.episodes.push(ep),
            Ok(None) => {}
            Err(e) => log.diverged = Some(e.to_string()),
        }
        log.clamped_steps += tr.clamped as usize;
        log.steps.push(StepRecord {
            t: k as f64 * env.dt(),
            x: env.state_vector(&x).iter().copied().collect(),
            u: tr.action.iter().copied().collect(),
            theta: theta.iter().copied().collect(),
            cost: tr.cost,
            y_norm: learner.sensitivity_norm(),
            disturbance: env.disturbance_active(k),
            tracking,
        });
        if log.diverged.is_some() {
            break;
        }
        x = tr.next;
    }
    log
}

/// Logs of every roster member, in roster order.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioRun {
    pub logs: Vec<RunLog>,
    /// `(H, total cost)` when the roster needed a sweep.
    pub sweep: Vec<(usize, f64)>,
}

impl ScenarioRun {
    pub fn get(&self, name: &str) -> Option<&RunLog> {
        self.logs.iter().find(|l| l.name == name)
    }

    pub fn any_diverged(&self) -> bool {
        self.logs.iter().any(|l| l.diverged.is_some())
    }
}

pub fn quad_env(s: &Scenario) -> QuadEnv {
    let reference = Reference::new(s.trajectory, s.center, s.ramp, s.quad.gravity);
    QuadEnv::new(reference, s.quad)
}

pub fn car_env(s: &Scenario) -> CarEnv {
    CarEnv::new(s.trajectory, s.car)
}

fn to_svector<const D: usize>(v: &[f64]) -> Result<SVector<f64, D>> {
    if v.len() != D {
        return Err(Error::LengthMismatch {
            left: v.len(),
            right: D,
        });
    }
    Ok(SVector::from_column_slice(v))
}

fn make_learner<const N: usize, const M: usize, const D: usize>(
    spec: &OptimizerSpec,
    theta0: SVector<f64, D>,
    seed: u64,
) -> Result<Box<dyn Learner<N, M, D>>> {
    Ok(match spec {
        OptimizerSpec::Fixed => Box::new(Fixed { theta: theta0 }),
        OptimizerSpec::Mgaps(cfg) => Box::new(Mgaps::<N, D>::new(theta0, *cfg)),
        OptimizerSpec::Difftune { horizon, .. } | OptimizerSpec::Oprf { horizon, .. } => {
            let Horizon::Steps(h) = *horizon else {
                return Err(Error::Config("unresolved episode length".into()));
            };
            match spec.episodic(h) {
                Some(cfg) => Box::new(DiffTune::<N, D>::new(theta0, cfg)?),
                None => Box::new(Oprf::new(theta0, spec.oprf(h, seed).expect("oprf spec"))?),
            }
        }
    })
}

fn run_member<E, const N: usize, const M: usize, const D: usize>(
    s: &Scenario,
    env: &E,
    entry: &RosterEntry,
) -> Result<RunLog>
where
    E: Environment<N, M, D>,
{
    let theta0 = to_svector::<D>(&s.initial_theta(&entry.theta0))?;
    let mut learner = make_learner::<N, M, D>(&entry.optimizer, theta0, s.seed)?;
    Ok(rollout(&entry.name, env, learner.as_mut(), s.steps()))
}

fn run_entry(s: &Scenario, entry: &RosterEntry) -> Result<RunLog> {
    match s.platform {
        Platform::Quad => run_member::<
            _,
            { quad::STATE_DIM },
            { quad::ACTION_DIM },
            { policy::PARAM_DIM },
        >(s, &quad_env(s), entry),
        Platform::Car => {
            run_member::<_, { car::STATE_DIM }, { car::ACTION_DIM }, { car::PARAM_DIM }>(
                s,
                &car_env(s),
                entry,
            )
        }
    }
}

/// DiffTune total cost for each episode length, with the first DiffTune
/// entry's learning rate and initial parameter. Each length runs in isolation.
pub fn episode_sweep(s: &Scenario, lengths: &[usize]) -> Result<Vec<(usize, f64)>> {
    let template = s
        .roster
        .iter()
        .find(|e| matches!(e.optimizer, OptimizerSpec::Difftune { .. }))
        .ok_or_else(|| Error::Config("sweep needs a difftune roster entry".into()))?;
    lengths
        .par_iter()
        .map(|&h| {
            let entry = with_horizon(template, h);
            let log = run_entry(s, &entry)?;
            Ok((h, sweep_score(&log)))
        })
        .collect()
}

/// Diverged runs rank last.
fn sweep_score(log: &RunLog) -> f64 {
    if log.diverged.is_some() {
        f64::INFINITY
    } else {
        log.total_cost()
    }
}

fn with_horizon(entry: &RosterEntry, h: usize) -> RosterEntry {
    let mut out = entry.clone();
    if let OptimizerSpec::Difftune { horizon, .. } | OptimizerSpec::Oprf { horizon, .. } =
        &mut out.optimizer
    {
        *horizon = Horizon::Steps(h);
    }
    out
}

/// Runs every roster member from the same initial state against the same
/// reference and disturbance realization. Members run concurrently; a
/// diverged member keeps its partial log.
pub fn run_scenario(s: &Scenario) -> Result<ScenarioRun> {
    s.validate()?;
    let needs_sweep = s
        .roster
        .iter()
        .any(|e| matches!(e.optimizer.horizon(), Some(Horizon::Pick(_))));
    let sweep = if needs_sweep {
        episode_sweep(s, &s.sweep)?
    } else {
        Vec::new()
    };
    let resolved: Vec<RosterEntry> = s
        .roster
        .iter()
        .map(|e| match e.optimizer.horizon() {
            Some(Horizon::Pick(pick)) => with_horizon(e, pick_length(&sweep, pick)),
            _ => e.clone(),
        })
        .collect();
    let logs = resolved
        .par_iter()
        .map(|e| run_entry(s, e))
        .collect::<Result<Vec<_>>>()?;
    Ok(ScenarioRun { logs, sweep })
}

/// Ties go to the earlier length in the sweep.
fn pick_length(sweep: &[(usize, f64)], pick: SweepPick) -> usize {
    let mut best = sweep[0];
    for &(h, c) in &sweep[1..] {
        let better = match pick {
            SweepPick::Best => c < best.1,
            SweepPick::Worst => c > best.1,
        };
        if better {
            best = (h, c);
        }
    }
    best.0
}

/// Result of [`tune_expert`].
#[derive(Debug, Clone, PartialEq)]
pub struct TuneResult {
    pub theta: Vec<f64>,
    /// Cost of the last full lap.
    pub last_lap_cost: f64,
    pub laps: usize,
}

/// Runs M-GAPS from `theta0` on the scenario's (quadrotor) plant for `laps`
/// laps without logging and returns the final parameter.
pub fn tune_expert(s: &Scenario, theta0: &[f64], eta: f64, laps: usize) -> Result<TuneResult> {
    if s.platform != Platform::Quad {
        return Err(Error::Config("expert tuning runs on the quadrotor".into()));
    }
    let env = quad_env(s);
    let lap = s.steps_per_lap();
    let mut learner = Mgaps::<{ quad::STATE_DIM }, { policy::PARAM_DIM }>::new(
        to_svector(theta0)?,
        crate::optim::MgapsConfig::new(eta),
    );
    let mut x = env.initial_state();
    let mut lap_cost = 0.0;
    let mut last_lap_cost = f64::NAN;
    for k in 0..laps * lap {
        let theta =
            Learner::<{ quad::STATE_DIM }, { quad::ACTION_DIM }, { policy::PARAM_DIM }>::theta(
                &learner,
            );
        let tr = env.transition(k, &x, &theta, true)?;
        learner.observe(k, tr.cost, tr.derivs.as_ref())?;
        lap_cost += tr.cost;
        if (k + 1) % lap == 0 {
            last_lap_cost = lap_cost;
            lap_cost = 0.0;
        }
        x = tr.next;
    }
    let theta = Learner::<{ quad::STATE_DIM }, { quad::ACTION_DIM }, { policy::PARAM_DIM }>::theta(
        &learner,
    );
    Ok(TuneResult {
        theta: theta.iter().copied().collect(),
        last_lap_cost,
        laps,
    })
}
