//! CSV logs, JSON summaries and downsampled series.

use std::fs::File;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::car;
use crate::error::{Error, Result};
use crate::optim::quasi_regret;
use crate::policy;

use super::metrics;
use super::runner::{RunLog, ScenarioRun};
use super::scenario::{InitKind, OptimizerSpec, Platform, Scenario, Theta0};

pub const SCHEMA_VERSION: u32 = 1;

const QUAD_STATE: [&str; 15] = [
    "ierr_x[m*s]",
    "ierr_y[m*s]",
    "ierr_z[m*s]",
    "p_x[m]",
    "p_y[m]",
    "p_z[m]",
    "v_x[m/s]",
    "v_y[m/s]",
    "v_z[m/s]",
    "r_x[rad]",
    "r_y[rad]",
    "r_z[rad]",
    "w_x[rad/s]",
    "w_y[rad/s]",
    "w_z[rad/s]",
];
const QUAD_ACTION: [&str; 4] = [
    "thrust[m/s^2]",
    "tau_x[rad/s^2]",
    "tau_y[rad/s^2]",
    "tau_z[rad/s^2]",
];
const CAR_STATE: [&str; 7] = [
    "p_x[m]",
    "p_y[m]",
    "heading[rad]",
    "v_x[m/s]",
    "v_y[m/s]",
    "w[rad/s]",
    "psi[rad]",
];
const CAR_ACTION: [&str; 2] = ["throttle[m/s]", "steer[rad]"];
const BOOKKEEPING: [&str; 3] = ["cost[1]", "y_norm[1]", "disturbance[bool]"];

/// Header of the per-step CSV.
pub fn columns(platform: Platform) -> Vec<String> {
    let (state, action, params): (&[&str], &[&str], &[&str]) = match platform {
        Platform::Quad => (&QUAD_STATE, &QUAD_ACTION, &policy::PARAM_NAMES),
        Platform::Car => (&CAR_STATE, &CAR_ACTION, &car::PARAM_NAMES),
    };
    let mut out = vec!["t[s]".to_owned()];
    out.extend(state.iter().map(|s| s.to_string()));
    out.extend(action.iter().map(|s| s.to_string()));
    out.extend(params.iter().map(|p| format!("theta_{p}[ln]")));
    out.extend(BOOKKEEPING.iter().map(|s| s.to_string()));
    out
}

fn csv_err(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::Parse {
            path: path.to_path_buf(),
            message: format!("{other:?}"),
        },
    }
}

fn create(path: &Path) -> Result<csv::Writer<File>> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    Ok(csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(file))
}

pub fn write_csv(log: &RunLog, platform: Platform, path: &Path) -> Result<()> {
    let mut w = create(path)?;
    w.write_record(columns(platform))
        .map_err(|e| csv_err(path, e))?;
    for s in &log.steps {
        let mut row = Vec::with_capacity(4 + s.x.len() + s.u.len() + s.theta.len());
        row.push(s.t.to_string());
        row.extend(s.x.iter().chain(&s.u).chain(&s.theta).map(f64::to_string));
        row.push(s.cost.to_string());
        row.push(s.y_norm.to_string());
        row.push((s.disturbance as u8).to_string());
        w.write_record(&row).map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Every `every`-th step: time, cost, cumulative cost, `‖y‖`, position
/// error and the parameter.
pub fn write_series(log: &RunLog, platform: Platform, every: usize, path: &Path) -> Result<()> {
    let every = every.max(1);
    let mut w = create(path)?;
    let names = match platform {
        Platform::Quad => policy::PARAM_NAMES.as_slice(),
        Platform::Car => car::PARAM_NAMES.as_slice(),
    };
    let mut header = vec![
        "t[s]".to_owned(),
        "cost[1]".into(),
        "cumulative_cost[1]".into(),
        "y_norm[1]".into(),
        "position_error[m]".into(),
    ];
    header.extend(names.iter().map(|p| format!("theta_{p}[ln]")));
    w.write_record(&header).map_err(|e| csv_err(path, e))?;
    let mut acc = 0.0;
    for (k, s) in log.steps.iter().enumerate() {
        acc += s.cost;
        if k % every != 0 {
            continue;
        }
        let mut row = vec![
            s.t.to_string(),
            s.cost.to_string(),
            acc.to_string(),
            s.y_norm.to_string(),
            s.tracking.sqrt().to_string(),
        ];
        row.extend(s.theta.iter().map(f64::to_string));
        w.write_record(&row).map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Sum of the `cost[1]` column of an emitted CSV.
pub fn read_total_cost(path: &Path) -> Result<f64> {
    let mut r = csv::Reader::from_path(path).map_err(|e| csv_err(path, e))?;
    let headers = r.headers().map_err(|e| csv_err(path, e))?.clone();
    let col = headers
        .iter()
        .position(|h| h == "cost[1]")
        .ok_or_else(|| Error::Parse {
            path: path.to_path_buf(),
            message: "no cost column".into(),
        })?;
    let mut total = 0.0;
    for rec in r.records() {
        let rec = rec.map_err(|e| csv_err(path, e))?;
        total += rec[col].parse::<f64>().map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
    }
    Ok(total)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MemberSummary {
    pub name: String,
    pub total_cost: f64,
    pub tracking_cost: f64,
    /// Final cumulative cost difference to the fixed-expert member.
    pub quasi_regret_final: Option<f64>,
    pub per_lap_cost: Vec<f64>,
    pub final_theta: Vec<f64>,
    pub episodes: usize,
    pub clamped_steps: usize,
    pub diverged: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub schema_version: u32,
    pub scenario: Scenario,
    pub steps_per_lap: usize,
    pub members: Vec<MemberSummary>,
    /// `(episode length, total cost)` rows.
    pub sweep: Vec<(usize, f64)>,
}

/// Name of the first roster member that holds the expert parameter fixed.
pub fn expert_member(s: &Scenario) -> Option<&str> {
    s.roster
        .iter()
        .find(|e| {
            e.optimizer == OptimizerSpec::Fixed && e.theta0 == Theta0::Named(InitKind::Expert)
        })
        .map(|e| e.name.as_str())
}

impl Summary {
    pub fn new(s: &Scenario, run: &ScenarioRun) -> Summary {
        let lap = s.steps_per_lap();
        let expert = expert_member(s).and_then(|n| run.get(n)).map(|l| l.costs());
        let members = run
            .logs
            .iter()
            .map(|log| {
                let costs = log.costs();
                let quasi_regret_final = expert
                    .as_ref()
                    .and_then(|e| quasi_regret(&costs, e).ok())
                    .and_then(|q| q.last().copied());
                MemberSummary {
                    name: log.name.clone(),
                    total_cost: log.total_cost(),
                    tracking_cost: log.tracking_cost(),
                    quasi_regret_final,
                    per_lap_cost: metrics::per_lap(&costs, lap),
                    final_theta: log.final_theta().map(<[f64]>::to_vec).unwrap_or_default(),
                    episodes: log.episodes.len(),
                    clamped_steps: log.clamped_steps,
                    diverged: log.diverged.clone(),
                }
            })
            .collect();
        Summary {
            schema_version: SCHEMA_VERSION,
            scenario: s.clone(),
            steps_per_lap: lap,
            members,
            sweep: run.sweep.clone(),
        }
    }
}

pub fn write_summary(summary: &Summary, path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    serde_json::to_writer_pretty(file, summary).map_err(|e| Error::Parse {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}
