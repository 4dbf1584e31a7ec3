//! Scenario files: one trajectory, one plant, a roster of optimizers.

use std::path::Path;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::car::{self, CarModelConfig};
use crate::error::{Error, Result};
use crate::optim::{EpisodicConfig, MgapsConfig, OprfConfig};
use crate::policy;
use crate::quad::EnvConfig;
use crate::reference::TrajKind;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Platform {
    Quad,
    Car,
}

impl Platform {
    pub fn param_dim(self) -> usize {
        match self {
            Platform::Quad => policy::PARAM_DIM,
            Platform::Car => car::PARAM_DIM,
        }
    }

    pub fn default_expert(self) -> Vec<f64> {
        match self {
            Platform::Quad => policy::SIM_EXPERT_THETA.to_vec(),
            Platform::Car => car::CAR_EXPERT_THETA.to_vec(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitKind {
    Expert,
    Detune,
}

/// Initial parameter: the scenario's expert, its detuned version, or explicit
/// log-gains.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Theta0 {
    Named(InitKind),
    Explicit(Vec<f64>),
}

/// Episode length in steps, or the best/worst length of the scenario sweep.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Horizon {
    Steps(usize),
    Pick(SweepPick),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepPick {
    Best,
    Worst,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum OptimizerSpec {
    Fixed,
    Mgaps(MgapsConfig),
    Difftune {
        eta: f64,
        horizon: Horizon,
        #[serde(default)]
        clip: Option<f64>,
    },
    /// A `best`/`worst` horizon picks from the DiffTune sweep.
    Oprf {
        eta: f64,
        horizon: Horizon,
        epsilon: f64,
    },
}

impl OptimizerSpec {
    pub fn horizon(&self) -> Option<Horizon> {
        match *self {
            OptimizerSpec::Difftune { horizon, .. } | OptimizerSpec::Oprf { horizon, .. } => {
                Some(horizon)
            }
            _ => None,
        }
    }

    pub fn episodic(&self, horizon: usize) -> Option<EpisodicConfig> {
        match *self {
            OptimizerSpec::Difftune { eta, clip, .. } => {
                Some(EpisodicConfig { eta, horizon, clip })
            }
            _ => None,
        }
    }

    pub fn oprf(&self, horizon: usize, seed: u64) -> Option<OprfConfig> {
        match *self {
            OptimizerSpec::Oprf { eta, epsilon, .. } => Some(OprfConfig {
                eta,
                horizon,
                epsilon,
                seed,
            }),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RosterEntry {
    pub name: String,
    pub theta0: Theta0,
    pub optimizer: OptimizerSpec,
}

fn default_duration() -> f64 {
    60.0
}

fn default_ramp() -> f64 {
    2.0
}

fn default_detune() -> f64 {
    std::f64::consts::LN_2
}

fn default_center() -> Vector3<f64> {
    Vector3::new(0.0, 0.0, 1.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub name: String,
    pub platform: Platform,
    #[serde(default)]
    pub trajectory: TrajKind,
    /// Seconds of simulated time.
    #[serde(default = "default_duration")]
    pub duration: f64,
    /// Quadrotor only: where the curve is centered, and the smooth-start time.
    #[serde(default = "default_center")]
    pub center: Vector3<f64>,
    #[serde(default = "default_ramp")]
    pub ramp: f64,
    #[serde(default)]
    pub quad: EnvConfig,
    #[serde(default)]
    pub car: CarModelConfig,
    #[serde(default)]
    pub seed: u64,
    /// Expert log-gains; the platform's frozen default when absent.
    #[serde(default)]
    pub expert: Option<Vec<f64>>,
    /// Amount subtracted from every expert log-gain for `detune`.
    #[serde(default = "default_detune")]
    pub detune: f64,
    pub roster: Vec<RosterEntry>,
    /// Episode lengths (steps) used to resolve `best`/`worst` horizons and by
    /// `sweep`.
    #[serde(default)]
    pub sweep: Vec<usize>,
}

impl Scenario {
    pub fn from_toml(text: &str) -> Result<Self> {
        let s: Scenario = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        s.validate()?;
        Ok(s)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let s: Scenario = toml::from_str(&text).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        s.validate()?;
        Ok(s)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.duration > 0.0) {
            return Err(Error::Config("duration must be positive".into()));
        }
        if self.roster.is_empty() {
            return Err(Error::Config("roster is empty".into()));
        }
        self.trajectory.validate()?;
        match self.platform {
            Platform::Quad => self.quad.validate()?,
            Platform::Car => {
                self.car.validate()?;
                if !matches!(self.trajectory, TrajKind::CarCircle { .. }) {
                    return Err(Error::Config(
                        "the car follows a car_circle trajectory".into(),
                    ));
                }
            }
        }
        let dim = self.platform.param_dim();
        if let Some(e) = &self.expert {
            if e.len() != dim {
                return Err(Error::LengthMismatch {
                    left: e.len(),
                    right: dim,
                });
            }
        }
        for entry in &self.roster {
            if let Theta0::Explicit(v) = &entry.theta0 {
                if v.len() != dim {
                    return Err(Error::LengthMismatch {
                        left: v.len(),
                        right: dim,
                    });
                }
            }
            match entry.optimizer {
                OptimizerSpec::Mgaps(c) if !(c.eta >= 0.0) => {
                    return Err(Error::Config(format!(
                        "{}: learning rate must be non-negative",
                        entry.name
                    )))
                }
                OptimizerSpec::Difftune {
                    horizon: Horizon::Pick(_),
                    ..
                }
                | OptimizerSpec::Oprf {
                    horizon: Horizon::Pick(_),
                    ..
                } if self.sweep.is_empty() => {
                    return Err(Error::Config(format!(
                        "{}: best/worst horizon needs a sweep",
                        entry.name
                    )))
                }
                OptimizerSpec::Difftune {
                    horizon: Horizon::Steps(0),
                    ..
                }
                | OptimizerSpec::Oprf {
                    horizon: Horizon::Steps(0),
                    ..
                } => {
                    return Err(Error::Config(format!(
                        "{}: episode length must be positive",
                        entry.name
                    )))
                }
                _ => {}
            }
        }
        if self.sweep.contains(&0) {
            return Err(Error::Config("sweep lengths must be positive".into()));
        }
        Ok(())
    }

    pub fn dt(&self) -> f64 {
        match self.platform {
            Platform::Quad => self.quad.dt,
            Platform::Car => self.car.dt,
        }
    }

    pub fn steps(&self) -> usize {
        (self.duration / self.dt()).round() as usize
    }

    pub fn steps_per_lap(&self) -> usize {
        (self.trajectory.period() / self.dt()).round() as usize
    }

    pub fn expert_theta(&self) -> Vec<f64> {
        self.expert
            .clone()
            .unwrap_or_else(|| self.platform.default_expert())
    }

    pub fn initial_theta(&self, init: &Theta0) -> Vec<f64> {
        match init {
            Theta0::Named(InitKind::Expert) => self.expert_theta(),
            Theta0::Named(InitKind::Detune) => self
                .expert_theta()
                .iter()
                .map(|v| v - self.detune)
                .collect(),
            Theta0::Explicit(v) => v.clone(),
        }
    }

    /// Same scenario with a single roster member.
    pub fn only(&self, entry: RosterEntry) -> Scenario {
        Scenario {
            roster: vec![entry],
            ..self.clone()
        }
    }
}
