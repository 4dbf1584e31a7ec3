//! Discrete-time quadrotor with integral-error augmentation.
//!
//! Unit mass and identity inertia: the thrust input is a mass-normalized
//! acceleration along the body z axis and the torque input is a body-frame
//! angular acceleration. Rotation is integrated on the group, everything else
//! with forward Euler.

use nalgebra::{Matrix3, SMatrix, SVector, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lie::{self, RotVec3};

pub const STATE_DIM: usize = 15;
pub const ACTION_DIM: usize = 4;

pub const IERR: usize = 0;
pub const POS: usize = 3;
pub const VEL: usize = 6;
pub const ROT: usize = 9;
pub const OMEGA: usize = 12;

pub const STANDARD_GRAVITY: f64 = 9.81;
pub const DEFAULT_DT: f64 = 1.0 / 500.0;

pub type StateVec = SVector<f64, STATE_DIM>;
pub type ActionVec = SVector<f64, ACTION_DIM>;
pub type StateJac = SMatrix<f64, STATE_DIM, STATE_DIM>;
pub type InputJac = SMatrix<f64, STATE_DIM, ACTION_DIM>;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadState {
    /// Integrated position error, m·s.
    pub ierr: Vector3<f64>,
    pub p: Vector3<f64>,
    pub v: Vector3<f64>,
    /// Body-to-world attitude.
    pub r: RotVec3,
    /// Body-frame angular velocity.
    pub w: Vector3<f64>,
}

impl QuadState {
    /// At rest and level at `p`.
    pub fn at_rest(p: Vector3<f64>) -> Self {
        QuadState {
            ierr: Vector3::zeros(),
            p,
            v: Vector3::zeros(),
            r: RotVec3::ZERO,
            w: Vector3::zeros(),
        }
    }

    pub fn to_vector(&self) -> StateVec {
        let mut out = StateVec::zeros();
        out.fixed_rows_mut::<3>(IERR).copy_from(&self.ierr);
        out.fixed_rows_mut::<3>(POS).copy_from(&self.p);
        out.fixed_rows_mut::<3>(VEL).copy_from(&self.v);
        out.fixed_rows_mut::<3>(ROT).copy_from(self.r.coords());
        out.fixed_rows_mut::<3>(OMEGA).copy_from(&self.w);
        out
    }

    pub fn from_vector(x: &StateVec) -> Result<Self> {
        Ok(QuadState {
            ierr: x.fixed_rows::<3>(IERR).into_owned(),
            p: x.fixed_rows::<3>(POS).into_owned(),
            v: x.fixed_rows::<3>(VEL).into_owned(),
            r: RotVec3::new(x.fixed_rows::<3>(ROT).into_owned())?,
            w: x.fixed_rows::<3>(OMEGA).into_owned(),
        })
    }

    pub fn is_finite(&self) -> bool {
        self.to_vector().iter().all(|c| c.is_finite())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadAction {
    /// Mass-normalized collective thrust, m/s².
    pub thrust: f64,
    /// Body-frame angular acceleration, rad/s².
    pub torque: Vector3<f64>,
}

impl QuadAction {
    pub fn to_vector(&self) -> ActionVec {
        ActionVec::new(self.thrust, self.torque.x, self.torque.y, self.torque.z)
    }

    pub fn from_vector(u: &ActionVec) -> Self {
        QuadAction {
            thrust: u[0],
            torque: Vector3::new(u[1], u[2], u[3]),
        }
    }
}

/// Square-wave specific force on the velocity row: off for `period_off`
/// seconds, then on for `period_on`, repeating from `t = 0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct WindModel {
    pub force: Vector3<f64>,
    pub period_on: f64,
    pub period_off: f64,
    pub enabled: bool,
}

impl Default for WindModel {
    fn default() -> Self {
        WindModel {
            force: Vector3::zeros(),
            period_on: 12.0,
            period_off: 12.0,
            enabled: false,
        }
    }
}

impl WindModel {
    pub fn is_active(&self, t: f64) -> bool {
        if !self.enabled {
            return false;
        }
        let cycle = self.period_on + self.period_off;
        t.rem_euclid(cycle) >= self.period_off
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EnvConfig {
    pub dt: f64,
    pub gravity: f64,
    /// True mass divided by the modeled mass.
    pub mass_scale: f64,
    pub wind: WindModel,
}

impl Default for EnvConfig {
    fn default() -> Self {
        EnvConfig {
            dt: DEFAULT_DT,
            gravity: STANDARD_GRAVITY,
            mass_scale: 1.0,
            wind: WindModel::default(),
        }
    }
}

impl EnvConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0 && self.gravity > 0.0 && self.mass_scale > 0.0) {
            return Err(Error::Config(
                "dt, gravity and mass_scale must be positive".into(),
            ));
        }
        let w = &self.wind;
        if w.enabled && !(w.period_on > 0.0 && w.period_off > 0.0) {
            return Err(Error::Config("wind periods must be positive".into()));
        }
        Ok(())
    }

    /// The model the optimizers differentiate: unit mass scale, no wind.
    pub fn nominal(&self) -> EnvConfig {
        EnvConfig {
            mass_scale: 1.0,
            wind: WindModel {
                enabled: false,
                ..self.wind
            },
            ..*self
        }
    }
}

fn diverged(reason: impl Into<String>) -> Error {
    Error::SimulationDiverged {
        step: 0,
        reason: reason.into(),
    }
}

/// One step of the true plant. Negative thrust is clamped to zero, the
/// payload scales thrust by `1 / mass_scale`, and wind is added to the
/// velocity row while active at time `t`.
pub fn step_true(
    x: &QuadState,
    u: &QuadAction,
    t: f64,
    cfg: &EnvConfig,
    pdes: &Vector3<f64>,
) -> Result<QuadState> {
    let dt = cfg.dt;
    let thrust = u.thrust.max(0.0) / cfg.mass_scale;
    let body_z = lie::exp_so3(&x.r).matrix().column(2).into_owned();
    let mut accel = body_z * thrust - Vector3::z() * cfg.gravity;
    if cfg.wind.is_active(t) {
        accel += cfg.wind.force;
    }
    let r = lie::boxplus(&x.r, &x.w, dt).map_err(|e| diverged(e.to_string()))?;
    let next = QuadState {
        ierr: x.ierr + (x.p - pdes) * dt,
        p: x.p + x.v * dt,
        v: x.v + accel * dt,
        r,
        w: x.w + u.torque * dt,
    };
    if !next.is_finite() {
        return Err(diverged("non-finite state"));
    }
    Ok(next)
}

/// Nominal-model step (unit mass scale, no wind, no thrust clamp) with
/// `∂g/∂x` and `∂g/∂u` at `(x, u)`.
pub fn step_model_jacobians(
    x: &QuadState,
    u: &QuadAction,
    cfg: &EnvConfig,
    pdes: &Vector3<f64>,
) -> Result<(QuadState, StateJac, InputJac)> {
    let dt = cfg.dt;
    let rot = lie::exp_so3(&x.r);
    let body_z = rot.matrix().column(2).into_owned();
    let accel = body_z * u.thrust - Vector3::z() * cfg.gravity;
    let (r, dr_dr, dr_dw) =
        lie::boxplus_jacobians(&x.r, &x.w, dt).map_err(|e| diverged(e.to_string()))?;
    let next = QuadState {
        ierr: x.ierr + (x.p - pdes) * dt,
        p: x.p + x.v * dt,
        v: x.v + accel * dt,
        r,
        w: x.w + u.torque * dt,
    };
    if !next.is_finite() {
        return Err(diverged("non-finite state"));
    }

    let eye = Matrix3::identity();
    let mut a = StateJac::identity();
    a.fixed_view_mut::<3, 3>(IERR, POS).copy_from(&(eye * dt));
    a.fixed_view_mut::<3, 3>(POS, VEL).copy_from(&(eye * dt));
    a.fixed_view_mut::<3, 3>(VEL, ROT)
        .copy_from(&(lie::rotate_jacobian(&x.r, &Vector3::z()) * (u.thrust * dt)));
    a.fixed_view_mut::<3, 3>(ROT, ROT).copy_from(&dr_dr);
    a.fixed_view_mut::<3, 3>(ROT, OMEGA).copy_from(&dr_dw);

    let mut b = InputJac::zeros();
    b.fixed_view_mut::<3, 1>(VEL, 0).copy_from(&(body_z * dt));
    b.fixed_view_mut::<3, 3>(OMEGA, 1).copy_from(&(eye * dt));
    Ok((next, a, b))
}
