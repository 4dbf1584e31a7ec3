//! Planar Ackermann car: single-track lateral model with first-order
//! throttle and steering lags, and a log-gain path-tracking policy.

use std::f64::consts::{LN_10, LN_2};

use nalgebra::{Matrix2, SMatrix, SVector, Vector2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lie::{self, RotVec2};
use crate::reference::Kinematics;

pub const STATE_DIM: usize = 7;
pub const ACTION_DIM: usize = 2;
pub const PARAM_DIM: usize = 5;

pub const PX: usize = 0;
pub const PY: usize = 1;
pub const HEADING: usize = 2;
pub const VX: usize = 3;
pub const VY: usize = 4;
pub const OMEGA: usize = 5;
pub const PSI: usize = 6;

pub const PARAM_NAMES: [&str; PARAM_DIM] = ["k1", "k2", "k3", "k4", "kp"];

/// Reference log-gains for the circle scenario: gains 0.5, 0.3, 1, 0.1, 1.
pub const CAR_EXPERT_THETA: [f64; PARAM_DIM] = [-LN_2, -1.2039728043259361, 0.0, -LN_10, 0.0];

pub type CarStateVec = SVector<f64, STATE_DIM>;
pub type CarParamVec = SVector<f64, PARAM_DIM>;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CarState {
    pub p: Vector2<f64>,
    pub r: RotVec2,
    /// Body-frame velocity: forward, left.
    pub v: Vector2<f64>,
    pub w: f64,
    /// Steering angle.
    pub psi: f64,
}

impl CarState {
    pub fn to_vector(&self) -> CarStateVec {
        CarStateVec::from_column_slice(&[
            self.p.x,
            self.p.y,
            self.r.angle(),
            self.v.x,
            self.v.y,
            self.w,
            self.psi,
        ])
    }

    pub fn from_vector(x: &CarStateVec) -> Self {
        CarState {
            p: Vector2::new(x[PX], x[PY]),
            r: RotVec2::new(x[HEADING]),
            v: Vector2::new(x[VX], x[VY]),
            w: x[OMEGA],
            psi: x[PSI],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CarAction {
    /// Commanded forward speed, m/s.
    pub throttle: f64,
    /// Commanded steering angle, rad.
    pub steer: f64,
}

impl CarAction {
    pub fn to_vector(&self) -> SVector<f64, ACTION_DIM> {
        SVector::<f64, ACTION_DIM>::new(self.throttle, self.steer)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CarModelConfig {
    pub dt: f64,
    /// Throttle lag constant, 1/s.
    pub c_th: f64,
    /// Steering lag constant, 1/s.
    pub c_st: f64,
    /// Front and rear cornering stiffness per unit mass, 1/s.
    pub c_f: f64,
    pub c_r: f64,
    pub l_f: f64,
    pub l_r: f64,
    /// Yaw inertia per unit mass, m².
    pub i_z: f64,
    pub v_min: f64,
}

impl Default for CarModelConfig {
    fn default() -> Self {
        CarModelConfig {
            dt: 0.02,
            c_th: 2.0,
            c_st: 10.0,
            c_f: 5.0,
            c_r: 5.0,
            l_f: 0.24,
            l_r: 0.24,
            i_z: 0.04,
            v_min: 0.1,
        }
    }
}

impl CarModelConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            self.dt, self.c_th, self.c_st, self.c_f, self.c_r, self.l_f, self.l_r, self.i_z,
            self.v_min,
        ];
        if positive.iter().any(|v| !(*v > 0.0)) {
            return Err(Error::Config(
                "car model parameters must be positive".into(),
            ));
        }
        if self.c_th * self.dt >= 1.0 || self.c_st * self.dt >= 1.0 {
            return Err(Error::Config(
                "lag constants must be well below 1/dt".into(),
            ));
        }
        Ok(())
    }

    /// Lateral matrix `A(v_x)` and its derivative with respect to `v_x`.
    pub fn lateral(&self, vx: f64) -> (Matrix2<f64>, Matrix2<f64>) {
        let sum = self.c_f + self.c_r;
        let moment = self.c_f * self.l_f - self.c_r * self.l_r;
        let damp = (self.c_f * self.l_f * self.l_f + self.c_r * self.l_r * self.l_r) / self.i_z;
        let inv = 1.0 / vx;
        let a = Matrix2::new(
            -sum * inv,
            -vx - moment * inv,
            -moment / self.i_z * inv,
            -damp * inv,
        );
        let inv2 = inv * inv;
        let da = Matrix2::new(
            sum * inv2,
            -1.0 + moment * inv2,
            moment / self.i_z * inv2,
            damp * inv2,
        );
        (a, da)
    }

    pub fn steer_input(&self) -> Vector2<f64> {
        Vector2::new(self.c_f, self.c_f * self.l_f / self.i_z)
    }
}

fn lateral_state(x: &CarState) -> Vector2<f64> {
    Vector2::new(x.v.y, x.w)
}

/// One forward-Euler step. The lateral model is singular below `v_min`; at
/// those speeds the step is only defined while the lateral subsystem is at
/// rest (zero lateral velocity, yaw rate and steering).
pub fn car_step(x: &CarState, u: &CarAction, cfg: &CarModelConfig) -> Result<CarState> {
    let dt = cfg.dt;
    let s = lateral_state(x);
    let lateral_rate = if x.v.x.abs() < cfg.v_min {
        if s != Vector2::zeros() || x.psi != 0.0 {
            return Err(Error::SingularModel { speed: x.v.x });
        }
        Vector2::zeros()
    } else {
        let (a, _) = cfg.lateral(x.v.x);
        a * s + cfg.steer_input() * x.psi
    };
    let s_next = s + lateral_rate * dt;
    Ok(CarState {
        p: x.p + lie::exp_so2(x.r).matrix() * x.v * dt,
        r: lie::boxplus_so2(x.r, x.w, dt),
        v: Vector2::new(x.v.x + dt * cfg.c_th * (u.throttle - x.v.x), s_next.x),
        w: s_next.y,
        psi: x.psi + dt * cfg.c_st * (u.steer - x.psi),
    })
}

pub type CarStateJac = SMatrix<f64, STATE_DIM, STATE_DIM>;
pub type CarInputJac = SMatrix<f64, STATE_DIM, ACTION_DIM>;

pub fn car_step_jacobians(
    x: &CarState,
    u: &CarAction,
    cfg: &CarModelConfig,
) -> Result<(CarState, CarStateJac, CarInputJac)> {
    if x.v.x.abs() < cfg.v_min {
        return Err(Error::SingularModel { speed: x.v.x });
    }
    let next = car_step(x, u, cfg)?;
    let dt = cfg.dt;
    let (a, da) = cfg.lateral(x.v.x);
    let s = lateral_state(x);
    let rot = lie::exp_so2(x.r);

    let mut jx = CarStateJac::identity();
    let dp_dr = lie::rotate_jacobian_so2(x.r, &x.v) * dt;
    jx[(PX, HEADING)] = dp_dr.x;
    jx[(PY, HEADING)] = dp_dr.y;
    let dp_dv = rot.matrix() * dt;
    jx.fixed_view_mut::<2, 2>(PX, VX).copy_from(&dp_dv);
    jx[(HEADING, OMEGA)] = dt;
    // Lateral rows (v_y, ω) over columns (v_y, ω), v_x and ψ.
    let ds = Matrix2::identity() + a * dt;
    jx.fixed_view_mut::<2, 2>(VY, VY).copy_from(&ds);
    let ds_dvx = da * s * dt;
    jx[(VY, VX)] = ds_dvx.x;
    jx[(OMEGA, VX)] = ds_dvx.y;
    let ds_dpsi = cfg.steer_input() * dt;
    jx[(VY, PSI)] = ds_dpsi.x;
    jx[(OMEGA, PSI)] = ds_dpsi.y;
    jx[(VX, VX)] = 1.0 - dt * cfg.c_th;
    jx[(PSI, PSI)] = 1.0 - dt * cfg.c_st;

    let mut ju = CarInputJac::zeros();
    ju[(VX, 0)] = dt * cfg.c_th;
    ju[(PSI, 1)] = dt * cfg.c_st;
    Ok((next, jx, ju))
}

/// Planar reference quantities: desired position, heading, forward speed and
/// yaw rate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CarRef {
    pub pdes: Vector2<f64>,
    pub rd: f64,
    pub vd: f64,
    pub wdes: f64,
}

impl CarRef {
    /// Heading `atan2(ẏ, ẋ)`, speed `‖ṗ‖` and rate `(ẋÿ - ẏẍ)/‖ṗ‖²`.
    pub fn from_kinematics(k: &Kinematics, t: f64) -> Result<Self> {
        let vel = Vector2::new(k.v.x, k.v.y);
        let speed2 = vel.norm_squared();
        if !(speed2 > 1e-12) {
            return Err(Error::ReferenceSingular { t });
        }
        Ok(CarRef {
            pdes: Vector2::new(k.p.x, k.p.y),
            rd: vel.y.atan2(vel.x),
            vd: speed2.sqrt(),
            wdes: (vel.x * k.a.y - vel.y * k.a.x) / speed2,
        })
    }
}

/// Log-gains `(K1, K2, K3, K4, Kp)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CarParams(pub CarParamVec);

impl CarParams {
    pub fn from_gains(g: &[f64; PARAM_DIM]) -> Self {
        CarParams(CarParamVec::from_iterator(g.iter().map(|v| v.ln())))
    }

    pub fn gains(&self) -> CarParamVec {
        self.0.map(f64::exp)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CarPolicyOutput {
    pub action: CarAction,
    /// Heading error `log(exp(r) exp(-r_d))`, wrapped.
    pub heading_error: f64,
    pub dpi_dx: SMatrix<f64, ACTION_DIM, STATE_DIM>,
    pub dpi_dtheta: SMatrix<f64, ACTION_DIM, PARAM_DIM>,
}

pub fn car_act(x: &CarState, reference: &CarRef, theta: &CarParams) -> CarAction {
    car_act_with_jacobians(x, reference, theta).action
}

pub fn car_act_with_jacobians(
    x: &CarState,
    reference: &CarRef,
    theta: &CarParams,
) -> CarPolicyOutput {
    let k = theta.gains();
    let e = x.p - reference.pdes;
    let (sd, cd) = reference.rd.sin_cos();
    let (sr, cr) = x.r.angle().sin_cos();
    // [exp(-r_d) e]_y and [exp(-r) e]_x
    let lateral = -sd * e.x + cd * e.y;
    let along = cr * e.x + sr * e.y;
    let re = lie::wrap_angle(x.r.angle() - reference.rd);
    let slip = x.v.y + re * x.v.x;
    let ew = x.w - reference.wdes;

    let steer = -k[0] * lateral - k[1] * slip - k[2] * re - k[3] * ew;
    let throttle = -k[4] * along + reference.vd;

    let mut dpi_dx = SMatrix::<f64, ACTION_DIM, STATE_DIM>::zeros();
    dpi_dx[(0, PX)] = -k[4] * cr;
    dpi_dx[(0, PY)] = -k[4] * sr;
    dpi_dx[(0, HEADING)] = -k[4] * (-sr * e.x + cr * e.y);
    dpi_dx[(1, PX)] = k[0] * sd;
    dpi_dx[(1, PY)] = -k[0] * cd;
    dpi_dx[(1, HEADING)] = -k[1] * x.v.x - k[2];
    dpi_dx[(1, VX)] = -k[1] * re;
    dpi_dx[(1, VY)] = -k[1];
    dpi_dx[(1, OMEGA)] = -k[3];

    let mut dpi_dtheta = SMatrix::<f64, ACTION_DIM, PARAM_DIM>::zeros();
    dpi_dtheta[(1, 0)] = -k[0] * lateral;
    dpi_dtheta[(1, 1)] = -k[1] * slip;
    dpi_dtheta[(1, 2)] = -k[2] * re;
    dpi_dtheta[(1, 3)] = -k[3] * ew;
    dpi_dtheta[(0, 4)] = -k[4] * along;

    CarPolicyOutput {
        action: CarAction { throttle, steer },
        heading_error: re,
        dpi_dx,
        dpi_dtheta,
    }
}
