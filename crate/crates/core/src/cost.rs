//! Per-step quadratic costs and their exact gradients.

use nalgebra::{SVector, Vector2};
use serde::{Deserialize, Serialize};

use crate::car::{self, CarAction, CarRef, CarState};
use crate::quad::{ActionVec, QuadAction, QuadState, StateVec, OMEGA, POS, VEL};
use crate::reference::RefSample;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct QuadCostWeights {
    pub p: f64,
    pub v: f64,
    pub w: f64,
    pub torque: f64,
    pub thrust: f64,
}

impl Default for QuadCostWeights {
    fn default() -> Self {
        QuadCostWeights {
            p: 1.0,
            v: 1e-4,
            w: 1e-3,
            torque: 1e-7,
            thrust: 1e-8,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CostEval<const N: usize, const M: usize> {
    pub cost: f64,
    pub df_dx: SVector<f64, N>,
    pub df_du: SVector<f64, M>,
}

/// `dt (w_p‖p-p_d‖² + w_v‖v-v_d‖² + w_ω‖ω-ω_d‖² + w_τ‖τ‖² + w_f f²)`.
pub fn quad_cost(
    x: &QuadState,
    u: &QuadAction,
    reference: &RefSample,
    weights: &QuadCostWeights,
    dt: f64,
) -> CostEval<15, 4> {
    let ep = x.p - reference.pdes;
    let ev = x.v - reference.vdes;
    let ew = x.w - reference.wdes;
    let cost = dt
        * (weights.p * ep.norm_squared()
            + weights.v * ev.norm_squared()
            + weights.w * ew.norm_squared()
            + weights.torque * u.torque.norm_squared()
            + weights.thrust * u.thrust * u.thrust);
    let mut df_dx = StateVec::zeros();
    df_dx
        .fixed_rows_mut::<3>(POS)
        .copy_from(&(ep * (2.0 * dt * weights.p)));
    df_dx
        .fixed_rows_mut::<3>(VEL)
        .copy_from(&(ev * (2.0 * dt * weights.v)));
    df_dx
        .fixed_rows_mut::<3>(OMEGA)
        .copy_from(&(ew * (2.0 * dt * weights.w)));
    let df_du = ActionVec::new(
        2.0 * dt * weights.thrust * u.thrust,
        2.0 * dt * weights.torque * u.torque.x,
        2.0 * dt * weights.torque * u.torque.y,
        2.0 * dt * weights.torque * u.torque.z,
    );
    CostEval { cost, df_dx, df_du }
}

pub const CAR_W_OMEGA: f64 = 1.0 / 30.0;
pub const CAR_W_STEER: f64 = 1.0 / 15.0;

/// `‖p-p_d‖² + (ω-ω_d)²/30 + steer²/15`; no time-step factor.
pub fn car_cost(x: &CarState, u: &CarAction, reference: &CarRef) -> CostEval<7, 2> {
    let ep: Vector2<f64> = x.p - reference.pdes;
    let ew = x.w - reference.wdes;
    let cost = ep.norm_squared() + CAR_W_OMEGA * ew * ew + CAR_W_STEER * u.steer * u.steer;
    let mut df_dx = SVector::<f64, 7>::zeros();
    df_dx[car::PX] = 2.0 * ep.x;
    df_dx[car::PY] = 2.0 * ep.y;
    df_dx[car::OMEGA] = 2.0 * CAR_W_OMEGA * ew;
    let df_du = SVector::<f64, 2>::new(0.0, 2.0 * CAR_W_STEER * u.steer);
    CostEval { cost, df_dx, df_du }
}
