//! Closed-loop environments binding dynamics, policy, reference and cost.

use nalgebra::{SVector, Vector2};

use crate::car::{self, CarAction, CarModelConfig, CarParams, CarRef, CarState};
use crate::cost::{self, QuadCostWeights};
use crate::error::{Error, Result};
use crate::lie::RotVec2;
use crate::optim::{Environment, StepDerivs, Transition};
use crate::policy::{self, Params, PolicyConfig, PARAM_DIM};
use crate::quad::{self, EnvConfig, QuadState, ACTION_DIM, STATE_DIM};
use crate::reference::{Reference, TrajKind};

fn at_step(e: Error, k: usize) -> Error {
    match e {
        Error::SimulationDiverged { reason, .. } => Error::SimulationDiverged { step: k, reason },
        other => Error::SimulationDiverged {
            step: k,
            reason: other.to_string(),
        },
    }
}

/// Quadrotor tracking a [`Reference`] under the geometric controller.
#[derive(Debug, Clone)]
pub struct QuadEnv {
    pub reference: Reference,
    /// The true plant; derivatives always use its nominal version.
    pub plant: EnvConfig,
    pub policy: PolicyConfig,
    pub weights: QuadCostWeights,
}

impl QuadEnv {
    pub fn new(reference: Reference, plant: EnvConfig) -> Self {
        QuadEnv {
            reference,
            plant,
            policy: PolicyConfig {
                gravity: plant.gravity,
                ..PolicyConfig::default()
            },
            weights: QuadCostWeights::default(),
        }
    }

    pub fn steps_per_lap(&self) -> usize {
        (self.reference.period() / self.plant.dt).round() as usize
    }
}

impl Environment<STATE_DIM, ACTION_DIM, PARAM_DIM> for QuadEnv {
    type State = QuadState;

    fn initial_state(&self) -> QuadState {
        QuadState::at_rest(self.reference.sample(0.0).pdes)
    }

    fn state_vector(&self, x: &QuadState) -> quad::StateVec {
        x.to_vector()
    }

    fn state_from_vector(&self, v: &quad::StateVec) -> Result<QuadState> {
        QuadState::from_vector(v)
    }

    fn dt(&self) -> f64 {
        self.plant.dt
    }

    fn transition(
        &self,
        k: usize,
        x: &QuadState,
        theta: &SVector<f64, PARAM_DIM>,
        with_derivs: bool,
    ) -> Result<Transition<QuadState, STATE_DIM, ACTION_DIM, PARAM_DIM>> {
        let dt = self.plant.dt;
        let t = k as f64 * dt;
        let r = self.reference.sample(t);
        let out = policy::act_with_jacobians(x, &r, &Params(*theta), &self.policy)
            .map_err(|e| at_step(e, k))?;
        let u = out.action;
        let c = cost::quad_cost(x, &u, &r, &self.weights, dt);
        let next = quad::step_true(x, &u, t, &self.plant, &r.pdes).map_err(|e| at_step(e, k))?;
        let derivs = if with_derivs {
            let (_, dg_dx, dg_du) =
                quad::step_model_jacobians(x, &u, &self.plant.nominal(), &r.pdes)
                    .map_err(|e| at_step(e, k))?;
            Some(StepDerivs {
                dg_dx,
                dg_du,
                dpi_dx: out.dpi_dx,
                dpi_dtheta: out.dpi_dtheta,
                df_dx: c.df_dx,
                df_du: c.df_du,
            })
        } else {
            None
        };
        Ok(Transition {
            action: u.to_vector(),
            cost: c.cost,
            next,
            derivs,
            clamped: u.thrust < 0.0,
        })
    }

    fn disturbance_active(&self, k: usize) -> bool {
        self.plant.wind.is_active(k as f64 * self.plant.dt)
    }

    fn tracking_error(&self, k: usize, x: &QuadState) -> f64 {
        (x.p - self.reference.sample(k as f64 * self.plant.dt).pdes).norm_squared()
    }
}

/// Car following a planar trajectory.
#[derive(Debug, Clone)]
pub struct CarEnv {
    pub kind: TrajKind,
    pub model: CarModelConfig,
}

impl CarEnv {
    pub fn new(kind: TrajKind, model: CarModelConfig) -> Self {
        CarEnv { kind, model }
    }

    pub fn reference(&self, t: f64) -> Result<CarRef> {
        CarRef::from_kinematics(&self.kind.kinematics(t), t)
    }

    pub fn steps_per_lap(&self) -> usize {
        (self.kind.period() / self.model.dt).round() as usize
    }
}

impl Environment<{ car::STATE_DIM }, { car::ACTION_DIM }, { car::PARAM_DIM }> for CarEnv {
    type State = CarState;

    /// On the path with the reference heading, speed and yaw rate, wheels straight.
    fn initial_state(&self) -> CarState {
        let r = self
            .reference(0.0)
            .expect("car reference must have nonzero initial speed");
        CarState {
            p: r.pdes,
            r: RotVec2::new(r.rd),
            v: Vector2::new(r.vd, 0.0),
            w: r.wdes,
            psi: 0.0,
        }
    }

    fn state_vector(&self, x: &CarState) -> car::CarStateVec {
        x.to_vector()
    }

    fn state_from_vector(&self, v: &car::CarStateVec) -> Result<CarState> {
        Ok(CarState::from_vector(v))
    }

    fn dt(&self) -> f64 {
        self.model.dt
    }

    fn transition(
        &self,
        k: usize,
        x: &CarState,
        theta: &SVector<f64, { car::PARAM_DIM }>,
        with_derivs: bool,
    ) -> Result<Transition<CarState, { car::STATE_DIM }, { car::ACTION_DIM }, { car::PARAM_DIM }>>
    {
        let t = k as f64 * self.model.dt;
        let r = self.reference(t)?;
        let out = car::car_act_with_jacobians(x, &r, &CarParams(*theta));
        let u: CarAction = out.action;
        let c = cost::car_cost(x, &u, &r);
        let (next, derivs) = if with_derivs {
            let (next, dg_dx, dg_du) =
                car::car_step_jacobians(x, &u, &self.model).map_err(|e| at_step(e, k))?;
            let d = StepDerivs {
                dg_dx,
                dg_du,
                dpi_dx: out.dpi_dx,
                dpi_dtheta: out.dpi_dtheta,
                df_dx: c.df_dx,
                df_du: c.df_du,
            };
            (next, Some(d))
        } else {
            (
                car::car_step(x, &u, &self.model).map_err(|e| at_step(e, k))?,
                None,
            )
        };
        if !next.to_vector().iter().all(|v| v.is_finite()) {
            return Err(Error::SimulationDiverged {
                step: k,
                reason: "non-finite car state".into(),
            });
        }
        Ok(Transition {
            action: u.to_vector(),
            cost: c.cost,
            next,
            derivs,
            clamped: false,
        })
    }

    fn tracking_error(&self, k: usize, x: &CarState) -> f64 {
        let k = self.kind.kinematics(k as f64 * self.model.dt);
        (x.p - Vector2::new(k.p.x, k.p.y)).norm_squared()
    }
}
