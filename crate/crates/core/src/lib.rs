//! Online tuning of controller gains along a single trajectory.
//!
//! Three optimizers share one protocol ([`optim::Environment`] +
//! [`optim::Learner`]): the non-episodic model-based M-GAPS, the episodic
//! model-based DiffTune, and the episodic model-free OPRF. Two plants are
//! provided: a quadrotor under a geometric cascade controller and a planar
//! Ackermann car, both with analytic Jacobians.

// `!(x > 0.0)` is how NaN gets rejected alongside non-positive values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod car;
pub mod checks;
pub mod cost;
pub mod error;
pub mod harness;
pub mod lie;
pub mod optim;
pub mod oracles;
pub mod plant;
pub mod policy;
pub mod quad;
pub mod reference;

pub use error::{Error, Result};
