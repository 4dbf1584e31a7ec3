//! Target trajectories and their flatness-derived feedforward.
//!
//! Each curve is a closed-form periodic function whose first three time
//! derivatives are evaluated analytically. The desired body rate comes from
//! differentiating the yaw-free attitude that aligns the body z axis with the
//! feedforward thrust direction `a + g e_z`.

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};
use std::f64::consts::{FRAC_PI_2, FRAC_PI_4, TAU};

use crate::error::{Error, Result};
use crate::lie;
use crate::quad::STANDARD_GRAVITY;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RefSample {
    pub pdes: Vector3<f64>,
    pub vdes: Vector3<f64>,
    pub ades: Vector3<f64>,
    /// Body-frame desired angular velocity.
    pub wdes: Vector3<f64>,
}

impl RefSample {
    /// Hovering at `p`.
    pub fn hover(p: Vector3<f64>) -> Self {
        RefSample {
            pdes: p,
            vdes: Vector3::zeros(),
            ades: Vector3::zeros(),
            wdes: Vector3::zeros(),
        }
    }
}

/// Position, velocity, acceleration and jerk at one instant.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Kinematics {
    pub p: Vector3<f64>,
    pub v: Vector3<f64>,
    pub a: Vector3<f64>,
    pub j: Vector3<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TrajKind {
    /// Lemniscate of Gerono in a plane containing `e_x` and tilted by `tilt`
    /// radians from horizontal about the x axis.
    Figure8Diagonal {
        period: f64,
        amplitude: f64,
        tilt: f64,
    },
    /// Sinusoidal back-and-forth along `e_x`, total travel `length`.
    LineBackForth {
        period: f64,
        length: f64,
    },
    CircleHorizontal {
        period: f64,
        radius: f64,
    },
    /// Planar circle for the car; identical kinematics to the horizontal circle.
    CarCircle {
        period: f64,
        radius: f64,
    },
}

impl Default for TrajKind {
    fn default() -> Self {
        TrajKind::Figure8Diagonal {
            period: 4.0,
            amplitude: 0.75,
            tilt: FRAC_PI_4,
        }
    }
}

/// `d^n/dt^n sin(ω t)` for n = 0..=3.
fn sin_derivs(omega: f64, t: f64) -> [f64; 4] {
    let mut out = [0.0; 4];
    let mut scale = 1.0;
    for (n, o) in out.iter_mut().enumerate() {
        *o = scale * (omega * t + n as f64 * FRAC_PI_2).sin();
        scale *= omega;
    }
    out
}

impl TrajKind {
    pub fn period(&self) -> f64 {
        match *self {
            TrajKind::Figure8Diagonal { period, .. }
            | TrajKind::LineBackForth { period, .. }
            | TrajKind::CircleHorizontal { period, .. }
            | TrajKind::CarCircle { period, .. } => period,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let size = match *self {
            TrajKind::Figure8Diagonal { amplitude, .. } => amplitude,
            TrajKind::LineBackForth { length, .. } => length,
            TrajKind::CircleHorizontal { radius, .. } | TrajKind::CarCircle { radius, .. } => {
                radius
            }
        };
        if !(self.period() > 0.0 && size > 0.0) {
            return Err(Error::Config(
                "trajectory period and size must be positive".into(),
            ));
        }
        Ok(())
    }

    /// Curve and derivatives about the origin.
    pub fn kinematics(&self, t: f64) -> Kinematics {
        let omega = TAU / self.period();
        let mut k = [Vector3::zeros(); 4];
        match *self {
            TrajKind::Figure8Diagonal {
                amplitude, tilt, ..
            } => {
                let first = sin_derivs(omega, t);
                let second = sin_derivs(2.0 * omega, t);
                let lateral = Vector3::new(0.0, tilt.cos(), tilt.sin());
                for n in 0..4 {
                    k[n] = Vector3::x() * (amplitude * first[n])
                        + lateral * (0.5 * amplitude * second[n]);
                }
            }
            TrajKind::LineBackForth { length, .. } => {
                let s = sin_derivs(omega, t);
                for n in 0..4 {
                    k[n] = Vector3::x() * (0.5 * length * s[n]);
                }
            }
            TrajKind::CircleHorizontal { radius, .. } | TrajKind::CarCircle { radius, .. } => {
                // cos(ωt) = sin(ωt + π/2)
                let c = sin_derivs(omega, t + 0.25 * self.period());
                let s = sin_derivs(omega, t);
                for n in 0..4 {
                    k[n] = Vector3::new(radius * c[n], radius * s[n], 0.0);
                }
            }
        }
        Kinematics {
            p: k[0],
            v: k[1],
            a: k[2],
            j: k[3],
        }
    }

    /// Sample about the origin with standard gravity and no start-up ramp.
    pub fn sample(&self, t: f64) -> RefSample {
        flat_sample(&self.kinematics(t), STANDARD_GRAVITY)
    }
}

/// Builds a reference sample from curve kinematics. The desired body rate is
/// `J_r(r_d) · ∂r_d/∂z · jerk`, where `r_d` is the shortest rotation taking
/// `e_z` to `z = a + g e_z`. Falls back to zero rate if `z` is singular.
pub fn flat_sample(k: &Kinematics, gravity: f64) -> RefSample {
    let z = k.a + Vector3::z() * gravity;
    let wdes = match lie::shortest_rotation(&z) {
        Ok((rd, jac)) => lie::right_jacobian(rd.coords()) * (jac * k.j),
        Err(_) => Vector3::zeros(),
    };
    RefSample {
        pdes: k.p,
        vdes: k.v,
        ades: k.a,
        wdes,
    }
}

/// Septic smoothstep and its first three derivatives with respect to `u`;
/// the first three derivatives vanish at both ends.
fn smoothstep(u: f64) -> [f64; 4] {
    if u <= 0.0 {
        return [0.0; 4];
    }
    if u >= 1.0 {
        return [1.0, 0.0, 0.0, 0.0];
    }
    let u2 = u * u;
    let u3 = u2 * u;
    let u4 = u3 * u;
    [
        u4 * (35.0 - 84.0 * u + 70.0 * u2 - 20.0 * u3),
        u3 * (140.0 - 420.0 * u + 420.0 * u2 - 140.0 * u3),
        u2 * (420.0 - 1680.0 * u + 2100.0 * u2 - 840.0 * u3),
        u * (840.0 - 5040.0 * u + 8400.0 * u2 - 4200.0 * u3),
    ]
}

/// A trajectory placed in the world, optionally blended in from rest over
/// `ramp` seconds starting at the curve's initial point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Reference {
    pub kind: TrajKind,
    pub center: Vector3<f64>,
    pub ramp: f64,
    pub gravity: f64,
}

impl Reference {
    pub fn new(kind: TrajKind, center: Vector3<f64>, ramp: f64, gravity: f64) -> Self {
        Reference {
            kind,
            center,
            ramp,
            gravity,
        }
    }

    pub fn kinematics(&self, t: f64) -> Kinematics {
        let q = self.kind.kinematics(t);
        if !(self.ramp > 0.0) || t >= self.ramp {
            return Kinematics {
                p: q.p + self.center,
                ..q
            };
        }
        let start = self.kind.kinematics(0.0).p;
        let raw = smoothstep(t / self.ramp);
        let s: Vec<f64> = raw
            .iter()
            .enumerate()
            .map(|(n, v)| v / self.ramp.powi(n as i32))
            .collect();
        let d = q.p - start;
        Kinematics {
            p: self.center + start + d * s[0],
            v: d * s[1] + q.v * s[0],
            a: d * s[2] + q.v * (2.0 * s[1]) + q.a * s[0],
            j: d * s[3] + q.v * (3.0 * s[2]) + q.a * (3.0 * s[1]) + q.j * s[0],
        }
    }

    pub fn sample(&self, t: f64) -> RefSample {
        flat_sample(&self.kinematics(t), self.gravity)
    }

    pub fn period(&self) -> f64 {
        self.kind.period()
    }
}
