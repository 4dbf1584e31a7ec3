//! Exponential and logarithm maps on SO(3) and SO(2), plus the closed-form
//! Jacobians the dynamics and controller derivatives are built from.
//!
//! Rotations are carried in logarithmic coordinates restricted to the
//! single-cover ball `‖r‖ < π - ANGLE_MARGIN`. Everything outside that ball is
//! rejected instead of wrapped, so the chart stays one-to-one.
//!
//! Jacobian conventions (right-trivialized):
//!
//! * `exp(r + δ) ≈ exp(r) · exp(J_r(r) δ)`
//! * `log(R · exp(δ)) ≈ log(R) + J_r⁻¹(log R) δ`
//! * `J_l(r) = J_r(-r)`

use nalgebra::{Matrix2, Matrix3, Vector2, Vector3};
use std::f64::consts::PI;

use crate::error::{Error, Result};

/// Distance from π below which rotation angles are accepted.
pub const ANGLE_MARGIN: f64 = 1e-6;

/// Below this angle the Rodrigues coefficients use their Taylor series.
const SMALL_ANGLE: f64 = 1e-2;

/// Logarithmic coordinate of a 3D rotation (axis times angle, radians).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RotVec3(Vector3<f64>);

impl RotVec3 {
    pub const ZERO: RotVec3 = RotVec3(Vector3::new(0.0, 0.0, 0.0));

    pub fn new(coords: Vector3<f64>) -> Result<Self> {
        let angle = coords.norm();
        if !angle.is_finite() || angle >= PI - ANGLE_MARGIN {
            return Err(Error::RotationDomain { angle });
        }
        Ok(RotVec3(coords))
    }

    pub fn coords(&self) -> &Vector3<f64> {
        &self.0
    }

    pub fn angle(&self) -> f64 {
        self.0.norm()
    }
}

/// A 3×3 rotation matrix.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RotMat3(Matrix3<f64>);

impl RotMat3 {
    pub fn identity() -> Self {
        RotMat3(Matrix3::identity())
    }

    /// Wraps a matrix without checking orthonormality.
    pub fn from_matrix_unchecked(m: Matrix3<f64>) -> Self {
        RotMat3(m)
    }

    pub fn matrix(&self) -> &Matrix3<f64> {
        &self.0
    }

    /// Largest deviation of `mᵀm` from identity and of `det m` from one.
    pub fn orthonormality_error(&self) -> f64 {
        let gram = (self.0.transpose() * self.0 - Matrix3::identity())
            .abs()
            .max();
        gram.max((self.0.determinant() - 1.0).abs())
    }
}

impl std::ops::Mul for RotMat3 {
    type Output = RotMat3;
    fn mul(self, rhs: RotMat3) -> RotMat3 {
        RotMat3(self.0 * rhs.0)
    }
}

/// Skew-symmetric matrix with `hat(w) * y == w × y`.
pub fn hat(w: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -w.z, w.y, w.z, 0.0, -w.x, -w.y, w.x, 0.0)
}

/// Inverse of [`hat`] on skew-symmetric matrices.
pub fn vee(m: &Matrix3<f64>) -> Vector3<f64> {
    Vector3::new(m[(2, 1)], m[(0, 2)], m[(1, 0)])
}

/// `(sin θ / θ, (1 - cos θ) / θ²)`
fn rodrigues_coeffs(theta: f64) -> (f64, f64) {
    if theta < SMALL_ANGLE {
        let t2 = theta * theta;
        (
            1.0 - t2 / 6.0 + t2 * t2 / 120.0,
            0.5 - t2 / 24.0 + t2 * t2 / 720.0,
        )
    } else {
        (theta.sin() / theta, (1.0 - theta.cos()) / (theta * theta))
    }
}

/// `(θ - sin θ) / θ³`
fn third_coeff(theta: f64) -> f64 {
    if theta < SMALL_ANGLE {
        let t2 = theta * theta;
        1.0 / 6.0 - t2 / 120.0 + t2 * t2 / 5040.0
    } else {
        (theta - theta.sin()) / (theta * theta * theta)
    }
}

/// `1/θ² - (1 + cos θ) / (2 θ sin θ)`
fn inverse_coeff(theta: f64) -> f64 {
    if theta < SMALL_ANGLE {
        let t2 = theta * theta;
        1.0 / 12.0 + t2 / 720.0 + t2 * t2 / 30240.0
    } else {
        1.0 / (theta * theta) - (1.0 + theta.cos()) / (2.0 * theta * theta.sin())
    }
}

/// Rodrigues formula for any vector, without the single-cover check.
pub fn exp_raw(v: &Vector3<f64>) -> Matrix3<f64> {
    let (a, b) = rodrigues_coeffs(v.norm());
    let k = hat(v);
    Matrix3::identity() + k * a + k * k * b
}

pub fn exp_so3(r: &RotVec3) -> RotMat3 {
    RotMat3(exp_raw(&r.0))
}

/// Principal logarithm. Fails when the rotation angle reaches `π - ANGLE_MARGIN`.
pub fn log_so3(rot: &RotMat3) -> Result<RotVec3> {
    let m = &rot.0;
    let cos_t = ((m.trace() - 1.0) * 0.5).clamp(-1.0, 1.0);
    let skew = vee(&(m - m.transpose())) * 0.5; // sin θ · axis
    let sin_t = skew.norm();
    let theta = sin_t.atan2(cos_t);
    if !theta.is_finite() || theta >= PI - ANGLE_MARGIN {
        return Err(Error::RotationDomain { angle: theta });
    }
    if cos_t > -0.9 {
        let scale = if theta < SMALL_ANGLE {
            let t2 = theta * theta;
            1.0 + t2 / 6.0 + 7.0 * t2 * t2 / 360.0
        } else {
            theta / sin_t
        };
        return RotVec3::new(skew * scale);
    }
    // Near π the antisymmetric part loses precision; recover the axis from the
    // symmetric part (1 - cos θ) n nᵀ and take the sign from sin θ · n.
    let sym = (m + m.transpose()) * 0.5 - Matrix3::identity() * cos_t;
    let col = (0..3)
        .max_by(|&i, &j| sym[(i, i)].total_cmp(&sym[(j, j)]))
        .unwrap_or(0);
    let mut axis: Vector3<f64> = sym.column(col).into_owned();
    axis.normalize_mut();
    if axis.dot(&skew) < 0.0 {
        axis = -axis;
    }
    RotVec3::new(axis * theta)
}

pub fn right_jacobian(v: &Vector3<f64>) -> Matrix3<f64> {
    let theta = v.norm();
    let (_, b) = rodrigues_coeffs(theta);
    let c = third_coeff(theta);
    let k = hat(v);
    Matrix3::identity() - k * b + k * k * c
}

pub fn left_jacobian(v: &Vector3<f64>) -> Matrix3<f64> {
    right_jacobian(&-v)
}

pub fn right_jacobian_inv(v: &Vector3<f64>) -> Matrix3<f64> {
    let k = hat(v);
    Matrix3::identity() + k * 0.5 + k * k * inverse_coeff(v.norm())
}

/// `∂/∂r [exp(r) · v] = -exp(r) · hat(v) · J_r(r)`.
pub fn rotate_jacobian(r: &RotVec3, v: &Vector3<f64>) -> Matrix3<f64> {
    -exp_raw(&r.0) * hat(v) * right_jacobian(&r.0)
}

/// Lie-group step `log(exp(r) · exp(dt · w))`.
pub fn boxplus(r: &RotVec3, w: &Vector3<f64>, dt: f64) -> Result<RotVec3> {
    if w.iter().all(|c| *c == 0.0) {
        return Ok(*r);
    }
    let step = w * dt;
    let next = log_so3(&RotMat3(exp_raw(&r.0) * exp_raw(&step)))?;
    check_no_wrap(r, &step, &next)?;
    Ok(next)
}

/// The composed angle is at most `‖r‖ + ‖δ‖`. When that bound reaches π the
/// principal log may have jumped across the cut, which flips the direction.
fn check_no_wrap(r: &RotVec3, step: &Vector3<f64>, next: &RotVec3) -> Result<()> {
    if r.angle() + step.norm() >= PI - ANGLE_MARGIN && next.0.dot(&r.0) <= 0.0 {
        return Err(Error::RotationDomain {
            angle: r.angle() + step.norm(),
        });
    }
    Ok(())
}

/// [`boxplus`] together with its Jacobians with respect to `r` and `w`.
pub fn boxplus_jacobians(
    r: &RotVec3,
    w: &Vector3<f64>,
    dt: f64,
) -> Result<(RotVec3, Matrix3<f64>, Matrix3<f64>)> {
    let step = w * dt;
    let inc = exp_raw(&step);
    let next = if w.iter().all(|c| *c == 0.0) {
        *r
    } else {
        let next = log_so3(&RotMat3(exp_raw(&r.0) * inc))?;
        check_no_wrap(r, &step, &next)?;
        next
    };
    let jr_inv_next = right_jacobian_inv(&next.0);
    let d_r = jr_inv_next * inc.transpose() * right_jacobian(&r.0);
    let d_w = jr_inv_next * right_jacobian(&step) * dt;
    Ok((next, d_r, d_w))
}

/// Rotation error `log(exp(r) · exp(-rd))` with Jacobians with respect to
/// `r` and `rd`.
pub fn relative_error_jacobians(
    r: &RotVec3,
    rd: &RotVec3,
) -> Result<(RotVec3, Matrix3<f64>, Matrix3<f64>)> {
    let inv_d = exp_raw(&-rd.0);
    let err = log_so3(&RotMat3(exp_raw(&r.0) * inv_d))?;
    let jr_inv = right_jacobian_inv(&err.0);
    let d_r = jr_inv * inv_d.transpose() * right_jacobian(&r.0);
    let d_rd = -jr_inv * left_jacobian(&rd.0);
    Ok((err, d_r, d_rd))
}

/// Shortest rotation taking `e_z` onto the direction of `z`, and its
/// Jacobian with respect to `z`.
///
/// Writing `s = ‖(z_x, z_y)‖`, the result is `k · (-z_y, z_x, 0)` with
/// `k = atan2(s, z_z) / s`, which is smooth through `s = 0` for `z_z > 0`.
/// Returns exactly zero when `z` is parallel to `+e_z`.
pub fn shortest_rotation(z: &Vector3<f64>) -> Result<(RotVec3, Matrix3<f64>)> {
    let norm = z.norm();
    if !(norm > 1e-9) {
        return Err(Error::ControllerSingular(format!(
            "thrust vector norm {norm:.3e} is degenerate"
        )));
    }
    let q = z.x * z.x + z.y * z.y;
    let s = q.sqrt();
    let c = z.z;
    let n2 = q + c * c;
    let angle = s.atan2(c);
    if angle >= PI - ANGLE_MARGIN {
        return Err(Error::ControllerSingular(
            "thrust vector anti-parallel to body axis".into(),
        ));
    }
    // k(q, c) and ∂k/∂q. ∂k/∂c = -1 / ‖z‖² holds everywhere.
    let (k, dk_dq) = if c > 0.0 && s < 1e-2 * c {
        let t2 = q / (c * c);
        (
            (1.0 - t2 / 3.0 + t2 * t2 / 5.0 - t2 * t2 * t2 / 7.0) / c,
            (-1.0 / 3.0 + 2.0 * t2 / 5.0 - 3.0 * t2 * t2 / 7.0) / (c * c * c),
        )
    } else {
        (angle / s, (s * c / n2 - angle) / (2.0 * s * s * s))
    };
    let dk_dc = -1.0 / n2;
    let perp = Vector3::new(-z.y, z.x, 0.0);
    let grad_k = Vector3::new(2.0 * z.x * dk_dq, 2.0 * z.y * dk_dq, dk_dc);
    let d_perp = Matrix3::new(0.0, -1.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0);
    let jac = perp * grad_k.transpose() + d_perp * k;
    let rd = if q == 0.0 { Vector3::zeros() } else { perp * k };
    Ok((RotVec3(rd), jac))
}

/// Planar heading in logarithmic coordinates, kept in `(-π, π]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RotVec2(f64);

impl RotVec2 {
    /// Wraps any finite angle into `(-π, π]`.
    pub fn new(angle: f64) -> Self {
        RotVec2(wrap_angle(angle))
    }

    pub fn angle(&self) -> f64 {
        self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RotMat2(Matrix2<f64>);

impl RotMat2 {
    pub fn matrix(&self) -> &Matrix2<f64> {
        &self.0
    }
}

pub fn wrap_angle(a: f64) -> f64 {
    let w = (a + PI).rem_euclid(2.0 * PI) - PI;
    if w <= -PI {
        w + 2.0 * PI
    } else {
        w
    }
}

pub fn exp_so2(r: RotVec2) -> RotMat2 {
    let (s, c) = r.0.sin_cos();
    RotMat2(Matrix2::new(c, -s, s, c))
}

pub fn log_so2(m: &RotMat2) -> RotVec2 {
    RotVec2(m.0[(1, 0)].atan2(m.0[(0, 0)]))
}

/// `log(exp(r) exp(dt·w))`, wrapped. SO(2) is abelian, so this is addition.
pub fn boxplus_so2(r: RotVec2, w: f64, dt: f64) -> RotVec2 {
    RotVec2::new(r.0 + w * dt)
}

/// `∂/∂r [exp(r) v]` for the planar rotation.
pub fn rotate_jacobian_so2(r: RotVec2, v: &Vector2<f64>) -> Vector2<f64> {
    let (s, c) = r.0.sin_cos();
    Vector2::new(-s * v.x - c * v.y, c * v.x - s * v.y)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_unit(rng: &mut ChaCha8Rng) -> Vector3<f64> {
        loop {
            let v = Vector3::new(
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
            );
            let n = v.norm();
            if n > 0.1 && n <= 1.0 {
                return v / n;
            }
        }
    }

    /// Truncated power series of the matrix exponential.
    fn exp_series(k: &Matrix3<f64>, terms: usize) -> Matrix3<f64> {
        let mut sum = Matrix3::identity();
        let mut term = Matrix3::identity();
        for i in 1..terms {
            term = term * k / i as f64;
            sum += term;
        }
        sum
    }

    #[test]
    fn hat_examples() {
        assert_eq!(hat(&Vector3::zeros()), Matrix3::zeros());
        assert_eq!(
            hat(&Vector3::z()),
            Matrix3::new(0.0, -1.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0)
        );
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..20 {
            let w = random_unit(&mut rng) * 3.0;
            let y = random_unit(&mut rng) * 2.0;
            let cross = Vector3::new(
                w.y * y.z - w.z * y.y,
                w.z * y.x - w.x * y.z,
                w.x * y.y - w.y * y.x,
            );
            assert!((hat(&w) * y - cross).norm() < 1e-15);
            assert_eq!(hat(&w).transpose(), -hat(&w));
            assert_eq!(vee(&hat(&w)), w);
        }
    }

    #[test]
    fn exp_examples() {
        assert_eq!(*exp_so3(&RotVec3::ZERO).matrix(), Matrix3::identity());
        let quarter = exp_so3(&RotVec3::new(Vector3::new(0.0, 0.0, PI / 2.0)).unwrap());
        assert!((quarter.matrix() * Vector3::x() - Vector3::y()).norm() < 1e-15);
        assert!((quarter.matrix() * Vector3::y() + Vector3::x()).norm() < 1e-15);

        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..20 {
            let r = random_unit(&mut rng) * 2.5;
            let series = exp_series(&hat(&r), 30);
            let rot = exp_so3(&RotVec3::new(r).unwrap());
            assert!((rot.matrix() - series).abs().max() < 1e-10);
        }
    }

    #[test]
    fn domain_is_rejected() {
        assert!(RotVec3::new(Vector3::new(PI, 0.0, 0.0)).is_err());
        assert!(RotVec3::new(Vector3::new(PI - 1e-7, 0.0, 0.0)).is_err());
        assert!(RotVec3::new(Vector3::new(f64::NAN, 0.0, 0.0)).is_err());
        let half_turn = RotMat3(exp_raw(&Vector3::new(0.0, PI, 0.0)));
        assert!(log_so3(&half_turn).is_err());
        // Composition that crosses π.
        let r = RotVec3::new(Vector3::new(3.0, 0.0, 0.0)).unwrap();
        assert!(boxplus(&r, &Vector3::new(1.0, 0.0, 0.0), 0.2).is_err());
    }

    #[test]
    fn log_examples() {
        assert_eq!(log_so3(&RotMat3::identity()).unwrap(), RotVec3::ZERO);
        let r = Vector3::new(0.1, 0.0, 0.0);
        let back = log_so3(&exp_so3(&RotVec3::new(r).unwrap())).unwrap();
        assert!((back.coords() - r).norm() < 1e-15);
    }

    #[test]
    fn roundtrip_sweep() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..1000 {
            let r = random_unit(&mut rng) * rng.gen_range(0.0..3.0);
            let rot = exp_so3(&RotVec3::new(r).unwrap());
            assert!(rot.orthonormality_error() < 1e-9);
            let back = log_so3(&rot).unwrap();
            assert!((back.coords() - r).norm() < 1e-10, "r = {r}");
        }
        // The near-π branch.
        for _ in 0..100 {
            let r = random_unit(&mut rng) * rng.gen_range(3.0..3.1);
            let back = log_so3(&exp_so3(&RotVec3::new(r).unwrap())).unwrap();
            assert!((back.coords() - r).norm() < 1e-9, "r = {r}");
        }
    }

    #[test]
    fn boxplus_examples() {
        let b = boxplus(&RotVec3::ZERO, &Vector3::z(), 0.5).unwrap();
        assert!((b.coords() - Vector3::new(0.0, 0.0, 0.5)).norm() < 1e-15);
        let r = RotVec3::new(Vector3::new(0.2, 0.0, 0.0)).unwrap();
        let b = boxplus(&r, &Vector3::x(), 0.1).unwrap();
        assert!((b.coords() - Vector3::new(0.3, 0.0, 0.0)).norm() < 1e-14);
        assert_eq!(boxplus(&r, &Vector3::zeros(), 0.3).unwrap(), r);

        let r = RotVec3::new(Vector3::new(0.3, -0.4, 0.5)).unwrap();
        let w = Vector3::new(-1.0, 2.0, 0.7);
        let oracle = exp_series(&hat(r.coords()), 40) * exp_series(&hat(&(w * 0.05)), 40);
        let b = boxplus(&r, &w, 0.05).unwrap();
        assert!((exp_so3(&b).matrix() - oracle).abs().max() < 1e-12);
    }

    #[test]
    fn jacobians_at_zero_are_identity() {
        let z = Vector3::zeros();
        assert_eq!(right_jacobian(&z), Matrix3::identity());
        assert_eq!(right_jacobian_inv(&z), Matrix3::identity());
        let (_, d_r, d_w) = boxplus_jacobians(&RotVec3::ZERO, &z, 1.0).unwrap();
        assert!((d_r - Matrix3::identity()).abs().max() < 1e-15);
        assert!((d_w - Matrix3::identity()).abs().max() < 1e-15);
    }

    #[test]
    fn collinear_boxplus_derivative_is_one_along_axis() {
        let axis = Vector3::new(1.0, 2.0, -2.0) / 3.0;
        let r = RotVec3::new(axis * 0.8).unwrap();
        let (_, d_r, d_w) = boxplus_jacobians(&r, &(axis * 2.0), 0.1).unwrap();
        assert!((d_r * axis - axis).norm() < 1e-13);
        assert!((d_w * axis - axis * 0.1).norm() < 1e-13);
    }

    #[test]
    fn inverse_jacobian_inverts() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..100 {
            let v = random_unit(&mut rng) * rng.gen_range(0.0..3.0);
            let p = right_jacobian(&v) * right_jacobian_inv(&v);
            assert!((p - Matrix3::identity()).abs().max() < 1e-10);
        }
    }

    #[test]
    fn shortest_rotation_aligns_axis() {
        let (rd, _) = shortest_rotation(&Vector3::new(0.0, 0.0, 9.81)).unwrap();
        assert_eq!(rd, RotVec3::ZERO);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..200 {
            let z = random_unit(&mut rng) * rng.gen_range(0.5..20.0);
            if z.z < -0.99 * z.norm() {
                continue;
            }
            let (rd, _) = shortest_rotation(&z).unwrap();
            let axis = exp_so3(&rd).matrix() * Vector3::z();
            assert!((axis - z.normalize()).norm() < 1e-9);
            // No rotation about the target direction.
            assert!(rd.coords().z.abs() == 0.0);
        }
        assert!(shortest_rotation(&Vector3::zeros()).is_err());
        assert!(shortest_rotation(&Vector3::new(0.0, 0.0, -1.0)).is_err());
    }

    #[test]
    fn so2_maps() {
        assert_eq!(wrap_angle(PI), PI);
        assert!((wrap_angle(-PI) - PI).abs() < 1e-15);
        assert!((wrap_angle(3.0 * PI + 0.1) - (-PI + 0.1)).abs() < 1e-12);
        let r = RotVec2::new(3.0);
        let b = boxplus_so2(r, 1.0, 0.5);
        assert!((b.angle() - (3.5 - 2.0 * PI)).abs() < 1e-12);
        let m = exp_so2(RotVec2::new(0.7));
        assert!((log_so2(&m).angle() - 0.7).abs() < 1e-15);
        assert!((m.matrix().determinant() - 1.0).abs() < 1e-15);
    }
}
