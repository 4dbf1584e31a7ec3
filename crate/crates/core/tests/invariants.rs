use std::f64::consts::{LN_2, PI};

use nalgebra::{SVector, Vector3};
use otune::harness::metrics;
use otune::lie::{self, RotVec3};
use otune::optim;
use otune::policy::{self, Params, PolicyConfig};
use otune::quad::{self, EnvConfig, QuadAction, QuadState};
use otune::reference::RefSample;
use otune::Error;
use proptest::prelude::*;

fn vec3(a: f64) -> impl Strategy<Value = Vector3<f64>> {
    (-a..a, -a..a, -a..a).prop_map(|(x, y, z)| Vector3::new(x, y, z))
}

/// Rotation vectors with angle at most `max`.
fn rotvec(max: f64) -> impl Strategy<Value = Vector3<f64>> {
    (vec3(1.0), 0.0..max).prop_filter_map("degenerate axis", |(axis, angle)| {
        (axis.norm() > 1e-3).then(|| axis.normalize() * angle)
    })
}

fn theta() -> impl Strategy<Value = SVector<f64, 10>> {
    proptest::collection::vec(-5.0..8.0f64, 10).prop_map(SVector::from_vec)
}

proptest! {
    #[test]
    fn log_inverts_exp(v in rotvec(3.0)) {
        let r = RotVec3::new(v).unwrap();
        let back = lie::log_so3(&lie::exp_so3(&r)).unwrap();
        prop_assert!((back.coords() - v).norm() < 1e-10);
    }

    #[test]
    fn exp_is_orthonormal(v in rotvec(3.1)) {
        let m = lie::exp_so3(&RotVec3::new(v).unwrap());
        prop_assert!(m.orthonormality_error() < 1e-12);
        prop_assert!((m.matrix().determinant() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn angles_at_or_past_pi_are_rejected(axis in rotvec(1.0), extra in 0.0..3.0f64) {
        prop_assume!(axis.norm() > 1e-3);
        let v = axis.normalize() * (PI + extra);
        prop_assert!(
            matches!(RotVec3::new(v), Err(Error::RotationDomain { .. })),
            "angle {} accepted",
            PI + extra
        );
    }

    #[test]
    fn hat_vee_roundtrip(w in vec3(10.0)) {
        prop_assert_eq!(lie::vee(&lie::hat(&w)), w);
        prop_assert!((lie::hat(&w) + lie::hat(&w).transpose()).norm() == 0.0);
    }

    #[test]
    fn right_jacobian_inverse_is_inverse(v in rotvec(2.5)) {
        let prod = lie::right_jacobian(&v) * lie::right_jacobian_inv(&v);
        prop_assert!((prod - nalgebra::Matrix3::identity()).norm() < 1e-9);
    }

    #[test]
    fn boxplus_zero_rate_is_identity(v in rotvec(3.0), dt in 0.0..0.1f64) {
        let r = RotVec3::new(v).unwrap();
        let next = lie::boxplus(&r, &Vector3::zeros(), dt).unwrap();
        prop_assert!((next.coords() - v).norm() < 1e-10);
    }

    #[test]
    fn boxplus_stays_in_domain(v in rotvec(2.0), w in vec3(5.0)) {
        let r = RotVec3::new(v).unwrap();
        let next = lie::boxplus(&r, &w, 0.002).unwrap();
        prop_assert!(next.angle() < PI);
    }

    #[test]
    fn wrap_angle_range(a in -100.0..100.0f64) {
        let w = lie::wrap_angle(a);
        prop_assert!(w > -PI && w <= PI);
        let turns = (a - w) / (2.0 * PI);
        prop_assert!((turns - turns.round()).abs() < 1e-9);
    }

    #[test]
    fn softclamp_is_strictly_bounded(x in prop_oneof![-1e300..1e300f64, -50.0..50.0f64], b in 0.01..20.0f64) {
        let y = policy::softclamp(x, b);
        prop_assert!(y > -b && y < b, "softclamp({x}, {b}) = {y}");
        prop_assert!(y * x >= 0.0);
    }

    #[test]
    fn softclamp_is_monotone(x in -30.0..30.0f64, dx in 0.0..5.0f64, b in 0.1..5.0f64) {
        prop_assert!(policy::softclamp(x + dx, b) >= policy::softclamp(x, b));
        prop_assert!(policy::softclamp_derivative(x, b) >= 0.0);
        prop_assert!(policy::softclamp_derivative(x, b) <= 1.0);
    }

    #[test]
    fn gains_are_positive(t in theta()) {
        prop_assert!(Params(t).gains().iter().all(|g| *g > 0.0));
    }

    #[test]
    fn log_gains_roundtrip(g in proptest::collection::vec(1e-3..1e3f64, 10)) {
        let gains: [f64; 10] = g.clone().try_into().unwrap();
        let back = Params::from_gains(&gains).gains();
        for (a, b) in back.iter().zip(&g) {
            prop_assert!((a - b).abs() < 1e-12 * b);
        }
    }

    #[test]
    fn detune_by_ln2_halves_every_gain(t in theta()) {
        let p = Params(t);
        let d = policy::detune(&p, LN_2);
        for (a, b) in d.gains().iter().zip(p.gains().iter()) {
            prop_assert!((a - 0.5 * b).abs() <= 1e-12 * b);
        }
    }

    #[test]
    fn policy_output_is_finite(t in theta(), p in vec3(1.0), v in vec3(2.0), r in rotvec(1.0), w in vec3(3.0)) {
        let x = QuadState { ierr: Vector3::zeros(), p, v, r: RotVec3::new(r).unwrap(), w };
        let refs = RefSample::hover(Vector3::z());
        match policy::act_with_jacobians(&x, &refs, &Params(t), &PolicyConfig::default()) {
            Ok(out) => {
                prop_assert!(out.action.thrust.is_finite() && out.action.torque.iter().all(|c| c.is_finite()));
                prop_assert!(out.dpi_dx.iter().all(|c| c.is_finite()));
                prop_assert!(out.dpi_dtheta.iter().all(|c| c.is_finite()));
            }
            Err(e) => prop_assert!(matches!(e, Error::ControllerSingular(_)), "{e}"),
        }
    }

    #[test]
    fn hover_is_an_equilibrium(z in -5.0..5.0f64) {
        let p = Vector3::new(0.3, -0.2, z);
        let x = QuadState::at_rest(p);
        let cfg = EnvConfig::default();
        let u = QuadAction { thrust: cfg.gravity, torque: Vector3::zeros() };
        let (next, _, _) = quad::step_model_jacobians(&x, &u, &cfg, &p).unwrap();
        prop_assert!((next.to_vector() - x.to_vector()).norm() < 1e-12);
    }

    #[test]
    fn quasi_regret_accumulates(a in proptest::collection::vec(0.0..1.0f64, 1..50)) {
        let e: Vec<f64> = a.iter().map(|x| x * 0.5).collect();
        let q = optim::quasi_regret(&a, &e).unwrap();
        let total: f64 = a.iter().zip(&e).map(|(x, y)| x - y).sum();
        prop_assert!((q.last().unwrap() - total).abs() < 1e-12);
        prop_assert!(q.windows(2).all(|w| w[1] >= w[0]));
    }

    #[test]
    fn per_lap_partitions_full_laps(v in proptest::collection::vec(0.0..1.0f64, 0..200), lap in 1usize..40) {
        let laps = metrics::per_lap(&v, lap);
        prop_assert_eq!(laps.len(), v.len() / lap);
        let covered: f64 = v[..laps.len() * lap].iter().sum();
        prop_assert!((laps.iter().sum::<f64>() - covered).abs() < 1e-9);
    }
}

#[test]
fn quasi_regret_rejects_mismatched_lengths() {
    assert!(matches!(
        optim::quasi_regret(&[1.0, 2.0], &[1.0]),
        Err(Error::LengthMismatch { left: 2, right: 1 })
    ));
}
