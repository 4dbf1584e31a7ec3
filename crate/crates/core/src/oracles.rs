//! Independent reference computations used to check the analytic machinery:
//! central finite differences, brute-force re-simulation sensitivities,
//! episode-cost differences and an empirical contraction probe.

use nalgebra::{DMatrix, DVector, SMatrix, SVector, Vector1};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::optim::{self, Environment, StepDerivs, Transition};

/// Central-difference settings.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FdSpec {
    /// Base step; the step for coordinate `i` is `h · max(1, |x_i|)`.
    pub h: f64,
    pub rel_tol: f64,
    /// Denominator floor for relative errors of near-zero quantities.
    pub abs_floor: f64,
}

impl Default for FdSpec {
    fn default() -> Self {
        FdSpec {
            h: 1e-6,
            rel_tol: 1e-4,
            abs_floor: 1e-8,
        }
    }
}

impl FdSpec {
    pub fn step(&self, xi: f64) -> f64 {
        self.h * xi.abs().max(1.0)
    }

    /// Whether `analytic` agrees with `reference` to `rel_tol`.
    pub fn accepts<const R: usize, const C: usize>(
        &self,
        analytic: &SMatrix<f64, R, C>,
        reference: &SMatrix<f64, R, C>,
    ) -> bool {
        relative_error(analytic, reference, self.abs_floor) < self.rel_tol
    }
}

/// `‖a - b‖_F / max(‖b‖_F, floor)`.
pub fn relative_error<const R: usize, const C: usize>(
    a: &SMatrix<f64, R, C>,
    b: &SMatrix<f64, R, C>,
    floor: f64,
) -> f64 {
    (a - b).norm() / b.norm().max(floor)
}

fn non_finite(coord: usize) -> Error {
    Error::NonFinite { coord }
}

/// Central-difference Jacobian of `f` at `x`.
pub fn fd_jacobian<const N: usize, const M: usize, F>(
    f: F,
    x: &SVector<f64, N>,
    spec: &FdSpec,
) -> Result<SMatrix<f64, M, N>>
where
    F: Fn(&SVector<f64, N>) -> Result<SVector<f64, M>>,
{
    let mut jac = SMatrix::<f64, M, N>::zeros();
    for i in 0..N {
        let h = spec.step(x[i]);
        let mut plus = *x;
        let mut minus = *x;
        plus[i] += h;
        minus[i] -= h;
        let col = (f(&plus)? - f(&minus)?) / (2.0 * h);
        if !col.iter().all(|v| v.is_finite()) {
            return Err(non_finite(i));
        }
        jac.set_column(i, &col);
    }
    Ok(jac)
}

/// Central-difference gradient of a scalar function, as a column vector.
pub fn fd_gradient<const N: usize, F>(
    f: F,
    x: &SVector<f64, N>,
    spec: &FdSpec,
) -> Result<SVector<f64, N>>
where
    F: Fn(&SVector<f64, N>) -> Result<f64>,
{
    let jac = fd_jacobian(|p| f(p).map(Vector1::new), x, spec)?;
    Ok(jac.transpose())
}

/// Runs the closed loop from `x0` (at step index `k0`) with `theta` held
/// fixed for `steps` steps. Returns the final state and the summed cost.
pub fn rollout_fixed<E, const N: usize, const M: usize, const D: usize>(
    env: &E,
    x0: &E::State,
    k0: usize,
    theta: &SVector<f64, D>,
    steps: usize,
) -> Result<(E::State, f64)>
where
    E: Environment<N, M, D>,
{
    let mut x = x0.clone();
    let mut total = 0.0;
    for k in k0..k0 + steps {
        let Transition { cost, next, .. } = env.transition(k, &x, theta, false)?;
        total += cost;
        x = next;
    }
    Ok((x, total))
}

/// Derivative bundles along the fixed-parameter rollout from `x0`.
pub fn derivs_along<E, const N: usize, const M: usize, const D: usize>(
    env: &E,
    x0: &E::State,
    k0: usize,
    theta: &SVector<f64, D>,
    steps: usize,
) -> Result<Vec<StepDerivs<N, M, D>>>
where
    E: Environment<N, M, D>,
{
    let mut x = x0.clone();
    let mut out = Vec::with_capacity(steps);
    for k in k0..k0 + steps {
        let tr = env.transition(k, &x, theta, true)?;
        out.push(
            tr.derivs
                .ok_or_else(|| Error::Config("environment returned no derivatives".into()))?,
        );
        x = tr.next;
    }
    Ok(out)
}

/// `∂x_T/∂θ` by re-rolling the whole trajectory from the initial state for
/// every perturbed entry of `theta`.
pub fn resim_sensitivity<E, const N: usize, const M: usize, const D: usize>(
    env: &E,
    theta: &SVector<f64, D>,
    horizon: usize,
    spec: &FdSpec,
) -> Result<SMatrix<f64, N, D>>
where
    E: Environment<N, M, D>,
{
    let x0 = env.initial_state();
    let columns: Vec<Result<SVector<f64, N>>> = (0..D)
        .into_par_iter()
        .map(|j| {
            let h = spec.step(theta[j]);
            let mut plus = *theta;
            let mut minus = *theta;
            plus[j] += h;
            minus[j] -= h;
            let (xp, _) = rollout_fixed(env, &x0, 0, &plus, horizon)?;
            let (xm, _) = rollout_fixed(env, &x0, 0, &minus, horizon)?;
            let col = (env.state_vector(&xp) - env.state_vector(&xm)) / (2.0 * h);
            if col.iter().all(|v| v.is_finite()) {
                Ok(col)
            } else {
                Err(non_finite(j))
            }
        })
        .collect();
    let mut out = SMatrix::<f64, N, D>::zeros();
    for (j, col) in columns.into_iter().enumerate() {
        out.set_column(j, &col?);
    }
    Ok(out)
}

/// Gradient of the summed cost over `steps` steps from the fixed state `x0`.
pub fn episode_cost_gradient<E, const N: usize, const M: usize, const D: usize>(
    env: &E,
    x0: &E::State,
    k0: usize,
    theta: &SVector<f64, D>,
    steps: usize,
    spec: &FdSpec,
) -> Result<SVector<f64, D>>
where
    E: Environment<N, M, D>,
{
    let parts: Vec<Result<f64>> = (0..D)
        .into_par_iter()
        .map(|j| {
            let h = spec.step(theta[j]);
            let mut plus = *theta;
            let mut minus = *theta;
            plus[j] += h;
            minus[j] -= h;
            let (_, jp) = rollout_fixed(env, x0, k0, &plus, steps)?;
            let (_, jm) = rollout_fixed(env, x0, k0, &minus, steps)?;
            let g = (jp - jm) / (2.0 * h);
            if g.is_finite() {
                Ok(g)
            } else {
                Err(non_finite(j))
            }
        })
        .collect();
    let mut out = SVector::<f64, D>::zeros();
    for (j, g) in parts.into_iter().enumerate() {
        out[j] = g?;
    }
    Ok(out)
}

/// Least-squares fit of `‖Φ_t(x) - Φ_t(x+Δ)‖ ≈ C ρ^t ‖Δ‖`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DecayFit {
    pub c: f64,
    /// Per-step rate.
    pub rho: f64,
    /// RMS residual of the log-linear fit.
    pub residual: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ContractionProbe {
    /// Distance at every step `0..=horizon`.
    pub distances: Vec<f64>,
    /// `None` when the perturbation is zero.
    pub fit: Option<DecayFit>,
}

pub fn contraction_probe<E, const N: usize, const M: usize, const D: usize>(
    env: &E,
    theta: &SVector<f64, D>,
    delta: &SVector<f64, N>,
    horizon: usize,
) -> Result<ContractionProbe>
where
    E: Environment<N, M, D>,
{
    let mut a = env.initial_state();
    let mut b = env.state_from_vector(&(env.state_vector(&a) + delta))?;
    let mut distances = Vec::with_capacity(horizon + 1);
    distances.push(delta.norm());
    for k in 0..horizon {
        a = env.transition(k, &a, theta, false)?.next;
        b = env.transition(k, &b, theta, false)?.next;
        distances.push((env.state_vector(&a) - env.state_vector(&b)).norm());
    }
    let d0 = delta.norm();
    if d0 == 0.0 {
        return Ok(ContractionProbe {
            distances,
            fit: None,
        });
    }
    let pts: Vec<(f64, f64)> = distances
        .iter()
        .enumerate()
        .filter(|(_, d)| **d > 0.0)
        .map(|(t, d)| (t as f64, (d / d0).ln()))
        .collect();
    let fit = log_linear_fit(&pts).map(|(intercept, slope, residual)| DecayFit {
        c: intercept.exp(),
        rho: slope.exp(),
        residual,
    });
    Ok(ContractionProbe { distances, fit })
}

/// `(intercept, slope, rms residual)` of an ordinary least-squares line.
fn log_linear_fit(pts: &[(f64, f64)]) -> Option<(f64, f64, f64)> {
    if pts.len() < 2 {
        return None;
    }
    let a = DMatrix::from_fn(pts.len(), 2, |i, j| if j == 0 { 1.0 } else { pts[i].0 });
    let b = DVector::from_iterator(pts.len(), pts.iter().map(|p| p.1));
    let sol = a.clone().svd(true, true).solve(&b, 1e-12).ok()?;
    let res = (&a * &sol - &b).norm() / (pts.len() as f64).sqrt();
    Some((sol[0], sol[1], res))
}

/// Monte-Carlo mean of the residual-feedback update at a fixed base point.
///
/// Consecutive episodes query `θ + ε h_k`; the base is not moved, so the
/// average isolates the estimator's expected direction.
pub fn oprf_mean_update<const D: usize, F>(
    objective: F,
    theta: &SVector<f64, D>,
    epsilon: f64,
    episodes: usize,
    seed: u64,
) -> SVector<f64, D>
where
    F: Fn(&SVector<f64, D>) -> f64,
{
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut j_prev = objective(&(theta + optim::sample_direction::<D>(&mut rng) * epsilon));
    let mut sum = SVector::<f64, D>::zeros();
    for _ in 0..episodes {
        let h = optim::sample_direction::<D>(&mut rng);
        let j = objective(&(theta + h * epsilon));
        sum += optim::oprf_episode(&SVector::zeros(), j, j_prev, &h, 1.0, epsilon);
        j_prev = j;
    }
    sum / episodes as f64
}

/// `x' = a x + u`, `u = -θ x`, `f = x²`, with `θ` raw (not a log-gain).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScalarToy {
    pub a: f64,
    pub x0: f64,
}

impl Default for ScalarToy {
    fn default() -> Self {
        ScalarToy { a: 0.9, x0: 1.0 }
    }
}

impl Environment<1, 1, 1> for ScalarToy {
    type State = f64;

    fn initial_state(&self) -> f64 {
        self.x0
    }

    fn state_vector(&self, x: &f64) -> Vector1<f64> {
        Vector1::new(*x)
    }

    fn state_from_vector(&self, v: &Vector1<f64>) -> Result<f64> {
        Ok(v[0])
    }

    fn dt(&self) -> f64 {
        1.0
    }

    fn transition(
        &self,
        _k: usize,
        x: &f64,
        theta: &Vector1<f64>,
        with_derivs: bool,
    ) -> Result<Transition<f64, 1, 1, 1>> {
        let u = -theta[0] * x;
        let derivs = with_derivs.then(|| StepDerivs {
            dg_dx: Vector1::new(self.a),
            dg_du: Vector1::new(1.0),
            dpi_dx: Vector1::new(-theta[0]),
            dpi_dtheta: Vector1::new(-x),
            df_dx: Vector1::new(2.0 * x),
            df_du: Vector1::new(0.0),
        });
        Ok(Transition {
            action: Vector1::new(u),
            cost: x * x,
            next: self.a * x + u,
            derivs,
            clamped: false,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{Matrix3, Vector3};

    #[test]
    fn linear_map_is_exact() {
        let a = Matrix3::new(1.0, -2.0, 0.5, 3.0, 0.0, 4.0, -1.0, 7.0, 2.0);
        let x = Vector3::new(0.3, -1.2, 5.0);
        let jac = fd_jacobian(|p| Ok(a * p), &x, &FdSpec::default()).unwrap();
        assert!((jac - a).abs().max() < 1e-9);
    }

    #[test]
    fn square_at_three() {
        let g = fd_gradient(
            |p: &Vector1<f64>| Ok(p[0] * p[0]),
            &Vector1::new(3.0),
            &FdSpec::default(),
        )
        .unwrap();
        assert!((g[0] - 6.0).abs() < 1e-8);
    }

    #[test]
    fn non_finite_is_an_error() {
        let r = fd_jacobian(
            |p: &Vector1<f64>| Ok(Vector1::new(p[0].ln())),
            &Vector1::new(0.0),
            &FdSpec::default(),
        );
        assert!(matches!(r, Err(Error::NonFinite { coord: 0 })));
    }

    #[test]
    fn resim_at_zero_horizon_is_zero() {
        let s = resim_sensitivity(
            &ScalarToy::default(),
            &Vector1::new(0.5),
            0,
            &FdSpec::default(),
        )
        .unwrap();
        assert_eq!(s[0], 0.0);
    }

    #[test]
    fn resim_matches_hand_recursion() {
        // x_{t+1} = (a - θ) x_t, so x_T = (a - θ)^T x0 and ∂x_T/∂θ = -T (a - θ)^{T-1} x0.
        let toy = ScalarToy::default();
        let theta = 0.5;
        let s = resim_sensitivity(&toy, &Vector1::new(theta), 5, &FdSpec::default()).unwrap();
        let exact = -5.0 * (toy.a - theta).powi(4) * toy.x0;
        assert!((s[0] - exact).abs() < 1e-8);
    }

    #[test]
    fn toy_contracts_geometrically() {
        let toy = ScalarToy::default();
        let probe = contraction_probe(&toy, &Vector1::new(0.5), &Vector1::new(0.1), 20).unwrap();
        let fit = probe.fit.unwrap();
        assert!((fit.rho - 0.4).abs() < 1e-9);
        assert!((fit.c - 1.0).abs() < 1e-9);
        assert!(fit.residual < 1e-9);
        let zero = contraction_probe(&toy, &Vector1::new(0.5), &Vector1::new(0.0), 20).unwrap();
        assert!(zero.fit.is_none());
        assert!(zero.distances.iter().all(|d| *d == 0.0));
    }
}
