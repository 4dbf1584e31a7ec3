//! Oracle suites: analytic derivatives against central differences and
//! brute-force re-simulation. Used by `otune check` and the test suites.

use nalgebra::{SMatrix, SVector, Vector1, Vector2, Vector3};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::car::{self, CarAction, CarModelConfig, CarParams, CarRef, CarState};
use crate::cost::{self, QuadCostWeights};
use crate::error::Result;
use crate::lie::{self, RotMat3, RotVec2, RotVec3};
use crate::optim::{self, Environment, Learner, Mgaps, MgapsConfig};
use crate::oracles::{self, relative_error, FdSpec};
use crate::plant::QuadEnv;
use crate::policy::{self, Params, PolicyConfig};
use crate::quad::{self, EnvConfig, QuadAction, QuadState};
use crate::reference::{RefSample, Reference, TrajKind};

#[derive(Debug, Clone, PartialEq)]
pub struct CheckReport {
    pub name: String,
    pub samples: usize,
    /// Largest relative error seen.
    pub worst: f64,
    pub tol: f64,
}

impl CheckReport {
    pub fn passed(&self) -> bool {
        self.worst < self.tol
    }
}

impl std::fmt::Display for CheckReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "{:<6} {:<34} n={:<4} worst={:.2e} tol={:.0e}",
            if self.passed() { "PASS" } else { "FAIL" },
            self.name,
            self.samples,
            self.worst,
            self.tol
        )
    }
}

fn uniform3(rng: &mut ChaCha8Rng, a: f64) -> Vector3<f64> {
    Vector3::new(
        rng.gen_range(-a..a),
        rng.gen_range(-a..a),
        rng.gen_range(-a..a),
    )
}

/// Uniform direction, angle uniform in `[0, max_angle)`.
pub fn random_rotvec(rng: &mut ChaCha8Rng, max_angle: f64) -> RotVec3 {
    let mut axis = uniform3(rng, 1.0);
    while axis.norm() < 1e-3 {
        axis = uniform3(rng, 1.0);
    }
    let angle = rng.gen_range(0.0..max_angle);
    RotVec3::new(axis.normalize() * angle).expect("angle below pi")
}

pub fn random_quad_state(rng: &mut ChaCha8Rng) -> QuadState {
    QuadState {
        ierr: uniform3(rng, 0.1),
        p: uniform3(rng, 1.0) + Vector3::z(),
        v: uniform3(rng, 2.0),
        r: random_rotvec(rng, 1.0),
        w: uniform3(rng, 3.0),
    }
}

pub fn random_quad_action(rng: &mut ChaCha8Rng) -> QuadAction {
    QuadAction {
        thrust: rng.gen_range(2.0..20.0),
        torque: uniform3(rng, 50.0),
    }
}

/// A point on the default figure-8.
pub fn random_reference(rng: &mut ChaCha8Rng) -> RefSample {
    let reference = Reference::new(
        TrajKind::default(),
        Vector3::z(),
        0.0,
        quad::STANDARD_GRAVITY,
    );
    reference.sample(rng.gen_range(0.0..4.0))
}

/// Expert log-gains shifted by up to ±0.7 per entry.
pub fn random_theta(rng: &mut ChaCha8Rng) -> Params {
    Params(SVector::from_fn(|i, _| {
        policy::SIM_EXPERT_THETA[i] + rng.gen_range(-0.7..0.7)
    }))
}

pub fn random_car_state(rng: &mut ChaCha8Rng) -> CarState {
    CarState {
        p: Vector2::new(rng.gen_range(-3.0..3.0), rng.gen_range(-3.0..3.0)),
        r: RotVec2::new(rng.gen_range(-3.0..3.0)),
        v: Vector2::new(rng.gen_range(0.5..3.0), rng.gen_range(-0.5..0.5)),
        w: rng.gen_range(-1.0..1.0),
        psi: rng.gen_range(-0.4..0.4),
    }
}

/// Reference heading within ±2 rad of `x`'s, away from the wrap seam.
pub fn random_car_ref(rng: &mut ChaCha8Rng, x: &CarState) -> CarRef {
    CarRef {
        pdes: x.p + Vector2::new(rng.gen_range(-0.5..0.5), rng.gen_range(-0.5..0.5)),
        rd: x.r.angle() + rng.gen_range(-2.0..2.0),
        vd: rng.gen_range(0.5..2.5),
        wdes: rng.gen_range(-1.0..1.0),
    }
}

pub fn random_car_theta(rng: &mut ChaCha8Rng) -> CarParams {
    CarParams(SVector::from_fn(|i, _| {
        car::CAR_EXPERT_THETA[i] + rng.gen_range(-0.7..0.7)
    }))
}

/// Accumulates the worst relative error of one analytic/FD pair per sample.
struct Tally {
    name: &'static str,
    samples: usize,
    worst: f64,
    floor: f64,
}

impl Tally {
    fn new(name: &'static str) -> Self {
        Tally {
            name,
            samples: 0,
            worst: 0.0,
            floor: 1e-8,
        }
    }

    fn add<const R: usize, const C: usize>(
        &mut self,
        analytic: &SMatrix<f64, R, C>,
        fd: &SMatrix<f64, R, C>,
    ) {
        self.samples += 1;
        self.worst = self.worst.max(relative_error(analytic, fd, self.floor));
    }

    fn report(self, tol: f64) -> CheckReport {
        CheckReport {
            name: self.name.to_owned(),
            samples: self.samples,
            worst: self.worst,
            tol,
        }
    }
}

fn rv(v: &Vector3<f64>) -> Result<RotVec3> {
    RotVec3::new(*v)
}

/// Central-difference checks of every analytic Jacobian at `points` random
/// in-domain points each.
pub fn jacobian_checks(seed: u64, points: usize, tol: f64) -> Result<Vec<CheckReport>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let spec = FdSpec::default();
    // Costs are quadratic, so a wide step is exact and avoids cancellation on
    // their tiny control-penalty gradients.
    let quad_spec = FdSpec { h: 1e-3, ..spec };
    let mut out = Vec::new();

    let mut rot = Tally::new("lie::rotate_jacobian");
    let mut jr = Tally::new("lie::right_jacobian");
    let mut jr_inv = Tally::new("lie::right_jacobian_inv");
    let mut bp_r = Tally::new("lie::boxplus d/dr");
    let mut bp_w = Tally::new("lie::boxplus d/dw");
    let mut re_r = Tally::new("lie::relative_error d/dr");
    let mut re_rd = Tally::new("lie::relative_error d/drd");
    let mut sr = Tally::new("lie::shortest_rotation");
    let mut so2 = Tally::new("lie::rotate_jacobian_so2");
    for _ in 0..points {
        let r = random_rotvec(&mut rng, 2.5);
        let v = uniform3(&mut rng, 2.0);
        let fd = oracles::fd_jacobian(|p| Ok(lie::exp_raw(p) * v), r.coords(), &spec)?;
        rot.add(&lie::rotate_jacobian(&r, &v), &fd);

        let base = lie::exp_raw(r.coords()).transpose();
        let fd = oracles::fd_jacobian(
            |d| {
                Ok(*lie::log_so3(&RotMat3::from_matrix_unchecked(
                    base * lie::exp_raw(&(r.coords() + d)),
                ))?
                .coords())
            },
            &Vector3::zeros(),
            &spec,
        )?;
        jr.add(&lie::right_jacobian(r.coords()), &fd);

        let rm = lie::exp_raw(r.coords());
        let fd = oracles::fd_jacobian(
            |d| Ok(*lie::log_so3(&RotMat3::from_matrix_unchecked(rm * lie::exp_raw(d)))?.coords()),
            &Vector3::zeros(),
            &spec,
        )?;
        jr_inv.add(&lie::right_jacobian_inv(r.coords()), &fd);

        let w = uniform3(&mut rng, 3.0);
        let dt = 0.05;
        let (_, d_r, d_w) = lie::boxplus_jacobians(&r, &w, dt)?;
        let fd = oracles::fd_jacobian(
            |p| Ok(*lie::boxplus(&rv(p)?, &w, dt)?.coords()),
            r.coords(),
            &spec,
        )?;
        bp_r.add(&d_r, &fd);
        let fd = oracles::fd_jacobian(|p| Ok(*lie::boxplus(&r, p, dt)?.coords()), &w, &spec)?;
        bp_w.add(&d_w, &fd);

        let a = random_rotvec(&mut rng, 1.2);
        let b = random_rotvec(&mut rng, 1.2);
        let (_, d_a, d_b) = lie::relative_error_jacobians(&a, &b)?;
        let fd = oracles::fd_jacobian(
            |p| Ok(*lie::relative_error_jacobians(&rv(p)?, &b)?.0.coords()),
            a.coords(),
            &spec,
        )?;
        re_r.add(&d_a, &fd);
        let fd = oracles::fd_jacobian(
            |p| Ok(*lie::relative_error_jacobians(&a, &rv(p)?)?.0.coords()),
            b.coords(),
            &spec,
        )?;
        re_rd.add(&d_b, &fd);

        let mut z = uniform3(&mut rng, 10.0);
        z.z = z.z.abs() + 0.5 * z.xy().norm() + 1.0;
        let (_, dz) = lie::shortest_rotation(&z)?;
        let fd = oracles::fd_jacobian(|p| Ok(*lie::shortest_rotation(p)?.0.coords()), &z, &spec)?;
        sr.add(&dz, &fd);

        let a2 = rng.gen_range(-3.0..3.0);
        let v2 = Vector2::new(rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0));
        let fd = oracles::fd_jacobian(
            |p: &Vector1<f64>| Ok(lie::exp_so2(RotVec2::new(p[0])).matrix() * v2),
            &Vector1::new(a2),
            &spec,
        )?;
        so2.add(&lie::rotate_jacobian_so2(RotVec2::new(a2), &v2), &fd);
    }
    out.extend([rot, jr, jr_inv, bp_r, bp_w, re_r, re_rd, sr, so2].map(|t| t.report(tol)));

    let cfg = EnvConfig::default();
    let pcfg = PolicyConfig::default();
    let weights = QuadCostWeights::default();
    let mut gx = Tally::new("quad::dynamics d/dx");
    let mut gu = Tally::new("quad::dynamics d/du");
    let mut px = Tally::new("policy::act d/dx");
    let mut pt = Tally::new("policy::act d/dtheta");
    let mut fx = Tally::new("cost::quad d/dx");
    let mut fu = Tally::new("cost::quad d/du");
    for _ in 0..points {
        let x = random_quad_state(&mut rng);
        let u = random_quad_action(&mut rng);
        let refs = random_reference(&mut rng);
        let step = |x: &QuadState, u: &QuadAction| -> Result<quad::StateVec> {
            Ok(quad::step_model_jacobians(x, u, &cfg, &refs.pdes)?
                .0
                .to_vector())
        };
        let (_, dgx, dgu) = quad::step_model_jacobians(&x, &u, &cfg, &refs.pdes)?;
        gx.add(
            &dgx,
            &oracles::fd_jacobian(
                |p| step(&QuadState::from_vector(p)?, &u),
                &x.to_vector(),
                &spec,
            )?,
        );
        gu.add(
            &dgu,
            &oracles::fd_jacobian(
                |p| step(&x, &QuadAction::from_vector(p)),
                &u.to_vector(),
                &spec,
            )?,
        );

        let theta = random_theta(&mut rng);
        let out = policy::act_with_jacobians(&x, &refs, &theta, &pcfg)?;
        let fd = oracles::fd_jacobian(
            |p| Ok(policy::act(&QuadState::from_vector(p)?, &refs, &theta, &pcfg)?.to_vector()),
            &x.to_vector(),
            &spec,
        )?;
        px.add(&out.dpi_dx, &fd);
        let fd = oracles::fd_jacobian(
            |p| Ok(policy::act(&x, &refs, &Params(*p), &pcfg)?.to_vector()),
            &theta.0,
            &spec,
        )?;
        pt.add(&out.dpi_dtheta, &fd);

        let c = cost::quad_cost(&x, &u, &refs, &weights, cfg.dt);
        let fd = oracles::fd_gradient(
            |p| Ok(cost::quad_cost(&QuadState::from_vector(p)?, &u, &refs, &weights, cfg.dt).cost),
            &x.to_vector(),
            &quad_spec,
        )?;
        fx.add(&c.df_dx, &fd);
        let fd = oracles::fd_gradient(
            |p| Ok(cost::quad_cost(&x, &QuadAction::from_vector(p), &refs, &weights, cfg.dt).cost),
            &u.to_vector(),
            &quad_spec,
        )?;
        fu.add(&c.df_du, &fd);
    }
    out.extend([gx, gu, px, pt, fx, fu].map(|t| t.report(tol)));

    let ccfg = CarModelConfig::default();
    let mut cgx = Tally::new("car::dynamics d/dx");
    let mut cgu = Tally::new("car::dynamics d/du");
    let mut cpx = Tally::new("car::act d/dx");
    let mut cpt = Tally::new("car::act d/dtheta");
    let mut cfx = Tally::new("cost::car d/dx");
    let mut cfu = Tally::new("cost::car d/du");
    for _ in 0..points {
        let x = random_car_state(&mut rng);
        let u = CarAction {
            throttle: rng.gen_range(0.0..3.0),
            steer: rng.gen_range(-0.5..0.5),
        };
        let (_, dgx, dgu) = car::car_step_jacobians(&x, &u, &ccfg)?;
        let fd = oracles::fd_jacobian(
            |p| Ok(car::car_step(&CarState::from_vector(p), &u, &ccfg)?.to_vector()),
            &x.to_vector(),
            &spec,
        )?;
        cgx.add(&dgx, &fd);
        let fd = oracles::fd_jacobian(
            |p: &Vector2<f64>| {
                let u = CarAction {
                    throttle: p[0],
                    steer: p[1],
                };
                Ok(car::car_step(&x, &u, &ccfg)?.to_vector())
            },
            &u.to_vector(),
            &spec,
        )?;
        cgu.add(&dgu, &fd);

        let refs = random_car_ref(&mut rng, &x);
        let theta = random_car_theta(&mut rng);
        let out = car::car_act_with_jacobians(&x, &refs, &theta);
        let fd = oracles::fd_jacobian(
            |p| Ok(car::car_act(&CarState::from_vector(p), &refs, &theta).to_vector()),
            &x.to_vector(),
            &spec,
        )?;
        cpx.add(&out.dpi_dx, &fd);
        let fd = oracles::fd_jacobian(
            |p| Ok(car::car_act(&x, &refs, &CarParams(*p)).to_vector()),
            &theta.0,
            &spec,
        )?;
        cpt.add(&out.dpi_dtheta, &fd);

        let c = cost::car_cost(&x, &u, &refs);
        let fd = oracles::fd_gradient(
            |p| Ok(cost::car_cost(&CarState::from_vector(p), &u, &refs).cost),
            &x.to_vector(),
            &quad_spec,
        )?;
        cfx.add(&c.df_dx, &fd);
        let fd = oracles::fd_gradient(
            |p: &Vector2<f64>| {
                let u = CarAction {
                    throttle: p[0],
                    steer: p[1],
                };
                Ok(cost::car_cost(&x, &u, &refs).cost)
            },
            &u.to_vector(),
            &quad_spec,
        )?;
        cfu.add(&c.df_du, &fd);
    }
    out.extend([cgx, cgu, cpx, cpt, cfx, cfu].map(|t| t.report(tol)));
    Ok(out)
}

/// Disturbance-free figure-8 with the expert controller.
pub fn figure8_env() -> QuadEnv {
    let reference = Reference::new(
        TrajKind::default(),
        Vector3::z(),
        2.0,
        quad::STANDARD_GRAVITY,
    );
    QuadEnv::new(reference, EnvConfig::default())
}

/// The recursively propagated sensitivity `y_T` (M-GAPS with `η = 0`).
pub fn recursive_sensitivity<E, const N: usize, const M: usize, const D: usize>(
    env: &E,
    theta: &SVector<f64, D>,
    steps: usize,
) -> Result<SMatrix<f64, N, D>>
where
    E: Environment<N, M, D>,
{
    let mut learner = Mgaps::<N, D>::new(*theta, MgapsConfig::new(0.0));
    let mut x = env.initial_state();
    for k in 0..steps {
        let tr = env.transition(k, &x, theta, true)?;
        Learner::<N, M, D>::observe(&mut learner, k, tr.cost, tr.derivs.as_ref())?;
        x = tr.next;
    }
    Ok(*learner.sensitivity())
}

/// `y_T` against the re-simulation oracle under constant `θ`.
pub fn sensitivity_check<E, const N: usize, const M: usize, const D: usize>(
    name: &str,
    env: &E,
    theta: &SVector<f64, D>,
    steps: usize,
    tol: f64,
) -> Result<CheckReport>
where
    E: Environment<N, M, D>,
{
    let y = recursive_sensitivity(env, theta, steps)?;
    let fd = oracles::resim_sensitivity(env, theta, steps, &FdSpec::default())?;
    Ok(CheckReport {
        name: name.to_owned(),
        samples: 1,
        worst: relative_error(&y, &fd, 1e-12),
        tol,
    })
}

/// Episode gradient from the recursion against FD of the episode cost, both
/// started from the state reached after `warmup` steps.
pub fn episode_gradient_check<E, const N: usize, const M: usize, const D: usize>(
    name: &str,
    env: &E,
    theta: &SVector<f64, D>,
    warmup: usize,
    horizon: usize,
    tol: f64,
) -> Result<CheckReport>
where
    E: Environment<N, M, D>,
{
    let (x0, _) = oracles::rollout_fixed(env, &env.initial_state(), 0, theta, warmup)?;
    let derivs = oracles::derivs_along(env, &x0, warmup, theta, horizon)?;
    let g = optim::episode_gradient(&derivs)?;
    let fd = oracles::episode_cost_gradient(env, &x0, warmup, theta, horizon, &FdSpec::default())?;
    Ok(CheckReport {
        name: name.to_owned(),
        samples: 1,
        worst: relative_error(&g, &fd, 1e-300),
        tol,
    })
}

/// Every suite `otune check` runs.
pub fn run_all(seed: u64) -> Result<Vec<CheckReport>> {
    let mut out = jacobian_checks(seed, 50, 1e-4)?;
    let env = figure8_env();
    let theta = SVector::from(policy::SIM_EXPERT_THETA);
    out.push(sensitivity_check(
        "sensitivity quad T=1000",
        &env,
        &theta,
        1000,
        1e-3,
    )?);
    let toy = oracles::ScalarToy::default();
    out.push(sensitivity_check(
        "sensitivity scalar T=50",
        &toy,
        &Vector1::new(0.5),
        50,
        1e-6,
    )?);
    for h in [1, 10, 250] {
        let name = format!("episode gradient quad H={h}");
        out.push(episode_gradient_check(&name, &env, &theta, 600, h, 1e-4)?);
        let name = format!("episode gradient scalar H={h}");
        out.push(episode_gradient_check(
            &name,
            &toy,
            &Vector1::new(0.5),
            2,
            h,
            1e-4,
        )?);
    }
    Ok(out)
}
