//! Online policy optimizers over the single-trajectory protocol.
//!
//! At every step the learner picks a parameter, the environment acts, charges
//! a cost, advances, and then reveals the derivative bundle [`StepDerivs`].
//! All optimizers here are sequential state machines driven through
//! [`Learner`]; the pure update rules are exposed as free functions.

use nalgebra::{SMatrix, SVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Partial derivatives revealed after one protocol step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepDerivs<const N: usize, const M: usize, const D: usize> {
    pub dg_dx: SMatrix<f64, N, N>,
    pub dg_du: SMatrix<f64, N, M>,
    pub dpi_dx: SMatrix<f64, M, N>,
    pub dpi_dtheta: SMatrix<f64, M, D>,
    pub df_dx: SVector<f64, N>,
    pub df_du: SVector<f64, M>,
}

impl<const N: usize, const M: usize, const D: usize> StepDerivs<N, M, D> {
    pub fn zeros() -> Self {
        StepDerivs {
            dg_dx: SMatrix::zeros(),
            dg_du: SMatrix::zeros(),
            dpi_dx: SMatrix::zeros(),
            dpi_dtheta: SMatrix::zeros(),
            df_dx: SVector::zeros(),
            df_du: SVector::zeros(),
        }
    }

    /// Closed-loop state Jacobian `∂g/∂x + ∂g/∂u ∂π/∂x`.
    pub fn closed_loop(&self) -> SMatrix<f64, N, N> {
        self.dg_dx + self.dg_du * self.dpi_dx
    }
}

/// Sensitivity state `y ∈ R^{n×d}`: approximate `∂x_t/∂θ`.
pub type Sensitivity<const N: usize, const D: usize> = SMatrix<f64, N, D>;

/// `G = (∂f/∂x + ∂f/∂u ∂π/∂x) y + ∂f/∂u ∂π/∂θ`, as a column vector.
pub fn sensitivity_gradient<const N: usize, const M: usize, const D: usize>(
    y: &Sensitivity<N, D>,
    d: &StepDerivs<N, M, D>,
) -> SVector<f64, D> {
    let state_grad = d.df_dx + d.dpi_dx.transpose() * d.df_du;
    y.transpose() * state_grad + d.dpi_dtheta.transpose() * d.df_du
}

/// `y' = (∂g/∂x + ∂g/∂u ∂π/∂x) y + ∂g/∂u ∂π/∂θ`.
pub fn propagate_sensitivity<const N: usize, const M: usize, const D: usize>(
    y: &Sensitivity<N, D>,
    d: &StepDerivs<N, M, D>,
) -> Sensitivity<N, D> {
    d.closed_loop() * y + d.dg_du * d.dpi_dtheta
}

fn clip<const D: usize>(g: SVector<f64, D>, limit: Option<f64>) -> SVector<f64, D> {
    match limit {
        Some(c) => g.map(|v| v.clamp(-c, c)),
        None => g,
    }
}

fn check_finite<const R: usize, const C: usize>(
    m: &SMatrix<f64, R, C>,
    what: &str,
    step: usize,
) -> Result<()> {
    if m.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::OptimizerDiverged {
            step,
            reason: format!("non-finite {what}"),
        })
    }
}

/// One M-GAPS step. The parameter update uses the incoming `y`; the returned
/// sensitivity is the propagated one.
pub fn mgaps_step<const N: usize, const M: usize, const D: usize>(
    theta: &SVector<f64, D>,
    y: &Sensitivity<N, D>,
    derivs: &StepDerivs<N, M, D>,
    eta: f64,
) -> Result<(SVector<f64, D>, Sensitivity<N, D>)> {
    let g = sensitivity_gradient(y, derivs);
    check_finite(&g, "gradient", 0)?;
    let y_next = propagate_sensitivity(y, derivs);
    check_finite(&y_next, "sensitivity", 0)?;
    Ok((theta - g * eta, y_next))
}

/// Episode gradient with the sensitivity reset to zero at the episode start
/// and the parameter held fixed.
pub fn episode_gradient<const N: usize, const M: usize, const D: usize>(
    derivs: &[StepDerivs<N, M, D>],
) -> Result<SVector<f64, D>> {
    let mut y = Sensitivity::<N, D>::zeros();
    let mut g = SVector::<f64, D>::zeros();
    for (k, d) in derivs.iter().enumerate() {
        g += sensitivity_gradient(&y, d);
        y = propagate_sensitivity(&y, d);
        check_finite(&y, "sensitivity", k)?;
    }
    check_finite(&g, "gradient", derivs.len())?;
    Ok(g)
}

/// `θ_{k+1} = θ_k - η G_pg` over one completed episode.
pub fn difftune_episode<const N: usize, const M: usize, const D: usize>(
    theta: &SVector<f64, D>,
    derivs: &[StepDerivs<N, M, D>],
    eta: f64,
) -> Result<SVector<f64, D>> {
    Ok(theta - episode_gradient(derivs)? * eta)
}

/// Residual-feedback update `θ_{k+1} = θ_k - (η/ε)(J_k - J_{k-1}) h_k`.
pub fn oprf_episode<const D: usize>(
    theta: &SVector<f64, D>,
    j_k: f64,
    j_prev: f64,
    h: &SVector<f64, D>,
    eta: f64,
    epsilon: f64,
) -> SVector<f64, D> {
    theta - h * (eta / epsilon * (j_k - j_prev))
}

/// Partial sums of `alg - expert`.
pub fn quasi_regret(alg: &[f64], expert: &[f64]) -> Result<Vec<f64>> {
    if alg.len() != expert.len() {
        return Err(Error::LengthMismatch {
            left: alg.len(),
            right: expert.len(),
        });
    }
    let mut acc = 0.0;
    Ok(alg
        .iter()
        .zip(expert)
        .map(|(a, e)| {
            acc += a - e;
            acc
        })
        .collect())
}

/// One step's worth of environment output.
#[derive(Debug, Clone)]
pub struct Transition<S, const N: usize, const M: usize, const D: usize> {
    pub action: SVector<f64, M>,
    pub cost: f64,
    pub next: S,
    pub derivs: Option<StepDerivs<N, M, D>>,
    /// Whether the true plant saturated the action.
    pub clamped: bool,
}

/// A closed-loop plant + policy + cost, stepped under the online protocol.
pub trait Environment<const N: usize, const M: usize, const D: usize>: Sync {
    type State: Clone + Send + Sync;

    fn initial_state(&self) -> Self::State;
    fn state_vector(&self, x: &Self::State) -> SVector<f64, N>;
    fn state_from_vector(&self, v: &SVector<f64, N>) -> Result<Self::State>;
    fn dt(&self) -> f64;

    /// Act with `theta` at step `k`, charge the cost, advance the true plant,
    /// and (if asked) evaluate the model derivatives at the visited point.
    fn transition(
        &self,
        k: usize,
        x: &Self::State,
        theta: &SVector<f64, D>,
        with_derivs: bool,
    ) -> Result<Transition<Self::State, N, M, D>>;

    fn disturbance_active(&self, _k: usize) -> bool {
        false
    }

    /// Squared position tracking error at step `k`.
    fn tracking_error(&self, _k: usize, _x: &Self::State) -> f64 {
        0.0
    }
}

/// Episode summary emitted by the episodic learners.
#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeRecord {
    pub index: usize,
    /// Parameter deployed during the episode.
    pub deployed: Vec<f64>,
    /// Base parameter after the update.
    pub updated: Vec<f64>,
    pub cost: f64,
}

/// An online parameter-selection rule.
pub trait Learner<const N: usize, const M: usize, const D: usize>: Send {
    /// The parameter to deploy at the current step.
    fn theta(&self) -> SVector<f64, D>;

    /// Consumes the step's cost and derivatives; returns an episode record
    /// when an episode closes.
    fn observe(
        &mut self,
        step: usize,
        cost: f64,
        derivs: Option<&StepDerivs<N, M, D>>,
    ) -> Result<Option<EpisodeRecord>>;

    fn sensitivity_norm(&self) -> f64 {
        0.0
    }

    fn needs_derivatives(&self) -> bool {
        true
    }
}

fn require<T>(d: Option<&T>, step: usize) -> Result<&T> {
    d.ok_or_else(|| Error::OptimizerDiverged {
        step,
        reason: "derivatives not provided".into(),
    })
}

/// Constant parameter.
#[derive(Debug, Clone)]
pub struct Fixed<const D: usize> {
    pub theta: SVector<f64, D>,
}

impl<const N: usize, const M: usize, const D: usize> Learner<N, M, D> for Fixed<D> {
    fn theta(&self) -> SVector<f64, D> {
        self.theta
    }

    fn observe(
        &mut self,
        _: usize,
        _: f64,
        _: Option<&StepDerivs<N, M, D>>,
    ) -> Result<Option<EpisodeRecord>> {
        Ok(None)
    }

    fn needs_derivatives(&self) -> bool {
        false
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MgapsConfig {
    pub eta: f64,
    /// Elementwise bound on the gradient, off by default.
    #[serde(default)]
    pub clip: Option<f64>,
    /// Watchdog on `‖y‖_F`.
    #[serde(default = "default_y_limit")]
    pub y_limit: f64,
}

fn default_y_limit() -> f64 {
    1e8
}

impl MgapsConfig {
    pub fn new(eta: f64) -> Self {
        MgapsConfig {
            eta,
            clip: None,
            y_limit: default_y_limit(),
        }
    }
}

/// Non-episodic model-based optimizer.
#[derive(Debug, Clone)]
pub struct Mgaps<const N: usize, const D: usize> {
    theta: SVector<f64, D>,
    y: Sensitivity<N, D>,
    cfg: MgapsConfig,
}

impl<const N: usize, const D: usize> Mgaps<N, D> {
    pub fn new(theta: SVector<f64, D>, cfg: MgapsConfig) -> Self {
        Mgaps {
            theta,
            y: Sensitivity::zeros(),
            cfg,
        }
    }

    pub fn sensitivity(&self) -> &Sensitivity<N, D> {
        &self.y
    }
}

impl<const N: usize, const M: usize, const D: usize> Learner<N, M, D> for Mgaps<N, D> {
    fn theta(&self) -> SVector<f64, D> {
        self.theta
    }

    fn observe(
        &mut self,
        step: usize,
        _cost: f64,
        derivs: Option<&StepDerivs<N, M, D>>,
    ) -> Result<Option<EpisodeRecord>> {
        let d = require(derivs, step)?;
        let g = clip(sensitivity_gradient(&self.y, d), self.cfg.clip);
        check_finite(&g, "gradient", step)?;
        let y = propagate_sensitivity(&self.y, d);
        check_finite(&y, "sensitivity", step)?;
        let norm = y.norm();
        if norm > self.cfg.y_limit {
            return Err(Error::OptimizerDiverged {
                step,
                reason: format!("sensitivity norm {norm:.3e} exceeds watchdog"),
            });
        }
        self.theta -= g * self.cfg.eta;
        self.y = y;
        Ok(None)
    }

    fn sensitivity_norm(&self) -> f64 {
        self.y.norm()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpisodicConfig {
    pub eta: f64,
    pub horizon: usize,
    #[serde(default)]
    pub clip: Option<f64>,
}

/// Episodic model-based optimizer. Updates fire only on complete episodes.
#[derive(Debug, Clone)]
pub struct DiffTune<const N: usize, const D: usize> {
    theta: SVector<f64, D>,
    y: Sensitivity<N, D>,
    grad: SVector<f64, D>,
    episode_cost: f64,
    filled: usize,
    episodes: usize,
    cfg: EpisodicConfig,
}

impl<const N: usize, const D: usize> DiffTune<N, D> {
    pub fn new(theta: SVector<f64, D>, cfg: EpisodicConfig) -> Result<Self> {
        if cfg.horizon == 0 || !(cfg.eta > 0.0) {
            return Err(Error::Config(
                "episode length and learning rate must be positive".into(),
            ));
        }
        Ok(DiffTune {
            theta,
            y: Sensitivity::zeros(),
            grad: SVector::zeros(),
            episode_cost: 0.0,
            filled: 0,
            episodes: 0,
            cfg,
        })
    }
}

impl<const N: usize, const M: usize, const D: usize> Learner<N, M, D> for DiffTune<N, D> {
    fn theta(&self) -> SVector<f64, D> {
        self.theta
    }

    fn observe(
        &mut self,
        step: usize,
        cost: f64,
        derivs: Option<&StepDerivs<N, M, D>>,
    ) -> Result<Option<EpisodeRecord>> {
        let d = require(derivs, step)?;
        self.grad += sensitivity_gradient(&self.y, d);
        self.y = propagate_sensitivity(&self.y, d);
        check_finite(&self.y, "sensitivity", step)?;
        self.episode_cost += cost;
        self.filled += 1;
        if self.filled < self.cfg.horizon {
            return Ok(None);
        }
        let g = clip(self.grad, self.cfg.clip);
        check_finite(&g, "gradient", step)?;
        let deployed = self.theta;
        self.theta -= g * self.cfg.eta;
        self.episodes += 1;
        let record = EpisodeRecord {
            index: self.episodes,
            deployed: deployed.iter().copied().collect(),
            updated: self.theta.iter().copied().collect(),
            cost: self.episode_cost,
        };
        self.y = Sensitivity::zeros();
        self.grad = SVector::zeros();
        self.episode_cost = 0.0;
        self.filled = 0;
        Ok(Some(record))
    }

    fn sensitivity_norm(&self) -> f64 {
        self.y.norm()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OprfConfig {
    pub eta: f64,
    pub horizon: usize,
    pub epsilon: f64,
    #[serde(default)]
    pub seed: u64,
}

/// Episodic model-free optimizer with one-point residual feedback.
///
/// Episode `k` deploys the query `θ_{k-1} + ε h_k` and then updates the base
/// `θ_k` from the residual `J_k - J_{k-1}`, with `J_0 = 0` and `θ_0 = θ_1`.
#[derive(Debug, Clone)]
pub struct Oprf<const D: usize> {
    prev: SVector<f64, D>,
    base: SVector<f64, D>,
    h: SVector<f64, D>,
    j_prev: f64,
    j: f64,
    filled: usize,
    episodes: usize,
    rng: ChaCha8Rng,
    cfg: OprfConfig,
}

impl<const D: usize> Oprf<D> {
    pub fn new(theta: SVector<f64, D>, cfg: OprfConfig) -> Result<Self> {
        if cfg.horizon == 0 || !(cfg.eta > 0.0) || !(cfg.epsilon > 0.0) {
            return Err(Error::Config(
                "episode length, learning rate and radius must be positive".into(),
            ));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let h = sample_direction(&mut rng);
        Ok(Oprf {
            prev: theta,
            base: theta,
            h,
            j_prev: 0.0,
            j: 0.0,
            filled: 0,
            episodes: 0,
            rng,
            cfg,
        })
    }

    pub fn base(&self) -> &SVector<f64, D> {
        &self.base
    }
}

/// `h ~ N(0, I)`.
pub fn sample_direction<const D: usize>(rng: &mut ChaCha8Rng) -> SVector<f64, D> {
    SVector::from_fn(|_, _| StandardNormal.sample(rng))
}

impl<const N: usize, const M: usize, const D: usize> Learner<N, M, D> for Oprf<D> {
    fn theta(&self) -> SVector<f64, D> {
        self.prev + self.h * self.cfg.epsilon
    }

    fn observe(
        &mut self,
        step: usize,
        cost: f64,
        _derivs: Option<&StepDerivs<N, M, D>>,
    ) -> Result<Option<EpisodeRecord>> {
        if !cost.is_finite() {
            return Err(Error::OptimizerDiverged {
                step,
                reason: "non-finite cost".into(),
            });
        }
        self.j += cost;
        self.filled += 1;
        if self.filled < self.cfg.horizon {
            return Ok(None);
        }
        let deployed = <Self as Learner<N, M, D>>::theta(self);
        let next = oprf_episode(
            &self.base,
            self.j,
            self.j_prev,
            &self.h,
            self.cfg.eta,
            self.cfg.epsilon,
        );
        self.episodes += 1;
        let record = EpisodeRecord {
            index: self.episodes,
            deployed: deployed.iter().copied().collect(),
            updated: next.iter().copied().collect(),
            cost: self.j,
        };
        self.prev = self.base;
        self.base = next;
        self.j_prev = self.j;
        self.j = 0.0;
        self.filled = 0;
        self.h = sample_direction(&mut self.rng);
        Ok(Some(record))
    }

    fn needs_derivatives(&self) -> bool {
        false
    }
}
