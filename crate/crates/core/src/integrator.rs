//! Two-stage implicit Runge-Kutta discretization (Radau IA, order 3) with
//! a full-Newton solve of the stage equations.
//!
//! One step of size `T` solves
//!
//! ```text
//! z1 = x + (T/4) (f(z1) -  f(z2))
//! z2 = x + (T/12)(3 f(z1) + 5 f(z2))
//! x+ = x + (T/4) (f(z1) + 3 f(z2))
//! ```
//!
//! for the stage values `z1`, `z2`. The converged stages are kept in the
//! trajectory so that sensitivity propagation can differentiate the step
//! map without re-solving any stage system.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::model::{Model, StateVector};

// Butcher tableau of the scheme, row by row; weights b = [1/4, 3/4].
const A11: f64 = 0.25;
const A12: f64 = -0.25;
const A21: f64 = 0.25;
const A22: f64 = 5.0 / 12.0;
const B1: f64 = 0.25;
const B2: f64 = 0.75;

/// How the Newton iteration on the stage values is seeded.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub enum StagePredictor {
    /// Both stages start at the current state. Robust for small steps.
    #[default]
    CurrentState,
    /// Stages start on the explicit-Euler ray through the current state.
    ExplicitEuler,
}

/// Step size and Newton controls for the implicit integrator.
#[derive(Debug, Clone)]
pub struct IrkConfig {
    /// Discretization period `T`.
    pub step_size: f64,
    /// Stage-residual tolerance, relative to `max(1, |x_k|_inf)`.
    pub newton_tol: f64,
    pub newton_max_iters: usize,
    pub predictor: StagePredictor,
}

impl IrkConfig {
    pub fn new(step_size: f64) -> Self {
        IrkConfig {
            step_size,
            newton_tol: 1e-12,
            newton_max_iters: 50,
            predictor: StagePredictor::default(),
        }
    }

    fn validate(&self) -> Result<()> {
        if !(self.step_size > 0.0 && self.step_size.is_finite()) {
            return Err(Error::Argument(format!(
                "step size must be positive, got {}",
                self.step_size
            )));
        }
        if !(self.newton_tol > 0.0) {
            return Err(Error::Argument("newton_tol must be positive".into()));
        }
        if self.newton_max_iters == 0 {
            return Err(Error::Argument("newton_max_iters must be at least 1".into()));
        }
        Ok(())
    }
}

/// Converged stage pair of one step.
pub type StagePair = (DVector<f64>, DVector<f64>);

/// A simulated discrete trajectory `x_0 .. x_{N-1}` plus the converged
/// stage pair of each of the `N-1` steps.
#[derive(Debug, Clone)]
pub struct Trajectory {
    states: Vec<StateVector>,
    stages: Vec<StagePair>,
}

impl Trajectory {
    /// All states, `x_0` first.
    pub fn states(&self) -> &[StateVector] {
        &self.states
    }

    /// Stage pairs; entry `k` belongs to the step from `x_k` to `x_{k+1}`.
    pub fn stages(&self) -> &[StagePair] {
        &self.stages
    }

    /// Number of stored states (the observation window `N`).
    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn state(&self, i: usize) -> &StateVector {
        &self.states[i]
    }
}

/// Advances one implicit step; returns the next state and the converged
/// stage pair.
pub fn irk_step(model: &Model, x: &StateVector, cfg: &IrkConfig) -> Result<(StateVector, StagePair)> {
    cfg.validate()?;
    step_inner(model, x, cfg, 0)
}

fn step_inner(
    model: &Model,
    x: &StateVector,
    cfg: &IrkConfig,
    step_index: usize,
) -> Result<(StateVector, StagePair)> {
    let n = model.n_x();
    let t = cfg.step_size;
    let scale = x.amax().max(1.0);
    let tol = cfg.newton_tol * scale;

    let (mut z1, mut z2) = match cfg.predictor {
        StagePredictor::CurrentState => (x.clone(), x.clone()),
        StagePredictor::ExplicitEuler => {
            // abscissae c = [0, 2/3]
            let fx = model.dynamics(x)?;
            (x.clone(), x + &fx * (2.0 * t / 3.0))
        }
    };

    let mut f1 = model.dynamics(&z1)?;
    let mut f2 = model.dynamics(&z2)?;
    let mut residual = stage_residual(x, &z1, &z2, &f1, &f2, t);
    let mut res_norm = residual.amax();

    let mut iterations = 0;
    while res_norm > tol {
        if iterations >= cfg.newton_max_iters {
            return Err(Error::Integration {
                step: step_index,
                residual: res_norm,
                iterations,
            });
        }
        let j1 = model.jacobian(&z1)?;
        let j2 = model.jacobian(&z2)?;
        let system = stage_system_matrix(&j1, &j2, t);
        let delta = solve_stage_system(&system, &(-&residual), step_index)?;
        for i in 0..n {
            z1[i] += delta[(i, 0)];
            z2[i] += delta[(n + i, 0)];
        }
        f1 = model.dynamics(&z1)?;
        f2 = model.dynamics(&z2)?;
        residual = stage_residual(x, &z1, &z2, &f1, &f2, t);
        res_norm = residual.amax();
        iterations += 1;
        if !res_norm.is_finite() {
            return Err(Error::Integration {
                step: step_index,
                residual: res_norm,
                iterations,
            });
        }
    }

    let next = x + (&f1 + &f2 * 3.0) * (B1 * t);
    Ok((next, (z1, z2)))
}

/// Residual of the stage equations, stacked `[r1; r2]`.
fn stage_residual(
    x: &StateVector,
    z1: &StateVector,
    z2: &StateVector,
    f1: &DVector<f64>,
    f2: &DVector<f64>,
    t: f64,
) -> DVector<f64> {
    let n = x.len();
    let r1 = z1 - x - (f1 * A11 + f2 * A12) * t;
    let r2 = z2 - x - (f1 * A21 + f2 * A22) * t;
    let mut out = DVector::zeros(2 * n);
    out.rows_mut(0, n).copy_from(&r1);
    out.rows_mut(n, n).copy_from(&r2);
    out
}

/// `d(residual)/d(z1,z2)`: the 2n x 2n block matrix
/// `[[I - T a11 J1, -T a12 J2], [-T a21 J1, I - T a22 J2]]`.
fn stage_system_matrix(j1: &DMatrix<f64>, j2: &DMatrix<f64>, t: f64) -> DMatrix<f64> {
    let n = j1.nrows();
    let mut m = DMatrix::identity(2 * n, 2 * n);
    for r in 0..n {
        for c in 0..n {
            m[(r, c)] -= t * A11 * j1[(r, c)];
            m[(r, n + c)] -= t * A12 * j2[(r, c)];
            m[(n + r, c)] -= t * A21 * j1[(r, c)];
            m[(n + r, n + c)] -= t * A22 * j2[(r, c)];
        }
    }
    m
}

fn solve_stage_system(
    system: &DMatrix<f64>,
    rhs: &DVector<f64>,
    step_index: usize,
) -> Result<DMatrix<f64>> {
    system
        .clone()
        .lu()
        .solve(&DMatrix::from_column_slice(rhs.len(), 1, rhs.as_slice()))
        .ok_or_else(|| singular_stage_error(system, step_index))
}

fn singular_stage_error(system: &DMatrix<f64>, step_index: usize) -> Error {
    let svs = system.clone().svd(false, false).singular_values;
    let max = svs.max();
    let min = svs.min();
    let condition = if min > 0.0 { max / min } else { f64::INFINITY };
    Error::SingularStageSystem {
        step: step_index,
        condition,
    }
}

/// Simulates `n_states` samples `x_0 .. x_{N-1}` starting from `x0`.
pub fn simulate(model: &Model, x0: &StateVector, n_states: usize, cfg: &IrkConfig) -> Result<Trajectory> {
    cfg.validate()?;
    if n_states == 0 {
        return Err(Error::Argument("observation window must be at least 1".into()));
    }
    let mut states = Vec::with_capacity(n_states);
    let mut stages = Vec::with_capacity(n_states.saturating_sub(1));
    states.push(x0.clone());
    for k in 0..n_states - 1 {
        let (next, pair) = step_inner(model, &states[k], cfg, k)?;
        states.push(next);
        stages.push(pair);
    }
    Ok(Trajectory { states, stages })
}

/// Derivative of the one-step map, `d x_{k+1} / d x_k`, from the converged
/// stage pair of that step.
///
/// Differentiating the stage equations gives the same block system as the
/// Newton iteration, with the identity stacked on the right-hand side:
/// `M [dz1; dz2] = [I; I]`, and then
/// `dx+/dx = I + T (b1 J1 dz1 + b2 J2 dz2)`.
pub fn step_jacobian(model: &Model, stages: &StagePair, cfg: &IrkConfig) -> Result<DMatrix<f64>> {
    cfg.validate()?;
    step_jacobian_inner(model, stages, cfg, 0)
}

pub(crate) fn step_jacobian_inner(
    model: &Model,
    stages: &StagePair,
    cfg: &IrkConfig,
    step_index: usize,
) -> Result<DMatrix<f64>> {
    let n = model.n_x();
    let t = cfg.step_size;
    let j1 = model.jacobian(&stages.0)?;
    let j2 = model.jacobian(&stages.1)?;
    let system = stage_system_matrix(&j1, &j2, t);

    let mut rhs = DMatrix::zeros(2 * n, n);
    for i in 0..n {
        rhs[(i, i)] = 1.0;
        rhs[(n + i, i)] = 1.0;
    }
    let dz = system
        .clone()
        .lu()
        .solve(&rhs)
        .ok_or_else(|| singular_stage_error(&system, step_index))?;
    let dz1 = dz.rows(0, n).into_owned();
    let dz2 = dz.rows(n, n).into_owned();
    Ok(DMatrix::identity(n, n) + (&j1 * dz1 * B1 + &j2 * dz2 * B2) * t)
}

/// Stability function of the scheme,
/// `R(z) = (1 + z/3) / (1 - 2z/3 + z^2/6)`; the one-step map of `x' = l x`
/// is `x -> R(lT) x`.
pub fn stability_function(z: f64) -> f64 {
    (1.0 + z / 3.0) / (1.0 - 2.0 * z / 3.0 + z * z / 6.0)
}

/// Matrix version of [`stability_function`]: `R(T A)` evaluated by solving
/// `D(TA) X = N(TA)` with the numerator/denominator polynomials.
pub fn stability_matrix(a: &DMatrix<f64>, t: f64) -> Result<DMatrix<f64>> {
    if !a.is_square() {
        return Err(Error::Argument("stability_matrix needs a square matrix".into()));
    }
    let n = a.nrows();
    let ta = a * t;
    let numerator = DMatrix::identity(n, n) + &ta / 3.0;
    let denominator = DMatrix::identity(n, n) - &ta * (2.0 / 3.0) + &ta * &ta / 6.0;
    denominator
        .lu()
        .solve(&numerator)
        .ok_or_else(|| Error::Numerical("stability denominator is singular".into()))
}
