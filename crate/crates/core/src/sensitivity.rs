//! Forward sensitivity propagation along a simulated trajectory.
//!
//! The stack holds `xi_i = d x_i / d x_0` for every sample of the window.
//! The recursion `xi_{i+1} = (d x_{i+1} / d x_i) xi_i` reuses the stage
//! pairs stored in the trajectory, so no stage system is ever re-solved.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::integrator::{simulate, step_jacobian_inner, IrkConfig, Trajectory};
use crate::model::{Model, StateVector};

/// The matrices `xi_0 .. xi_{N-1}`, with `xi_0 = I`.
#[derive(Debug, Clone)]
pub struct SensitivityStack {
    xis: Vec<DMatrix<f64>>,
}

impl SensitivityStack {
    /// All sensitivity matrices, `xi_0 = I` first.
    pub fn matrices(&self) -> &[DMatrix<f64>] {
        &self.xis
    }

    pub fn len(&self) -> usize {
        self.xis.len()
    }

    pub fn is_empty(&self) -> bool {
        self.xis.is_empty()
    }

    pub fn matrix(&self, i: usize) -> &DMatrix<f64> {
        &self.xis[i]
    }

    pub(crate) fn from_matrices(xis: Vec<DMatrix<f64>>) -> Self {
        SensitivityStack { xis }
    }
}

/// Builds the sensitivity stack of a trajectory by the forward matrix
/// recursion.
pub fn propagate_sensitivities(
    model: &Model,
    trajectory: &Trajectory,
    cfg: &IrkConfig,
) -> Result<SensitivityStack> {
    if trajectory.is_empty() {
        return Err(Error::Argument("trajectory has no states".into()));
    }
    let n = model.n_x();
    let mut xis = Vec::with_capacity(trajectory.len());
    xis.push(DMatrix::identity(n, n));
    for (k, stages) in trajectory.stages().iter().enumerate() {
        let step_jac = step_jacobian_inner(model, stages, cfg, k)?;
        let next = &step_jac * &xis[k];
        xis.push(next);
    }
    Ok(SensitivityStack { xis })
}

/// Finite-difference oracle for the stack: column `i` of every `xi_k` from
/// central differences of whole re-simulations started at `x0 ± h_i e_i`,
/// with per-component step `h_i = h * max(1, |x0_i|)`.
pub fn fd_sensitivity(
    model: &Model,
    x0: &StateVector,
    n_states: usize,
    cfg: &IrkConfig,
    h: f64,
) -> Result<SensitivityStack> {
    if h <= 0.0 {
        return Err(Error::Argument(format!("fd step must be positive, got {h}")));
    }
    let n = model.n_x();
    let mut xis = vec![DMatrix::zeros(n, n); n_states];
    for i in 0..n {
        let step = h * x0[i].abs().max(1.0);
        let mut plus = x0.clone();
        let mut minus = x0.clone();
        plus[i] += step;
        minus[i] -= step;
        let traj_plus = simulate(model, &plus, n_states, cfg)?;
        let traj_minus = simulate(model, &minus, n_states, cfg)?;
        for k in 0..n_states {
            let column = (traj_plus.state(k) - traj_minus.state(k)) / (2.0 * step);
            xis[k].set_column(i, &column);
        }
    }
    Ok(SensitivityStack { xis })
}
