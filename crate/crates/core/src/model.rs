//! Dynamical-network abstraction: state, dynamics, measurement.
//!
//! A [`Model`] bundles the vector field `f`, an optional analytic Jacobian
//! `df/dx`, and the measurement matrix `C` whose rows are the candidate
//! sensor nodes. Everything downstream (integration, sensitivities,
//! Gramians, selection, estimation) consumes this type.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// State of the network at one instant; length equals [`Model::n_x`].
pub type StateVector = DVector<f64>;

type DynamicsFn = dyn Fn(&StateVector) -> StateVector + Send + Sync;
type JacobianFn = dyn Fn(&StateVector) -> DMatrix<f64> + Send + Sync;

/// Default finite-difference base step; the per-component step is
/// `h * max(1, |x_i|)`.
pub const DEFAULT_FD_STEP: f64 = 1e-6;

/// A continuous-time autonomous network `x' = f(x)`, `y = C x`.
///
/// Immutable after construction; evaluation is pure, so one model may be
/// shared across threads.
#[derive(Clone)]
pub struct Model {
    n_x: usize,
    dynamics: Arc<DynamicsFn>,
    jacobian: Option<Arc<JacobianFn>>,
    measurement: DMatrix<f64>,
}

impl Model {
    /// Builds a model from a vector field and a measurement matrix.
    ///
    /// The measurement matrix must have `n_x` columns, at least one row,
    /// and no all-zero row (a sensor must measure something). Models built
    /// this way fall back to finite differences for the Jacobian; attach an
    /// analytic one with [`Model::with_jacobian`].
    pub fn new<F>(n_x: usize, dynamics: F, measurement: DMatrix<f64>) -> Result<Self>
    where
        F: Fn(&StateVector) -> StateVector + Send + Sync + 'static,
    {
        validate_measurement(&measurement, n_x)?;
        Ok(Model {
            n_x,
            dynamics: Arc::new(dynamics),
            jacobian: None,
            measurement,
        })
    }

    /// Attaches an analytic Jacobian `df/dx`.
    pub fn with_jacobian<J>(mut self, jacobian: J) -> Self
    where
        J: Fn(&StateVector) -> DMatrix<f64> + Send + Sync + 'static,
    {
        self.jacobian = Some(Arc::new(jacobian));
        self
    }

    /// Linear network `x' = A x`, `y = C x`, with the exact Jacobian `A`.
    pub fn linear(a: DMatrix<f64>, measurement: DMatrix<f64>) -> Result<Self> {
        if !a.is_square() {
            return Err(Error::Argument(format!(
                "system matrix must be square, got {}x{}",
                a.nrows(),
                a.ncols()
            )));
        }
        let n = a.nrows();
        let a_dyn = a.clone();
        let a_jac = a;
        Model::new(n, move |x: &StateVector| &a_dyn * x, measurement)
            .map(|m| m.with_jacobian(move |_: &StateVector| a_jac.clone()))
    }

    /// State dimension `n_x`.
    pub fn n_x(&self) -> usize {
        self.n_x
    }

    /// Number of candidate sensor nodes (rows of `C`).
    pub fn n_y(&self) -> usize {
        self.measurement.nrows()
    }

    /// The measurement matrix `C`.
    pub fn measurement(&self) -> &DMatrix<f64> {
        &self.measurement
    }

    /// Evaluates the vector field `f(x)`.
    pub fn dynamics(&self, x: &StateVector) -> Result<StateVector> {
        self.check_state(x)?;
        let out = (self.dynamics)(x);
        if out.len() != self.n_x {
            return Err(Error::Numerical(format!(
                "dynamics returned length {} for state dimension {}",
                out.len(),
                self.n_x
            )));
        }
        Ok(out)
    }

    /// Evaluates `df/dx` at `x`: the analytic Jacobian when one is
    /// attached, otherwise central finite differences with the default
    /// step.
    pub fn jacobian(&self, x: &StateVector) -> Result<DMatrix<f64>> {
        self.check_state(x)?;
        match &self.jacobian {
            Some(jac) => {
                let out = jac(x);
                if out.nrows() != self.n_x || out.ncols() != self.n_x {
                    return Err(Error::Numerical(format!(
                        "jacobian returned {}x{} for state dimension {}",
                        out.nrows(),
                        out.ncols(),
                        self.n_x
                    )));
                }
                Ok(out)
            }
            None => self.fd_jacobian(x, DEFAULT_FD_STEP),
        }
    }

    /// Central-difference Jacobian with per-component step
    /// `h * max(1, |x_i|)`.
    pub fn fd_jacobian(&self, x: &StateVector, h: f64) -> Result<DMatrix<f64>> {
        self.check_state(x)?;
        if h <= 0.0 {
            return Err(Error::Argument(format!("fd step must be positive, got {h}")));
        }
        let n = self.n_x;
        let mut jac = DMatrix::zeros(n, n);
        for i in 0..n {
            let step = h * x[i].abs().max(1.0);
            let mut plus = x.clone();
            let mut minus = x.clone();
            plus[i] += step;
            minus[i] -= step;
            let df = (self.dynamics(&plus)? - self.dynamics(&minus)?) / (2.0 * step);
            jac.set_column(i, &df);
        }
        Ok(jac)
    }

    fn check_state(&self, x: &StateVector) -> Result<()> {
        if x.len() != self.n_x {
            return Err(Error::Argument(format!(
                "state has length {}, expected {}",
                x.len(),
                self.n_x
            )));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::Argument("state contains non-finite entries".into()));
        }
        Ok(())
    }
}

fn validate_measurement(c: &DMatrix<f64>, n_x: usize) -> Result<()> {
    if c.nrows() == 0 {
        return Err(Error::Argument(
            "measurement matrix must have at least one row".into(),
        ));
    }
    if c.ncols() != n_x {
        return Err(Error::Argument(format!(
            "measurement matrix has {} columns, expected {}",
            c.ncols(),
            n_x
        )));
    }
    for j in 0..c.nrows() {
        if c.row(j).iter().all(|v| *v == 0.0) {
            return Err(Error::Argument(format!(
                "measurement row {} is all zero; a sensor must measure something",
                j + 1
            )));
        }
    }
    Ok(())
}

/// A set of sensor nodes, stored 0-based and strictly increasing.
///
/// File formats and CLI output use 1-based indices; the conversion happens
/// at [`SensorSet::from_one_based`] / [`SensorSet::one_based`].
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct SensorSet {
    members: Vec<usize>,
}

impl SensorSet {
    /// The empty selection.
    pub fn empty() -> Self {
        SensorSet { members: Vec::new() }
    }

    /// All nodes `{1..n_y}`.
    pub fn full(n_y: usize) -> Self {
        SensorSet {
            members: (0..n_y).collect(),
        }
    }

    /// Builds a set from 0-based indices; duplicates are rejected.
    pub fn from_zero_based<I: IntoIterator<Item = usize>>(indices: I) -> Result<Self> {
        let mut members: Vec<usize> = indices.into_iter().collect();
        members.sort_unstable();
        if members.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::Argument("duplicate sensor index".into()));
        }
        Ok(SensorSet { members })
    }

    /// Builds a set from 1-based indices as they appear in files and CLI
    /// arguments.
    pub fn from_one_based<I: IntoIterator<Item = usize>>(indices: I) -> Result<Self> {
        let mut zero = Vec::new();
        for i in indices {
            if i == 0 {
                return Err(Error::Argument("sensor indices are 1-based; got 0".into()));
            }
            zero.push(i - 1);
        }
        SensorSet::from_zero_based(zero)
    }

    /// 0-based members in increasing order.
    pub fn members(&self) -> &[usize] {
        &self.members
    }

    /// 1-based members in increasing order.
    pub fn one_based(&self) -> Vec<usize> {
        self.members.iter().map(|j| j + 1).collect()
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn contains(&self, j: usize) -> bool {
        self.members.binary_search(&j).is_ok()
    }

    /// Returns a new set with node `j` (0-based) added.
    pub fn with(&self, j: usize) -> SensorSet {
        let mut members = self.members.clone();
        match members.binary_search(&j) {
            Ok(_) => {}
            Err(pos) => members.insert(pos, j),
        }
        SensorSet { members }
    }

    /// 1-based members joined by commas, e.g. `"1,3"`.
    pub fn display_one_based(&self) -> String {
        self.one_based()
            .iter()
            .map(|j| j.to_string())
            .collect::<Vec<_>>()
            .join(",")
    }
}
