//! Sensor-node selection for nonlinear dynamical networks.
//!
//! The crate simulates a network with an implicit Runge-Kutta scheme,
//! propagates trajectory sensitivities, builds per-sensor observability
//! Gramian contributions around a set of presumed initial states, selects
//! sensor nodes by maximizing state-averaged trace or log-det measures
//! with a greedy routine, and validates selections by recovering the
//! initial state from the chosen sensors with a box-constrained nonlinear
//! least-squares solve.

pub mod error;
pub mod model;
pub mod kinetics;
pub mod integrator;
pub mod sensitivity;
pub mod gramian;

pub use error::{Error, Result};
pub use model::{Model, SensorSet, StateVector};
pub use kinetics::ReactionNetwork;
pub use integrator::{simulate, IrkConfig, Trajectory};
pub use sensitivity::{fd_sensitivity, propagate_sensitivities, SensitivityStack};
pub use gramian::GramianAtoms;
