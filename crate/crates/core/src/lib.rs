//! Numerical laboratory for an n-strain infection-age structured SI model
//! with competition for a shared susceptible pool:
//!
//! ```text
//! S'(t)              = Lambda - mu_S S - S sum_k F_k(t)
//! (d_t + d_a) x_k    = -mu_k(a) x_k
//! x_k(t, 0)          = S(t) F_k(t),      F_k(t) = int beta_k(a) x_k(t, a) da
//! ```
//!
//! The crate computes reproduction numbers and equilibria in closed form,
//! simulates the semiflow along characteristics, evaluates the Lyapunov
//! functionals of the global-stability theory and checks trajectories against
//! the predicted limit set.

pub mod classify;
pub mod equilibria;
pub mod error;
pub mod grid;
pub mod kernels;
pub mod lyapunov;
pub mod model;
pub mod oracle;
pub mod solver;

pub use error::{Error, Result};
pub use grid::Grid;
pub use kernels::{AgeKernel, DerivedStrain};
pub use model::{BlockStructure, ModelParams, PreparedModel, Strain};
pub use solver::GridState;
