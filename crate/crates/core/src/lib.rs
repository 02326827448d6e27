//! Forward uncertainty quantification for parabolic reaction-diffusion
//! equations with a random diffusion coefficient.
//!
//! The crate builds a nested hierarchy of space-time finite element
//! discretizations (piecewise-linear simplicial elements in space,
//! Crank-Nicolson blocks in time), samples lognormal-free perturbed
//! diffusion fields through a truncated Karhunen-Loeve expansion, solves
//! each realization either monolithically (all time steps at once, Newton +
//! ILU(0)-preconditioned restarted GMRES) or by sequential time stepping,
//! and combines solutions across levels with Monte Carlo and multilevel
//! Monte Carlo estimators.
//!
//! Modules:
//! - [`mesh`]: structured simplicial mesh hierarchies and time grids
//! - [`fem`]: mass/stiffness assembly and stimulus loads
//! - [`random_field`]: covariance models, pivoted Cholesky, KL expansions
//! - [`system`]: the block space-time operator and its cubic reaction term
//! - [`krylov`]: CSR ILU(0) and restarted GMRES
//! - [`solve`]: monolithic Newton and sequential time-stepping drivers
//! - [`transfer`]: interpolation/L2-projection between hierarchy levels
//! - [`scheduler`]: deterministic batched sample execution across threads
//! - [`estimator`]: MC/MLMC estimators, RMSE, and work models

// Numerical kernels walk several parallel arrays in lockstep, where
// explicit index loops keep the stanzas symmetric; and sign checks are
// written as negated comparisons (`!(x > 0.0)`) so NaN fails them too.
#![allow(clippy::needless_range_loop)]
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod estimator;
pub mod fem;
pub mod krylov;
pub mod mesh;
pub mod random_field;
pub mod scheduler;
pub mod solve;
pub mod sparse;
pub mod system;
pub mod transfer;

pub use error::Error;

/// Convenience result alias used across the crate.
pub type Result<T> = std::result::Result<T, Error>;
