//! Regularized optimal mass transport (rOMT).
//!
//! Finds the kinetic-energy-minimal velocity stack that carries one density
//! image toward another under a discretized advection-diffusion constraint,
//! solved with Gauss-Newton and matrix-free Hessian products. The
//! [`lagrangian`] module turns solved flows into pathlines, speed and Péclet
//! maps, and flux vectors.

// `!(x > 0.0)` is used on purpose so NaN fails parameter checks.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bench;
pub mod error;
pub mod grid;
pub mod io;
pub mod lagrangian;
pub mod solver;
pub mod sparse;
pub mod transport;

pub use error::{Result, RomtError};
pub use grid::{build_neg_laplacian, gradient_field, Grid, VectorField, Volume};

pub use solver::{ChainMode, CostTerms, OperatorCaching, PairResult, RomtConfig, SolverState, StopReason, VelocityStack};
pub use sparse::SparseMatrix;
pub use transport::{AdvectionMatrix, DepositDerivative, DiffusionContext};
