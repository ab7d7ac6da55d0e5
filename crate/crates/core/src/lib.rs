//! Parameter estimation for the steady diffusion (DC resistivity) problem
//! with an adaptive multiscale finite volume reduction of the forward model.
//!
//! The pieces, bottom up:
//! - [`mesh`]: tensor mesh and nested coarse partition,
//! - [`diffusion`]: operator `A(m)` and its model derivative,
//! - [`solvers`]: sparse Cholesky and block CG,
//! - [`basis`]: model-dependent multiscale basis `S_k(m)` and its
//!   directional derivatives,
//! - [`forward`]: full and reduced forward maps with matrix-free sensitivities,
//! - [`inversion`]: misfit, regularization and projected Gauss-Newton.

pub mod basis;
pub mod diffusion;
mod error;
pub mod forward;
pub mod inversion;
pub mod mesh;
pub mod parallel;
pub mod solvers;

#[cfg(test)]
pub(crate) mod test_util;

pub use basis::{BasisSpec, BoundaryConditionSet, Family, LocalPcaSelection, MultiscaleBasis};
pub use diffusion::{Conductivity, GradAu, SparseSymOperator};
pub use error::{Error, Result};
pub use forward::{FineSolver, ForwardState, ReducedState, SensitivityMode, SensitivityOp, Survey};
pub use inversion::{ForwardModel, GnConfig, InversionTrace, Objective, Simulation};
pub use mesh::{CoarsePartition, TensorMesh};
pub use parallel::WorkerPool;
pub use solvers::{block_cg, DenseSpd, Factorization, IterativeResult};
