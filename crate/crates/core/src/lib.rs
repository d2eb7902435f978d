//! Cell-centered structured-grid solver for a Cahn-Larché system coupled with
//! unidirectional rate-dependent damage.
//!
//! The time discretization is a constrained incremental minimization: each step
//! minimizes the regularized free energy plus scaled dissipation plus an H⁻¹
//! metric penalty over displacements with Dirichlet data on Γ, concentrations
//! with conserved mean, and damage confined to `[0, z_prev]`. The `evolution`
//! module drives the time loop and the refinement / vanishing-viscosity
//! studies; `verification` hosts independent checkers for the weak-solution
//! conditions and the energy-dissipation inequality.

pub mod energetics;
pub mod evolution;
pub mod grid;
pub mod io;
pub mod material;
pub mod minimizer;
pub mod verification;

pub use energetics::{EnergyBreakdown, State};
pub use evolution::{BoundaryLoad, Diagnostics, RunConfig, Trajectory};
pub use grid::{Face, GridSpec, ScalarField, SymTensorField, TensorField, VectorField};
pub use material::{ModelParams, PhiKind};
pub use minimizer::{MinimizerConfig, StepProblem, StepResult};
