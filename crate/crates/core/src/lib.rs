//! Pseudo-spectral numerical laboratory for the incompressible Navier-Stokes
//! equations on the periodic torus [0, 2*pi*L)^N, N in {2, 3}.
//!
//! The crate provides, at desk scale, the constructive machinery of the
//! log-endpoint mild-solution theory: Littlewood-Paley and heat-kernel Besov
//! norms, the multiplier norm X_r, the Duhamel bilinear operator on graded
//! time meshes, Picard fixed-point solvers for the plain and linearly
//! perturbed equations, a divergence-free Galerkin energy solver, and a
//! three-way initial-data splitting driver that chains all of them.
//!
//! Everything is double precision; diagonal operators (heat semigroup, Leray
//! projection, derivatives) act by exact per-mode symbols, and quadratic
//! nonlinearities are dealiased by the 2/3 rule.

pub mod duhamel;
pub mod error;
pub mod families;
pub mod field;
pub mod galerkin;
pub mod grid;
pub mod io;
pub mod mild;
pub mod perturbed;
pub mod quad;
pub mod spaces;
pub mod spectral;
pub mod splitting;
pub mod suite;
pub mod time;

pub use duhamel::{bilinear_b, path_norm_x, path_norms_v, PathNorms};
pub use error::{Error, Gate, Result};
pub use field::{Field, ScalarField, TensorField};
pub use galerkin::{
    build_basis, coeff_b, coeff_c, energy_report, integrate_galerkin, ConvectionTensor,
    GalerkinBasis, GalerkinPath, GalerkinSystem,
};
pub use grid::{make_grid, Grid};
pub use mild::{oracle_timestep, solve_mild, MildConfig, MildSolution};
pub use perturbed::{
    apply_l, invert_i_minus_l, probe_drift_norm, solve_perturbed, PerturbedConfig,
    PerturbedSolution,
};
pub use spaces::{BaseSpace, BesovIndex, NormReport};
pub use splitting::{
    dyadic_segments, solve_composite, split_initial_data, weak_residual, CompositeConfig,
    CompositeSolution, SplitConfig, SplitData, WeakResidualReport,
};
pub use suite::{run_suite, suite_csv, SuiteRow};
pub use time::{make_time_grid, PathSample, TimeGrid};
