//! Numerical laboratory for density-dependent one-step birth-death processes
//! on `{0..N}` and their drift-diffusion (Fokker-Planck) approximations on
//! `[-h, 1+h]`, `h = 1/(2N)`.
//!
//! The crate solves both descriptions from shared polynomial rate data,
//! compares them at the lattice points `k/N`, measures how fast the gap
//! closes as `N` grows, and quantifies the generator mismatch that drives
//! that gap. Everything is generic over the [`Scalar`] float type; the `*64`
//! aliases at the crate root fix `f64`, the precision all documented
//! tolerances assume.
//!
//! Module map:
//!
//! * [`rates`] - polynomial rate models, admissibility validation, initial data;
//! * [`master`] - exact master equations: generator, adaptive implicit solver,
//!   stationary law;
//! * [`fpde`] - finite-volume Fokker-Planck solver with zero-flux boundaries;
//! * [`consistency`] - generator-defect measurements (discrete vs continuous);
//! * [`convergence`] - paired runs, error ladders, power-law fits, mean field;
//! * [`diagnostics`] - derivative probes near the boundary, contraction checks;
//! * [`ssa`] - exact stochastic simulation as an independent oracle;
//! * [`export`] - CSV/JSON/plot-script rendering of every report.

pub mod consistency;
pub mod convergence;
pub mod diagnostics;
pub mod export;
pub mod fpde;
pub mod grid;
pub mod master;
pub mod poly;
pub mod rates;
pub mod scalar;
pub mod ssa;
pub mod tridiag;

pub use scalar::{real, Scalar};

/// f64 concrete aliases for the generic core types.
/// Crate version, for run manifests.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");

pub type Poly64 = poly::Poly<f64>;
pub type RateModel64 = rates::RateModel<f64>;
pub type InitialFunction64 = rates::InitialFunction<f64>;
pub type ValidationReport64 = rates::ValidationReport<f64>;
pub type GridSpec64 = grid::GridSpec<f64>;
pub type GridFunction64 = grid::GridFunction<f64>;
pub type TridiagonalGenerator64 = master::TridiagonalGenerator<f64>;
pub type DistributionTrajectory64 = master::DistributionTrajectory<f64>;
pub type FpDiscretization64 = fpde::FpDiscretization<f64>;
pub type FieldTrajectory64 = fpde::FieldTrajectory<f64>;
pub type DefectReport64 = consistency::DefectReport<f64>;
pub type DefectStudy64 = consistency::DefectStudy<f64>;
pub type ConvergenceReport64 = convergence::ConvergenceReport<f64>;
pub type OrderFit64 = convergence::OrderFit<f64>;
pub type ConjectureProbe64 = diagnostics::ConjectureProbe<f64>;
pub type SsaConfig64 = ssa::SsaConfig<f64>;
pub type EmpiricalDistribution64 = ssa::EmpiricalDistribution<f64>;
