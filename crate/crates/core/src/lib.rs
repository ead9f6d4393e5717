//! Multilevel Monte Carlo uncertainty quantification for density-driven
//! groundwater flow in a Henry-type coastal aquifer.
//!
//! The crate is organised bottom-up:
//!
//! * [`sampling`] draws the three uniform parameters, pseudo-random or Halton.
//! * [`fields`] turns them into porosity, permeability and recharge.
//! * [`grid`] defines the space-time level hierarchy.
//! * [`solver`] integrates the coupled flow and transport equations.
//! * [`qoi`] extracts level-independent quantities from trajectories.
//! * [`stats`] and [`mlmc`] estimate moments, rates and sample allocations.
//!
//! Statistics and estimator types are generic over [`Real`] (`f32` or
//! `f64`); the aliases below fix them to `f64`, the precision of the solver.

pub mod fields;
pub mod grid;
pub mod linalg;
pub mod mlmc;
pub mod num;
pub mod qoi;
pub mod sampling;
pub mod solver;
pub mod stats;

pub use num::Real;

pub type LevelStats = mlmc::LevelStats<f64>;
pub type MlmcPlan = mlmc::MlmcPlan<f64>;
pub type MlmcEstimate = mlmc::MlmcEstimate<f64>;
pub type MlmcRun = mlmc::MlmcRun<f64>;
pub type MlmcConfig = mlmc::MlmcConfig<f64>;
pub type RateFit = mlmc::RateFit<f64>;
pub type CorrectionSample = mlmc::CorrectionSample<f64>;
pub type MomentAccumulator = stats::MomentAccumulator<f64>;
pub type FieldMoments = stats::FieldMoments<f64>;
pub type DensityEstimate = stats::DensityEstimate<f64>;
