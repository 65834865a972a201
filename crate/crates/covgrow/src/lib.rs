//! Semiparametric growth-curve fitting with smoothing splines.
//!
//! A family of response trajectories over a timelike variable is modeled
//! as a parametric part plus a sum of products of nonparametric temporal
//! functions and known covariate functions. The temporal functions share
//! one clamped B-spline basis, each with its own roughness penalty; the
//! penalized least squares problem is a generalized ridge regression
//! solved through banded symmetric factorizations. Smoothing parameters
//! are chosen from the data by generalized cross-validation or by a
//! fixed-point iteration on an unbiased risk estimate, and pointwise
//! error bands come from the plug-in expected-error matrix.
//!
//! The numerical core is generic over the scalar type; the aliases at the
//! crate root fix `f64`, which the default tolerances assume.

pub mod bspline;
pub mod cli;
pub mod design;
pub mod error;
pub mod io;
pub mod linalg;
pub mod scalar;
pub mod selection;
pub mod separable;
pub mod sim;
pub mod solver;

pub use error::{Error, Result};
pub use scalar::Real;

/// Double-precision aliases for the main types.
pub type SplineBasis64 = bspline::SplineBasis<f64>;
pub type PenaltyMatrix64 = bspline::PenaltyMatrix<f64>;
pub type Dataset64 = design::Dataset<f64>;
pub type Individual64 = design::Individual<f64>;
pub type ModelSpec64 = design::ModelSpec<f64>;
pub type AssembledSystem64 = design::AssembledSystem<f64>;
pub type SelectionConfig64 = selection::SelectionConfig<f64>;
pub type FitResult64 = solver::FitResult<f64>;
pub type UniformSystem64 = separable::UniformSystem<f64>;

/// Single-precision aliases; usable, but the documented tolerances and
/// the acceptance checks assume `f64`.
pub type SplineBasis32 = bspline::SplineBasis<f32>;
pub type Dataset32 = design::Dataset<f32>;
pub type AssembledSystem32 = design::AssembledSystem<f32>;
pub type FitResult32 = solver::FitResult<f32>;
