//! Density ridge estimation with bootstrap confidence regions.
//!
//! The crate estimates the ridge set of an unknown density from a point
//! sample. A product-kernel plug-in estimator supplies the density value,
//! gradient, and Hessian at any query point; an eigendecomposition of the
//! Hessian splits directions into ridge-parallel and ridge-normal parts;
//! the norm of the normal projection of the gradient measures how far a
//! point is from the ridge. Bootstrap resampling of that measure over a
//! grid yields confidence regions for the ridge, a vernier estimator for
//! the growth exponent of the measure near its zero set, and a test of
//! whether the ridge is locally flat.

pub mod bootstrap;
pub mod error;
pub mod field;
pub mod inference;
pub mod kde;
pub mod kernel;
pub mod quadrature;
pub mod rng;
pub mod spectral;
pub mod synthetic;
pub(crate) mod util;

pub use error::{Result, RidgeError};
