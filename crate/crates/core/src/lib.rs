//! Numerical toolkit for stationary shock profiles of hyperbolic
//! relaxation systems `U_t + A(U) U_x = q(U)` and for the characteristic
//! damping estimates of perturbations around them.

// `!(x > 0.0)` rejects NaN along with non-positive values.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod characteristics;
pub mod damping;
pub mod dynamics;
pub mod eigenframe;
pub mod error;
pub mod model;
pub mod ode;
pub mod poly;
pub mod profile;
pub mod spectral;

pub use error::{Error, Result};
