//! Iterative solver for `-div(a grad u) = f` with random, unit-range
//! dependent coefficients, together with the homogenization machinery
//! (correctors, effective matrix, two-scale expansion) it is built on.
//!
//! The crate is organized bottom-up:
//!
//! * [`grid`]: domains, grid functions, forward/backward differences, field dumps.
//! * [`coefficient`]: seeded piecewise-constant coefficient fields.
//! * [`operator`]: sparse assembly of `mu^2 - div(a grad)`, CG, condition numbers.
//! * [`norms`]: volume-normalized norms, mollifiers, local cell norms.
//! * [`homogenization`]: periodic correctors, `abar`, flux correctors.
//! * [`twoscale`]: the two-scale expansion and its error bound.
//! * [`algorithm`]: the three-solve iteration and contraction measurement.
//! * [`stats`]: `O_s` tail calibration.

pub mod algorithm;
pub mod coefficient;
pub mod error;
pub mod grid;
pub mod homogenization;
pub mod linalg;
pub mod norms;
pub mod operator;
pub mod stats;
pub mod twoscale;

pub use error::{Error, Result};
