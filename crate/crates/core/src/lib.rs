//! Numerical toolkit for fibered quasilinear elliptic problems
//! `-div(alpha(x) |grad u|^(p(x)-2) grad u) = f(x, u)` on boxes in
//! R^m x R^(n-m).

// `!(x > 0.0)` is how validation rejects NaN along with the bad values, and
// stencil code indexes several arrays with one axis counter.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod config;
pub mod error;
pub mod geometry;
pub mod grid;
pub mod io;
pub mod linalg;
pub mod model;
pub mod multigrid;
pub mod operator;
pub mod pipeline;
pub mod poincare;
pub mod sampling;
pub mod solver;
pub mod stability;

pub use error::{Error, Result};
