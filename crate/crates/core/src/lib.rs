//! Numerical laboratory for Hamilton-Jacobi-Bellman equations of controlled
//! diffusions `dX = b(t, X, a) dt + sqrt(2) dW` with merely measurable drift
//! and running cost.
//!
//! The core is generic over the scalar type ([`Real`]: `f32` or `f64`); the
//! `*64` aliases at the crate root fix it to `f64`, which is what the CLI uses.

// `!(x > 0.0)` rejects NaN on purpose; index loops mirror the stencils.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod analysis;
pub mod battery;
pub mod coefficients;
pub mod config;
pub mod error;
pub mod grid;
pub mod hamiltonian;
pub mod hjb_solver;
pub mod io;
pub mod linear_parabolic;
pub mod manifest;
pub mod mollifier;
pub mod montecarlo;
pub mod runner;
pub mod scalar;
pub mod tridiag;

pub use error::{Error, Result};
pub use scalar::{Point, Real};

pub type Grid64 = grid::Grid<f64>;
pub type Field64 = grid::Field<f64>;
pub type ActionSet64 = coefficients::ActionSet<f64>;
