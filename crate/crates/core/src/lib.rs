//! Quantum action profiles, resolution-limited measurement and the emergence
//! of least-action behaviour in finite-dimensional systems.

// `!(x > 0.0)` is used on purpose so NaN inputs are rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod action;
pub mod error;
pub mod experiments;
pub mod hilbert;
pub mod measurement;
pub mod models;

pub use error::{Error, Result};
