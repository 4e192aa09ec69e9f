//! Simulation and Monte-Carlo verification toolkit for stochastic delay
//! differential equations with singular drift,
//!
//! ```text
//! dX(t) = V(t, X_t) dt + b(t, X(t)) dt + sigma(t, X(t)) dW(t),   X_0 = xi,
//! ```
//!
//! where `X_t` is the segment of the path over the last `r` time units and
//! `b` may be unbounded but lies in a mixed `L^q(L^p)` space.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod coefficients;
pub mod engine;
pub mod error;
pub mod estimates;
pub mod girsanov;
pub mod model;
pub mod rng;
pub mod stats;
pub mod zvonkin;

pub use error::{Error, Result};
