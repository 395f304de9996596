//! Computable machinery for small-time density asymptotics of hypoelliptic
//! rough differential equations driven by fractional Brownian motion.

// Negated comparisons are how NaN is rejected, index loops mirror the
// formulas, and division is multiplication by the reciprocal.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop, clippy::suspicious_arithmetic_impl)]

pub mod asymptotics;
pub mod error;
pub mod fgauss;
pub mod fields;
pub mod malliavin;
pub mod mc;
pub mod rde;
pub mod metrics;
pub mod minimizer;
pub mod roughlift;
pub mod scalar;
pub mod tensor_sig;

pub use error::{Error, Result};
