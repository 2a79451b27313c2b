//! Stability certificates for real-time NMPC, where the optimizer performs
//! a fixed number of iterations per sampling instant instead of solving the
//! optimal control problem exactly.
//!
//! The crate is organized along the coupled system:
//!
//! - [`linmodel`]: continuous LTI plants, exact discretization, DARE.
//! - [`nlp`]: parametric NLPs, KKT maps, the one-node LQ multiple-shooting problem.
//! - [`rtopt`]: real-time iteration schemes and their contraction rate.
//! - [`coupled`]: plant and optimizer stepped together, rollouts.
//! - [`certify`]: constant estimators, sampling-time bounds, the auxiliary matrix.
//! - [`auxsim`]: the comparison system and the domination check.

// `!(x > 0.0)` also rejects NaN, which is the point.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod auxsim;
pub mod certify;
pub mod coupled;
pub mod diff;
pub mod error;
pub mod exec;
pub mod linalg;
pub mod linmodel;
pub mod nlp;
pub mod rtopt;
pub mod sampling;

pub use error::{Assumption, Error, Result};
pub use exec::Execution;
