//! Moment-constrained marginal distributionally robust Kalman filtering.
//!
//! The crate is layered bottom-up:
//!
//! - [`linalg`]: symmetric-matrix kernels (Jacobi eigendecomposition, PSD
//!   projection, Schur complements, sensor block bookkeeping).
//! - [`uncertainty`]: the per-sensor Loewner-band uncertainty set and the
//!   Dykstra projection onto it.
//! - [`solver`]: the least-favorable second moment, found by a log-barrier
//!   Newton method (default) or projected supergradient ascent, plus a
//!   brute-force grid oracle for tiny instances.
//! - [`estimator`]: the static minimax affine estimator built on the solver.
//! - [`filter`]: the recursive robust filter, baseline Kalman filters and
//!   covariance intersection.
//! - [`methods`]: a name-keyed registry of fusion methods used by the harness.
//! - [`sim`]: truth simulation, Monte-Carlo comparison, gamma tuning and the
//!   static demo behind the CLI.

// `!(x > 0.0)` is used on purpose so that NaN is rejected too
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod estimator;
pub mod filter;
pub mod linalg;
pub mod methods;
pub mod sim;
pub mod solver;
pub mod uncertainty;

pub use error::{Error, Result};
pub use linalg::{BlockLayout, JointSecondMoment, SymMatrix};
