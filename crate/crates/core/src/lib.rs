//! Dual control of partially observed nonlinear plants.
//!
//! An extended Kalman filter turns the plant into a fully observed decision
//! problem over (mean, covariance) pairs. A deterministic actor-critic learner
//! then finds a policy on that information state, and the policy can be
//! compared against a certainty-equivalence LQG controller that ignores the
//! covariance.
//!
//! Runnable walkthroughs live in the crate's `examples/` directory; the
//! `dualrl` binary exposes training, evaluation and comparison runs.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod agent;
pub mod baseline;
pub mod cli;
pub mod config;
pub mod error;
pub mod export;
pub mod filter;
pub mod harness;
pub mod linalg;
pub mod model;
pub mod neural;
pub mod objective;
pub mod sim;

pub use error::{Error, Result};
