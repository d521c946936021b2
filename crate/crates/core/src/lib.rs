//! Nonlinear steering dynamics: simulation and system identification.
//!
//! The crate bundles a single-track vehicle simulator used as a ground-truth
//! data generator together with three identification methods operating on the
//! recorded input/output data:
//!
//! - [`linear`]: LTI state-space baseline (ARX initialization, Ho-Kalman
//!   realization, output-error refinement),
//! - [`gp`]: Gaussian-process NARX with a squared-exponential kernel,
//! - [`encoder`]: subspace-encoder neural state-space model.
//!
//! [`nn`] provides the minimal MLP/Adam engine shared by the learned methods
//! and [`signal`] the excitation, filtering and metric utilities.
//!
//! The crate is `no_std` (with `alloc`); all IO, configuration and plotting
//! live in the companion `steerid-cli` crate.

#![cfg_attr(not(test), no_std)]

extern crate alloc;

pub mod encoder;
pub mod error;
pub mod gp;
pub mod linear;
pub mod nn;
pub mod rng;
pub mod signal;
pub mod sim;

pub use error::{Error, Result};
