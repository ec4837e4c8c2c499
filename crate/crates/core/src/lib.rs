//! Variational models trained via the expected loss, together with the
//! closed-form solutions the training dynamics converge to.
//!
//! The crate is organized around small desk-scale problems where every
//! quantity of interest (minimum-Wasserstein interpolating Gaussians,
//! max-margin vectors, gradient-flow trajectories) can be computed exactly
//! and checked against the corresponding training run.

#![allow(clippy::needless_range_loop)]
#![allow(clippy::type_complexity)]

pub mod gaussian;
pub mod harness;
pub mod metrics;
pub mod numerics;
pub mod objectives;
pub mod optim;
pub mod oracles;
pub mod parametrization;
pub mod rng;
pub mod varlinear;
pub mod varnet;

pub use gaussian::Gaussian;
pub use numerics::{Matrix, SubspaceBasis};
pub use optim::{SgdConfig, TrainTrace, VariationalParams};
