//! Estimation and inference for three-dimensional panels in which responses
//! and regressors share global, country-level, and industry-level latent
//! factor structures.
//!
//! The crate provides:
//!
//! * a least-squares estimator that alternates between per-block regressions
//!   and principal-component factor extraction ([`estimator`]);
//! * eigenvalue-ratio selection of every factor count ([`select`]);
//! * dependent wild bootstrap confidence intervals and split-panel jackknife
//!   bias correction ([`inference`]);
//! * the benchmark simulation design ([`dgp`]) plus a Monte Carlo harness
//!   ([`mc`]) and the evaluation metrics it reports ([`metrics`]).
//!
//! All randomized routines take explicit seeds and derive per-task streams
//! from them, so every result is reproducible bit for bit regardless of the
//! number of worker threads (see [`rng`] and [`par`]).

pub mod dgp;
pub mod error;
pub mod estimator;
pub mod fixtures;
pub mod inference;
pub mod linalg;
pub mod mc;
pub mod metrics;
pub mod model;
pub mod par;
pub mod rng;
pub mod select;

pub use error::{Error, Result};
