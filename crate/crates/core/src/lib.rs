//! Simulation and system identification for a grid-following converter.
//!
//! The crate bundles four layers:
//!
//! 1. [`model`] — a 15-state averaged converter/LCL/PLL model with an
//!    algebraically eliminated grid node, plus an equilibrium solver.
//! 2. [`sim`] + [`dataset`] — fixed-step RK4 integration under stepped
//!    reference schedules, and trajectory/derivative datasets with optional
//!    measurement noise and finite-difference derivatives.
//! 3. [`features`] + [`sindy`] — a polynomial/trigonometric feature library
//!    and sparse regression (STLSQ) for model rediscovery, with the exact
//!    ground-truth coefficient expansion for scoring.
//! 4. [`symreg`] — deep symbolic regression: an autoregressive expression
//!    sampler trained with a risk-seeking policy gradient, plus a genetic
//!    programming baseline.
//!
//! [`metrics`], [`report`], [`config`], and [`pipeline`] tie the layers into
//! the reproducible end-to-end runs exposed by the `gflid` binary.

pub mod config;
pub mod dataset;
pub mod error;
pub mod features;
pub mod metrics;
pub mod model;
pub mod pipeline;
pub mod report;
pub mod sim;
pub mod sindy;
pub mod symreg;

pub use error::{Error, Result};
