//! Stochastic-gradient variational inference with quadratic-surrogate control
//! variates.
//!
//! The pieces, bottom up: structured matrices ([`linalg`]), Gaussian
//! variational families ([`families`]), target log-joints ([`models`]), the
//! control variates and their fitting gradients ([`control_variates`]),
//! gradient estimators ([`estimators`]) and the training loop with its
//! experiment drivers ([`trainer`]). [`config`], [`trace`] and [`cli`] handle
//! configuration files, CSV outputs and the command line.

pub mod cli;
pub mod config;
pub mod control_variates;
pub mod error;
pub mod estimators;
pub mod families;
pub mod gradcheck;
pub mod linalg;
pub mod models;
pub mod trace;
pub mod trainer;

pub use error::{Error, Result};
