//! Bayesian optimal experimental design by stochastic gradient ascent on the
//! expected information gain.
//!
//! The crate is organised bottom-up:
//!
//! * [`models`]: forward models `g(xi, theta)` with call counting and
//!   finite-difference derivatives.
//! * [`bayes`]: priors, Gaussian noise, likelihoods and the Laplace fit.
//! * [`estimators`]: DLMC, MCLA and DLMCIS estimates of the information gain.
//! * [`gradients`]: stochastic gradients of those estimators.
//! * [`optimizers`]: projected (accelerated) stochastic gradient ascent.

pub mod bayes;
pub mod error;
pub mod estimators;
pub mod gradients;
pub mod linalg;
pub mod models;
pub mod optimizers;
pub mod rng;

pub use error::{OedError, Result};
pub use linalg::{Matrix, Vector};
