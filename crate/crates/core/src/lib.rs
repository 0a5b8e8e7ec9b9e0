//! Simulation of mean-field interacting particle systems and nonparametric
//! estimation of their interaction function over Fourier sieves.
//!
//! The pipeline is: [`sim`] produces a [`sim::PathEnsemble`], [`empirics`]
//! turns it into a [`empirics::GramSystem`], [`estimators`] solve for the
//! coefficients, and [`oracle`] evaluates them against the population law.
//! [`study`] runs seeded sweeps over the sample size.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod empirics;
pub mod error;
pub mod estimators;
pub mod io;
pub mod linalg;
pub mod oracle;
pub mod rng;
pub mod sieve;
pub mod sim;
pub mod stats;
pub mod study;
pub mod verify;

pub use error::{Error, Result};
pub use num_complex::Complex64;

pub type CMatrix = nalgebra::DMatrix<Complex64>;
pub type RMatrix = nalgebra::DMatrix<f64>;
