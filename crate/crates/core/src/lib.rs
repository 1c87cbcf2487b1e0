//! Production-function and markup estimation with a generalized control
//! function, together with the structural Monte Carlo model used to study it.
//!
//! * [`ces`]: CES technology, demand and markup identities.
//! * [`dgp`]: panel simulator.
//! * [`features`]: multivariate Hermite bases, projections and rank selection.
//! * [`gcf`]: the orthogonalized-moment GMM estimator.
//! * [`baseline`]: the proxy-variable style comparison estimator.
//! * [`study`]: Monte Carlo orchestration, config files and reports.

// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod baseline;
pub mod ces;
pub mod dgp;
pub mod error;
pub mod features;
pub mod gcf;
pub mod optim;
pub mod study;

pub use error::{Error, Result};
