//! Joint data balancing under causal Bayesian networks.
//!
//! Exact finite distributions and networks live in [`dist`] and [`cbn`];
//! [`balancing`] implements the reweighting operators; [`propcheck`] checks
//! the formal claims about them on concrete instances. The remaining modules
//! build tabular surrogate datasets, train small classifiers with optional
//! MMD penalties, and score them.

pub mod balancing;
pub mod cbn;
pub mod datagen;
pub mod dist;
pub mod error;
pub mod experiment;
pub mod learner;
pub mod metrics;
pub mod propcheck;
pub mod rng;

pub use error::{Error, Result};
