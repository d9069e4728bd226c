//! Poisson multi-Bernoulli mixture trajectory filter with N-scan pruning and
//! dual-decomposition data association.

pub mod assignment;
pub mod error;
pub mod gaussian;
pub mod hypothesis;
pub mod index;
pub mod metrics;
pub mod pmbm;
pub mod simulation;

pub use error::{Error, Result};
