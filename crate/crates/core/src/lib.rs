//! Stochastic semi-gradient learning for mean field games.
//!
//! [`learners::run_semisgd`] updates a linear action-value estimate and a
//! population estimate from the same online transitions. The online
//! fixed-point iteration family and a model-based reference solver are
//! provided for comparison, together with benchmark environments and the
//! metrics used to evaluate runs.

pub mod envs;
pub mod error;
pub mod experiment;
pub mod learners;
pub mod lfa;
pub mod metrics;
pub mod policy;
pub mod types;

pub use error::{Error, ErrorKind, Result};
