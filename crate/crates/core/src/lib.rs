//! Balanced reduced-order modelling of linear time-invariant systems.
//!
//! The data-driven path identifies balanced discrete-time models directly
//! from impulse-response samples through the eigensystem realization
//! algorithm ([`era`]). Analytical balanced truncation ([`lti`]) and
//! POD-based Galerkin and least-squares Petrov–Galerkin projections
//! ([`projection`]) serve as baselines; [`scalability`] adds output domain
//! decomposition and tangential interpolation.

pub mod era;
pub mod error;
pub mod io;
pub mod linalg;
pub mod lti;
pub mod projection;
pub mod scalability;
pub mod snapshots;
pub mod testbed;

pub use error::{Error, ErrorClass, Result};
