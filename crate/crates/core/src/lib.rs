//! Primal-dual sliding (PDS) and stochastic PDS solvers for decentralized
//! convex optimization over simulated agent networks, a bilinear saddle-point
//! variant, and an experiment harness.

pub mod config;
pub mod error;
pub mod graph;
pub mod harness;
pub mod linalg;
pub mod pds;
pub mod problem;
pub mod saddle;
pub mod schedule;
pub mod spds;

pub use error::{Error, Result};
