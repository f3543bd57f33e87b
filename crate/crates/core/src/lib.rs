//! Best-arm identification with post-action contexts.
//!
//! The crate provides the bandit model and simulator, the optimal-allocation
//! solvers, GLR stopping rules, the tracking algorithms and an experiment
//! harness that writes CSV/JSON summaries.

pub mod error;
pub mod model;
pub mod env;
pub mod geometry;
pub mod optim;
pub mod stopping;
pub mod algorithms;
pub mod harness;

pub use error::{Error, Result};
pub use model::{
    ContextDistribution, ContextMatrix, EmpiricalState, Instance, MeanSpec, Setting, WeightVector,
};
