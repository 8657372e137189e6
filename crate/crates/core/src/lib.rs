//! Off-policy state-value learning with a weighted importance-sampling
//! Bellman loss and trust-region projected Gaussian policies.

pub mod bandit;
pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod critic;
pub mod envs;
pub mod error;
pub mod fig1;
pub mod gaussian;
pub mod mlp;
pub mod optim;
pub mod policy;
pub mod projection;
pub mod replay;
pub mod trainer;

pub use error::{Error, Result};
