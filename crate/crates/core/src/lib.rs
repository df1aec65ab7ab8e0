//! Decentralized federated dual averaging for sparse, high-dimensional problems.

pub mod error;
pub mod gossip;
pub mod harness;
pub mod mirror;
pub mod optimizers;
pub mod problem;
pub mod rng;

pub use error::{Error, Result};
