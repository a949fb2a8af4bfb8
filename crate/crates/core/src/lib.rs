//! Reaction motion generation with a state-space conditional VAE.

pub mod bench;
pub mod data;
pub mod error;
pub mod evaluation;
pub mod metrics;
pub mod model;
pub mod numerics;
pub mod objectives;
pub mod ssm;
pub mod trainer;

pub use error::{Error, Result};
