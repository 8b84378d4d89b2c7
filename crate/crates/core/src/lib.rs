pub mod curvegen;
pub mod error;
pub mod fitting;
pub mod fixtures;
pub mod geometry;
pub mod harness;
pub mod inference;
pub mod metrics;
pub mod models;
pub mod simulator;

pub use error::{Error, Result};
