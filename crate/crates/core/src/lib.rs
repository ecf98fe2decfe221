pub mod boost;
#[cfg(feature = "cli")]
pub mod cli;
pub mod data;
pub mod error;
pub mod evalecon;
pub mod ist;
pub mod rng;
pub mod shrink;
pub mod stats;
pub mod tweedie;

pub use error::{Error, Result};
