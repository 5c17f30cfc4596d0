pub mod error;
pub mod features;
pub mod governance;
pub mod harness;
pub mod metrics;
pub mod adversary;
pub mod sim;
pub mod trust;
pub mod world;

pub use error::{Error, Result};
