pub mod error;
pub mod exec;
pub mod harness;
pub mod kernels;
pub mod q_marginal;
pub mod ratio;
pub mod rng;
pub mod simgen;
pub mod statistic;
pub mod stats;

pub use error::{Error, Result};
pub use exec::Exec;
