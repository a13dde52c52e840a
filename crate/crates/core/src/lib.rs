pub mod error;
pub mod baselines;
pub mod estimate;
pub mod experiment;
pub mod fantope;
pub mod genmodel;
pub mod matcore;
pub mod meta;
pub mod novel;
pub mod rng;
pub mod theory;

pub use error::{Error, Result};
