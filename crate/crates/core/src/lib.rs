pub mod bayes;
pub mod copula;
pub mod error;
pub mod forecast;
pub mod margins;
pub mod panel;
pub mod pipeline;
pub mod reservoir;
pub mod rng;
pub mod scoring;
pub mod stats;
pub mod synthetic;

pub use error::{Error, Result};
