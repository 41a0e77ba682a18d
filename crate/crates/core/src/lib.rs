pub mod error;
pub mod evaluation;
pub mod experiment;
pub mod io;
pub mod model;
pub mod prior;
pub mod sampler;
pub mod rng;
pub mod spherical;
pub mod stats;

pub use error::{Error, Result};
