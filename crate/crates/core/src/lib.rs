pub mod adaptation;
pub mod dataset;
pub mod error;
pub mod exec;
pub mod io;
pub mod linear;
pub mod partition;
pub mod rng;
pub mod searchlight;
pub mod stats;
pub mod volume;

pub use error::{Error, Result};
