pub mod annindex;
pub mod curriculum;
pub mod dataset;
pub mod encoder;
pub mod error;
pub mod evaluator;
pub mod losses;
pub mod objective;
pub mod rng;
pub mod tensor;
pub mod trainer;

pub use error::{Error, FormatError, Result};
