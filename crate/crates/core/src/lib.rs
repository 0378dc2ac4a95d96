pub mod ablation;
pub mod data;
pub mod error;
pub mod metrics;
pub mod model;
pub mod spectral;
pub mod tensor;
pub mod texture;
pub mod training;

pub use error::{Error, Result};
pub use tensor::{Real, Tape, Tensor, Var};
