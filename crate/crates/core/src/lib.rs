pub mod autodiff;
pub mod error;
pub mod tensor;

pub use error::{Error, Result};
pub use tensor::Tensor;
pub mod softsort;
pub mod models;
pub mod data;
pub mod oracles;
pub mod rng;
pub mod optim;
pub mod training;
pub mod baselines;
pub mod evaluation;
pub mod config;
pub mod pipeline;
pub mod diagnostics;
