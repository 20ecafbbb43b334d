pub mod autodiff;
pub mod error;
pub mod rng;
pub mod tensor;

pub use error::{DataError, Result, TfnError};
pub use tensor::{Matrix, Tensor, Tensor3, Vector};
pub mod data;
pub mod embeddings;
pub mod fusion;
pub mod inference;
pub mod labels;
pub mod model;
pub mod regularize;
pub mod metrics;
pub mod train;
pub mod cv;
pub mod report;
pub mod persist;
pub mod verify;
