pub mod container;
pub mod data_sim;
pub mod error;
pub mod eval;
pub mod gradcheck;
pub mod inference;
pub mod network;
pub mod tensor;
pub mod trainer;

pub use error::{Error, Result};
