pub mod binio;
pub mod checkpoint;
pub mod corpus;
pub mod embeddings;
pub mod error;
pub mod gradcheck;
pub mod layers;
pub mod metrics;
pub mod models;
pub mod params;
pub mod tensor;
pub mod training;

pub use error::{Error, Result};
pub use tensor::{grad_check, grad_check_many, Graph, Tensor, Var};
