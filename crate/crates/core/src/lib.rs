pub mod cli;
pub mod corpus;
pub mod embeddings;
pub mod error;
pub mod evaluation;
pub mod model;
pub mod numeric;
pub mod trainer;

pub use error::{Error, Result};
