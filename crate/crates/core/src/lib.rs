pub mod cli;
pub mod data;
pub mod error;
pub mod iv;
pub mod lasso;
pub mod linalg;
pub mod mediation;
pub mod semms;
pub mod sim;
pub mod stats;

pub use error::{Error, Result};
