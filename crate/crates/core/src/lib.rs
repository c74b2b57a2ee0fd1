pub mod attacks;
pub mod augment;
pub mod data;
pub mod error;
pub mod losses;
pub mod models;
pub mod pipeline;

pub use error::{Error, Result};
