pub mod domains;
pub mod error;
pub mod harness;
pub mod numerics;
pub mod runtime;
pub mod translate;

pub use error::{Error, Result};
