pub mod blocks;
pub mod bundle;
pub mod error;
pub mod fusion;
pub mod harness;
pub mod offsets;
pub mod scanpaths;
pub mod ssm;
pub mod tensors;

pub use error::{Error, Result};
