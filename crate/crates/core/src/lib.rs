pub mod aggregation;
pub mod cli;
pub mod components;
pub mod data;
pub mod error;
pub mod eval;
pub mod losses;
pub mod numerics;
pub mod protocol;
pub mod seed;

pub use error::{Error, Result};
