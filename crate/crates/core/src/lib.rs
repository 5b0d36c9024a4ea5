//! Incremental layer-wise training of a small GPT-2 style decoder, next to a
//! full-depth baseline, with exact compute accounting.

pub mod checkpoint;
pub mod cli;
pub mod corpus;
pub mod cost;
pub mod error;
pub mod gradcheck;
pub mod harness;
pub mod model;
pub mod numkernel;
pub mod optim;
pub mod schedule;

pub use cost::Rational;
pub use error::{Error, Result};
