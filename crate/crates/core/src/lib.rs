#![no_std]
extern crate alloc;

pub mod diffnet;
pub mod error;
pub mod localizer;
pub mod normalize;
pub mod reacher;
pub mod reward;
pub mod rl;
pub mod scalar;
pub mod taskgen;

pub use error::{Error, Result};
