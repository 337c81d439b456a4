//! Diffusion-loss adversarial imitation learning.

mod bytes;
pub mod error;
pub mod evalx;
pub mod ail;
pub mod cli;
pub mod diffusion;
pub mod envs;
pub mod expert;
pub mod numerics;
pub mod sac;

pub use error::{Error, FormatError, Result};
