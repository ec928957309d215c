//! Stereo-photogrammetric quantification of rising gas-bubble streams.

pub mod error;
pub mod geometry;
pub mod imaging;
pub mod matching;
pub mod pipeline;
pub mod quadrics;
pub mod simulator;
pub mod tracking;

pub use error::{Error, Result};
