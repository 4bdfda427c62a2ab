//! Desk-scale library for task-driven feature point cloud compaction and
//! unequal-protection transmission: source compaction, an LDPC-protected
//! geometry channel, an SNR-adaptive analog attribute channel, source
//! decompaction, and single-step diffusion upsampling.

pub mod channel;
pub mod error;
pub mod geometry;
pub mod jscc;
pub mod ldpc;
pub mod mask;
pub mod octree;
pub mod params;
pub mod pipeline;
pub mod rng;
pub mod source;
pub mod sparse;
pub mod tensor;
pub mod upsampler;

pub use error::{Error, Result};
