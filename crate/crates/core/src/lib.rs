//! Fast multi-organ segmentation of 3-D volumes from sparse hierarchical
//! descriptors.

pub mod volume;
pub mod sampler;
pub mod nn;
pub mod model;
pub mod metrics;
pub mod trainer;
pub mod inference;
pub mod bench;
pub mod cli;
