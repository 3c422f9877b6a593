//! Post-detection pipeline for livestock-facility scene classification:
//! geometric filtering of infrastructure mask candidates, composite masks,
//! engineered prior features, a mask-guided attention classifier head and
//! gradient-based explanations.

pub mod chamfer;
pub mod cli;
pub mod composite;
pub mod config;
pub mod dataset;
pub mod error;
pub mod explain;
pub mod geometry;
pub mod mask;
pub mod metrics;
pub mod model;
pub mod pipeline;
pub mod priors;
pub mod synth;
pub mod taxonomy;
pub mod tensor;

pub use error::{Error, Result};
