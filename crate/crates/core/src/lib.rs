//! Mesh saliency toolkit.

// `!(x > 0.0)` is the NaN-rejecting form used for config checks.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod ablation;
pub mod autograd;
pub mod config;
pub mod demo;
pub mod error;
pub mod features;
pub mod flops;
pub mod gaze;
pub mod geom;
pub mod mesh;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod registry;
pub mod saliency;
pub mod simplify;
pub mod ssm;
pub mod tensor;
pub mod texture;
pub mod train;

pub use error::{Error, Result};
