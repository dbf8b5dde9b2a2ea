//! Joint fire classification and segmentation.
//!
//! The network pairs an encoder–decoder segmentation backbone with an
//! image-level classifier on the coarsest encoder features. Two attention
//! blocks couple the tasks: a spatial self-attention block over the decoder
//! features, and a channel gate that rescales the segmentation logits by
//! `1 + alpha * s(x)`, where `s(x)` is the predicted fire probability and
//! `alpha` starts at zero.

pub mod baselines;
pub mod cli;
pub mod data;
pub mod error;
pub mod loss;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod train;

pub use error::{Error, Result};
