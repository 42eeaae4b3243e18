//! Toolkit for quantifying how well cross-attention scores in
//! encoder-decoder sequence models explain model predictions.
//!
//! The pipeline: decode a time-frequency input with a miniature
//! encoder-decoder model while recording per-layer, per-head cross-attention
//! ([`model`], [`attention`]); estimate input and encoder-output relevance
//! by occlusion and KL divergence ([`attribution`]); then compare attention
//! against the relevance maps with flattened Pearson correlation and
//! deletion-based faithfulness curves ([`metrics`]). Planted-alignment
//! models with known token-to-frame dependencies serve as ground truth.

pub mod attention;
pub mod attribution;
pub mod error;
pub mod heatmap;
pub mod metrics;
pub mod model;
pub mod numerics;
pub mod seed;

pub use error::{Error, Result};
