//! Lossy depth-video coding through low-rank CP tensor approximation.
//!
//! A group of depth frames is stacked into an order-3 tensor, approximated by
//! a rank-R Kruskal model computed with alternating least squares (optionally
//! accelerated by pairwise perturbation), and the factor matrices are coded as
//! 16-bit planes with a QP-controlled DPCM + range coder. The [`pipeline`]
//! module wires this into encode/decode and rate-distortion sweeps, and
//! [`metrics`] provides PSNR, SSIM and Bjontegaard delta rate.

pub mod codec;
pub mod container;
pub mod cp;
mod error;
pub mod frame;
pub mod linalg;
pub mod metrics;
pub mod pipeline;
pub mod synth;
pub mod tensor;

pub use error::{Error, Result};
