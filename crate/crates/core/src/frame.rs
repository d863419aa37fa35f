//! Single-channel depth frames.

use crate::error::{Error, Result};

/// A grayscale frame with 8- or 16-bit samples, stored row-major.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Frame {
    width: usize,
    height: usize,
    bit_depth: u8,
    samples: Vec<u16>,
}

impl Frame {
    pub fn new(width: usize, height: usize, bit_depth: u8, samples: Vec<u16>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::domain(format!(
                "frame must be non-empty, got {width}×{height}"
            )));
        }
        if !matches!(bit_depth, 8 | 16) {
            return Err(Error::domain(format!(
                "bit depth must be 8 or 16, got {bit_depth}"
            )));
        }
        if samples.len() != width * height {
            return Err(Error::domain(format!(
                "{width}×{height} frame needs {} samples, got {}",
                width * height,
                samples.len()
            )));
        }
        let peak = peak_for(bit_depth);
        if samples.iter().any(|&s| f64::from(s) > peak) {
            return Err(Error::domain(format!(
                "sample exceeds the {bit_depth}-bit range"
            )));
        }
        Ok(Frame {
            width,
            height,
            bit_depth,
            samples,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn bit_depth(&self) -> u8 {
        self.bit_depth
    }

    /// 255 or 65535.
    pub fn peak(&self) -> f64 {
        peak_for(self.bit_depth)
    }

    /// Row-major samples.
    pub fn samples(&self) -> &[u16] {
        &self.samples
    }

    pub fn get(&self, x: usize, y: usize) -> u16 {
        self.samples[y * self.width + x]
    }
}

pub fn peak_for(bit_depth: u8) -> f64 {
    if bit_depth == 8 {
        255.0
    } else {
        65535.0
    }
}
