//! End-to-end orchestration: frame grouping, CP decomposition, plane coding,
//! container assembly, decoding and rate-distortion sweeps.

mod ingest;
mod sweep;

pub use ingest::{ingest, list_frames, write_pgm, write_sequence, RAW_SIDECAR};
pub use sweep::{
    plot_rows, rd_sweep, write_plot_data, ExportHook, PlotRow, SweepOptions, SweepResult, SweepSpec,
};

use log::debug;

use crate::codec::{decode_model, encode_model, ExternalBridge};
use crate::container::{parse_stream, to_bytes, GroupRecord, StreamHeader};
use crate::cp::{cp_als, AlsConfig};
use crate::error::{Error, Result};
use crate::frame::Frame;
use crate::linalg::Matrix;
use crate::tensor::{reconstruct, DenseTensor, KruskalModel};

pub const DEFAULT_GROUP_SIZE: usize = 8;
pub const DEFAULT_FPS: f64 = crate::container::DEFAULT_FPS;

/// Ordered depth frames of uniform size and bit depth.
#[derive(Clone, Debug, PartialEq)]
pub struct DepthSequence {
    frames: Vec<Frame>,
    fps: f64,
}

impl DepthSequence {
    pub fn new(frames: Vec<Frame>, fps: f64) -> Result<Self> {
        let first = frames
            .first()
            .ok_or_else(|| Error::domain("a depth sequence needs at least one frame"))?;
        if let Some((i, f)) = frames.iter().enumerate().find(|(_, f)| {
            (f.width(), f.height(), f.bit_depth())
                != (first.width(), first.height(), first.bit_depth())
        }) {
            return Err(Error::domain(format!(
                "frame {i} is {}×{} {}-bit, frame 0 is {}×{} {}-bit",
                f.width(),
                f.height(),
                f.bit_depth(),
                first.width(),
                first.height(),
                first.bit_depth()
            )));
        }
        if !(fps > 0.0 && fps.is_finite()) {
            return Err(Error::domain(format!("fps must be positive, got {fps}")));
        }
        Ok(DepthSequence { frames, fps })
    }

    pub fn frames(&self) -> &[Frame] {
        &self.frames
    }

    pub fn width(&self) -> usize {
        self.frames[0].width()
    }

    pub fn height(&self) -> usize {
        self.frames[0].height()
    }

    pub fn bit_depth(&self) -> u8 {
        self.frames[0].bit_depth()
    }

    pub fn peak(&self) -> f64 {
        self.frames[0].peak()
    }

    pub fn fps(&self) -> f64 {
        self.fps
    }

    /// `ceil(frames / group_size)`.
    pub fn group_count(&self, group_size: usize) -> Result<usize> {
        if group_size == 0 {
            return Err(Error::domain("group size must be at least 1"));
        }
        Ok(self.frames.len().div_ceil(group_size))
    }
}

/// Order-3 tensor `H × W × g` of group `k`, values divided by the peak so
/// they lie in `[0, 1]`. Entry `(y, x, f)` is pixel `(x, y)` of frame
/// `k·G + f`. The last group may be short.
pub fn build_group_tensor(seq: &DepthSequence, k: usize, group_size: usize) -> Result<DenseTensor> {
    let groups = seq.group_count(group_size)?;
    if k >= groups {
        return Err(Error::domain(format!(
            "group {k} out of range ({groups} groups)"
        )));
    }
    let start = k * group_size;
    let frames = &seq.frames()[start..(start + group_size).min(seq.frames().len())];
    let (h, w) = (seq.height(), seq.width());
    let peak = seq.peak();
    let mut data = vec![0.0; h * w * frames.len()];
    for (f, frame) in frames.iter().enumerate() {
        for y in 0..h {
            for x in 0..w {
                data[y + h * (x + w * f)] = f64::from(frame.get(x, y)) / peak;
            }
        }
    }
    DenseTensor::new(vec![h, w, frames.len()], data)
}

/// Settings for decomposing and coding a sequence.
#[derive(Clone, Debug, PartialEq)]
pub struct EncodeConfig {
    pub rank: usize,
    pub qp: u32,
    pub group_size: usize,
    pub seed: u64,
    pub pp_enabled: bool,
    pub max_sweeps: usize,
    pub bridge: Option<ExternalBridge>,
}

impl EncodeConfig {
    pub fn new(rank: usize, qp: u32) -> Self {
        EncodeConfig {
            rank,
            qp,
            group_size: DEFAULT_GROUP_SIZE,
            seed: 0,
            pp_enabled: true,
            max_sweeps: AlsConfig::new(1).max_sweeps,
            bridge: None,
        }
    }

    fn als(&self) -> AlsConfig {
        let mut c = AlsConfig::new(self.rank);
        c.seed = self.seed;
        c.pp_enabled = self.pp_enabled;
        c.max_sweeps = self.max_sweeps;
        c
    }
}

/// Canonical rank-R model of every group (weights unfolded, signs fixed).
/// An all-zero group gets an all-zero model without running ALS.
pub fn decompose_sequence(seq: &DepthSequence, config: &EncodeConfig) -> Result<Vec<KruskalModel>> {
    let groups = seq.group_count(config.group_size)?;
    let als = config.als();
    als.validate()?;
    (0..groups)
        .map(|k| {
            let t = build_group_tensor(seq, k, config.group_size)?;
            if t.frobenius_norm() == 0.0 {
                let factors = t
                    .shape()
                    .iter()
                    .map(|&n| Matrix::zeros(n, config.rank))
                    .collect();
                return KruskalModel::with_unit_weights(factors);
            }
            let (model, report) = cp_als(&t, &als)?;
            debug!(
                "group {k}: rank {} fit {:.3e} after {} sweeps ({:?}, {} exact + {} PP MTTKRPs)",
                config.rank,
                report.final_fit_error,
                report.sweeps_run,
                report.termination,
                report.exact_mttkrp_count,
                report.pp_mttkrp_count
            );
            Ok(model)
        })
        .collect()
}

fn header_for(seq: &DepthSequence, group_size: usize) -> Result<StreamHeader> {
    let as_u32 = |v: usize, what: &str| {
        u32::try_from(v).map_err(|_| Error::domain(format!("{what} {v} too large")))
    };
    StreamHeader::new(
        as_u32(seq.width(), "width")?,
        as_u32(seq.height(), "height")?,
        as_u32(seq.frames().len(), "frame count")?,
        as_u32(group_size, "group size")?,
        u16::from(seq.bit_depth()),
    )
}

/// Codes already-decomposed group models into a container.
pub fn encode_models(
    seq: &DepthSequence,
    models: &[KruskalModel],
    group_size: usize,
    qp: u32,
    bridge: Option<&ExternalBridge>,
) -> Result<Vec<u8>> {
    let header = header_for(seq, group_size)?;
    let groups = models
        .iter()
        .map(|m| {
            Ok(GroupRecord {
                rank: u32::try_from(m.rank()).map_err(|_| Error::domain("rank too large"))?,
                qp,
                planes: encode_model(m, qp, bridge)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    to_bytes(&header, &groups)
}

/// Decompose every group and code it into container bytes.
pub fn encode_sequence(seq: &DepthSequence, config: &EncodeConfig) -> Result<Vec<u8>> {
    let models = decompose_sequence(seq, config)?;
    encode_models(
        seq,
        &models,
        config.group_size,
        config.qp,
        config.bridge.as_ref(),
    )
}

/// Decode planes, rebuild each group, clamp to `[0, 1]` and rescale to the
/// source bit depth with round-to-nearest.
pub fn decode_sequence(
    bytes: &[u8],
    bridge: Option<&ExternalBridge>,
    fps: f64,
) -> Result<DepthSequence> {
    let (header, groups) = parse_stream(bytes)?;
    if header.frames_total == 0 {
        return Err(Error::domain("stream holds no frames"));
    }
    let (w, h) = (header.frame_width as usize, header.frame_height as usize);
    let peak = header.peak();
    let bit_depth = header.bit_depth_source as u8;
    let mut frames = Vec::with_capacity(header.frames_total as usize);
    for g in &groups {
        let model = decode_model(&g.planes, bridge)?;
        let t = reconstruct(&model);
        let g_frames = t.shape()[2];
        for f in 0..g_frames {
            let mut samples = Vec::with_capacity(w * h);
            for y in 0..h {
                for x in 0..w {
                    let v = t.data()[y + h * (x + w * f)].clamp(0.0, 1.0);
                    samples.push((v * peak).round() as u16);
                }
            }
            frames.push(Frame::new(w, h, bit_depth, samples)?);
        }
    }
    DepthSequence::new(frames, fps)
}
