//! (rank × QP) rate-distortion sweeps.
//!
//! Each rank is decomposed once; every QP of that rank re-codes the same
//! models. Cells run on the rayon pool and are merged in (rank, qp) order,
//! so the output does not depend on scheduling.

use std::io::Write;
use std::path::PathBuf;

use log::warn;
use rayon::prelude::*;
use serde::Serialize;

use super::{decode_sequence, decompose_sequence, encode_models, DepthSequence, EncodeConfig};
use crate::codec::{ExternalBridge, MAX_QP};
use crate::container::stream_bitrate_kbps;
use crate::cp::AlsConfig;
use crate::error::{Error, Result};
use crate::metrics::{psnr, ssim, RdCurve, SweepRow};
use crate::tensor::KruskalModel;

#[derive(Clone, Debug, PartialEq)]
pub struct SweepSpec {
    pub ranks: Vec<usize>,
    pub qps: Vec<u32>,
    pub group_size: usize,
    pub seed: u64,
    pub pp_enabled: bool,
    pub max_sweeps: usize,
}

impl Default for SweepSpec {
    fn default() -> Self {
        SweepSpec {
            ranks: vec![1, 5, 10, 15, 20],
            qps: vec![2, 6, 10, 14, 20, 26, 38],
            group_size: super::DEFAULT_GROUP_SIZE,
            seed: 0,
            pp_enabled: true,
            max_sweeps: AlsConfig::new(1).max_sweeps,
        }
    }
}

impl SweepSpec {
    pub fn validate(&self) -> Result<()> {
        if self.ranks.is_empty() || self.qps.is_empty() {
            return Err(Error::domain("sweep needs at least one rank and one qp"));
        }
        if self.ranks.contains(&0) {
            return Err(Error::domain("ranks must be at least 1"));
        }
        if let Some(q) = self.qps.iter().find(|&&q| q > MAX_QP) {
            return Err(Error::domain(format!("qp {q} outside [0, {MAX_QP}]")));
        }
        if self.group_size == 0 || self.max_sweeps == 0 {
            return Err(Error::domain(
                "group size and max sweeps must be at least 1",
            ));
        }
        Ok(())
    }

    fn encode_config(&self, rank: usize, qp: u32, bridge: Option<ExternalBridge>) -> EncodeConfig {
        EncodeConfig {
            rank,
            qp,
            group_size: self.group_size,
            seed: self.seed,
            pp_enabled: self.pp_enabled,
            max_sweeps: self.max_sweeps,
            bridge,
        }
    }
}

/// Called with `(rank, qp, decoded sequence)` for every successful cell,
/// e.g. to hand decoded depth to a view-synthesis tool.
pub type ExportHook<'a> = &'a (dyn Fn(usize, u32, &DepthSequence) + Sync);

#[derive(Clone, Default)]
pub struct SweepOptions<'a> {
    pub scene: String,
    pub camera: String,
    /// When set, every cell's container is written as
    /// `<scene>_cam<camera>_r<rank>_q<qp>.tdvc`.
    pub containers_dir: Option<PathBuf>,
    pub bridge: Option<ExternalBridge>,
    pub export: Option<ExportHook<'a>>,
}

#[derive(Clone, Debug)]
pub struct SweepResult {
    /// One row per (rank, qp), rank-major.
    pub rows: Vec<SweepRow>,
    /// One curve per rank, in the order of `SweepSpec::ranks`; ranks with fewer than four
    /// successful cells carry the reason instead.
    pub curves: Vec<(usize, std::result::Result<RdCurve, String>)>,
}

struct CellOutcome {
    bytes: u64,
    kbps: f64,
    psnr: f64,
    ssim: Option<f64>,
}

fn mean(values: impl Iterator<Item = Result<f64>>) -> Result<f64> {
    let mut sum = 0.0;
    let mut n = 0usize;
    for v in values {
        sum += v?;
        n += 1;
    }
    Ok(sum / n as f64)
}

fn run_cell(
    seq: &DepthSequence,
    models: &[KruskalModel],
    rank: usize,
    qp: u32,
    spec: &SweepSpec,
    options: &SweepOptions,
) -> Result<CellOutcome> {
    let bridge = options.bridge.as_ref();
    let bytes = encode_models(seq, models, spec.group_size, qp, bridge)?;
    if let Some(dir) = &options.containers_dir {
        let name = format!("{}_cam{}_r{rank}_q{qp}.tdvc", options.scene, options.camera);
        std::fs::write(dir.join(name), &bytes)?;
    }
    let decoded = decode_sequence(&bytes, bridge, seq.fps())?;
    if let Some(hook) = options.export {
        hook(rank, qp, &decoded);
    }
    let pairs = || seq.frames().iter().zip(decoded.frames());
    let psnr_db = mean(pairs().map(|(a, b)| psnr(a, b)))?;
    let ssim_mean = match mean(pairs().map(|(a, b)| ssim(a, b))) {
        Ok(v) => Some(v),
        Err(e) => {
            warn!("rank {rank} qp {qp}: SSIM unavailable: {e}");
            None
        }
    };
    let frames = u32::try_from(seq.frames().len()).map_err(|_| Error::domain("too many frames"))?;
    Ok(CellOutcome {
        bytes: bytes.len() as u64,
        kbps: stream_bitrate_kbps(bytes.len() as u64, frames, seq.fps())?,
        psnr: psnr_db,
        ssim: ssim_mean,
    })
}

/// Encodes, decodes and measures every (rank, qp) cell. A failing cell is
/// logged and recorded with empty measurements; the sweep continues.
pub fn rd_sweep(
    seq: &DepthSequence,
    spec: &SweepSpec,
    options: &SweepOptions,
) -> Result<SweepResult> {
    spec.validate()?;
    if let Some(dir) = &options.containers_dir {
        std::fs::create_dir_all(dir)?;
    }
    let decompositions: Vec<Result<Vec<KruskalModel>>> = spec
        .ranks
        .par_iter()
        .map(|&rank| decompose_sequence(seq, &spec.encode_config(rank, 0, None)))
        .collect();

    let cells: Vec<(usize, usize)> = (0..spec.ranks.len())
        .flat_map(|r| (0..spec.qps.len()).map(move |q| (r, q)))
        .collect();
    let rows: Vec<SweepRow> = cells
        .par_iter()
        .map(|&(ri, qi)| {
            let (rank, qp) = (spec.ranks[ri], spec.qps[qi]);
            let outcome = match &decompositions[ri] {
                Ok(models) => run_cell(seq, models, rank, qp, spec, options),
                Err(e) => Err(Error::Convergence(format!("decomposition failed: {e}"))),
            };
            let mut row = SweepRow {
                scene: options.scene.clone(),
                camera: options.camera.clone(),
                rank: Some(rank as u32),
                qp,
                bytes: None,
                bitrate_kbps: None,
                psnr_db: None,
                ssim: None,
            };
            match outcome {
                Ok(c) => {
                    row.bytes = Some(c.bytes);
                    row.bitrate_kbps = Some(c.kbps);
                    row.psnr_db = Some(c.psnr);
                    row.ssim = c.ssim;
                }
                Err(e) => warn!("cell rank {rank} qp {qp} failed [{}]: {e}", e.category()),
            }
            row
        })
        .collect();

    let curves = spec
        .ranks
        .iter()
        .map(|&rank| {
            let points = rows
                .iter()
                .filter(|r| r.rank == Some(rank as u32))
                .filter_map(|r| Some((r.bitrate_kbps?, r.psnr_db?)))
                .collect();
            (rank, RdCurve::new(points).map_err(|e| e.to_string()))
        })
        .collect();
    Ok(SweepResult { rows, curves })
}

/// One point of the RD plot (x: kbps; y: PSNR and SSIM).
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PlotRow {
    pub rank: u32,
    pub qp: u32,
    pub bitrate_kbps: f64,
    pub psnr_db: f64,
    pub ssim: Option<f64>,
}

/// Successful cells as plot points, grouped by rank and sorted by bitrate.
pub fn plot_rows(rows: &[SweepRow]) -> Vec<PlotRow> {
    let mut out: Vec<PlotRow> = rows
        .iter()
        .filter_map(|r| {
            Some(PlotRow {
                rank: r.rank?,
                qp: r.qp,
                bitrate_kbps: r.bitrate_kbps?,
                psnr_db: r.psnr_db?,
                ssim: r.ssim,
            })
        })
        .collect();
    out.sort_by(|a, b| {
        a.rank
            .cmp(&b.rank)
            .then(a.bitrate_kbps.total_cmp(&b.bitrate_kbps))
    });
    out
}

/// Plot data as CSV: `rank,qp,bitrate_kbps,psnr_db,ssim`.
pub fn write_plot_data(rows: &[SweepRow], sink: impl Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(sink);
    for p in plot_rows(rows) {
        w.serialize(p)
            .map_err(|e| Error::Io(std::io::Error::other(e)))?;
    }
    w.flush()?;
    Ok(())
}
