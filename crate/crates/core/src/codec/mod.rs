//! Factor-matrix plane codec.
//!
//! Each factor matrix becomes a 16-bit grayscale plane through a per-matrix
//! affine map. The plane is then coded with DPCM, a QP-controlled uniform
//! quantizer and an adaptive binary range coder.
//!
//! Picture geometry: one scanline per factor column, so the picture is
//! `rows` samples wide and `cols` (= rank) lines tall. Each sample is
//! predicted from its left neighbour, i.e. the previous entry of the same
//! factor column. The first sample of a scanline is predicted from the
//! reconstructed first sample of the scanline above; the very first sample
//! of the plane is predicted by 2^15. A constant plane therefore costs one
//! nonzero level in total.
//! Samples are stored column-major, the same layout as [`Matrix`].

mod bridge;
mod rangecoder;

pub use bridge::ExternalBridge;

use log::warn;

use crate::error::{Error, Result};
use crate::linalg::{FactorMatrix, Matrix};
use crate::tensor::KruskalModel;

/// Largest sample value of a 16-bit plane.
pub const SAMPLE_MAX: f64 = 65535.0;
/// Prediction for the first sample of the plane.
pub const FIRST_SAMPLE_PREDICTOR: f64 = 32768.0;
pub const MAX_QP: u32 = 51;
/// Planes larger than this are rejected as corrupt rather than allocated.
pub const MAX_PLANE_SAMPLES: usize = 1 << 28;

/// Magnitude classes beyond this cannot come from a valid encoder
/// (`|q| ≤ 65535 / qstep(0) < 2^17`).
const MAX_CLASS: usize = 24;

/// HEVC-style quantizer step `2^((qp − 4) / 6)`; qp 4 is a unit step.
pub fn qstep(qp: u32) -> Result<f64> {
    if qp > MAX_QP {
        return Err(Error::domain(format!(
            "qp must be in [0, {MAX_QP}], got {qp}"
        )));
    }
    Ok(2f64.powf((f64::from(qp) - 4.0) / 6.0))
}

/// A 16-bit plane: `value = offset + scale · sample`.
///
/// Packed planes hold integers. Planes returned by [`decode_plane`] hold the
/// quantizer's reconstruction levels, which need not be integral when
/// `qstep` is not.
#[derive(Clone, Debug, PartialEq)]
pub struct PackedPlane {
    rows: usize,
    cols: usize,
    samples: Vec<f64>,
    scale: f64,
    offset: f64,
}

impl PackedPlane {
    pub fn new(
        rows: usize,
        cols: usize,
        samples: Vec<f64>,
        scale: f64,
        offset: f64,
    ) -> Result<Self> {
        check_geometry(rows, cols)?;
        if samples.len() != rows * cols {
            return Err(Error::domain(format!(
                "{rows}×{cols} plane needs {} samples, got {}",
                rows * cols,
                samples.len()
            )));
        }
        if samples.iter().any(|s| !(0.0..=SAMPLE_MAX).contains(s)) {
            return Err(Error::domain("plane samples must lie in [0, 65535]"));
        }
        check_affine(scale, offset).map_err(Error::Domain)?;
        Ok(PackedPlane {
            rows,
            cols,
            samples,
            scale,
            offset,
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn bit_depth(&self) -> u32 {
        16
    }

    /// Column-major samples.
    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    pub fn offset(&self) -> f64 {
        self.offset
    }

    /// Back to real values through the affine map.
    pub fn unpack(&self) -> FactorMatrix {
        let data = self
            .samples
            .iter()
            .map(|s| self.offset + self.scale * s)
            .collect();
        Matrix::from_raw(self.rows, self.cols, data)
    }
}

fn check_geometry(rows: usize, cols: usize) -> Result<()> {
    if rows == 0 || cols == 0 {
        return Err(Error::domain(format!(
            "plane must be non-empty, got {rows}×{cols}"
        )));
    }
    if rows.checked_mul(cols).is_none_or(|n| n > MAX_PLANE_SAMPLES) {
        return Err(Error::domain(format!("plane {rows}×{cols} is too large")));
    }
    Ok(())
}

fn check_affine(scale: f64, offset: f64) -> std::result::Result<(), String> {
    if !(scale > 0.0 && scale.is_finite()) {
        return Err(format!(
            "plane scale must be positive and finite, got {scale}"
        ));
    }
    if !offset.is_finite() {
        return Err(format!("plane offset must be finite, got {offset}"));
    }
    Ok(())
}

/// Maps `[min, max]` of the entries affinely onto `[0, 65535]`, rounding
/// half away from zero. A constant matrix maps to samples 0 with scale 1 and
/// the constant as offset.
pub fn pack_factor(f: &FactorMatrix) -> Result<PackedPlane> {
    let values = f.as_slice();
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::domain("factor entries must be finite"));
    }
    let min = values.iter().copied().fold(f64::INFINITY, f64::min);
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let (scale, offset) = if max > min && (max - min) / SAMPLE_MAX > 0.0 {
        ((max - min) / SAMPLE_MAX, min)
    } else {
        (1.0, min)
    };
    let samples = values
        .iter()
        .map(|v| ((v - offset) / scale).round().clamp(0.0, SAMPLE_MAX))
        .collect();
    PackedPlane::new(f.rows(), f.cols(), samples, scale, offset)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PayloadKind {
    /// Built-in DPCM + range coder.
    Internal,
    /// Bitstream produced by an external encoder, embedded verbatim.
    Bridged,
}

impl PayloadKind {
    pub fn to_byte(self) -> u8 {
        match self {
            PayloadKind::Internal => 0,
            PayloadKind::Bridged => 1,
        }
    }

    pub fn from_byte(b: u8) -> Option<Self> {
        match b {
            0 => Some(PayloadKind::Internal),
            1 => Some(PayloadKind::Bridged),
            _ => None,
        }
    }
}

/// A coded plane: geometry, affine map, QP and the self-delimiting payload
/// with its CRC-32.
#[derive(Clone, Debug, PartialEq)]
pub struct QuantizedPlane {
    pub kind: PayloadKind,
    pub rows: usize,
    pub cols: usize,
    pub scale: f64,
    pub offset: f64,
    pub qp: u32,
    pub crc: u32,
    pub payload: Vec<u8>,
}

impl QuantizedPlane {
    pub fn qstep(&self) -> Result<f64> {
        qstep(self.qp)
    }

    /// Checks geometry, affine parameters and the payload checksum.
    pub fn verify(&self) -> Result<()> {
        check_geometry(self.rows, self.cols)
            .map_err(|e| Error::bitstream(0, format!("bad plane header: {e}")))?;
        check_affine(self.scale, self.offset)
            .map_err(|e| Error::bitstream(0, format!("bad plane header: {e}")))?;
        if self.qp > MAX_QP {
            return Err(Error::bitstream(0, format!("qp {} out of range", self.qp)));
        }
        if crc32fast::hash(&self.payload) != self.crc {
            return Err(Error::bitstream(
                self.payload.len().saturating_sub(1),
                "plane payload checksum mismatch",
            ));
        }
        Ok(())
    }
}

/// Adaptive contexts for one plane.
struct Contexts {
    /// Indexed by: first sample of a scanline / previous level zero /
    /// previous level nonzero.
    zero: [rangecoder::Prob; 3],
    /// Indexed by the sign of the previous level (zero, positive, negative).
    sign: [rangecoder::Prob; 3],
    /// Unary magnitude-class bins.
    class: [rangecoder::Prob; MAX_CLASS],
}

impl Contexts {
    fn new() -> Self {
        Contexts {
            zero: Default::default(),
            sign: Default::default(),
            class: [rangecoder::Prob::default(); MAX_CLASS],
        }
    }
}

fn zero_ctx(first: bool, prev: i64) -> usize {
    match (first, prev) {
        (true, _) => 0,
        (false, 0) => 1,
        _ => 2,
    }
}

fn sign_ctx(prev: i64) -> usize {
    match prev.signum() {
        0 => 0,
        1 => 1,
        _ => 2,
    }
}

fn encode_level(
    enc: &mut rangecoder::Encoder,
    ctx: &mut Contexts,
    level: i64,
    first: bool,
    prev: i64,
) {
    enc.encode_bit(&mut ctx.zero[zero_ctx(first, prev)], level == 0);
    if level == 0 {
        return;
    }
    enc.encode_bit(&mut ctx.sign[sign_ctx(prev)], level < 0);
    let m = level.unsigned_abs();
    let class = (63 - m.leading_zeros()) as usize;
    for j in 0..class {
        enc.encode_bit(&mut ctx.class[j], true);
    }
    enc.encode_bit(&mut ctx.class[class], false);
    enc.encode_direct((m - (1 << class)) as u32, class as u32);
}

fn decode_level(
    dec: &mut rangecoder::Decoder,
    ctx: &mut Contexts,
    first: bool,
    prev: i64,
) -> Result<i64> {
    if dec.decode_bit(&mut ctx.zero[zero_ctx(first, prev)])? {
        return Ok(0);
    }
    let negative = dec.decode_bit(&mut ctx.sign[sign_ctx(prev)])?;
    let mut class = 0;
    while dec.decode_bit(&mut ctx.class[class])? {
        class += 1;
        if class == MAX_CLASS {
            return Err(Error::bitstream(
                dec.position(),
                "magnitude class out of range",
            ));
        }
    }
    let m = (1i64 << class) + i64::from(dec.decode_direct(class as u32)?);
    Ok(if negative { -m } else { m })
}

/// One DPCM step: the quantized residual level and the reconstruction that
/// both encoder and decoder use as the next prediction.
fn reconstruct_sample(pred: f64, level: i64, step: f64) -> f64 {
    (pred + level as f64 * step).clamp(0.0, SAMPLE_MAX)
}

/// Residual level for sample `x`: round to nearest with ties toward zero.
/// Ties go toward zero because integer samples hit exact ties whenever the
/// step is an even integer; rounding those away from zero overshoots, and
/// the next sample of a flat run then ties the other way, turning the run
/// into alternating ±1 levels instead of zeros.
///
/// A sample on a range end (0 or 65535) instead takes the neighbouring level
/// whose reconstruction overshoots and clamps onto it exactly. That choice
/// is the nearest reconstruction actually reachable, is invisible to the
/// decoder, and keeps constant planes (all samples 0, unit scale) exact at
/// any QP.
fn quantize_level(x: f64, pred: f64, step: f64) -> i64 {
    let scaled = (x - pred) / step;
    let magnitude = (scaled.abs() - 0.5).ceil().max(0.0);
    let level = (magnitude.copysign(scaled)) as i64;
    let exact_end = |l: i64| reconstruct_sample(pred, l, step) == x;
    if (x == 0.0 || x == SAMPLE_MAX) && !exact_end(level) {
        let toward = if x == 0.0 { level - 1 } else { level + 1 };
        if exact_end(toward) {
            return toward;
        }
    }
    level
}

/// DPCM + uniform quantization (round to nearest, ties toward zero) + range
/// coding.
pub fn encode_plane(p: &PackedPlane, qp: u32) -> Result<QuantizedPlane> {
    let step = qstep(qp)?;
    let mut enc = rangecoder::Encoder::new();
    let mut ctx = Contexts::new();
    let mut line_start = FIRST_SAMPLE_PREDICTOR;
    for line in p.samples.chunks_exact(p.rows) {
        let mut pred = line_start;
        let mut prev = 0i64;
        for (i, &x) in line.iter().enumerate() {
            let level = quantize_level(x, pred, step);
            encode_level(&mut enc, &mut ctx, level, i == 0, prev);
            pred = reconstruct_sample(pred, level, step);
            if i == 0 {
                line_start = pred;
            }
            prev = level;
        }
    }
    let payload = enc.finish();
    Ok(QuantizedPlane {
        kind: PayloadKind::Internal,
        rows: p.rows,
        cols: p.cols,
        scale: p.scale,
        offset: p.offset,
        qp,
        crc: crc32fast::hash(&payload),
        payload,
    })
}

/// Inverse of [`encode_plane`]. The payload must be consumed exactly.
pub fn decode_plane(q: &QuantizedPlane) -> Result<PackedPlane> {
    if q.kind != PayloadKind::Internal {
        return Err(Error::Contract(
            "bridged plane payloads need the external decoder".into(),
        ));
    }
    q.verify()?;
    let step = q.qstep()?;
    let mut dec = rangecoder::Decoder::new(&q.payload)?;
    let mut ctx = Contexts::new();
    let mut samples = Vec::with_capacity(q.rows * q.cols);
    let mut line_start = FIRST_SAMPLE_PREDICTOR;
    for _ in 0..q.cols {
        let mut pred = line_start;
        let mut prev = 0i64;
        for i in 0..q.rows {
            let level = decode_level(&mut dec, &mut ctx, i == 0, prev)?;
            pred = reconstruct_sample(pred, level, step);
            if i == 0 {
                line_start = pred;
            }
            samples.push(pred);
            prev = level;
        }
    }
    if dec.position() != q.payload.len() {
        return Err(Error::bitstream(
            dec.position(),
            format!(
                "plane payload has {} trailing bytes",
                q.payload.len() - dec.position()
            ),
        ));
    }
    PackedPlane::new(q.rows, q.cols, samples, q.scale, q.offset)
}

/// Codes every factor of a canonical model. The weights are folded into the
/// last (temporal) factor first, so the planes alone describe the model.
///
/// With a bridge, planes go through the external encoder; if it fails and
/// the bridge allows fallback, the internal coder is used instead.
pub fn encode_model(
    model: &KruskalModel,
    qp: u32,
    bridge: Option<&ExternalBridge>,
) -> Result<Vec<QuantizedPlane>> {
    qstep(qp)?;
    let folded = model.fold_weights_into(model.order() - 1);
    folded
        .factors()
        .iter()
        .map(|f| {
            let packed = pack_factor(f)?;
            match bridge {
                None => encode_plane(&packed, qp),
                Some(b) => match b.encode_plane(&packed, qp) {
                    Ok(q) => Ok(q),
                    Err(e) if b.fallback_internal => {
                        warn!("external encoder failed, using internal coder: {e}");
                        encode_plane(&packed, qp)
                    }
                    Err(e) => Err(e),
                },
            }
        })
        .collect()
}

/// Rebuilds a unit-weight model from its planes.
pub fn decode_model(
    planes: &[QuantizedPlane],
    bridge: Option<&ExternalBridge>,
) -> Result<KruskalModel> {
    let factors = planes
        .iter()
        .map(|q| {
            let plane = match (q.kind, bridge) {
                (PayloadKind::Internal, _) => decode_plane(q)?,
                (PayloadKind::Bridged, Some(b)) => b.decode_plane(q)?,
                (PayloadKind::Bridged, None) => {
                    return Err(Error::Contract(
                        "stream contains bridged planes but no external decoder is configured"
                            .into(),
                    ))
                }
            };
            Ok(plane.unpack())
        })
        .collect::<Result<Vec<_>>>()?;
    if factors
        .first()
        .is_some_and(|f| factors.iter().any(|g| g.cols() != f.cols()))
    {
        return Err(Error::bitstream(0, "planes of one group disagree on rank"));
    }
    KruskalModel::with_unit_weights(factors)
}
