//! Bridge to an external picture encoder/decoder (e.g. an HEVC reference
//! encoder) driven by command templates.
//!
//! A plane is exported as a single 16-bit little-endian grayscale picture,
//! `rows` wide and `cols` tall, padded to even dimensions by edge
//! replication. A JSON sidecar describes the picture. Template tokens:
//! `{input}`, `{output}`, `{qp}`, `{width}`, `{height}`, `{frames}`. Width
//! and height are the padded dimensions. The template runs under `sh -c`.
//!
//! Decoding runs the decode template on the embedded bitstream. It must
//! write the padded picture back in the same raw format.

use std::path::Path;
use std::process::Command;

use serde::Serialize;

use super::{PackedPlane, PayloadKind, QuantizedPlane, SAMPLE_MAX};
use crate::error::{Error, Result};

pub const ENCODER_ENV: &str = "TDVC_EXTERNAL_ENCODER";
pub const DECODER_ENV: &str = "TDVC_EXTERNAL_DECODER";
pub const FALLBACK_ENV: &str = "TDVC_EXTERNAL_FALLBACK";

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ExternalBridge {
    pub encode_command: String,
    pub decode_command: Option<String>,
    /// Use the internal coder when the external encoder fails.
    pub fallback_internal: bool,
}

#[derive(Serialize)]
struct Sidecar {
    format: &'static str,
    width: usize,
    height: usize,
    padded_width: usize,
    padded_height: usize,
    frames: usize,
    bit_depth: u32,
}

impl ExternalBridge {
    pub fn new(encode_command: impl Into<String>) -> Self {
        ExternalBridge {
            encode_command: encode_command.into(),
            decode_command: None,
            fallback_internal: false,
        }
    }

    /// Reads the templates from `TDVC_EXTERNAL_ENCODER` /
    /// `TDVC_EXTERNAL_DECODER`; `TDVC_EXTERNAL_FALLBACK=1` enables fallback.
    /// `None` when no encoder template is set.
    pub fn from_env() -> Option<Self> {
        let encode_command = std::env::var(ENCODER_ENV)
            .ok()
            .filter(|s| !s.trim().is_empty())?;
        Some(ExternalBridge {
            encode_command,
            decode_command: std::env::var(DECODER_ENV)
                .ok()
                .filter(|s| !s.trim().is_empty()),
            fallback_internal: std::env::var(FALLBACK_ENV).is_ok_and(|v| v == "1"),
        })
    }

    pub fn encode_plane(&self, p: &PackedPlane, qp: u32) -> Result<QuantizedPlane> {
        super::qstep(qp)?;
        let dir = tempfile::tempdir()?;
        let input = dir.path().join("plane.raw");
        let output = dir.path().join("plane.bin");
        let (pw, ph) = padded(p.rows(), p.cols());
        std::fs::write(&input, picture_bytes(p))?;
        let sidecar = Sidecar {
            format: "gray16le",
            width: p.rows(),
            height: p.cols(),
            padded_width: pw,
            padded_height: ph,
            frames: 1,
            bit_depth: 16,
        };
        std::fs::write(
            dir.path().join("plane.json"),
            serde_json::to_vec_pretty(&sidecar).expect("sidecar serializes"),
        )?;
        run(&self.encode_command, &input, &output, qp, pw, ph)?;
        let payload = std::fs::read(&output).map_err(|e| Error::ExternalTool {
            command: self.encode_command.clone(),
            status: "no output".into(),
            diagnostics: format!("reading {}: {e}", output.display()),
        })?;
        Ok(QuantizedPlane {
            kind: PayloadKind::Bridged,
            rows: p.rows(),
            cols: p.cols(),
            scale: p.scale(),
            offset: p.offset(),
            qp,
            crc: crc32fast::hash(&payload),
            payload,
        })
    }

    pub fn decode_plane(&self, q: &QuantizedPlane) -> Result<PackedPlane> {
        q.verify()?;
        let command = self
            .decode_command
            .as_ref()
            .ok_or_else(|| Error::ExternalTool {
                command: String::new(),
                status: "not configured".into(),
                diagnostics: format!("bridged plane needs a decoder template ({DECODER_ENV})"),
            })?;
        let dir = tempfile::tempdir()?;
        let input = dir.path().join("plane.bin");
        let output = dir.path().join("plane.raw");
        std::fs::write(&input, &q.payload)?;
        let (pw, ph) = padded(q.rows, q.cols);
        run(command, &input, &output, q.qp, pw, ph)?;
        let bytes = std::fs::read(&output)?;
        if bytes.len() != 2 * pw * ph {
            return Err(Error::ExternalTool {
                command: command.clone(),
                status: "bad output".into(),
                diagnostics: format!(
                    "expected {} bytes of 16-bit {pw}×{ph} picture, got {}",
                    2 * pw * ph,
                    bytes.len()
                ),
            });
        }
        let mut samples = Vec::with_capacity(q.rows * q.cols);
        for y in 0..q.cols {
            for x in 0..q.rows {
                let i = 2 * (y * pw + x);
                samples.push(f64::from(u16::from_le_bytes([bytes[i], bytes[i + 1]])));
            }
        }
        PackedPlane::new(q.rows, q.cols, samples, q.scale, q.offset)
    }
}

fn padded(width: usize, height: usize) -> (usize, usize) {
    (width + width % 2, height + height % 2)
}

/// Row-major 16-bit LE picture, `rows` wide, edge-replicated to even size.
fn picture_bytes(p: &PackedPlane) -> Vec<u8> {
    let (w, h) = (p.rows(), p.cols());
    let (pw, ph) = padded(w, h);
    let mut out = Vec::with_capacity(2 * pw * ph);
    for y in 0..ph {
        for x in 0..pw {
            let s = p.samples()[y.min(h - 1) * w + x.min(w - 1)];
            out.extend_from_slice(&(s.round().clamp(0.0, SAMPLE_MAX) as u16).to_le_bytes());
        }
    }
    out
}

fn shell_quote(path: &Path) -> String {
    format!("'{}'", path.display().to_string().replace('\'', r"'\''"))
}

fn run(
    template: &str,
    input: &Path,
    output: &Path,
    qp: u32,
    width: usize,
    height: usize,
) -> Result<()> {
    let command = template
        .replace("{input}", &shell_quote(input))
        .replace("{output}", &shell_quote(output))
        .replace("{qp}", &qp.to_string())
        .replace("{width}", &width.to_string())
        .replace("{height}", &height.to_string())
        .replace("{frames}", "1");
    let result = Command::new("sh")
        .arg("-c")
        .arg(&command)
        .output()
        .map_err(|e| Error::ExternalTool {
            command: command.clone(),
            status: "spawn failed".into(),
            diagnostics: e.to_string(),
        })?;
    if !result.status.success() {
        let mut diagnostics = String::from_utf8_lossy(&result.stderr).into_owned();
        diagnostics.push_str(&String::from_utf8_lossy(&result.stdout));
        return Err(Error::ExternalTool {
            command,
            status: result.status.to_string(),
            diagnostics: diagnostics.trim().to_string(),
        });
    }
    Ok(())
}
