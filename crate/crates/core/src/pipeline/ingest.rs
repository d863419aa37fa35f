//! Reading and writing depth frames.
//!
//! Supported inputs:
//! - binary PGM (`P5`, maxval 255 or 65535, 16-bit big-endian);
//! - headerless raw frames (`*.raw`) next to a `sequence.json` sidecar
//!   `{"width": W, "height": H, "bit_depth": 8|16}`. 16-bit raw samples are
//!   little-endian.

use std::fs;
use std::io::Read;
use std::path::{Path, PathBuf};

use image::DynamicImage;
use serde::Deserialize;

use super::DepthSequence;
use crate::error::{Error, Result};
use crate::frame::Frame;

pub const RAW_SIDECAR: &str = "sequence.json";

#[derive(Debug, Deserialize)]
struct RawDescriptor {
    width: usize,
    height: usize,
    bit_depth: u8,
}

fn has_extension(p: &Path, ext: &str) -> bool {
    p.extension()
        .and_then(|e| e.to_str())
        .is_some_and(|e| e.eq_ignore_ascii_case(ext))
}

/// Frame files of a directory (`*.pgm`, `*.raw`), sorted lexicographically.
pub fn list_frames(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut paths = Vec::new();
    for entry in fs::read_dir(dir)? {
        let path = entry?.path();
        if path.is_file() && (has_extension(&path, "pgm") || has_extension(&path, "raw")) {
            paths.push(path);
        }
    }
    paths.sort();
    if paths.is_empty() {
        return Err(Error::domain(format!(
            "no .pgm or .raw frames in {}",
            dir.display()
        )));
    }
    Ok(paths)
}

/// Reads a directory of frames, or an explicit list of frame files (sorted
/// lexicographically before reading).
pub fn ingest(inputs: &[PathBuf], fps: f64) -> Result<DepthSequence> {
    let paths = match inputs {
        [dir] if dir.is_dir() => list_frames(dir)?,
        _ => {
            let mut p = inputs.to_vec();
            p.sort();
            p
        }
    };
    if paths.is_empty() {
        return Err(Error::domain("no input frames given"));
    }
    let mut descriptor: Option<RawDescriptor> = None;
    let mut frames = Vec::with_capacity(paths.len());
    for path in &paths {
        let frame = if has_extension(path, "raw") {
            if descriptor.is_none() {
                descriptor = Some(read_descriptor(path)?);
            }
            read_raw(path, descriptor.as_ref().expect("just set"))?
        } else {
            read_pgm(path)?
        };
        if let Some(first) = frames.first() {
            check_same_geometry(first, &frame, path)?;
        }
        frames.push(frame);
    }
    DepthSequence::new(frames, fps)
}

fn check_same_geometry(first: &Frame, frame: &Frame, path: &Path) -> Result<()> {
    if (first.width(), first.height()) != (frame.width(), frame.height()) {
        return Err(Error::domain(format!(
            "{} is {}×{}, earlier frames are {}×{}",
            path.display(),
            frame.width(),
            frame.height(),
            first.width(),
            first.height()
        )));
    }
    if first.bit_depth() != frame.bit_depth() {
        return Err(Error::domain(format!(
            "{} is {}-bit, earlier frames are {}-bit",
            path.display(),
            frame.bit_depth(),
            first.bit_depth()
        )));
    }
    Ok(())
}

fn read_descriptor(raw_path: &Path) -> Result<RawDescriptor> {
    let sidecar = raw_path
        .parent()
        .unwrap_or_else(|| Path::new("."))
        .join(RAW_SIDECAR);
    let text = fs::read_to_string(&sidecar).map_err(|e| Error::UnsupportedFormat {
        path: raw_path.to_path_buf(),
        reason: format!("raw frames need {}: {e}", sidecar.display()),
    })?;
    let d: RawDescriptor = serde_json::from_str(&text).map_err(|e| Error::UnsupportedFormat {
        path: sidecar.clone(),
        reason: format!("invalid raw descriptor: {e}"),
    })?;
    if d.width == 0 || d.height == 0 || !matches!(d.bit_depth, 8 | 16) {
        return Err(Error::UnsupportedFormat {
            path: sidecar,
            reason: "raw descriptor needs positive width/height and bit_depth 8 or 16".into(),
        });
    }
    Ok(d)
}

fn read_raw(path: &Path, d: &RawDescriptor) -> Result<Frame> {
    let bytes = fs::read(path)?;
    let bps = if d.bit_depth == 8 { 1 } else { 2 };
    let expected = d.width * d.height * bps;
    if bytes.len() != expected {
        return Err(Error::UnsupportedFormat {
            path: path.to_path_buf(),
            reason: format!(
                "expected {expected} bytes for a {}×{} {}-bit frame, found {}",
                d.width,
                d.height,
                d.bit_depth,
                bytes.len()
            ),
        });
    }
    let samples = if bps == 1 {
        bytes.iter().map(|&b| u16::from(b)).collect()
    } else {
        bytes
            .chunks_exact(2)
            .map(|c| u16::from_le_bytes([c[0], c[1]]))
            .collect()
    };
    Frame::new(d.width, d.height, d.bit_depth, samples)
}

fn read_pgm(path: &Path) -> Result<Frame> {
    let unsupported = |reason: String| Error::UnsupportedFormat {
        path: path.to_path_buf(),
        reason,
    };
    let mut magic = [0u8; 2];
    fs::File::open(path)?
        .read_exact(&mut magic)
        .map_err(|e| unsupported(format!("cannot read header: {e}")))?;
    if &magic != b"P5" {
        return Err(unsupported(format!(
            "only binary grayscale PGM (P5) is supported, found {:?}",
            String::from_utf8_lossy(&magic)
        )));
    }
    let reader = image::ImageReader::open(path)?
        .with_guessed_format()
        .map_err(Error::Io)?;
    let img = reader
        .decode()
        .map_err(|e| unsupported(format!("PGM decode failed: {e}")))?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    match img {
        DynamicImage::ImageLuma8(buf) => {
            Frame::new(w, h, 8, buf.into_raw().into_iter().map(u16::from).collect())
        }
        DynamicImage::ImageLuma16(buf) => Frame::new(w, h, 16, buf.into_raw()),
        other => Err(unsupported(format!(
            "unsupported PGM sample layout {:?}",
            other.color()
        ))),
    }
}

/// Writes one frame as binary PGM (maxval 255 or 65535; 16-bit samples
/// big-endian).
pub fn write_pgm(frame: &Frame, path: &Path) -> Result<()> {
    let mut bytes = format!(
        "P5\n{} {}\n{}\n",
        frame.width(),
        frame.height(),
        frame.peak()
    )
    .into_bytes();
    if frame.bit_depth() == 8 {
        bytes.extend(frame.samples().iter().map(|&s| s as u8));
    } else {
        bytes.extend(frame.samples().iter().flat_map(|s| s.to_be_bytes()));
    }
    fs::write(path, bytes)?;
    Ok(())
}

/// Writes `frame_0000.pgm`, `frame_0001.pgm`, … into `dir` (created if
/// needed).
pub fn write_sequence(seq: &DepthSequence, dir: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir)?;
    seq.frames()
        .iter()
        .enumerate()
        .map(|(i, f)| {
            let path = dir.join(format!("frame_{i:04}.pgm"));
            write_pgm(f, &path)?;
            Ok(path)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pgm_round_trip_8_and_16_bit() {
        let dir = tempfile::tempdir().unwrap();
        for depth in [8u8, 16] {
            let peak = if depth == 8 { 255 } else { 65535 };
            let samples: Vec<u16> = (0..64 * 48)
                .map(|i| (i * 2713 % (peak + 1)) as u16)
                .collect();
            let f = Frame::new(64, 48, depth, samples).unwrap();
            let p = dir.path().join(format!("f{depth}.pgm"));
            write_pgm(&f, &p).unwrap();
            assert_eq!(read_pgm(&p).unwrap(), f);
        }
    }

    #[test]
    fn p6_is_rejected_with_the_file_name() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("color.pgm");
        let mut bytes = b"P6\n2 1\n255\n".to_vec();
        bytes.extend_from_slice(&[1, 2, 3, 4, 5, 6]);
        fs::write(&p, bytes).unwrap();
        let err = read_pgm(&p).unwrap_err();
        assert!(matches!(err, Error::UnsupportedFormat { .. }));
        assert!(err.to_string().contains("color.pgm"));
    }

    #[test]
    fn raw_frames_with_sidecar() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(
            dir.path().join(RAW_SIDECAR),
            r#"{"width": 3, "height": 2, "bit_depth": 16}"#,
        )
        .unwrap();
        let samples: Vec<u16> = vec![1, 2, 3, 400, 5000, 65535];
        let bytes: Vec<u8> = samples.iter().flat_map(|s| s.to_le_bytes()).collect();
        fs::write(dir.path().join("b.raw"), &bytes).unwrap();
        fs::write(dir.path().join("a.raw"), &bytes).unwrap();
        let seq = ingest(&[dir.path().to_path_buf()], 15.0).unwrap();
        assert_eq!(seq.frames().len(), 2);
        assert_eq!(seq.frames()[0].samples(), samples.as_slice());
        fs::write(dir.path().join("c.raw"), &bytes[..4]).unwrap();
        assert!(ingest(&[dir.path().to_path_buf()], 15.0).is_err());
    }
}
