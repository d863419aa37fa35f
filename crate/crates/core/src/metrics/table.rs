//! Sweep CSV rows: `scene,camera,rank,qp,bytes,bitrate_kbps,psnr_db,ssim`.
//!
//! Empty `rank` marks an anchor codec without a rank (e.g. a plain video
//! encoder). Empty measurement fields mark a failed grid cell.

use std::collections::BTreeMap;
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use super::RdCurve;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub scene: String,
    pub camera: String,
    pub rank: Option<u32>,
    pub qp: u32,
    pub bytes: Option<u64>,
    pub bitrate_kbps: Option<f64>,
    pub psnr_db: Option<f64>,
    pub ssim: Option<f64>,
}

/// Identifies one RD curve inside a CSV.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub struct CurveKey {
    pub scene: String,
    pub camera: String,
    pub rank: Option<u32>,
}

impl std::fmt::Display for CurveKey {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self.rank {
            Some(r) => write!(f, "{} camera {} rank {r}", self.scene, self.camera),
            None => write!(f, "{} camera {}", self.scene, self.camera),
        }
    }
}

fn csv_error(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::Format(format!("CSV: {other:?}")),
    }
}

pub fn write_rows(rows: &[SweepRow], sink: impl Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(sink);
    for r in rows {
        w.serialize(r).map_err(csv_error)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_rows(source: impl Read) -> Result<Vec<SweepRow>> {
    csv::Reader::from_reader(source)
        .deserialize()
        .map(|r| r.map_err(csv_error))
        .collect()
}

/// Groups complete rows into RD curves of `(bitrate_kbps, psnr_db)`.
/// Rows with a missing bitrate or PSNR are skipped; groups that do not form
/// a valid curve carry the reason.
pub fn curves_by_key(rows: &[SweepRow]) -> BTreeMap<CurveKey, Result<RdCurve>> {
    let mut points: BTreeMap<CurveKey, Vec<(f64, f64)>> = BTreeMap::new();
    for r in rows {
        let key = CurveKey {
            scene: r.scene.clone(),
            camera: r.camera.clone(),
            rank: r.rank,
        };
        let entry = points.entry(key).or_default();
        if let (Some(rate), Some(psnr)) = (r.bitrate_kbps, r.psnr_db) {
            entry.push((rate, psnr));
        }
    }
    points
        .into_iter()
        .map(|(k, p)| (k, RdCurve::new(p)))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_fields_round_trip_as_none() {
        let rows = vec![
            SweepRow {
                scene: "s".into(),
                camera: "0".into(),
                rank: Some(5),
                qp: 2,
                bytes: Some(100),
                bitrate_kbps: Some(1.5),
                psnr_db: Some(40.25),
                ssim: Some(0.99),
            },
            SweepRow {
                scene: "s".into(),
                camera: "0".into(),
                rank: None,
                qp: 6,
                bytes: None,
                bitrate_kbps: None,
                psnr_db: None,
                ssim: None,
            },
        ];
        let mut buf = Vec::new();
        write_rows(&rows, &mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("scene,camera,rank,qp,bytes,bitrate_kbps,psnr_db,ssim\n"));
        assert!(text.contains("s,0,,6,,,,"));
        assert_eq!(read_rows(buf.as_slice()).unwrap(), rows);
    }
}
