//! `.tdvc` stream container.
//!
//! All integers are little-endian and fixed width; there are no varints.
//!
//! ```text
//! header (32 bytes)
//!   0  magic "TDVC"
//!   4  u32 version (1)
//!   8  u32 frame width
//!  12  u32 frame height
//!  16  u32 total frames
//!  20  u32 group size G
//!  24  u16 source bit depth (8 or 16)
//!  26  u16 reserved (0)
//!  28  u32 group count = ceil(frames / G)
//! per group (12 bytes + planes)
//!   u32 rank, u32 qp, u32 plane count (3)
//!   per plane (36 bytes + payload)
//!     u8 kind (0 internal, 1 bridged), 3 reserved bytes
//!     u32 rows, u32 cols, f64 scale, f64 offset, u32 crc32, u32 length
//!     payload bytes
//! ```
//!
//! Plane `n` of group `k` has `rows` equal to the height, width and frame
//! count of the group in that order, and `cols` equal to the rank.

use std::io::{Read, Write};

use crate::codec::{PayloadKind, QuantizedPlane, MAX_QP};
use crate::error::{Error, Result};

pub const MAGIC: [u8; 4] = *b"TDVC";
pub const VERSION: u32 = 1;
pub const HEADER_BYTES: usize = 32;
pub const GROUP_RECORD_BYTES: usize = 12;
pub const PLANE_HEADER_BYTES: usize = 36;
pub const PLANES_PER_GROUP: usize = 3;
pub const DEFAULT_FPS: f64 = 15.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct StreamHeader {
    pub frame_width: u32,
    pub frame_height: u32,
    pub frames_total: u32,
    pub group_size: u32,
    pub bit_depth_source: u16,
    pub group_count: u32,
}

impl StreamHeader {
    /// Header for a sequence; the group count is derived.
    pub fn new(
        frame_width: u32,
        frame_height: u32,
        frames_total: u32,
        group_size: u32,
        bit_depth_source: u16,
    ) -> Result<Self> {
        if group_size == 0 {
            return Err(Error::domain("group size must be at least 1"));
        }
        let h = StreamHeader {
            frame_width,
            frame_height,
            frames_total,
            group_size,
            bit_depth_source,
            group_count: frames_total.div_ceil(group_size),
        };
        h.validate().map_err(Error::Domain)?;
        Ok(h)
    }

    fn validate(&self) -> std::result::Result<(), String> {
        if self.frame_width == 0 || self.frame_height == 0 || self.frames_total == 0 {
            return Err("frame dimensions and frame count must be at least 1".into());
        }
        if self.group_size == 0 {
            return Err("group size must be at least 1".into());
        }
        if !matches!(self.bit_depth_source, 8 | 16) {
            return Err(format!(
                "bit depth must be 8 or 16, got {}",
                self.bit_depth_source
            ));
        }
        if self.group_count != self.frames_total.div_ceil(self.group_size) {
            return Err(format!(
                "group count {} does not match ceil({} / {})",
                self.group_count, self.frames_total, self.group_size
            ));
        }
        Ok(())
    }

    /// Frames in group `k` (the last group may be short).
    pub fn group_frames(&self, k: u32) -> u32 {
        let start = k * self.group_size;
        self.group_size.min(self.frames_total - start)
    }

    /// Largest sample value of the source bit depth.
    pub fn peak(&self) -> f64 {
        if self.bit_depth_source == 8 {
            255.0
        } else {
            65535.0
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GroupRecord {
    pub rank: u32,
    pub qp: u32,
    pub planes: Vec<QuantizedPlane>,
}

impl GroupRecord {
    fn validate(&self, header: &StreamHeader, k: u32) -> std::result::Result<(), String> {
        if self.rank == 0 {
            return Err("rank must be at least 1".into());
        }
        if self.qp > MAX_QP {
            return Err(format!("qp {} out of range", self.qp));
        }
        if self.planes.len() != PLANES_PER_GROUP {
            return Err(format!(
                "group {k} has {} planes, expected {PLANES_PER_GROUP}",
                self.planes.len()
            ));
        }
        let rows = [
            header.frame_height as usize,
            header.frame_width as usize,
            header.group_frames(k) as usize,
        ];
        for (n, (p, &r)) in self.planes.iter().zip(&rows).enumerate() {
            if p.rows != r || p.cols != self.rank as usize {
                return Err(format!(
                    "group {k} plane {n} is {}×{}, expected {r}×{}",
                    p.rows, p.cols, self.rank
                ));
            }
            if p.qp != self.qp {
                return Err(format!(
                    "group {k} plane {n} qp {} differs from group qp",
                    p.qp
                ));
            }
        }
        Ok(())
    }
}

/// Exact serialized size.
pub fn stream_size(groups: &[GroupRecord]) -> usize {
    HEADER_BYTES
        + groups
            .iter()
            .map(|g| {
                GROUP_RECORD_BYTES
                    + g.planes
                        .iter()
                        .map(|p| PLANE_HEADER_BYTES + p.payload.len())
                        .sum::<usize>()
            })
            .sum::<usize>()
}

fn check_consistent(header: &StreamHeader, groups: &[GroupRecord]) -> Result<()> {
    header.validate().map_err(Error::Domain)?;
    if groups.len() != header.group_count as usize {
        return Err(Error::domain(format!(
            "header declares {} groups, got {}",
            header.group_count,
            groups.len()
        )));
    }
    for (k, g) in groups.iter().enumerate() {
        g.validate(header, k as u32).map_err(Error::Domain)?;
    }
    Ok(())
}

fn to_u32(v: usize, what: &str) -> Result<u32> {
    u32::try_from(v).map_err(|_| Error::domain(format!("{what} {v} does not fit in 32 bits")))
}

/// Serializes the stream. Identical inputs give identical bytes.
pub fn to_bytes(header: &StreamHeader, groups: &[GroupRecord]) -> Result<Vec<u8>> {
    check_consistent(header, groups)?;
    let mut out = Vec::with_capacity(stream_size(groups));
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&header.frame_width.to_le_bytes());
    out.extend_from_slice(&header.frame_height.to_le_bytes());
    out.extend_from_slice(&header.frames_total.to_le_bytes());
    out.extend_from_slice(&header.group_size.to_le_bytes());
    out.extend_from_slice(&header.bit_depth_source.to_le_bytes());
    out.extend_from_slice(&0u16.to_le_bytes());
    out.extend_from_slice(&header.group_count.to_le_bytes());
    for g in groups {
        out.extend_from_slice(&g.rank.to_le_bytes());
        out.extend_from_slice(&g.qp.to_le_bytes());
        out.extend_from_slice(&to_u32(g.planes.len(), "plane count")?.to_le_bytes());
        for p in &g.planes {
            out.push(p.kind.to_byte());
            out.extend_from_slice(&[0; 3]);
            out.extend_from_slice(&to_u32(p.rows, "plane rows")?.to_le_bytes());
            out.extend_from_slice(&to_u32(p.cols, "plane cols")?.to_le_bytes());
            out.extend_from_slice(&p.scale.to_le_bytes());
            out.extend_from_slice(&p.offset.to_le_bytes());
            out.extend_from_slice(&p.crc.to_le_bytes());
            out.extend_from_slice(&to_u32(p.payload.len(), "payload length")?.to_le_bytes());
            out.extend_from_slice(&p.payload);
        }
    }
    debug_assert_eq!(out.len(), stream_size(groups));
    Ok(out)
}

/// Writes the stream and returns the byte count.
pub fn write_stream(
    header: &StreamHeader,
    groups: &[GroupRecord],
    sink: &mut impl Write,
) -> Result<u64> {
    let bytes = to_bytes(header, groups)?;
    sink.write_all(&bytes)?;
    Ok(bytes.len() as u64)
}

/// Reads a whole stream from `source` and parses it.
pub fn read_stream(source: &mut impl Read) -> Result<(StreamHeader, Vec<GroupRecord>)> {
    let mut bytes = Vec::new();
    source.read_to_end(&mut bytes)?;
    parse_stream(&bytes)
}

struct Cursor<'a> {
    data: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.data.len())
            .ok_or_else(|| {
                Error::bitstream(self.data.len(), format!("stream truncated in {what}"))
            })?;
        let s = &self.data[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u16(&mut self, what: &str) -> Result<u16> {
        Ok(u16::from_le_bytes(
            self.take(2, what)?.try_into().expect("2 bytes"),
        ))
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(
            self.take(4, what)?.try_into().expect("4 bytes"),
        ))
    }

    fn f64(&mut self, what: &str) -> Result<f64> {
        Ok(f64::from_le_bytes(
            self.take(8, what)?.try_into().expect("8 bytes"),
        ))
    }
}

/// Parses and validates a stream held in memory.
pub fn parse_stream(bytes: &[u8]) -> Result<(StreamHeader, Vec<GroupRecord>)> {
    let mut c = Cursor {
        data: bytes,
        pos: 0,
    };
    let magic = c.take(4, "magic")?;
    if magic != MAGIC {
        return Err(Error::Format(format!(
            "not a tdvc stream (magic {:02x?})",
            magic
        )));
    }
    let version = c.u32("header")?;
    if version != VERSION {
        return Err(Error::UnsupportedVersion(version));
    }
    let header = StreamHeader {
        frame_width: c.u32("header")?,
        frame_height: c.u32("header")?,
        frames_total: c.u32("header")?,
        group_size: c.u32("header")?,
        bit_depth_source: c.u16("header")?,
        group_count: {
            let reserved = c.u16("header")?;
            if reserved != 0 {
                return Err(Error::bitstream(26, "reserved header field is not zero"));
            }
            c.u32("header")?
        },
    };
    header
        .validate()
        .map_err(|e| Error::bitstream(0, format!("invalid header: {e}")))?;

    let mut groups = Vec::new();
    for k in 0..header.group_count {
        let start = c.pos;
        let rank = c.u32("group record")?;
        let qp = c.u32("group record")?;
        let plane_count = c.u32("group record")? as usize;
        if plane_count != PLANES_PER_GROUP {
            return Err(Error::bitstream(
                start + 8,
                format!("group {k} declares {plane_count} planes, expected {PLANES_PER_GROUP}"),
            ));
        }
        let mut planes = Vec::with_capacity(PLANES_PER_GROUP);
        for _ in 0..plane_count {
            let plane_start = c.pos;
            let kind_byte = c.take(1, "plane header")?[0];
            let kind = PayloadKind::from_byte(kind_byte).ok_or_else(|| {
                Error::bitstream(plane_start, format!("unknown payload kind {kind_byte}"))
            })?;
            if c.take(3, "plane header")? != [0; 3] {
                return Err(Error::bitstream(
                    plane_start + 1,
                    "reserved plane bytes are not zero",
                ));
            }
            let rows = c.u32("plane header")? as usize;
            let cols = c.u32("plane header")? as usize;
            let scale = c.f64("plane header")?;
            let offset = c.f64("plane header")?;
            let crc = c.u32("plane header")?;
            let len = c.u32("plane header")? as usize;
            let payload_start = c.pos;
            let payload = c.take(len, "plane payload")?.to_vec();
            let plane = QuantizedPlane {
                kind,
                rows,
                cols,
                scale,
                offset,
                qp,
                crc,
                payload,
            };
            plane.verify().map_err(|e| match e {
                Error::Bitstream { offset, reason } => Error::bitstream(
                    if reason.contains("checksum") {
                        payload_start + offset
                    } else {
                        plane_start
                    },
                    reason,
                ),
                other => other,
            })?;
            planes.push(plane);
        }
        let group = GroupRecord { rank, qp, planes };
        group
            .validate(&header, k)
            .map_err(|e| Error::bitstream(start, e))?;
        groups.push(group);
    }
    if c.pos != bytes.len() {
        return Err(Error::bitstream(
            c.pos,
            format!(
                "{} trailing bytes after the last group",
                bytes.len() - c.pos
            ),
        ));
    }
    Ok((header, groups))
}

/// `bytes · 8 / 1000 / (frames / fps)`.
pub fn stream_bitrate_kbps(byte_count: u64, frames_total: u32, fps: f64) -> Result<f64> {
    if frames_total == 0 {
        return Err(Error::domain("frame count must be positive"));
    }
    if !(fps > 0.0 && fps.is_finite()) {
        return Err(Error::domain(format!("fps must be positive, got {fps}")));
    }
    Ok(byte_count as f64 * 8.0 / 1000.0 / (f64::from(frames_total) / fps))
}
