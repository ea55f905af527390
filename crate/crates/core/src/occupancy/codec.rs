//! OCC4 binary container.
//!
//! ```text
//! "OCC4" | u32 version=1 | f32 voxel_size | 3×f32 origin | 3×u32 dims | u32 frame_count
//! per frame: u32 timestamp | u64 voxel_count | voxel_count × (u16 ix, u16 iy, u16 iz, u16 label)
//! ```
//! All fields little-endian; voxels sorted by (iz, iy, ix). Grid geometry is
//! stored in single precision, so decoding yields the f32-rounded spec.

use std::path::Path;

use super::{GridSpec, OccupancyFrame, OccupancyGrid4D, Voxel};
use crate::error::{Error, Result};
use crate::io::{read_bytes, write_bytes};

pub const OCC4_MAGIC: &[u8; 4] = b"OCC4";
pub const OCC4_VERSION: u32 = 1;
const VOXEL_BYTES: u64 = 8;

pub fn encode_occ4(grid: &OccupancyGrid4D) -> Vec<u8> {
    let voxel_total: usize = grid.frames.iter().map(OccupancyFrame::len).sum();
    let mut out = Vec::with_capacity(40 + grid.frames.len() * 12 + voxel_total * 8);
    let spec = &grid.spec;
    out.extend_from_slice(OCC4_MAGIC);
    out.extend_from_slice(&OCC4_VERSION.to_le_bytes());
    out.extend_from_slice(&(spec.voxel_size as f32).to_le_bytes());
    for o in spec.origin {
        out.extend_from_slice(&(o as f32).to_le_bytes());
    }
    for d in spec.dims {
        out.extend_from_slice(&d.to_le_bytes());
    }
    out.extend_from_slice(&(grid.frames.len() as u32).to_le_bytes());
    for (frame, ts) in grid.frames.iter().zip(&grid.timestamps) {
        out.extend_from_slice(&ts.to_le_bytes());
        out.extend_from_slice(&(frame.len() as u64).to_le_bytes());
        for v in frame.voxels() {
            for x in [v.ix, v.iy, v.iz, v.label] {
                out.extend_from_slice(&x.to_le_bytes());
            }
        }
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take<const N: usize>(&mut self, what: &str) -> Result<[u8; N]> {
        let end = self.pos + N;
        if end > self.bytes.len() {
            return Err(Error::format(
                self.pos as u64,
                format!("truncated while reading {what}"),
            ));
        }
        let mut buf = [0u8; N];
        buf.copy_from_slice(&self.bytes[self.pos..end]);
        self.pos = end;
        Ok(buf)
    }

    fn u16(&mut self, what: &str) -> Result<u16> {
        self.take::<2>(what).map(u16::from_le_bytes)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        self.take::<4>(what).map(u32::from_le_bytes)
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        self.take::<8>(what).map(u64::from_le_bytes)
    }

    fn f32(&mut self, what: &str) -> Result<f32> {
        self.take::<4>(what).map(f32::from_le_bytes)
    }
}

pub fn decode_occ4(bytes: &[u8]) -> Result<OccupancyGrid4D> {
    let mut r = Reader { bytes, pos: 0 };
    if &r.take::<4>("magic")? != OCC4_MAGIC {
        return Err(Error::format(0, "bad magic, expected \"OCC4\""));
    }
    let version = r.u32("version")?;
    if version != OCC4_VERSION {
        return Err(Error::format(4, format!("unsupported version {version}")));
    }
    let header_at = r.pos as u64;
    let voxel_size = r.f32("voxel_size")? as f64;
    let origin = [
        r.f32("origin")? as f64,
        r.f32("origin")? as f64,
        r.f32("origin")? as f64,
    ];
    let dims = [r.u32("dims")?, r.u32("dims")?, r.u32("dims")?];
    let spec = GridSpec::from_dims(origin, dims, voxel_size)
        .map_err(|e| Error::format(header_at, format!("invalid grid header: {e}")))?;
    let frame_count = r.u32("frame_count")?;
    if frame_count == 0 {
        return Err(Error::format(r.pos as u64 - 4, "frame_count must be at least 1"));
    }

    let mut frames = Vec::new();
    let mut timestamps = Vec::new();
    for f in 0..frame_count {
        timestamps.push(r.u32("frame timestamp")?);
        let count_at = r.pos as u64;
        let count = r.u64("voxel count")?;
        let remaining = (bytes.len() - r.pos) as u64;
        if count > remaining / VOXEL_BYTES {
            // report where the payload runs out
            return Err(Error::format(
                r.pos as u64 + remaining - remaining % VOXEL_BYTES,
                format!("frame {f}: voxel count {count} (at byte {count_at}) exceeds payload"),
            ));
        }
        let mut voxels = Vec::with_capacity(count as usize);
        let mut prev_key = None;
        for _ in 0..count {
            let at = r.pos as u64;
            let v = Voxel {
                ix: r.u16("voxel")?,
                iy: r.u16("voxel")?,
                iz: r.u16("voxel")?,
                label: r.u16("voxel")?,
            };
            if v.ix as u32 >= dims[0] || v.iy as u32 >= dims[1] || v.iz as u32 >= dims[2] {
                return Err(Error::format(
                    at,
                    format!("frame {f}: voxel {:?} outside dims {dims:?}", v.index()),
                ));
            }
            if prev_key.is_some_and(|k| k >= v.key()) {
                return Err(Error::format(
                    at,
                    format!("frame {f}: voxel {:?} duplicated or out of order", v.index()),
                ));
            }
            prev_key = Some(v.key());
            voxels.push(v);
        }
        frames.push(OccupancyFrame { spec, voxels });
    }
    if r.pos != bytes.len() {
        return Err(Error::format(r.pos as u64, "trailing bytes after last frame"));
    }
    OccupancyGrid4D::new(spec, frames, timestamps)
}

pub fn write_occ4(path: &Path, grid: &OccupancyGrid4D) -> Result<()> {
    write_bytes(path, &encode_occ4(grid))
}

pub fn read_occ4(path: &Path) -> Result<OccupancyGrid4D> {
    decode_occ4(&read_bytes(path)?)
}
