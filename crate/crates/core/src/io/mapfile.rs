//! Binary map file, little-endian throughout:
//!
//! ```text
//! offset  size        field
//! 0       8           magic "LERNRMAP"
//! 8       4   u32     version (1)
//! 12      4   u32     size_M
//! 16      8   f64     resolution (m)
//! 24      4   u32     d_rnr
//! 28      4   u32     d_clip
//! 32      128 f64×16  origin, row-major
//! 160     M·M·C·4     cells f32, row-major (y, x, channel)
//! ...     M·M·4       weight f32
//! ...     M·M·4       count u32
//! ...     M·M         occupancy u8 (0 unknown, 1 free, 2 obstacle)
//! ```

use std::io::{Read, Write};

use crate::error::{Error, Result};
use crate::geometry::{GridSpec, RotoTranslation};
use crate::map::{FeatureMap, Occupancy};

pub const MAGIC: &[u8; 8] = b"LERNRMAP";
pub const VERSION: u32 = 1;
pub const HEADER_LEN: usize = 160;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MapFileHeader {
    pub version: u32,
    pub size: u32,
    pub resolution: f64,
    pub d_rnr: u32,
    pub d_clip: u32,
    pub origin: [f64; 16],
}

impl MapFileHeader {
    pub fn of(map: &FeatureMap) -> Self {
        MapFileHeader {
            version: VERSION,
            size: map.size() as u32,
            resolution: map.spec().resolution,
            d_rnr: map.d_rnr() as u32,
            d_clip: map.d_clip() as u32,
            origin: map.spec().origin.to_row_major(),
        }
    }

    pub fn to_bytes(&self) -> [u8; HEADER_LEN] {
        let mut out = [0u8; HEADER_LEN];
        out[0..8].copy_from_slice(MAGIC);
        out[8..12].copy_from_slice(&self.version.to_le_bytes());
        out[12..16].copy_from_slice(&self.size.to_le_bytes());
        out[16..24].copy_from_slice(&self.resolution.to_le_bytes());
        out[24..28].copy_from_slice(&self.d_rnr.to_le_bytes());
        out[28..32].copy_from_slice(&self.d_clip.to_le_bytes());
        for (i, v) in self.origin.iter().enumerate() {
            out[32 + i * 8..40 + i * 8].copy_from_slice(&v.to_le_bytes());
        }
        out
    }

    fn body_len(&self) -> u64 {
        let n = self.size as u64 * self.size as u64;
        let c = self.d_rnr as u64 + self.d_clip as u64;
        n * c * 4 + n * 4 + n * 4 + n
    }
}

/// Cursor over an in-memory file that reports the failing offset.
struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::Format {
                offset: self.bytes.len() as u64,
                message: format!(
                    "truncated while reading {what}: needed {n} bytes at offset {}, {} available",
                    self.pos,
                    self.bytes.len() - self.pos
                ),
            });
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn f64(&mut self, what: &str) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }

    fn fail(&self, at: usize, message: impl Into<String>) -> Error {
        Error::Format {
            offset: at as u64,
            message: message.into(),
        }
    }
}

fn put_f32s(out: &mut Vec<u8>, values: &[f32]) {
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

pub fn to_bytes(map: &FeatureMap) -> Vec<u8> {
    let header = MapFileHeader::of(map);
    let mut out = Vec::with_capacity(HEADER_LEN + header.body_len() as usize);
    out.extend_from_slice(&header.to_bytes());
    put_f32s(&mut out, map.raw_cells());
    put_f32s(&mut out, map.weights());
    for c in map.counts() {
        out.extend_from_slice(&c.to_le_bytes());
    }
    out.extend(map.occupancy_cells().iter().map(|&o| o as u8));
    out
}

/// Writes the map and returns the number of bytes written.
pub fn save_map<W: Write>(map: &FeatureMap, mut sink: W) -> Result<u64> {
    let bytes = to_bytes(map);
    sink.write_all(&bytes)?;
    sink.flush()?;
    Ok(bytes.len() as u64)
}

pub fn load_map<R: Read>(mut source: R) -> Result<FeatureMap> {
    let mut bytes = Vec::new();
    source.read_to_end(&mut bytes)?;
    from_bytes(&bytes)
}

pub fn read_header(bytes: &[u8]) -> Result<MapFileHeader> {
    let mut cur = Cursor { bytes, pos: 0 };
    let magic = cur.take(8, "magic")?;
    if magic != MAGIC {
        return Err(cur.fail(0, "bad magic"));
    }
    let version = cur.u32("version")?;
    if version != VERSION {
        return Err(cur.fail(8, format!("unsupported version {version}")));
    }
    let size = cur.u32("size")?;
    let resolution = cur.f64("resolution")?;
    let d_rnr = cur.u32("d_rnr")?;
    let d_clip = cur.u32("d_clip")?;
    let mut origin = [0.0; 16];
    for v in origin.iter_mut() {
        *v = cur.f64("origin")?;
    }
    if size == 0 {
        return Err(cur.fail(12, "grid size must be positive"));
    }
    if !(resolution.is_finite() && resolution > 0.0) {
        return Err(cur.fail(16, "resolution must be positive"));
    }
    if d_rnr == 0 || d_clip == 0 {
        return Err(cur.fail(24, "feature dimensions must be positive"));
    }
    Ok(MapFileHeader {
        version,
        size,
        resolution,
        d_rnr,
        d_clip,
        origin,
    })
}

pub fn from_bytes(bytes: &[u8]) -> Result<FeatureMap> {
    let header = read_header(bytes)?;
    let origin = RotoTranslation::from_row_major(&header.origin).map_err(|e| Error::Format {
        offset: 32,
        message: format!("origin is not a rigid transform: {e}"),
    })?;
    let spec = GridSpec {
        size: header.size as usize,
        resolution: header.resolution,
        origin,
    };
    let n = spec.cell_count();
    let channels = header.d_rnr as usize + header.d_clip as usize;
    let mut cur = Cursor {
        bytes,
        pos: HEADER_LEN,
    };
    let f32s = |raw: &[u8]| -> Vec<f32> {
        raw.chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect()
    };
    let cells = f32s(cur.take(n * channels * 4, "cells")?);
    let weight = f32s(cur.take(n * 4, "weights")?);
    let count = cur
        .take(n * 4, "counts")?
        .chunks_exact(4)
        .map(|c| u32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    let occ_start = cur.pos;
    let occupancy = cur
        .take(n, "occupancy")?
        .iter()
        .enumerate()
        .map(|(i, &b)| {
            Occupancy::from_u8(b)
                .ok_or_else(|| cur.fail(occ_start + i, format!("invalid occupancy byte {b}")))
        })
        .collect::<Result<Vec<_>>>()?;
    if cur.pos != bytes.len() {
        return Err(cur.fail(cur.pos, "trailing bytes after occupancy"));
    }
    FeatureMap::from_parts(
        spec,
        header.d_rnr as usize,
        header.d_clip as usize,
        cells,
        weight,
        count,
        occupancy,
    )
}
