//! File formats: BVG1 grids, BVP1 point clouds, VectorMap JSON and SVG figures.

pub mod bvg;
pub mod bvp;
pub mod json;
pub mod svg;
pub mod vecmap;

use std::path::Path;

use crate::error::{Error, Result};

pub use bvg::{decode_grid, encode_grid, read_grid, write_grid};
pub use bvp::{decode_points, encode_points, read_points, write_points};
pub use vecmap::{decode_vector_map, encode_vector_map, read_vector_map, write_vector_map};

pub fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| Error::io(path, e))
}

pub fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

pub fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Little-endian cursor that reports the byte offset of the first short read.
pub(crate) struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    pub(crate) fn new(bytes: &'a [u8]) -> Self {
        Self { bytes, pos: 0 }
    }

    pub(crate) fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::parse(
                self.bytes.len(),
                format!("truncated input: expected {n} bytes of {what} at byte {}", self.pos),
            ));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    pub(crate) fn magic(&mut self, magic: &[u8; 4]) -> Result<()> {
        let got = self.take(4, "magic")?;
        if got != magic {
            return Err(Error::parse(
                0,
                format!("bad magic {:?}, expected {:?}", String::from_utf8_lossy(got), String::from_utf8_lossy(magic)),
            ));
        }
        Ok(())
    }

    pub(crate) fn u32(&mut self, what: &str) -> Result<u32> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    pub(crate) fn f32s(&mut self, count: usize, what: &str) -> Result<Vec<f64>> {
        let start = self.pos;
        let bytes = self.take(count.checked_mul(4).ok_or_else(|| Error::parse(start, "size overflow"))?, what)?;
        bytes
            .chunks_exact(4)
            .enumerate()
            .map(|(i, b)| {
                let v = f32::from_le_bytes([b[0], b[1], b[2], b[3]]);
                if v.is_finite() {
                    Ok(v as f64)
                } else {
                    Err(Error::parse(start + 4 * i, format!("non-finite {what} value")))
                }
            })
            .collect()
    }

    pub(crate) fn finish(&self) -> Result<()> {
        if self.pos != self.bytes.len() {
            return Err(Error::parse(
                self.pos,
                format!("{} trailing bytes", self.bytes.len() - self.pos),
            ));
        }
        Ok(())
    }
}

/// Appends `values` as little-endian f32, failing on values outside f32 range.
pub(crate) fn put_f32s(out: &mut Vec<u8>, values: &[f64]) -> Result<()> {
    out.reserve(values.len() * 4);
    for &v in values {
        let f = v as f32;
        if !f.is_finite() {
            return Err(Error::NonFinite(format!("{v} does not fit in f32")));
        }
        out.extend_from_slice(&f.to_le_bytes());
    }
    Ok(())
}

pub(crate) fn put_u32(out: &mut Vec<u8>, v: usize) -> Result<()> {
    let v = u32::try_from(v).map_err(|_| Error::InvalidArgument(format!("{v} exceeds u32")))?;
    out.extend_from_slice(&v.to_le_bytes());
    Ok(())
}
