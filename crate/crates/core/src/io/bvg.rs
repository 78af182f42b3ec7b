//! `BVG1`: magic, u32 height, width, channels, then f32 values row-major,
//! channel-last, all little-endian.

use std::path::Path;

use super::{put_f32s, put_u32, Reader};
use crate::error::{Error, Result};
use crate::numerics::Grid2D;

pub const MAGIC: &[u8; 4] = b"BVG1";

pub fn encode_grid(grid: &Grid2D) -> Result<Vec<u8>> {
    let mut out = Vec::with_capacity(16 + grid.data().len() * 4);
    out.extend_from_slice(MAGIC);
    put_u32(&mut out, grid.height())?;
    put_u32(&mut out, grid.width())?;
    put_u32(&mut out, grid.channels())?;
    put_f32s(&mut out, grid.data())?;
    Ok(out)
}

pub fn decode_grid(bytes: &[u8]) -> Result<Grid2D> {
    let mut r = Reader::new(bytes);
    r.magic(MAGIC)?;
    let h = r.u32("height")? as usize;
    let w = r.u32("width")? as usize;
    let c = r.u32("channels")? as usize;
    let n = h
        .checked_mul(w)
        .and_then(|x| x.checked_mul(c))
        .ok_or_else(|| Error::parse(4, "grid size overflows"))?;
    let data = r.f32s(n, "grid")?;
    r.finish()?;
    Grid2D::from_vec(h, w, c, data)
}

pub fn read_grid(path: &Path) -> Result<Grid2D> {
    decode_grid(&super::read_bytes(path)?).map_err(|e| e.with_path(path))
}

pub fn write_grid(path: &Path, grid: &Grid2D) -> Result<()> {
    super::write_bytes(path, &encode_grid(grid)?)
}
