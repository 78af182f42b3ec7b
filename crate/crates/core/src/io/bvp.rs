//! `BVP1`: magic, u32 point count N, u32 extra feature count K, then N
//! records of 3 + K f32 values, all little-endian.

use std::path::Path;

use super::{put_f32s, put_u32, Reader};
use crate::error::{Error, Result};
use crate::pillars::PointCloud;

pub const MAGIC: &[u8; 4] = b"BVP1";

pub fn encode_points(cloud: &PointCloud) -> Result<Vec<u8>> {
    let mut out = Vec::with_capacity(12 + cloud.data().len() * 4);
    out.extend_from_slice(MAGIC);
    put_u32(&mut out, cloud.len())?;
    put_u32(&mut out, cloud.extra())?;
    put_f32s(&mut out, cloud.data())?;
    Ok(out)
}

pub fn decode_points(bytes: &[u8]) -> Result<PointCloud> {
    let mut r = Reader::new(bytes);
    r.magic(MAGIC)?;
    let n = r.u32("point count")? as usize;
    let k = r.u32("feature count")? as usize;
    let len = n
        .checked_mul(k + 3)
        .ok_or_else(|| Error::parse(4, "point cloud size overflows"))?;
    let data = r.f32s(len, "point")?;
    r.finish()?;
    PointCloud::from_vec(k, data)
}

pub fn read_points(path: &Path) -> Result<PointCloud> {
    decode_points(&super::read_bytes(path)?).map_err(|e| e.with_path(path))
}

pub fn write_points(path: &Path, cloud: &PointCloud) -> Result<()> {
    super::write_bytes(path, &encode_points(cloud)?)
}
