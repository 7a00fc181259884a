//! `DSQT` raw tensor files: magic `DSQT`, u32 version, u32 rank, `rank` u32
//! extents, then little-endian f32 values. All integers little-endian.

use std::io::{Read, Write};

use super::{Element, Tensor};
use crate::error::{Error, Result};

pub const DSQT_MAGIC: [u8; 4] = *b"DSQT";
pub const DSQT_VERSION: u32 = 1;

pub fn write_dsqt<T: Element>(mut w: impl Write, t: &Tensor<T>) -> Result<()> {
    let mut buf = Vec::with_capacity(12 + 4 * t.dims().len() + 4 * t.len());
    buf.extend_from_slice(&DSQT_MAGIC);
    buf.extend_from_slice(&DSQT_VERSION.to_le_bytes());
    buf.extend_from_slice(&(t.dims().len() as u32).to_le_bytes());
    for &d in t.dims() {
        let d =
            u32::try_from(d).map_err(|_| Error::InvalidShape(format!("extent {d} exceeds u32")))?;
        buf.extend_from_slice(&d.to_le_bytes());
    }
    for &v in t.data() {
        buf.extend_from_slice(&(v.widen() as f32).to_le_bytes());
    }
    w.write_all(&buf)?;
    Ok(())
}

fn read_u32(r: &mut impl Read) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

pub fn read_dsqt<T: Element>(mut r: impl Read) -> Result<Tensor<T>> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if magic != DSQT_MAGIC {
        return Err(Error::Data(format!("bad DSQT magic {magic:?}")));
    }
    let version = read_u32(&mut r)?;
    if version != DSQT_VERSION {
        return Err(Error::Data(format!("unsupported DSQT version {version}")));
    }
    let rank = read_u32(&mut r)? as usize;
    if rank == 0 || rank > 16 {
        return Err(Error::Data(format!("implausible DSQT rank {rank}")));
    }
    let dims = (0..rank)
        .map(|_| read_u32(&mut r).map(|d| d as usize))
        .collect::<Result<Vec<_>>>()?;
    let shape = super::Shape::new(dims)?;
    let mut bytes = vec![0u8; shape.numel() * 4];
    r.read_exact(&mut bytes)?;
    let data = bytes
        .chunks_exact(4)
        .map(|c| T::cast(f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64))
        .collect();
    Tensor::from_shape(shape, data)
}
