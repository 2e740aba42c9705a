//! Tensor container file format.
//!
//! Layout per record: magic `MEWT`, version `u16 = 1` (LE), dtype `u8`
//! (0 = f32, 1 = f64, 255 = JSON manifest), ndim `u8`, then `ndim` x `u64`
//! LE dims, then the raw LE payload. Records concatenate back to back; by
//! convention the trailing record is a JSON manifest (dtype 255, rank 1,
//! dim = byte length) naming the preceding records.

use crate::error::{Error, Result};
use crate::tensor::{numel, Tensor};
use std::io::{Read, Write};
use std::path::Path;

pub const MAGIC: &[u8; 4] = b"MEWT";
pub const VERSION: u16 = 1;
pub const DTYPE_F32: u8 = 0;
pub const DTYPE_F64: u8 = 1;
pub const DTYPE_MANIFEST: u8 = 255;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DType {
    F32,
    F64,
}

#[derive(Debug)]
pub struct Container {
    pub tensors: Vec<Tensor>,
    pub manifest: Option<serde_json::Value>,
}

fn write_header(out: &mut impl Write, dtype: u8, dims: &[u64]) -> Result<()> {
    out.write_all(MAGIC)?;
    out.write_all(&VERSION.to_le_bytes())?;
    out.write_all(&[dtype, dims.len() as u8])?;
    for d in dims {
        out.write_all(&d.to_le_bytes())?;
    }
    Ok(())
}

pub fn write_tensor(out: &mut impl Write, t: &Tensor, dtype: DType) -> Result<()> {
    let dims: Vec<u64> = t.shape().iter().map(|&d| d as u64).collect();
    match dtype {
        DType::F64 => {
            write_header(out, DTYPE_F64, &dims)?;
            for v in t.data() {
                out.write_all(&v.to_le_bytes())?;
            }
        }
        DType::F32 => {
            write_header(out, DTYPE_F32, &dims)?;
            for v in t.data() {
                out.write_all(&(*v as f32).to_le_bytes())?;
            }
        }
    }
    Ok(())
}

pub fn write_manifest(out: &mut impl Write, manifest: &serde_json::Value) -> Result<()> {
    let bytes = serde_json::to_vec(manifest)?;
    write_header(out, DTYPE_MANIFEST, &[bytes.len() as u64])?;
    out.write_all(&bytes)?;
    Ok(())
}

/// Write tensors followed by a manifest record.
pub fn save_container(
    path: &Path,
    tensors: &[(&Tensor, DType)],
    manifest: &serde_json::Value,
) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    for (t, d) in tensors {
        write_tensor(&mut f, t, *d)?;
    }
    write_manifest(&mut f, manifest)?;
    f.flush()?;
    Ok(())
}

fn read_exact(r: &mut impl Read, buf: &mut [u8]) -> Result<()> {
    r.read_exact(buf)
        .map_err(|_| Error::Format("truncated container record".into()))
}

pub fn load_container(path: &Path) -> Result<Container> {
    let bytes = std::fs::read(path)?;
    let mut r = &bytes[..];
    let mut tensors = Vec::new();
    let mut manifest = None;
    while !r.is_empty() {
        let mut magic = [0u8; 4];
        read_exact(&mut r, &mut magic)?;
        if &magic != MAGIC {
            return Err(Error::Format("bad magic bytes".into()));
        }
        let mut v = [0u8; 2];
        read_exact(&mut r, &mut v)?;
        if u16::from_le_bytes(v) != VERSION {
            return Err(Error::Format("unsupported container version".into()));
        }
        let mut db = [0u8; 2];
        read_exact(&mut r, &mut db)?;
        let (dtype, ndim) = (db[0], db[1] as usize);
        let mut dims = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            let mut d = [0u8; 8];
            read_exact(&mut r, &mut d)?;
            dims.push(u64::from_le_bytes(d) as usize);
        }
        match dtype {
            DTYPE_F64 => {
                let n = numel(&dims);
                let mut data = Vec::with_capacity(n);
                for _ in 0..n {
                    let mut b = [0u8; 8];
                    read_exact(&mut r, &mut b)?;
                    data.push(f64::from_le_bytes(b));
                }
                tensors.push(Tensor::new(dims, data));
            }
            DTYPE_F32 => {
                let n = numel(&dims);
                let mut data = Vec::with_capacity(n);
                for _ in 0..n {
                    let mut b = [0u8; 4];
                    read_exact(&mut r, &mut b)?;
                    data.push(f32::from_le_bytes(b) as f64);
                }
                tensors.push(Tensor::new(dims, data));
            }
            DTYPE_MANIFEST => {
                if dims.len() != 1 {
                    return Err(Error::Format("manifest record must be rank 1".into()));
                }
                let mut data = vec![0u8; dims[0]];
                read_exact(&mut r, &mut data)?;
                manifest = Some(serde_json::from_slice(&data)?);
            }
            other => return Err(Error::Format(format!("unknown dtype {other}"))),
        }
    }
    Ok(Container { tensors, manifest })
}
