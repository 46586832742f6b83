//! Binary parameter container.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! "ADVF"            4 bytes magic
//! version           u32
//! entry count       u32
//! per entry:
//!   name length     u32, then UTF-8 name bytes
//!   rank            u32
//!   dims            rank × u64
//!   data            product(dims) × f32 (IEEE-754)
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::{ParameterSet, Result, Tensor, TensorError};

pub const CONTAINER_MAGIC: &[u8; 4] = b"ADVF";
pub const CONTAINER_VERSION: u32 = 1;

pub fn write_params_to<W: Write>(mut w: W, params: &ParameterSet) -> Result<()> {
    w.write_all(CONTAINER_MAGIC)?;
    w.write_all(&CONTAINER_VERSION.to_le_bytes())?;
    w.write_all(&(params.len() as u32).to_le_bytes())?;
    for p in params.iter() {
        let name = p.name.as_bytes();
        w.write_all(&(name.len() as u32).to_le_bytes())?;
        w.write_all(name)?;
        let shape = p.value.shape();
        w.write_all(&(shape.len() as u32).to_le_bytes())?;
        for &d in shape {
            w.write_all(&(d as u64).to_le_bytes())?;
        }
        for &v in p.value.data() {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn write_params(path: &Path, params: &ParameterSet) -> Result<()> {
    write_params_to(BufWriter::new(File::create(path)?), params)
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64<R: Read>(r: &mut R) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

pub fn read_params_from<R: Read>(mut r: R) -> Result<ParameterSet> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != CONTAINER_MAGIC {
        return Err(TensorError::Format(format!("bad magic {magic:?}")));
    }
    let version = read_u32(&mut r)?;
    if version != CONTAINER_VERSION {
        return Err(TensorError::Format(format!("unsupported version {version}")));
    }
    let count = read_u32(&mut r)?;
    let mut set = ParameterSet::new();
    for _ in 0..count {
        let len = read_u32(&mut r)? as usize;
        let mut name = vec![0u8; len];
        r.read_exact(&mut name)?;
        let name = String::from_utf8(name).map_err(|e| TensorError::Format(e.to_string()))?;
        let rank = read_u32(&mut r)? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(read_u64(&mut r)? as usize);
        }
        let n: usize = shape.iter().product();
        let mut raw = vec![0u8; n * 4];
        r.read_exact(&mut raw)?;
        let data = raw.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect();
        set.insert(name, Tensor::new(shape, data)?)?;
    }
    Ok(set)
}

pub fn read_params(path: &Path) -> Result<ParameterSet> {
    read_params_from(BufReader::new(File::open(path)?))
}
