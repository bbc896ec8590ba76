//! Binary parameter checkpoints.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! b"EPSMCKPT"  u32 version  u32 json_len  json_len bytes of architecture JSON
//! u64 n_params   n_params   x f32
//! u64 n_running  n_running  x f32
//! ```

use std::io::{Read, Write};
use std::path::Path;

use super::arch::Architecture;
use super::classifier::Classifier;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

const MAGIC: &[u8; 8] = b"EPSMCKPT";
const VERSION: u32 = 1;

pub fn encode<T: Scalar>(model: &Classifier<T>) -> Vec<u8> {
    let arch = serde_json::to_vec(model.architecture()).expect("architecture serializes");
    let mut out = Vec::with_capacity(32 + arch.len() + 4 * (model.params().len() + model.running().len()));
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(arch.len() as u32).to_le_bytes());
    out.extend_from_slice(&arch);
    for block in [model.params(), model.running()] {
        out.extend_from_slice(&(block.len() as u64).to_le_bytes());
        for v in block {
            out.extend_from_slice(&v.as_f32().to_le_bytes());
        }
    }
    out
}

pub fn decode<T: Scalar>(bytes: &[u8]) -> Result<Classifier<T>> {
    let mut r = bytes;
    let mut magic = [0u8; 8];
    read_exact(&mut r, &mut magic)?;
    if &magic != MAGIC {
        return Err(Error::Format("not a checkpoint (bad magic)".into()));
    }
    let version = read_u32(&mut r)?;
    if version != VERSION {
        return Err(Error::Format(format!("unsupported checkpoint version {version}")));
    }
    let json_len = read_u32(&mut r)? as usize;
    if json_len > r.len() {
        return Err(Error::Format("truncated architecture descriptor".into()));
    }
    let arch: Architecture = serde_json::from_slice(&r[..json_len])?;
    r = &r[json_len..];
    let params = read_floats(&mut r)?;
    let running = read_floats(&mut r)?;
    if !r.is_empty() {
        return Err(Error::Format(format!("{} trailing bytes", r.len())));
    }
    Classifier::from_parts(arch, params, running).map_err(|e| Error::Format(e.to_string()))
}

pub fn save<T: Scalar>(model: &Classifier<T>, path: &Path) -> Result<()> {
    let mut f = std::fs::File::create(path)?;
    f.write_all(&encode(model))?;
    Ok(())
}

pub fn load<T: Scalar>(path: &Path) -> Result<Classifier<T>> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    decode(&bytes)
}

fn read_exact(r: &mut &[u8], buf: &mut [u8]) -> Result<()> {
    r.read_exact(buf).map_err(|_| Error::Format("truncated checkpoint".into()))
}

fn read_u32(r: &mut &[u8]) -> Result<u32> {
    let mut b = [0u8; 4];
    read_exact(r, &mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_floats<T: Scalar>(r: &mut &[u8]) -> Result<Vec<T>> {
    let mut b = [0u8; 8];
    read_exact(r, &mut b)?;
    let n = u64::from_le_bytes(b) as usize;
    if n.checked_mul(4).is_none_or(|len| len > r.len()) {
        return Err(Error::Format("truncated parameter array".into()));
    }
    let (head, rest) = r.split_at(4 * n);
    *r = rest;
    Ok(head.chunks_exact(4).map(|c| T::of_f32(f32::from_le_bytes([c[0], c[1], c[2], c[3]]))).collect())
}
