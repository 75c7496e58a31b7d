//! Parameter checkpoints.
//!
//! Layout (all little-endian):
//!
//! ```text
//! b"OLRN" | u16 version | u8 architecture tag | u32 n_in | u32 n_hidden | u32 n_out
//! | f64 ctrnn_tau | f64 ctrnn_dt | u32 group count | tensors sorted by group name
//! ```
//!
//! Each tensor uses [`Tensor::write_le`]. Group names are implied by the
//! architecture and are validated on load.

use std::io::{Read, Write};

use super::{Architecture, CellSpec, ParamSet};
use crate::error::{Error, Result};
use crate::linalg::{read_u16, read_u32, Tensor};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"OLRN";
pub const CHECKPOINT_VERSION: u16 = 1;

pub fn write_checkpoint<W: Write>(w: &mut W, spec: &CellSpec, params: &ParamSet) -> Result<()> {
    spec.check_params(params)?;
    w.write_all(CHECKPOINT_MAGIC)?;
    w.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
    w.write_all(&[spec.arch.tag()])?;
    for d in [spec.n_in, spec.n_hidden, spec.n_out] {
        w.write_all(&(d as u32).to_le_bytes())?;
    }
    w.write_all(&spec.ctrnn_tau.to_le_bytes())?;
    w.write_all(&spec.ctrnn_dt.to_le_bytes())?;
    w.write_all(&(params.len() as u32).to_le_bytes())?;
    for g in params.iter() {
        g.tensor.write_le(w)?;
    }
    Ok(())
}

fn read_f64<R: Read>(r: &mut R) -> Result<f64> {
    let lo = read_u32(r)? as u64;
    let hi = read_u32(r)? as u64;
    Ok(f64::from_bits(lo | (hi << 32)))
}

/// Reads a checkpoint; either the whole file parses or nothing is returned.
pub fn read_checkpoint<R: Read>(r: &mut R) -> Result<(CellSpec, ParamSet)> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)
        .map_err(|_| Error::Format("missing checkpoint magic".into()))?;
    if &magic != CHECKPOINT_MAGIC {
        return Err(Error::Format(format!("bad magic {magic:?}")));
    }
    let version = read_u16(r)?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::Format(format!(
            "unsupported checkpoint version {version} (expected {CHECKPOINT_VERSION})"
        )));
    }
    let mut tag = [0u8; 1];
    r.read_exact(&mut tag)
        .map_err(|_| Error::Format("truncated input".into()))?;
    let arch = Architecture::from_tag(tag[0])
        .ok_or_else(|| Error::Format(format!("unknown architecture tag {}", tag[0])))?;
    let n_in = read_u32(r)? as usize;
    let n_hidden = read_u32(r)? as usize;
    let n_out = read_u32(r)? as usize;
    let spec = CellSpec {
        arch,
        n_in,
        n_hidden,
        n_out,
        ctrnn_tau: read_f64(r)?,
        ctrnn_dt: read_f64(r)?,
    };
    spec.validate().map_err(|e| Error::Format(e.to_string()))?;
    let count = read_u32(r)? as usize;
    let shapes = spec.group_shapes();
    if count != shapes.len() {
        return Err(Error::Format(format!(
            "{count} groups stored, {arch} cell has {}",
            shapes.len()
        )));
    }
    let mut groups = Vec::with_capacity(count);
    for (name, dims) in shapes {
        let t = Tensor::read_le(r)?;
        if t.dims() != dims.as_slice() {
            return Err(Error::Format(format!(
                "group {name} stored as {:?}, expected {dims:?}",
                t.dims()
            )));
        }
        groups.push((name.to_string(), t));
    }
    let mut rest = [0u8; 1];
    if r.read(&mut rest)? != 0 {
        return Err(Error::Format("trailing bytes after checkpoint".into()));
    }
    Ok((spec, ParamSet::new(groups)?))
}
