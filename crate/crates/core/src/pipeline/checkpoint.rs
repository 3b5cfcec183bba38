//! Binary parameter checkpoints.
//!
//! Layout: magic `SE3D`, `u32` version, `u32` tensor count, then per tensor
//! `u32` name length, UTF-8 name, `u32` rank and `u64` dims, then a `u64`
//! value count followed by the values as little-endian `f64`.

use std::io::{self, Read, Write};
use std::path::Path;

use thiserror::Error;

use super::params::{Layout, ParamVector};

pub const MAGIC: &[u8; 4] = b"SE3D";
pub const VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("not a checkpoint (bad magic)")]
    BadMagic,
    #[error("unsupported checkpoint version {0}")]
    Version(u32),
    #[error("corrupt checkpoint: {0}")]
    Corrupt(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

pub fn encode_checkpoint(p: &ParamVector) -> Vec<u8> {
    let mut b = Vec::with_capacity(64 + 8 * p.len());
    b.extend_from_slice(MAGIC);
    b.extend_from_slice(&VERSION.to_le_bytes());
    b.extend_from_slice(&(p.layout.tensors.len() as u32).to_le_bytes());
    for (name, dims) in &p.layout.tensors {
        b.extend_from_slice(&(name.len() as u32).to_le_bytes());
        b.extend_from_slice(name.as_bytes());
        b.extend_from_slice(&(dims.len() as u32).to_le_bytes());
        for d in dims {
            b.extend_from_slice(&(*d as u64).to_le_bytes());
        }
    }
    b.extend_from_slice(&(p.values.len() as u64).to_le_bytes());
    for v in &p.values {
        b.extend_from_slice(&v.to_le_bytes());
    }
    b
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], CheckpointError> {
        if self.buf.len() - self.pos < n {
            return Err(CheckpointError::Corrupt(format!("truncated at byte {}", self.pos)));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, CheckpointError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64, CheckpointError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

pub fn decode_checkpoint(buf: &[u8]) -> Result<ParamVector, CheckpointError> {
    let mut c = Cursor { buf, pos: 0 };
    if c.take(4).map_err(|_| CheckpointError::BadMagic)? != MAGIC {
        return Err(CheckpointError::BadMagic);
    }
    let version = c.u32()?;
    if version != VERSION {
        return Err(CheckpointError::Version(version));
    }
    let n_tensors = c.u32()? as usize;
    let mut tensors = Vec::new();
    for _ in 0..n_tensors {
        let len = c.u32()? as usize;
        let name = std::str::from_utf8(c.take(len)?)
            .map_err(|_| CheckpointError::Corrupt("tensor name is not UTF-8".into()))?
            .to_string();
        let rank = c.u32()? as usize;
        let mut dims = Vec::new();
        for _ in 0..rank {
            dims.push(c.u64()? as usize);
        }
        tensors.push((name, dims));
    }
    let layout = Layout { tensors };
    let n = c.u64()? as usize;
    if n != layout.len() {
        return Err(CheckpointError::Corrupt(format!("layout holds {} values but {n} stored", layout.len())));
    }
    let raw = c.take(n.checked_mul(8).ok_or_else(|| CheckpointError::Corrupt("value count overflow".into()))?)?;
    let values = raw.chunks_exact(8).map(|b| f64::from_le_bytes(b.try_into().unwrap())).collect();
    if c.pos != buf.len() {
        return Err(CheckpointError::Corrupt("trailing bytes".into()));
    }
    Ok(ParamVector { values, layout })
}

pub fn save_checkpoint(p: &ParamVector, path: &Path) -> Result<(), CheckpointError> {
    let mut f = std::fs::File::create(path)?;
    f.write_all(&encode_checkpoint(p))?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<ParamVector, CheckpointError> {
    let mut buf = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut buf)?;
    decode_checkpoint(&buf)
}
