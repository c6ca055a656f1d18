//! Self-describing binary blob for model state.
//!
//! Layout, all integers and floats little-endian:
//!
//! ```text
//! magic "NEPCKPT\0" | u32 version
//! u64 n_meta  | n_meta x (str key, str value)
//! u64 n_index | n_index x (str name, u64 len, len x u64)
//! u64 n_tensor| n_tensor x (str name, u64 rows, u64 cols, rows*cols x f64)
//! ```
//!
//! where `str` is a `u64` byte length followed by UTF-8 bytes.

use std::io::{Read, Write};

use super::matrix::Matrix;
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"NEPCKPT\0";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Checkpoint {
    pub metadata: Vec<(String, String)>,
    pub indices: Vec<(String, Vec<u64>)>,
    pub tensors: Vec<(String, Matrix)>,
}

impl Checkpoint {
    pub fn meta(&self, key: &str) -> Option<&str> {
        self.metadata
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
    }

    pub fn index(&self, name: &str) -> Option<&[u64]> {
        self.indices
            .iter()
            .find(|(k, _)| k == name)
            .map(|(_, v)| v.as_slice())
    }

    pub fn tensor(&self, name: &str) -> Result<&Matrix> {
        self.tensors
            .iter()
            .find(|(k, _)| k == name)
            .map(|(_, m)| m)
            .ok_or_else(|| Error::Checkpoint(format!("missing tensor `{name}`")))
    }

    pub fn write(&self, mut w: impl Write) -> Result<()> {
        w.write_all(MAGIC)?;
        w.write_all(&VERSION.to_le_bytes())?;
        w.write_all(&(self.metadata.len() as u64).to_le_bytes())?;
        for (k, v) in &self.metadata {
            write_str(&mut w, k)?;
            write_str(&mut w, v)?;
        }
        w.write_all(&(self.indices.len() as u64).to_le_bytes())?;
        for (name, idx) in &self.indices {
            write_str(&mut w, name)?;
            w.write_all(&(idx.len() as u64).to_le_bytes())?;
            for x in idx {
                w.write_all(&x.to_le_bytes())?;
            }
        }
        w.write_all(&(self.tensors.len() as u64).to_le_bytes())?;
        for (name, m) in &self.tensors {
            write_str(&mut w, name)?;
            w.write_all(&(m.rows() as u64).to_le_bytes())?;
            w.write_all(&(m.cols() as u64).to_le_bytes())?;
            for x in m.as_slice() {
                w.write_all(&x.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn read(mut r: impl Read) -> Result<Self> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(Error::Checkpoint("bad magic".into()));
        }
        let version = u32::from_le_bytes(read_array(&mut r)?);
        if version != VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported version {version}, expected {VERSION}"
            )));
        }
        let mut out = Checkpoint::default();
        for _ in 0..read_u64(&mut r)? {
            let k = read_str(&mut r)?;
            let v = read_str(&mut r)?;
            out.metadata.push((k, v));
        }
        for _ in 0..read_u64(&mut r)? {
            let name = read_str(&mut r)?;
            let len = read_u64(&mut r)?;
            let idx = (0..len)
                .map(|_| read_u64(&mut r))
                .collect::<Result<Vec<_>>>()?;
            out.indices.push((name, idx));
        }
        for _ in 0..read_u64(&mut r)? {
            let name = read_str(&mut r)?;
            let rows = read_u64(&mut r)? as usize;
            let cols = read_u64(&mut r)? as usize;
            let n = rows
                .checked_mul(cols)
                .ok_or_else(|| Error::Checkpoint("tensor too large".into()))?;
            let data = (0..n)
                .map(|_| Ok(f64::from_le_bytes(read_array(&mut r)?)))
                .collect::<Result<Vec<_>>>()?;
            out.tensors.push((name, Matrix::from_vec(rows, cols, data)?));
        }
        Ok(out)
    }
}

fn write_str(w: &mut impl Write, s: &str) -> Result<()> {
    w.write_all(&(s.len() as u64).to_le_bytes())?;
    w.write_all(s.as_bytes())?;
    Ok(())
}

fn read_array<const N: usize>(r: &mut impl Read) -> Result<[u8; N]> {
    let mut buf = [0u8; N];
    r.read_exact(&mut buf)?;
    Ok(buf)
}

fn read_u64(r: &mut impl Read) -> Result<u64> {
    Ok(u64::from_le_bytes(read_array(r)?))
}

fn read_str(r: &mut impl Read) -> Result<String> {
    let len = read_u64(r)? as usize;
    if len > 1 << 30 {
        return Err(Error::Checkpoint("string too long".into()));
    }
    let mut buf = vec![0u8; len];
    r.read_exact(&mut buf)?;
    String::from_utf8(buf).map_err(|e| Error::Checkpoint(e.to_string()))
}
