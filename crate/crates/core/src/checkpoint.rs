//! Binary checkpoint format shared by the policy and both critics.
//!
//! Layout: magic `SQRL`, format version (`u32` LE), then repeated records of
//! name length (`u32` LE), UTF-8 name, rows (`u32` LE), cols (`u32` LE) and
//! `rows·cols` row-major `f64` LE values, until end of file.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Matrix;

pub const MAGIC: &[u8; 4] = b"SQRL";
pub const VERSION: u32 = 1;

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Checkpoint {
    entries: Vec<(String, Matrix)>,
}

impl Checkpoint {
    pub fn new() -> Self {
        Checkpoint::default()
    }

    pub fn push(&mut self, name: impl Into<String>, m: Matrix) {
        self.entries.push((name.into(), m));
    }

    pub fn entries(&self) -> &[(String, Matrix)] {
        &self.entries
    }

    pub fn get(&self, name: &str) -> Option<&Matrix> {
        self.entries.iter().find(|(n, _)| n == name).map(|(_, m)| m)
    }

    pub fn take(&self, name: &str) -> Result<Matrix> {
        self.get(name)
            .cloned()
            .ok_or_else(|| Error::Checkpoint(format!("missing matrix `{name}`")))
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        for (name, m) in &self.entries {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.extend_from_slice(&(m.rows() as u32).to_le_bytes());
            out.extend_from_slice(&(m.cols() as u32).to_le_bytes());
            for v in m.as_slice() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err(Error::Checkpoint("bad magic bytes".into()));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::Checkpoint(format!("unsupported format version {version}")));
        }
        let mut ck = Checkpoint::new();
        while r.pos < bytes.len() {
            let len = r.u32()? as usize;
            let name = std::str::from_utf8(r.take(len)?)
                .map_err(|_| Error::Checkpoint("matrix name is not UTF-8".into()))?
                .to_string();
            let rows = r.u32()? as usize;
            let cols = r.u32()? as usize;
            let data = r
                .take(rows * cols * 8)?
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
                .collect();
            ck.push(name, Matrix::from_vec(rows, cols, data)?);
        }
        Ok(ck)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Checkpoint::from_bytes(&fs::read(path)?)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::Checkpoint("truncated file".into()))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }
}

/// Types that round-trip through named checkpoint matrices.
pub trait Checkpointable: Sized {
    fn to_checkpoint(&self) -> Checkpoint;
    fn from_checkpoint(ck: &Checkpoint) -> Result<Self>;
}

impl Checkpointable for crate::policy::PolicyParams {
    fn to_checkpoint(&self) -> Checkpoint {
        let mut ck = Checkpoint::new();
        for (name, m) in self.matrices() {
            ck.push(name, m.clone());
        }
        ck
    }

    fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        let p = crate::policy::PolicyParams {
            emb: ck.take("emb")?,
            u1: ck.take("u1")?,
            u2: ck.take("u2")?,
            w1: ck.take("w1")?,
            w2: ck.take("w2")?,
            w3: ck.take("w3")?,
            w4: ck.take("w4")?,
            w5: ck.take("w5")?,
        };
        let (v, d) = p.emb.shape();
        let ok = [&p.u1, &p.u2, &p.w1, &p.w2, &p.w3].iter().all(|m| m.shape() == (d, d))
            && p.w4.shape() == (d, v)
            && p.w5.shape() == (d, v);
        if !ok {
            return Err(Error::Checkpoint("policy matrices have inconsistent shapes".into()));
        }
        Ok(p)
    }
}
