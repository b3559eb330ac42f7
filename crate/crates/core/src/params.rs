//! Named parameter blocks and the versioned binary container.
//!
//! Layout (all integers little-endian `u32`, reals little-endian `f64`):
//!
//! ```text
//! magic            8 bytes  "MOETPRM1"
//! version          u32      currently 1
//! width (C)        u32
//! depth (L)        u32
//! common experts   u32
//! specific experts u32
//! block count      u32
//! repeated per block:
//!   name length    u32, then that many UTF-8 bytes
//!   rows, cols     u32, u32
//!   frozen         u8 (0 or 1)
//!   values         rows * cols f64, row-major
//! ```

use std::collections::BTreeMap;
use std::path::Path;

use crate::error::{Error, Result};
use crate::numerics::{Gradients, Matrix};

pub const MAGIC: &[u8; 8] = b"MOETPRM1";
pub const VERSION: u32 = 1;

/// Anything made of named matrices.
///
/// Names are built as `prefix.field`; a block is `frozen` when optimization
/// must never modify it.
pub trait ParamBlocks {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Matrix, bool));
    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Matrix, bool));
}

pub(crate) fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}.{name}")
    }
}

/// Flattens a parameter set into `(name, matrix, frozen)` triples.
pub fn collect_blocks<P: ParamBlocks + ?Sized>(params: &P, prefix: &str) -> Vec<NamedBlock> {
    let mut out = Vec::new();
    params.visit(prefix, &mut |name, m, frozen| {
        out.push(NamedBlock {
            name: name.to_string(),
            frozen,
            matrix: m.clone(),
        })
    });
    out
}

/// Number of scalar parameters, frozen included.
pub fn parameter_count<P: ParamBlocks + ?Sized>(params: &P) -> usize {
    let mut n = 0;
    params.visit("", &mut |_, m, _| n += m.len());
    n
}

/// One plain gradient-descent step; frozen blocks are skipped.
pub fn gradient_step<P: ParamBlocks + ?Sized>(
    params: &mut P,
    prefix: &str,
    grads: &Gradients,
    step_size: f64,
) {
    params.visit_mut(prefix, &mut |name, m, frozen| {
        if frozen {
            return;
        }
        if let Some(g) = grads.get(name) {
            for (w, d) in m.data_mut().iter_mut().zip(g.data()) {
                *w -= step_size * d;
            }
        }
    });
}

#[derive(Debug, Clone, PartialEq)]
pub struct NamedBlock {
    pub name: String,
    pub frozen: bool,
    pub matrix: Matrix,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ArchiveHeader {
    pub version: u32,
    pub width: u32,
    pub depth: u32,
    pub common_experts: u32,
    pub specific_experts: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamArchive {
    pub header: ArchiveHeader,
    pub blocks: Vec<NamedBlock>,
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::Format(format!(
                "parameter container truncated at byte {}",
                self.pos
            )));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn f64(&mut self) -> Result<f64> {
        let b = self.take(8)?;
        let mut a = [0u8; 8];
        a.copy_from_slice(b);
        Ok(f64::from_le_bytes(a))
    }
}

impl ParamArchive {
    pub fn new(header: ArchiveHeader) -> Self {
        Self {
            header,
            blocks: Vec::new(),
        }
    }

    pub fn push_params<P: ParamBlocks + ?Sized>(&mut self, params: &P, prefix: &str) {
        self.blocks.extend(collect_blocks(params, prefix));
    }

    pub fn block(&self, name: &str) -> Option<&NamedBlock> {
        self.blocks.iter().find(|b| b.name == name)
    }

    /// Copies stored blocks into `params`; every visited block must be present
    /// with a matching shape.
    pub fn load_into<P: ParamBlocks + ?Sized>(&self, params: &mut P, prefix: &str) -> Result<()> {
        let index: BTreeMap<&str, &NamedBlock> =
            self.blocks.iter().map(|b| (b.name.as_str(), b)).collect();
        let mut failure = None;
        params.visit_mut(prefix, &mut |name, m, _| {
            if failure.is_some() {
                return;
            }
            match index.get(name) {
                Some(b) if b.matrix.shape() == m.shape() => *m = b.matrix.clone(),
                Some(b) => {
                    failure = Some(format!(
                        "block `{name}` has shape {:?}, expected {:?}",
                        b.matrix.shape(),
                        m.shape()
                    ))
                }
                None => failure = Some(format!("block `{name}` missing from container")),
            }
        });
        match failure {
            Some(msg) => Err(Error::Format(msg)),
            None => Ok(()),
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        let h = &self.header;
        for v in [
            h.version,
            h.width,
            h.depth,
            h.common_experts,
            h.specific_experts,
            self.blocks.len() as u32,
        ] {
            out.extend_from_slice(&v.to_le_bytes());
        }
        for b in &self.blocks {
            out.extend_from_slice(&(b.name.len() as u32).to_le_bytes());
            out.extend_from_slice(b.name.as_bytes());
            out.extend_from_slice(&(b.matrix.rows() as u32).to_le_bytes());
            out.extend_from_slice(&(b.matrix.cols() as u32).to_le_bytes());
            out.push(u8::from(b.frozen));
            for x in b.matrix.data() {
                out.extend_from_slice(&x.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(8)? != MAGIC {
            return Err(Error::Format("bad parameter container magic".into()));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::Format(format!(
                "unsupported parameter container version {version}"
            )));
        }
        let header = ArchiveHeader {
            version,
            width: r.u32()?,
            depth: r.u32()?,
            common_experts: r.u32()?,
            specific_experts: r.u32()?,
        };
        let count = r.u32()? as usize;
        let mut blocks = Vec::with_capacity(count.min(1 << 16));
        for _ in 0..count {
            let len = r.u32()? as usize;
            let name = std::str::from_utf8(r.take(len)?)
                .map_err(|_| Error::Format("block name is not UTF-8".into()))?
                .to_string();
            let rows = r.u32()? as usize;
            let cols = r.u32()? as usize;
            let frozen = match r.take(1)?[0] {
                0 => false,
                1 => true,
                other => return Err(Error::Format(format!("bad frozen flag {other}"))),
            };
            let mut data = Vec::with_capacity(rows * cols);
            for _ in 0..rows * cols {
                data.push(r.f64()?);
            }
            let matrix = Matrix::new(rows, cols, data)
                .map_err(|e| Error::Format(format!("block `{name}`: {e}")))?;
            blocks.push(NamedBlock {
                name,
                frozen,
                matrix,
            });
        }
        if r.pos != bytes.len() {
            return Err(Error::Format("trailing bytes after parameter blocks".into()));
        }
        Ok(Self { header, blocks })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> ParamArchive {
        let mut a = ParamArchive::new(ArchiveHeader {
            version: VERSION,
            width: 8,
            depth: 2,
            common_experts: 4,
            specific_experts: 4,
        });
        a.blocks.push(NamedBlock {
            name: "x.w".into(),
            frozen: true,
            matrix: Matrix::from_rows(&[vec![1.5, -0.25], vec![1e-300, 3.0]]).unwrap(),
        });
        a.blocks.push(NamedBlock {
            name: "y".into(),
            frozen: false,
            matrix: Matrix::zeros(0, 3),
        });
        a
    }

    #[test]
    fn byte_round_trip() {
        let a = sample();
        let bytes = a.to_bytes();
        let b = ParamArchive::from_bytes(&bytes).unwrap();
        assert_eq!(a, b);
        assert_eq!(bytes, b.to_bytes());
    }

    #[test]
    fn rejects_corruption() {
        let mut bytes = sample().to_bytes();
        assert!(ParamArchive::from_bytes(&bytes[..bytes.len() - 1]).is_err());
        bytes[0] = b'X';
        assert!(ParamArchive::from_bytes(&bytes).is_err());
        let mut extra = sample().to_bytes();
        extra.push(0);
        assert!(ParamArchive::from_bytes(&extra).is_err());
    }
}
