//! Binary checkpoint: magic, version, dims header, then the flat parameter
//! buffer as little-endian `f64`.

use std::path::Path;

use super::params::{ModelDims, ModelParams};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"CWSODCKP";
pub const VERSION: u32 = 1;

pub fn encode(params: &ModelParams) -> Vec<u8> {
    let dims = params.dims();
    let mut out = Vec::with_capacity(64 + 8 * params.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    for v in [
        dims.input_dim,
        dims.num_classes,
        dims.num_heads,
        dims.attribute_sizes.len(),
    ] {
        out.extend_from_slice(&(v as u64).to_le_bytes());
    }
    for &n in &dims.attribute_sizes {
        out.extend_from_slice(&(n as u64).to_le_bytes());
    }
    out.extend_from_slice(&(params.len() as u64).to_le_bytes());
    for v in params.as_slice() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::Checkpoint(format!("truncated at byte {}", self.pos)))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u64(&mut self) -> Result<usize> {
        let v = u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes"));
        usize::try_from(v).map_err(|_| Error::Checkpoint(format!("value {v} too large")))
    }
}

pub fn decode(bytes: &[u8]) -> Result<ModelParams> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(8)? != MAGIC {
        return Err(Error::Checkpoint("bad magic".into()));
    }
    let version = u32::from_le_bytes(r.take(4)?.try_into().expect("4 bytes"));
    if version != VERSION {
        return Err(Error::Checkpoint(format!(
            "unsupported version {version} (expected {VERSION})"
        )));
    }
    let input_dim = r.u64()?;
    let num_classes = r.u64()?;
    let num_heads = r.u64()?;
    let n_cat = r.u64()?;
    if n_cat > 1024 {
        return Err(Error::Checkpoint(format!("implausible category count {n_cat}")));
    }
    let sizes = (0..n_cat).map(|_| r.u64()).collect::<Result<Vec<_>>>()?;
    let dims = ModelDims::new(input_dim, num_classes, sizes, num_heads)
        .map_err(|e| Error::Checkpoint(e.to_string()))?;
    let len = r.u64()?;
    let raw = r.take(
        len.checked_mul(8)
            .ok_or_else(|| Error::Checkpoint("overflow".into()))?,
    )?;
    let data: Vec<f64> = raw
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();
    if r.pos != bytes.len() {
        return Err(Error::Checkpoint(format!(
            "{} trailing bytes",
            bytes.len() - r.pos
        )));
    }
    ModelParams::from_flat(dims, data).map_err(|e| Error::Checkpoint(e.to_string()))
}

pub fn save(params: &ModelParams, path: &Path) -> Result<()> {
    std::fs::write(path, encode(params)).map_err(|e| Error::io(path, e))
}

pub fn load(path: &Path) -> Result<ModelParams> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes)
}
