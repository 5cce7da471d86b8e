//! Binary parameter container.
//!
//! Layout: the magic string `SENDCKPT1`, a little-endian u64 entry count,
//! then per entry `(name_len: u32, name bytes, ndim: u32, dims: u64 each,
//! offset: u64)` where `offset` is the byte position of the entry's values
//! inside the data section that follows the manifest. Values are f64
//! little-endian. Round trips are bit exact.

use crate::error::{Error, Result};
use crate::params::ParamStore;
use crate::tensor::Tensor;
use std::path::Path;

pub const MAGIC: &[u8; 9] = b"SENDCKPT1";

pub fn encode(params: &ParamStore) -> Vec<u8> {
    let mut manifest = Vec::new();
    manifest.extend_from_slice(MAGIC);
    manifest.extend_from_slice(&(params.len() as u64).to_le_bytes());

    let mut data = Vec::new();
    for (name, tensor) in params.iter() {
        manifest.extend_from_slice(&(name.len() as u32).to_le_bytes());
        manifest.extend_from_slice(name.as_bytes());
        manifest.extend_from_slice(&(tensor.shape().len() as u32).to_le_bytes());
        for &d in tensor.shape() {
            manifest.extend_from_slice(&(d as u64).to_le_bytes());
        }
        manifest.extend_from_slice(&(data.len() as u64).to_le_bytes());
        for &v in tensor.data() {
            data.extend_from_slice(&v.to_le_bytes());
        }
    }
    manifest.extend_from_slice(&data);
    manifest
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::Checkpoint("truncated container".into()));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

pub fn decode(bytes: &[u8]) -> Result<ParamStore> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(MAGIC.len())? != MAGIC {
        return Err(Error::Checkpoint("bad magic".into()));
    }
    let count = r.u64()? as usize;
    let mut entries = Vec::with_capacity(count);
    for _ in 0..count {
        let name_len = r.u32()? as usize;
        let name = std::str::from_utf8(r.take(name_len)?)
            .map_err(|_| Error::Checkpoint("non-utf8 name".into()))?
            .to_string();
        let ndim = r.u32()? as usize;
        let mut shape = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            shape.push(r.u64()? as usize);
        }
        let offset = r.u64()? as usize;
        entries.push((name, shape, offset));
    }
    let data_start = r.pos;

    let mut store = ParamStore::new();
    for (name, shape, offset) in entries {
        let numel: usize = shape.iter().product();
        let begin = data_start + offset;
        let end = begin + numel * 8;
        if end > bytes.len() {
            return Err(Error::Checkpoint(format!("entry `{name}` overruns data")));
        }
        let values: Vec<f64> = bytes[begin..end]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let tensor = Tensor::new(shape, values)
            .map_err(|e| Error::Checkpoint(format!("entry `{name}`: {e}")))?;
        store.insert(name, tensor);
    }
    Ok(store)
}

pub fn save(params: &ParamStore, path: impl AsRef<Path>) -> Result<()> {
    Ok(std::fs::write(path, encode(params))?)
}

pub fn load(path: impl AsRef<Path>) -> Result<ParamStore> {
    let bytes = std::fs::read(path.as_ref())?;
    decode(&bytes)
}
