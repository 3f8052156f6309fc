//! Binary checkpoint encoding.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! "MCAP"  u32 version  u32 count
//! count x { u16 name_len, name (UTF-8), u8 dtype, u8 rank, rank x u32 dim, payload }
//! ```
//!
//! dtype 0 is f32 and 1 is f64. Parameters are written in registration
//! order, so encoding a freshly decoded store reproduces the input bytes.

use alloc::string::String;
use alloc::vec::Vec;

use crate::autodiff::ParamStore;
use crate::tensor::{DType, Real, Tensor, TensorError, MAX_RANK};

pub const MAGIC: [u8; 4] = *b"MCAP";
pub const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, thiserror::Error)]
pub enum CheckpointError {
    #[error("not a checkpoint: magic bytes {0:?}")]
    BadMagic([u8; 4]),
    #[error("unsupported checkpoint version {0}")]
    UnsupportedVersion(u32),
    #[error("checkpoint truncated at byte {offset}: needed {needed} more")]
    Truncated { offset: usize, needed: usize },
    #[error("checkpoint has {0} trailing bytes")]
    TrailingBytes(usize),
    #[error("parameter name is not UTF-8 at byte {0}")]
    InvalidName(usize),
    #[error("unknown dtype code {code} for `{name}`")]
    UnknownDType { name: String, code: u8 },
    #[error("invalid shape {shape:?} for `{name}`")]
    InvalidShape { name: String, shape: Vec<usize> },
    #[error("unknown parameter `{0}`")]
    UnknownParameter(String),
    #[error("parameter `{0}` missing from checkpoint")]
    MissingParameter(String),
    #[error("`{name}` has shape {found:?} in checkpoint, model expects {expected:?}")]
    ShapeMismatch { name: String, expected: Vec<usize>, found: Vec<usize> },
    #[error("`{name}` stored as {found:?}, model uses {expected:?}")]
    DTypeMismatch { name: String, expected: DType, found: DType },
    #[error("parameter name `{0}` longer than 65535 bytes")]
    NameTooLong(String),
}

/// One decoded record: the name, dtype and shape, plus the raw payload.
#[derive(Clone, Debug, PartialEq)]
pub struct Entry {
    pub name: String,
    pub dtype: DType,
    pub shape: Vec<usize>,
    pub payload: Vec<u8>,
}

impl Entry {
    pub fn to_tensor<T: Real>(&self) -> Result<Tensor<T>, CheckpointError> {
        if self.dtype != T::DTYPE {
            return Err(CheckpointError::DTypeMismatch { name: self.name.clone(), expected: T::DTYPE, found: self.dtype });
        }
        let data = self.payload.chunks_exact(T::DTYPE.size_of()).map(T::read_le).collect();
        Tensor::from_vec(&self.shape, data).map_err(|_| CheckpointError::InvalidShape { name: self.name.clone(), shape: self.shape.clone() })
    }
}

pub fn encode<T: Real>(store: &ParamStore<T>) -> Result<Vec<u8>, CheckpointError> {
    let mut out = Vec::new();
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(store.len() as u32).to_le_bytes());
    for (_, p) in store.iter() {
        let name = p.name.as_bytes();
        let len = u16::try_from(name.len()).map_err(|_| CheckpointError::NameTooLong(p.name.clone()))?;
        out.extend_from_slice(&len.to_le_bytes());
        out.extend_from_slice(name);
        out.push(T::DTYPE.code());
        out.push(p.value.rank() as u8);
        for &d in p.value.shape() {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for &v in p.value.data() {
            v.write_le(&mut out);
        }
    }
    Ok(out)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], CheckpointError> {
        let rest = self.bytes.len() - self.pos;
        if rest < n {
            return Err(CheckpointError::Truncated { offset: self.bytes.len(), needed: n - rest });
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8, CheckpointError> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16, CheckpointError> {
        let b = self.take(2)?;
        Ok(u16::from_le_bytes([b[0], b[1]]))
    }

    fn u32(&mut self) -> Result<u32, CheckpointError> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }
}

pub fn decode(bytes: &[u8]) -> Result<Vec<Entry>, CheckpointError> {
    let mut r = Reader { bytes, pos: 0 };
    let magic = r.take(4).map_err(|_| {
        let mut m = [0u8; 4];
        m[..bytes.len()].copy_from_slice(bytes);
        CheckpointError::BadMagic(m)
    })?;
    if magic != MAGIC {
        return Err(CheckpointError::BadMagic([magic[0], magic[1], magic[2], magic[3]]));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(CheckpointError::UnsupportedVersion(version));
    }
    let count = r.u32()? as usize;
    let mut entries = Vec::with_capacity(count.min(4096));
    for _ in 0..count {
        let len = r.u16()? as usize;
        let at = r.pos;
        let name = core::str::from_utf8(r.take(len)?).map_err(|_| CheckpointError::InvalidName(at))?.into();
        let code = r.u8()?;
        let dtype = DType::from_code(code).ok_or_else(|| CheckpointError::UnknownDType { name: String::clone(&name), code })?;
        let rank = r.u8()? as usize;
        let mut shape = Vec::with_capacity(rank.min(MAX_RANK));
        for _ in 0..rank {
            shape.push(r.u32()? as usize);
        }
        if rank > MAX_RANK || shape.contains(&0) {
            return Err(CheckpointError::InvalidShape { name, shape });
        }
        let n = shape.iter().try_fold(dtype.size_of(), |acc, &d| acc.checked_mul(d));
        let n = n.ok_or_else(|| CheckpointError::InvalidShape { name: String::clone(&name), shape: shape.clone() })?;
        let payload = r.take(n)?.to_vec();
        entries.push(Entry { name, dtype, shape, payload });
    }
    if r.pos != bytes.len() {
        return Err(CheckpointError::TrailingBytes(bytes.len() - r.pos));
    }
    Ok(entries)
}

/// Decodes `bytes` into an existing store, which must hold exactly the same
/// names with matching shapes and dtype. The store is untouched on error.
pub fn load_into<T: Real>(store: &mut ParamStore<T>, bytes: &[u8]) -> Result<(), CheckpointError> {
    let entries = decode(bytes)?;
    let mut values = Vec::with_capacity(entries.len());
    let mut seen = alloc::vec![false; store.len()];
    for e in &entries {
        let id = store.find(&e.name).ok_or_else(|| CheckpointError::UnknownParameter(e.name.clone()))?;
        let expected = store.value(id).shape();
        if expected != e.shape.as_slice() {
            return Err(CheckpointError::ShapeMismatch { name: e.name.clone(), expected: expected.to_vec(), found: e.shape.clone() });
        }
        seen[id.index()] = true;
        values.push((id, e.to_tensor::<T>()?));
    }
    if let Some((_, p)) = store.iter().find(|(id, _)| !seen[id.index()]) {
        return Err(CheckpointError::MissingParameter(p.name.clone()));
    }
    for (id, v) in values {
        store.get_mut(id).value = v;
    }
    Ok(())
}

impl From<CheckpointError> for TensorError {
    fn from(e: CheckpointError) -> Self {
        TensorError::Config(alloc::format!("{e}"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn store() -> ParamStore<f32> {
        let mut s = ParamStore::new();
        s.add("a.weight", Tensor::from_f64(&[2, 3], &[1., -2., 3.5, 0., 1e-30, -7.25]).unwrap(), true).unwrap();
        s.add("a.running_mean", Tensor::from_f64(&[3], &[0.1, 0.2, 0.3]).unwrap(), false).unwrap();
        s
    }

    #[test]
    fn round_trip_is_byte_identical() {
        let s = store();
        let bytes = encode(&s).unwrap();
        let mut t = store();
        for (id, _) in s.iter() {
            t.get_mut(id).value = t.value(id).map(|_| 0.0);
        }
        load_into(&mut t, &bytes).unwrap();
        assert_eq!(t, s);
        assert_eq!(encode(&t).unwrap(), bytes);
    }

    #[test]
    fn distinct_errors() {
        let bytes = encode(&store()).unwrap();
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(decode(&bad), Err(CheckpointError::BadMagic(_))));
        let mut bad = bytes.clone();
        bad[4] = 2;
        assert_eq!(decode(&bad), Err(CheckpointError::UnsupportedVersion(2)));
        assert!(matches!(decode(&bytes[..bytes.len() - 1]), Err(CheckpointError::Truncated { .. })));
        assert!(matches!(decode(&bytes[..2]), Err(CheckpointError::BadMagic(_))));
        let mut other = ParamStore::<f32>::new();
        other.add("b.weight", Tensor::zeros(&[2, 3]).unwrap(), true).unwrap();
        other.add("a.running_mean", Tensor::zeros(&[3]).unwrap(), false).unwrap();
        assert_eq!(load_into(&mut other, &bytes), Err(CheckpointError::UnknownParameter("a.weight".into())));
        let mut wide = ParamStore::<f64>::new();
        wide.add("a.weight", Tensor::zeros(&[2, 3]).unwrap(), true).unwrap();
        wide.add("a.running_mean", Tensor::zeros(&[3]).unwrap(), false).unwrap();
        assert!(matches!(load_into(&mut wide, &bytes), Err(CheckpointError::DTypeMismatch { .. })));
    }
}
