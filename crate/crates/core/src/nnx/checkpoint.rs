//! Versioned binary dump of named tensors plus a text metadata block.
//!
//! Layout (little-endian):
//! `b"PCQACKPT"`, `u32` version, `u32` metadata length, UTF-8 metadata,
//! `u32` tensor count, then per tensor: `u32` name length, name, `u32` rank,
//! `u64` dims, `f64` data. Values are stored as raw bits, so a save/load
//! round trip is exact.

use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::nnx::model::ParamStore;
use crate::nnx::tensor::Tensor;

const MAGIC: &[u8; 8] = b"PCQACKPT";
pub const FORMAT_VERSION: u32 = 1;

/// Everything a checkpoint file holds.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Checkpoint {
    pub metadata: String,
    pub tensors: ParamStore,
}

impl Checkpoint {
    pub fn write_to(&self, w: &mut impl Write) -> Result<()> {
        let mut buf = Vec::new();
        buf.extend_from_slice(MAGIC);
        buf.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        put_bytes(&mut buf, self.metadata.as_bytes());
        buf.extend_from_slice(&(self.tensors.len() as u32).to_le_bytes());
        for (name, t) in self.tensors.iter() {
            put_bytes(&mut buf, name.as_bytes());
            buf.extend_from_slice(&(t.rank() as u32).to_le_bytes());
            for &d in t.shape() {
                buf.extend_from_slice(&(d as u64).to_le_bytes());
            }
            for v in t.data() {
                buf.extend_from_slice(&v.to_bits().to_le_bytes());
            }
        }
        w.write_all(&buf)
            .map_err(|e| Error::Checkpoint(format!("write failed: {e}")))
    }

    pub fn read_from(r: &mut impl Read) -> Result<Self> {
        let mut buf = Vec::new();
        r.read_to_end(&mut buf)
            .map_err(|e| Error::Checkpoint(format!("read failed: {e}")))?;
        let mut cur = Cursor { buf: &buf, pos: 0 };
        if cur.take(8)? != MAGIC {
            return Err(Error::Checkpoint("bad magic".into()));
        }
        let version = cur.u32()?;
        if version != FORMAT_VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported version {version}"
            )));
        }
        let metadata = cur.string()?;
        let count = cur.u32()? as usize;
        let mut tensors = ParamStore::new();
        for _ in 0..count {
            let name = cur.string()?;
            let rank = cur.u32()? as usize;
            let shape = (0..rank)
                .map(|_| cur.u64().map(|d| d as usize))
                .collect::<Result<Vec<_>>>()?;
            let n: usize = shape.iter().product();
            let data = (0..n)
                .map(|_| cur.u64().map(f64::from_bits))
                .collect::<Result<Vec<_>>>()?;
            tensors.push(name, Tensor::new(&shape, data)?);
        }
        if cur.pos != buf.len() {
            return Err(Error::Checkpoint("trailing bytes".into()));
        }
        Ok(Checkpoint { metadata, tensors })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_to(&mut f)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let mut f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_from(&mut f)
    }
}

fn put_bytes(buf: &mut Vec<u8>, b: &[u8]) {
    buf.extend_from_slice(&(b.len() as u32).to_le_bytes());
    buf.extend_from_slice(b);
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(Error::Checkpoint("truncated file".into()));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn string(&mut self) -> Result<String> {
        let n = self.u32()? as usize;
        String::from_utf8(self.take(n)?.to_vec())
            .map_err(|_| Error::Checkpoint("invalid utf-8".into()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn round_trip_is_bit_exact(vals in prop::collection::vec(any::<f64>(), 1..40), meta in ".{0,20}") {
            let mut store = ParamStore::new();
            let n = vals.len();
            store.push("a", Tensor::new(&[n], vals.clone()).unwrap());
            store.push("b.weight", Tensor::new(&[1, n], vals.iter().rev().cloned().collect()).unwrap());
            let ck = Checkpoint { metadata: meta, tensors: store };
            let mut buf = Vec::new();
            ck.write_to(&mut buf).unwrap();
            let back = Checkpoint::read_from(&mut buf.as_slice()).unwrap();
            prop_assert_eq!(&back.metadata, &ck.metadata);
            for ((_, a), (_, b)) in back.tensors.iter().zip(ck.tensors.iter()) {
                let bits_a: Vec<u64> = a.data().iter().map(|v| v.to_bits()).collect();
                let bits_b: Vec<u64> = b.data().iter().map(|v| v.to_bits()).collect();
                prop_assert_eq!(bits_a, bits_b);
                prop_assert_eq!(a.shape(), b.shape());
            }
        }
    }

    #[test]
    fn rejects_garbage() {
        assert!(Checkpoint::read_from(&mut &b"not a checkpoint"[..]).is_err());
        let mut buf = Vec::new();
        Checkpoint::default().write_to(&mut buf).unwrap();
        buf.push(0);
        assert!(Checkpoint::read_from(&mut buf.as_slice()).is_err());
    }
}
