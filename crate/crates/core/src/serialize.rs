//! Little-endian binary container for named tensors.
//!
//! Layout: magic `SVAE`, `u32` version, `u32` scalar width, `u32` tensor
//! count, an optional header `u64` slot, then per tensor: `u32` name length,
//! name bytes, `u32` rank, `u32` dims, values.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::marker::PhantomData;

use crate::error::{Error, Result};
use crate::nn::Module;
use crate::scalar::Scalar;

const MAGIC: &[u8; 4] = b"SVAE";
const VERSION: u32 = 1;

pub struct TensorWriter<T> {
    buf: Vec<u8>,
    _scalar: PhantomData<T>,
}

impl<T: Scalar> TensorWriter<T> {
    pub fn new(count: usize) -> Self {
        let mut buf = Vec::new();
        buf.extend_from_slice(MAGIC);
        buf.extend_from_slice(&VERSION.to_le_bytes());
        buf.extend_from_slice(&(T::BYTES as u32).to_le_bytes());
        buf.extend_from_slice(&(count as u32).to_le_bytes());
        Self { buf, _scalar: PhantomData }
    }

    pub fn write_u64(&mut self, v: u64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    pub fn tensor(&mut self, name: &str, shape: &[usize], values: &[T]) {
        self.buf.extend_from_slice(&(name.len() as u32).to_le_bytes());
        self.buf.extend_from_slice(name.as_bytes());
        self.buf.extend_from_slice(&(shape.len() as u32).to_le_bytes());
        for &d in shape {
            self.buf.extend_from_slice(&(d as u32).to_le_bytes());
        }
        self.buf.reserve(values.len() * T::BYTES);
        for &v in values {
            v.write_le(&mut self.buf);
        }
    }

    pub fn finish(self) -> Vec<u8> {
        self.buf
    }
}

pub struct TensorReader<'a, T> {
    bytes: &'a [u8],
    pos: usize,
    count: usize,
    _scalar: PhantomData<T>,
}

impl<'a, T: Scalar> TensorReader<'a, T> {
    pub fn new(bytes: &'a [u8]) -> Result<Self> {
        if bytes.len() < 16 || &bytes[..4] != MAGIC {
            return Err(Error::Checkpoint("not a tensor container".into()));
        }
        let mut r = Self { bytes, pos: 4, count: 0, _scalar: PhantomData };
        let version = r.read_u32()?;
        if version != VERSION {
            return Err(Error::Checkpoint(format!("unsupported container version {version}")));
        }
        let width = r.read_u32()? as usize;
        if width != T::BYTES {
            return Err(Error::Checkpoint(format!("stored scalars are {width} bytes, expected {}", T::BYTES)));
        }
        r.count = r.read_u32()? as usize;
        Ok(r)
    }

    pub fn count(&self) -> usize {
        self.count
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| Error::Checkpoint("truncated tensor container".into()))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn read_u32(&mut self) -> Result<u32> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    pub fn read_u64(&mut self) -> Result<u64> {
        let b = self.take(8)?;
        let mut a = [0u8; 8];
        a.copy_from_slice(b);
        Ok(u64::from_le_bytes(a))
    }

    pub fn tensor(&mut self) -> Result<(String, Vec<usize>, Vec<T>)> {
        let n = self.read_u32()? as usize;
        let name = core::str::from_utf8(self.take(n)?)
            .map_err(|_| Error::Checkpoint("tensor name is not utf-8".into()))?
            .into();
        let rank = self.read_u32()? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(self.read_u32()? as usize);
        }
        let len: usize = shape.iter().product();
        let raw = self.take(len * T::BYTES)?;
        let values = raw.chunks_exact(T::BYTES).map(T::read_le).collect();
        Ok((name, shape, values))
    }

    pub fn is_exhausted(&self) -> bool {
        self.pos == self.bytes.len()
    }
}

/// Serializes every parameter of `module` in visit order.
pub fn params_to_bytes<T: Scalar>(module: &impl Module<T>) -> Vec<u8> {
    let mut count = 0;
    module.visit("", &mut |_, _| count += 1);
    let mut w = TensorWriter::<T>::new(count);
    module.visit("", &mut |name, p| w.tensor(name, &p.shape, &p.value));
    w.finish()
}

/// Loads parameters written by [`params_to_bytes`]; names and shapes must
/// match the module exactly.
pub fn load_params<T: Scalar>(module: &mut impl Module<T>, bytes: &[u8]) -> Result<()> {
    let mut r = TensorReader::<T>::new(bytes)?;
    let mut expected = 0;
    module.visit("", &mut |_, _| expected += 1);
    if r.count() != expected {
        return Err(Error::Checkpoint(format!("blob has {} tensors, model has {expected}", r.count())));
    }
    let mut tensors = Vec::with_capacity(expected);
    for _ in 0..expected {
        tensors.push(r.tensor()?);
    }
    if !r.is_exhausted() {
        return Err(Error::Checkpoint("trailing bytes after tensors".into()));
    }
    let mut err = None;
    let mut i = 0;
    module.visit("", &mut |name, p| {
        let (n, shape, _) = &tensors[i];
        i += 1;
        if err.is_none() && (n != name || *shape != p.shape) {
            err = Some(Error::Checkpoint(format!(
                "tensor `{n}` {shape:?} does not match `{name}` {:?}",
                p.shape
            )));
        }
    });
    if let Some(e) = err {
        return Err(e);
    }
    let mut values = tensors.into_iter().map(|(_, _, v)| v);
    module.visit_mut("", &mut |_, p| p.value = values.next().unwrap_or_default());
    Ok(())
}
