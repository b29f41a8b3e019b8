//! Little-endian primitives shared by the tensor and checkpoint formats.

use crate::error::{Error, Result};
use crate::scalar::{DType, Scalar};
use crate::tensor::Tensor;

pub(crate) struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    pub fn new(bytes: &'a [u8]) -> Self {
        Reader { bytes, pos: 0 }
    }

    pub fn take(&mut self, n: usize, what: &'static str) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::Truncated(what));
        }
        let out = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    pub fn u8(&mut self, what: &'static str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    pub fn u32(&mut self, what: &'static str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    pub fn string(&mut self, what: &'static str) -> Result<String> {
        let len = self.u32(what)? as usize;
        let raw = self.take(len, what)?;
        String::from_utf8(raw.to_vec()).map_err(|_| Error::Malformed(format!("{what} is not UTF-8")))
    }

    pub fn is_empty(&self) -> bool {
        self.pos == self.bytes.len()
    }
}

pub(crate) fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

pub(crate) fn put_string(out: &mut Vec<u8>, s: &str) {
    put_u32(out, s.len() as u32);
    out.extend_from_slice(s.as_bytes());
}

pub(crate) fn expect_magic(r: &mut Reader<'_>, magic: &[u8; 4]) -> Result<()> {
    let found = r.take(4, "magic")?;
    if found != magic {
        return Err(Error::BadMagic {
            expected: String::from_utf8_lossy(magic).into_owned(),
            found: String::from_utf8_lossy(found).into_owned(),
        });
    }
    Ok(())
}

/// A tensor whose element type is only known at run time.
#[derive(Debug, Clone, PartialEq)]
pub enum AnyTensor {
    F32(Tensor<f32>),
    F64(Tensor<f64>),
}

impl AnyTensor {
    pub fn dtype(&self) -> DType {
        match self {
            AnyTensor::F32(_) => DType::F32,
            AnyTensor::F64(_) => DType::F64,
        }
    }

    pub fn shape(&self) -> &[usize] {
        match self {
            AnyTensor::F32(t) => t.shape(),
            AnyTensor::F64(t) => t.shape(),
        }
    }

    /// Wraps a copy of `t` under its own dtype.
    pub fn from_tensor<T: Scalar>(t: &Tensor<T>) -> Self {
        match T::DTYPE {
            DType::F32 => AnyTensor::F32(t.cast()),
            DType::F64 => AnyTensor::F64(t.cast()),
        }
    }

    pub fn to_tensor<T: Scalar>(&self) -> Tensor<T> {
        match self {
            AnyTensor::F32(t) => t.cast(),
            AnyTensor::F64(t) => t.cast(),
        }
    }
}

impl From<Tensor<f32>> for AnyTensor {
    fn from(t: Tensor<f32>) -> Self {
        AnyTensor::F32(t)
    }
}

impl From<Tensor<f64>> for AnyTensor {
    fn from(t: Tensor<f64>) -> Self {
        AnyTensor::F64(t)
    }
}

/// `u8 dtype, u32 rank, u32 extents[rank], payload`.
pub(crate) fn put_tensor<T: Scalar>(out: &mut Vec<u8>, t: &Tensor<T>) {
    out.push(T::DTYPE.code());
    put_u32(out, t.rank() as u32);
    for &e in t.shape() {
        put_u32(out, e as u32);
    }
    out.reserve(t.numel() * T::DTYPE.size_in_bytes());
    for &v in t.data() {
        v.write_le(out);
    }
}

pub(crate) fn put_any(out: &mut Vec<u8>, t: &AnyTensor) {
    match t {
        AnyTensor::F32(t) => put_tensor(out, t),
        AnyTensor::F64(t) => put_tensor(out, t),
    }
}

fn read_payload<T: Scalar>(r: &mut Reader<'_>, shape: Vec<usize>) -> Result<Tensor<T>> {
    let numel: usize = shape.iter().product();
    let size = T::DTYPE.size_in_bytes();
    let raw = r.take(numel * size, "tensor payload")?;
    let data = raw.chunks_exact(size).map(T::read_le).collect();
    Tensor::new(shape, data)
}

pub(crate) fn read_tensor(r: &mut Reader<'_>) -> Result<AnyTensor> {
    let code = r.u8("dtype")?;
    let dtype = DType::from_code(code).ok_or_else(|| Error::Malformed(format!("unknown dtype code {code}")))?;
    let rank = r.u32("rank")? as usize;
    if rank == 0 {
        return Err(Error::Malformed("tensor rank 0".into()));
    }
    let mut shape = Vec::with_capacity(rank);
    for _ in 0..rank {
        shape.push(r.u32("extents")? as usize);
    }
    if shape.contains(&0) {
        return Err(Error::Malformed(format!("zero extent in {shape:?}")));
    }
    Ok(match dtype {
        DType::F32 => AnyTensor::F32(read_payload(r, shape)?),
        DType::F64 => AnyTensor::F64(read_payload(r, shape)?),
    })
}
