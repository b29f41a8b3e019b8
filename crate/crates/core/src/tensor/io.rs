//! Raw tensor files: `"FTSR"`, `u32` version, `u8` dtype code, `u32` rank,
//! `u32` extents, then the little-endian row-major payload.

use std::path::Path;

use super::Tensor;
use crate::binio::{expect_magic, put_tensor, put_u32, read_tensor, Reader};
pub use crate::binio::AnyTensor;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub const MAGIC: &[u8; 4] = b"FTSR";
pub const VERSION: u32 = 1;

pub fn encode<T: Scalar>(tensor: &Tensor<T>) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + tensor.numel() * T::DTYPE.size_in_bytes());
    out.extend_from_slice(MAGIC);
    put_u32(&mut out, VERSION);
    put_tensor(&mut out, tensor);
    out
}

pub fn decode(bytes: &[u8]) -> Result<AnyTensor> {
    let mut r = Reader::new(bytes);
    expect_magic(&mut r, MAGIC)?;
    let version = r.u32("version")?;
    if version != VERSION {
        return Err(Error::Version {
            found: version,
            expected: VERSION,
        });
    }
    let tensor = read_tensor(&mut r)?;
    if !r.is_empty() {
        return Err(Error::Malformed("trailing bytes after tensor payload".into()));
    }
    Ok(tensor)
}

pub fn write<T: Scalar>(path: impl AsRef<Path>, tensor: &Tensor<T>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, encode(tensor)).map_err(|e| Error::io(path, e))
}

pub fn read(path: impl AsRef<Path>) -> Result<AnyTensor> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes)
}
