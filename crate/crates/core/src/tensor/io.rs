//! Flat binary tensor format.
//!
//! Layout, all little-endian:
//!
//! | offset | size | field                         |
//! |--------|------|-------------------------------|
//! | 0      | 4    | magic `KNT4`                  |
//! | 4      | 4    | dtype code (1 = f32, 2 = f64) |
//! | 8      | 16   | dims n, c, h, w as u32        |
//! | 24     | ...  | elements in NCHW order        |

use std::io::{Read, Write};
use std::path::Path;

use crate::element::{DType, Element};
use crate::error::{KnError, Result};
use crate::tensor::{Shape4, Tensor4};

pub const MAGIC: &[u8; 4] = b"KNT4";
pub const HEADER_LEN: usize = 24;

/// A tensor read from disk whose element type is only known at runtime.
#[derive(Debug, Clone)]
pub enum TensorFile {
    F32(Tensor4<f32>),
    F64(Tensor4<f64>),
}

impl TensorFile {
    pub fn dtype(&self) -> DType {
        match self {
            TensorFile::F32(_) => DType::F32,
            TensorFile::F64(_) => DType::F64,
        }
    }

    /// Convert to the requested element type.
    pub fn into_tensor<T: Element>(self) -> Tensor4<T> {
        match self {
            TensorFile::F32(t) => t.cast(),
            TensorFile::F64(t) => t.cast(),
        }
    }
}

pub fn write_tensor<T: Element, W: Write>(t: &Tensor4<T>, mut out: W) -> Result<()> {
    let mut buf = Vec::with_capacity(HEADER_LEN + t.numel() * T::DTYPE.size());
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&T::DTYPE.code().to_le_bytes());
    for d in t.shape().dims() {
        let d = u32::try_from(d).map_err(|_| KnError::Format(format!("dimension {d} exceeds u32")))?;
        buf.extend_from_slice(&d.to_le_bytes());
    }
    for &v in t.data() {
        v.to_le_bytes_vec(&mut buf);
    }
    out.write_all(&buf)?;
    Ok(())
}

pub fn read_tensor<R: Read>(mut input: R) -> Result<TensorFile> {
    let mut header = [0u8; HEADER_LEN];
    input.read_exact(&mut header).map_err(|_| KnError::Format("header shorter than 24 bytes".into()))?;
    if &header[0..4] != MAGIC {
        return Err(KnError::Format("missing KNT4 magic".into()));
    }
    let word = |i: usize| u32::from_le_bytes(header[i..i + 4].try_into().unwrap());
    let dtype = DType::from_code(word(4)).ok_or_else(|| KnError::Format(format!("unknown dtype code {}", word(4))))?;
    let shape = Shape4::new(word(8) as usize, word(12) as usize, word(16) as usize, word(20) as usize);
    shape.validate()?;
    let mut body = Vec::new();
    input.read_to_end(&mut body)?;
    if body.len() != shape.numel() * dtype.size() {
        return Err(KnError::Format(format!("payload of {} bytes does not match {shape} x {}", body.len(), dtype.name())));
    }
    Ok(match dtype {
        DType::F32 => TensorFile::F32(decode(shape, &body)?),
        DType::F64 => TensorFile::F64(decode(shape, &body)?),
    })
}

fn decode<T: Element>(shape: Shape4, body: &[u8]) -> Result<Tensor4<T>> {
    let width = T::DTYPE.size();
    let data = body.chunks_exact(width).map(T::from_le_slice).collect();
    Tensor4::from_vec(shape, data)
}

pub fn write_tensor_file<T: Element>(t: &Tensor4<T>, path: impl AsRef<Path>) -> Result<()> {
    let file = std::fs::File::create(path)?;
    write_tensor(t, std::io::BufWriter::new(file))
}

pub fn read_tensor_file(path: impl AsRef<Path>) -> Result<TensorFile> {
    let file = std::fs::File::open(path)?;
    read_tensor(std::io::BufReader::new(file))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::Rng;
    use proptest::prelude::*;

    #[test]
    fn header_layout_is_fixed() {
        let t = Tensor4::<f32>::from_vec([1, 2, 1, 3], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        let mut buf = Vec::new();
        write_tensor(&t, &mut buf).unwrap();
        assert_eq!(&buf[0..4], b"KNT4");
        assert_eq!(&buf[4..8], &1u32.to_le_bytes());
        assert_eq!(&buf[8..12], &1u32.to_le_bytes());
        assert_eq!(&buf[12..16], &2u32.to_le_bytes());
        assert_eq!(&buf[20..24], &3u32.to_le_bytes());
        assert_eq!(&buf[24..28], &1.0f32.to_le_bytes());
        assert_eq!(buf.len(), 24 + 6 * 4);
    }

    #[test]
    fn rejects_bad_magic_and_short_payload() {
        let t = Tensor4::<f64>::ones([1, 1, 2, 2]).unwrap();
        let mut buf = Vec::new();
        write_tensor(&t, &mut buf).unwrap();
        let mut bad = buf.clone();
        bad[0] = b'X';
        assert!(read_tensor(bad.as_slice()).is_err());
        buf.pop();
        assert!(read_tensor(buf.as_slice()).is_err());
    }

    proptest! {
        #[test]
        fn round_trip_is_bit_exact(n in 1usize..3, c in 1usize..4, h in 1usize..5, w in 1usize..5, seed: u64) {
            let mut rng = Rng::new(seed, 1);
            let t = Tensor4::<f64>::randn([n, c, h, w], 3.0, &mut rng).unwrap();
            let mut buf = Vec::new();
            write_tensor(&t, &mut buf).unwrap();
            match read_tensor(buf.as_slice()).unwrap() {
                TensorFile::F64(back) => prop_assert_eq!(back, t),
                other => prop_assert!(false, "wrong dtype {:?}", other.dtype()),
            }
        }
    }
}
