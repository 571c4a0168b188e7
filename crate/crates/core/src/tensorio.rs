//! Binary tensor container.
//!
//! Layout (all integers little-endian):
//!
//! | field   | type            |
//! |---------|-----------------|
//! | magic   | `b"CCTF"`       |
//! | version | u32 (= 1)       |
//! | rank    | u32             |
//! | dims    | u64 × rank      |
//! | payload | f64 × Π dims, row-major |

use std::fs::File;
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::path::Path;

use thiserror::Error;

pub const MAGIC: &[u8; 4] = b"CCTF";
pub const VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum TensorIoError {
    #[error("i/o error: {0}")]
    Io(#[from] io::Error),
    #[error("bad magic {0:?}, expected \"CCTF\"")]
    BadMagic([u8; 4]),
    #[error("unsupported tensor file version {0}")]
    BadVersion(u32),
    #[error("tensor has {found} values but dims {dims:?} require {expected}")]
    SizeMismatch {
        dims: Vec<usize>,
        expected: usize,
        found: usize,
    },
    #[error("expected a rank-{expected} tensor, found rank {found}")]
    Rank { expected: usize, found: usize },
}

/// A dense tensor as stored on disk.
#[derive(Debug, Clone, PartialEq)]
pub struct RawTensor {
    pub dims: Vec<usize>,
    pub data: Vec<f64>,
}

impl RawTensor {
    pub fn new(dims: Vec<usize>, data: Vec<f64>) -> Result<Self, TensorIoError> {
        let expected: usize = dims.iter().product();
        if expected != data.len() {
            return Err(TensorIoError::SizeMismatch {
                dims,
                expected,
                found: data.len(),
            });
        }
        Ok(Self { dims, data })
    }

    pub fn write_to<W: Write>(&self, w: &mut W) -> Result<(), TensorIoError> {
        w.write_all(MAGIC)?;
        w.write_all(&VERSION.to_le_bytes())?;
        w.write_all(&(self.dims.len() as u32).to_le_bytes())?;
        for &d in &self.dims {
            w.write_all(&(d as u64).to_le_bytes())?;
        }
        for &v in &self.data {
            w.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_from<R: Read>(r: &mut R) -> Result<Self, TensorIoError> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(TensorIoError::BadMagic(magic));
        }
        let version = read_u32(r)?;
        if version != VERSION {
            return Err(TensorIoError::BadVersion(version));
        }
        let rank = read_u32(r)? as usize;
        let mut dims = Vec::with_capacity(rank);
        for _ in 0..rank {
            let mut b = [0u8; 8];
            r.read_exact(&mut b)?;
            dims.push(u64::from_le_bytes(b) as usize);
        }
        let n: usize = dims.iter().product();
        let mut bytes = vec![0u8; n * 8];
        r.read_exact(&mut bytes)?;
        let data = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Ok(Self { dims, data })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), TensorIoError> {
        let mut w = BufWriter::new(File::create(path)?);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, TensorIoError> {
        let mut r = BufReader::new(File::open(path)?);
        Self::read_from(&mut r)
    }

    /// Interprets the tensor as a matrix, returning `(rows, cols)`.
    pub fn matrix_shape(&self) -> Result<(usize, usize), TensorIoError> {
        match self.dims.as_slice() {
            [r, c] => Ok((*r, *c)),
            _ => Err(TensorIoError::Rank {
                expected: 2,
                found: self.dims.len(),
            }),
        }
    }
}

fn read_u32<R: Read>(r: &mut R) -> io::Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_layout_is_exact() {
        let t = RawTensor::new(vec![1, 2], vec![1.0, -2.5]).unwrap();
        let mut buf = Vec::new();
        t.write_to(&mut buf).unwrap();
        assert_eq!(&buf[..4], b"CCTF");
        assert_eq!(&buf[4..8], &1u32.to_le_bytes());
        assert_eq!(&buf[8..12], &2u32.to_le_bytes());
        assert_eq!(&buf[12..20], &1u64.to_le_bytes());
        assert_eq!(&buf[20..28], &2u64.to_le_bytes());
        assert_eq!(&buf[28..36], &1.0f64.to_le_bytes());
        assert_eq!(buf.len(), 44);
        let back = RawTensor::read_from(&mut buf.as_slice()).unwrap();
        assert_eq!(back, t);
    }

    #[test]
    fn rejects_bad_magic_and_short_payload() {
        let mut buf = b"XXXX".to_vec();
        buf.extend_from_slice(&[0; 8]);
        assert!(matches!(
            RawTensor::read_from(&mut buf.as_slice()),
            Err(TensorIoError::BadMagic(_))
        ));
        let t = RawTensor::new(vec![3], vec![1.0, 2.0, 3.0]).unwrap();
        let mut buf = Vec::new();
        t.write_to(&mut buf).unwrap();
        buf.truncate(buf.len() - 3);
        assert!(RawTensor::read_from(&mut buf.as_slice()).is_err());
        assert!(RawTensor::new(vec![2, 2], vec![0.0]).is_err());
    }
}
