//! Binary checkpoint codec.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic         4 bytes   "NNC1"
//! version       u32       1
//! entry_count   u32
//! entry*        name_len u16 | name (UTF-8) | dtype u8 | ndim u8 | dims ndim×u32 | data
//! ```
//!
//! `data` is the row-major element array, each `f32` stored as its raw
//! little-endian bit pattern. The encoding is canonical, so decoding and
//! re-encoding any valid file reproduces it byte for byte.

use alloc::string::String;
use alloc::vec::Vec;

use thiserror::Error;

use crate::tensor::{DType, StateDict, Tensor};

pub const MAGIC: [u8; 4] = *b"NNC1";
pub const FORMAT_VERSION: u32 = 1;
pub const HEADER_LEN: usize = 12;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum WriteError {
    #[error("entry name {name:?} is {len} bytes, longer than 65535")]
    NameTooLong { name: String, len: usize },
    #[error("entry {name:?} has {ndim} dimensions, more than 255")]
    TooManyDims { name: String, ndim: usize },
    #[error("entry {name:?} axis {axis} extent {extent} exceeds u32")]
    ExtentTooLarge {
        name: String,
        axis: usize,
        extent: usize,
    },
    #[error("{0} entries exceed u32")]
    TooManyEntries(usize),
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ReadError {
    #[error("bad magic {0:02x?}, expected \"NNC1\"")]
    BadMagic([u8; 4]),
    #[error("unsupported format version {0}")]
    UnsupportedVersion(u32),
    #[error("file truncated in header")]
    TruncatedHeader,
    #[error("file truncated in entry {index}{}", name.as_ref().map(|n| alloc::format!(" ({n:?})")).unwrap_or_default())]
    Truncated { index: usize, name: Option<String> },
    #[error("entry {index} name is not valid UTF-8")]
    InvalidName { index: usize },
    #[error("duplicate entry name {0:?}")]
    DuplicateName(String),
    #[error("entry {name:?} has unknown dtype code {code}")]
    UnknownDtype { name: String, code: u8 },
    #[error("entry {name:?} has an invalid shape")]
    InvalidShape { name: String },
    #[error("header declares {declared} entries ending at byte {end}, but the file is {actual} bytes")]
    LengthMismatch {
        declared: u32,
        end: usize,
        actual: usize,
    },
}

/// Serializes a state dict. Identical input always yields identical bytes.
pub fn write_checkpoint(state: &StateDict) -> Result<Vec<u8>, WriteError> {
    let count = u32::try_from(state.len()).map_err(|_| WriteError::TooManyEntries(state.len()))?;
    let payload: usize = state
        .iter()
        .map(|(n, t)| 2 + n.len() + 2 + 4 * t.rank() + 4 * t.len())
        .sum();
    let mut out = Vec::with_capacity(HEADER_LEN + payload);
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&count.to_le_bytes());

    for (name, t) in state.iter() {
        let name_len = u16::try_from(name.len()).map_err(|_| WriteError::NameTooLong {
            name: name.into(),
            len: name.len(),
        })?;
        let ndim = u8::try_from(t.rank()).map_err(|_| WriteError::TooManyDims {
            name: name.into(),
            ndim: t.rank(),
        })?;
        out.extend_from_slice(&name_len.to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.push(t.dtype().code());
        out.push(ndim);
        for (axis, &extent) in t.shape().iter().enumerate() {
            let e = u32::try_from(extent).map_err(|_| WriteError::ExtentTooLarge {
                name: name.into(),
                axis,
                extent,
            })?;
            out.extend_from_slice(&e.to_le_bytes());
        }
        for v in t.data() {
            out.extend_from_slice(&v.to_bits().to_le_bytes());
        }
    }
    Ok(out)
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Option<&'a [u8]> {
        let end = self.pos.checked_add(n)?;
        let s = self.bytes.get(self.pos..end)?;
        self.pos = end;
        Some(s)
    }

    fn u8(&mut self) -> Option<u8> {
        self.take(1).map(|b| b[0])
    }

    fn u16(&mut self) -> Option<u16> {
        self.take(2).map(|b| u16::from_le_bytes([b[0], b[1]]))
    }

    fn u32(&mut self) -> Option<u32> {
        self.take(4)
            .map(|b| u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }
}

/// Parses checkpoint bytes. Entry order in the result matches file order.
pub fn read_checkpoint(bytes: &[u8]) -> Result<StateDict, ReadError> {
    let mut cur = Cursor { bytes, pos: 0 };
    let magic = cur.take(4).ok_or(ReadError::TruncatedHeader)?;
    if magic != MAGIC {
        let mut m = [0u8; 4];
        m.copy_from_slice(magic);
        return Err(ReadError::BadMagic(m));
    }
    let version = cur.u32().ok_or(ReadError::TruncatedHeader)?;
    if version != FORMAT_VERSION {
        return Err(ReadError::UnsupportedVersion(version));
    }
    let count = cur.u32().ok_or(ReadError::TruncatedHeader)?;

    let mut state = StateDict::new();
    for index in 0..count as usize {
        let truncated = |name: Option<&str>| ReadError::Truncated {
            index,
            name: name.map(String::from),
        };
        let name_len = cur.u16().ok_or_else(|| truncated(None))?;
        let raw = cur.take(name_len as usize).ok_or_else(|| truncated(None))?;
        let name = core::str::from_utf8(raw).map_err(|_| ReadError::InvalidName { index })?;
        let code = cur.u8().ok_or_else(|| truncated(Some(name)))?;
        let dtype = DType::from_code(code).ok_or_else(|| ReadError::UnknownDtype {
            name: name.into(),
            code,
        })?;
        let ndim = cur.u8().ok_or_else(|| truncated(Some(name)))?;
        let mut shape = Vec::with_capacity(ndim as usize);
        for _ in 0..ndim {
            shape.push(cur.u32().ok_or_else(|| truncated(Some(name)))? as usize);
        }
        if shape.is_empty() || shape.contains(&0) {
            return Err(ReadError::InvalidShape { name: name.into() });
        }
        let numel = shape
            .iter()
            .try_fold(1usize, |acc, &e| acc.checked_mul(e))
            .ok_or_else(|| ReadError::InvalidShape { name: name.into() })?;
        let nbytes = numel
            .checked_mul(dtype.size_bytes())
            .ok_or_else(|| ReadError::InvalidShape { name: name.into() })?;
        let raw = cur.take(nbytes).ok_or_else(|| truncated(Some(name)))?;
        let data: Vec<f32> = raw
            .chunks_exact(4)
            .map(|b| f32::from_bits(u32::from_le_bytes([b[0], b[1], b[2], b[3]])))
            .collect();
        if state.index_of(name).is_some() {
            return Err(ReadError::DuplicateName(name.into()));
        }
        let tensor = Tensor::new(shape, data).expect("shape validated above");
        state.insert(name, tensor).expect("uniqueness checked above");
    }
    if cur.pos != bytes.len() {
        return Err(ReadError::LengthMismatch {
            declared: count,
            end: cur.pos,
            actual: bytes.len(),
        });
    }
    Ok(state)
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn one(name: &str, shape: &[usize], data: &[f32]) -> StateDict {
        let mut s = StateDict::new();
        s.insert(name, Tensor::new(shape.to_vec(), data.to_vec()).unwrap())
            .unwrap();
        s
    }

    #[test]
    fn empty_state_is_twelve_bytes() {
        let bytes = write_checkpoint(&StateDict::new()).unwrap();
        assert_eq!(bytes, b"NNC1\x01\x00\x00\x00\x00\x00\x00\x00");
        assert_eq!(read_checkpoint(&bytes).unwrap(), StateDict::new());
    }

    #[test]
    fn single_entry_layout() {
        let bytes = write_checkpoint(&one("w", &[2], &[1.0, 2.0])).unwrap();
        // 1.0f32 = 0x3F800000, 2.0f32 = 0x40000000, little-endian.
        let expected_data = [0x00, 0x00, 0x80, 0x3F, 0x00, 0x00, 0x00, 0x40];
        let mut expected = b"NNC1\x01\x00\x00\x00\x01\x00\x00\x00".to_vec();
        expected.extend_from_slice(&[1, 0, b'w', 0, 1, 2, 0, 0, 0]);
        expected.extend_from_slice(&expected_data);
        assert_eq!(bytes, expected);
        assert_eq!(&bytes[bytes.len() - 8..], &expected_data);
    }

    #[test]
    fn truncation_names_entry() {
        let mut s = one("a", &[1], &[0.5]);
        s.insert("conv.weight", Tensor::new(vec![4], vec![1.0; 4]).unwrap())
            .unwrap();
        let bytes = write_checkpoint(&s).unwrap();
        let err = read_checkpoint(&bytes[..bytes.len() - 3]).unwrap_err();
        assert_eq!(
            err,
            ReadError::Truncated {
                index: 1,
                name: Some("conv.weight".into())
            }
        );
    }

    #[test]
    fn duplicate_name_rejected() {
        let a = write_checkpoint(&one("w", &[1], &[1.0])).unwrap();
        let mut bytes = a.clone();
        bytes[8] = 2; // two entries
        bytes.extend_from_slice(&a[HEADER_LEN..]);
        assert_eq!(
            read_checkpoint(&bytes),
            Err(ReadError::DuplicateName("w".into()))
        );
    }

    #[test]
    fn distinct_errors() {
        let good = write_checkpoint(&one("w", &[1], &[1.0])).unwrap();

        let mut bad = good.clone();
        bad[0] = b'X';
        assert!(matches!(read_checkpoint(&bad), Err(ReadError::BadMagic(_))));

        let mut bad = good.clone();
        bad[4] = 2;
        assert_eq!(read_checkpoint(&bad), Err(ReadError::UnsupportedVersion(2)));

        let mut bad = good.clone();
        bad[HEADER_LEN + 3] = 7; // dtype byte
        assert_eq!(
            read_checkpoint(&bad),
            Err(ReadError::UnknownDtype {
                name: "w".into(),
                code: 7
            })
        );

        let mut bad = good.clone();
        bad.push(0);
        assert!(matches!(
            read_checkpoint(&bad),
            Err(ReadError::LengthMismatch { .. })
        ));

        assert_eq!(read_checkpoint(&good[..6]), Err(ReadError::TruncatedHeader));
    }

    #[test]
    fn name_too_long() {
        let long = "x".repeat(70_000);
        let s = one(&long, &[1], &[0.0]);
        assert!(matches!(
            write_checkpoint(&s),
            Err(WriteError::NameTooLong { len: 70_000, .. })
        ));
    }

    #[test]
    fn nan_payloads_survive() {
        let weird = [
            f32::from_bits(0x7FC0_1234),
            f32::from_bits(0xFF80_0001),
            f32::INFINITY,
            -0.0,
        ];
        let s = one("n", &[2, 2], &weird);
        let back = read_checkpoint(&write_checkpoint(&s).unwrap()).unwrap();
        assert_eq!(back, s);
    }
}
