//! NFT1 binary tensors.
//!
//! Layout (all integers little-endian):
//!
//! | offset        | size        | field                         |
//! |---------------|-------------|-------------------------------|
//! | 0             | 4           | magic `b"NFT1"`               |
//! | 4             | 2           | version (`u16`, currently 1)  |
//! | 6             | 1           | ndim (`u8`, 1..=3)            |
//! | 7             | 8 * ndim    | dims (`u64` each)             |
//! | 7 + 8 * ndim  | 8 * prod    | row-major `f64` values        |

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

pub const MAGIC: [u8; 4] = *b"NFT1";
pub const VERSION: u16 = 1;
pub const MAX_NDIM: usize = 3;
const HEADER_FIXED: usize = 7;

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub dims: Vec<usize>,
    pub values: Vec<f64>,
    /// Set when the tensor was read with non-finite values allowed and some were present.
    pub quarantined: bool,
}

impl Tensor {
    pub fn new(dims: Vec<usize>, values: Vec<f64>) -> Result<Self> {
        check_shape(&dims, values.len())?;
        Ok(Self {
            dims,
            values,
            quarantined: false,
        })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Row `i` of a 2-D tensor.
    pub fn row(&self, i: usize) -> &[f64] {
        assert_eq!(self.dims.len(), 2, "row() on a {}-d tensor", self.dims.len());
        let cols = self.dims[1];
        &self.values[i * cols..(i + 1) * cols]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        assert_eq!(self.dims.len(), 2, "rows() on a {}-d tensor", self.dims.len());
        let cols = self.dims[1].max(1);
        self.values.chunks(cols)
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct ReadOptions {
    pub allow_nonfinite: bool,
}

fn check_shape(dims: &[usize], len: usize) -> Result<()> {
    if dims.is_empty() || dims.len() > MAX_NDIM {
        return Err(Error::Validation(format!(
            "tensor rank must be 1..={MAX_NDIM}, got {}",
            dims.len()
        )));
    }
    let expected = dims
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .ok_or_else(|| Error::Validation(format!("dims {dims:?} overflow")))?;
    if expected != len {
        return Err(Error::Validation(format!(
            "dims {dims:?} imply {expected} values, got {len}"
        )));
    }
    Ok(())
}

pub fn check_finite(values: &[f64]) -> Result<()> {
    match values.iter().position(|v| !v.is_finite()) {
        Some(index) => Err(Error::NonFinite {
            index,
            value: values[index],
        }),
        None => Ok(()),
    }
}

/// Exact size in bytes of an NFT1 file with the given dims.
pub fn encoded_len(dims: &[usize]) -> usize {
    HEADER_FIXED + 8 * dims.len() + 8 * dims.iter().product::<usize>()
}

pub fn encode_tensor(dims: &[usize], values: &[f64]) -> Result<Vec<u8>> {
    check_shape(dims, values.len())?;
    check_finite(values)?;
    let mut out = Vec::with_capacity(encoded_len(dims));
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.push(dims.len() as u8);
    for &d in dims {
        out.extend_from_slice(&(d as u64).to_le_bytes());
    }
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

/// Decodes an NFT1 buffer. `path` only labels error messages.
pub fn decode_tensor(bytes: &[u8], path: &Path, opts: ReadOptions) -> Result<Tensor> {
    if bytes.len() < HEADER_FIXED {
        let mut found = [0u8; 4];
        let n = bytes.len().min(4);
        found[..n].copy_from_slice(&bytes[..n]);
        if found != MAGIC {
            return Err(Error::BadMagic {
                path: path.to_path_buf(),
                found,
            });
        }
        return Err(Error::LengthMismatch {
            path: path.to_path_buf(),
            expected: HEADER_FIXED as u64,
            actual: bytes.len() as u64,
        });
    }
    let found: [u8; 4] = bytes[0..4].try_into().unwrap();
    if found != MAGIC {
        return Err(Error::BadMagic {
            path: path.to_path_buf(),
            found,
        });
    }
    let version = u16::from_le_bytes([bytes[4], bytes[5]]);
    if version != VERSION {
        return Err(Error::UnsupportedVersion {
            path: path.to_path_buf(),
            found: version,
            expected: VERSION,
        });
    }
    let ndim = bytes[6] as usize;
    if ndim == 0 || ndim > MAX_NDIM {
        return Err(Error::Validation(format!(
            "{}: ndim {ndim} outside 1..={MAX_NDIM}",
            path.display()
        )));
    }
    let header_len = HEADER_FIXED + 8 * ndim;
    if bytes.len() < header_len {
        return Err(Error::LengthMismatch {
            path: path.to_path_buf(),
            expected: header_len as u64,
            actual: bytes.len() as u64,
        });
    }
    let mut dims = Vec::with_capacity(ndim);
    let mut count: u64 = 1;
    for k in 0..ndim {
        let off = HEADER_FIXED + 8 * k;
        let d = u64::from_le_bytes(bytes[off..off + 8].try_into().unwrap());
        count = count.checked_mul(d).ok_or_else(|| {
            Error::Validation(format!("{}: dims overflow", path.display()))
        })?;
        dims.push(d as usize);
    }
    let expected = count
        .checked_mul(8)
        .ok_or_else(|| Error::Validation(format!("{}: dims overflow", path.display())))?;
    let actual = (bytes.len() - header_len) as u64;
    if expected != actual {
        return Err(Error::LengthMismatch {
            path: path.to_path_buf(),
            expected,
            actual,
        });
    }
    let values: Vec<f64> = bytes[header_len..]
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    let quarantined = match check_finite(&values) {
        Ok(()) => false,
        Err(e) if !opts.allow_nonfinite => return Err(e),
        Err(_) => true,
    };
    Ok(Tensor {
        dims,
        values,
        quarantined,
    })
}

pub fn write_tensor(path: impl AsRef<Path>, dims: &[usize], values: &[f64]) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode_tensor(dims, values)?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn read_tensor(path: impl AsRef<Path>) -> Result<Tensor> {
    read_tensor_with(path, ReadOptions::default())
}

pub fn read_tensor_with(path: impl AsRef<Path>, opts: ReadOptions) -> Result<Tensor> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_tensor(&bytes, path, opts)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn tmp() -> tempfile::TempDir {
        tempfile::tempdir().unwrap()
    }

    #[test]
    fn two_by_two_layout() {
        let bytes = encode_tensor(&[2, 2], &[1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(&bytes[0..4], b"NFT1");
        assert_eq!(&bytes[4..6], &1u16.to_le_bytes());
        assert_eq!(bytes[6], 2);
        assert_eq!(&bytes[7..15], &2u64.to_le_bytes());
        assert_eq!(&bytes[15..23], &2u64.to_le_bytes());
        assert_eq!(bytes.len(), 23 + 32);
        assert_eq!(&bytes[23..31], &1.0f64.to_le_bytes());
    }

    #[test]
    fn vector_of_three_is_39_bytes() {
        let dir = tmp();
        let p = dir.path().join("z.nft");
        write_tensor(&p, &[3], &[0.0, 0.0, 0.0]).unwrap();
        assert_eq!(fs::metadata(&p).unwrap().len(), 39);
        assert_eq!(encoded_len(&[3]), 39);
    }

    #[test]
    fn nan_rejected_with_index() {
        let dir = tmp();
        let err = write_tensor(dir.path().join("x"), &[2], &[1.0, f64::NAN]).unwrap_err();
        assert!(matches!(err, Error::NonFinite { index: 1, .. }), "{err}");
        assert!(!dir.path().join("x").exists());
    }

    #[test]
    fn bad_magic() {
        let mut bytes = encode_tensor(&[1], &[1.0]).unwrap();
        bytes[..4].copy_from_slice(b"XXXX");
        let err = decode_tensor(&bytes, Path::new("f"), ReadOptions::default()).unwrap_err();
        assert!(matches!(err, Error::BadMagic { .. }));
        assert!(err.to_string().contains("not an NFT1 file"));
    }

    #[test]
    fn truncated_data_reports_expected_bytes() {
        let mut bytes = encode_tensor(&[4], &[1.0, 2.0, 3.0, 4.0]).unwrap();
        bytes.truncate(bytes.len() - 8);
        let err = decode_tensor(&bytes, Path::new("f"), ReadOptions::default()).unwrap_err();
        match err {
            Error::LengthMismatch {
                expected, actual, ..
            } => {
                assert_eq!(expected, 32);
                assert_eq!(actual, 24);
            }
            e => panic!("unexpected {e}"),
        }
    }

    #[test]
    fn unsupported_version() {
        let mut bytes = encode_tensor(&[1], &[1.0]).unwrap();
        bytes[4] = 9;
        let err = decode_tensor(&bytes, Path::new("f"), ReadOptions::default()).unwrap_err();
        assert!(matches!(err, Error::UnsupportedVersion { found: 9, .. }));
    }

    #[test]
    fn nonfinite_quarantine() {
        // encode_tensor refuses NaN, so patch the payload directly
        let mut bytes = encode_tensor(&[2], &[1.0, 2.0]).unwrap();
        let n = bytes.len();
        bytes[n - 8..].copy_from_slice(&f64::INFINITY.to_le_bytes());
        let p = Path::new("f");
        assert!(decode_tensor(&bytes, p, ReadOptions::default()).is_err());
        let t = decode_tensor(
            &bytes,
            p,
            ReadOptions {
                allow_nonfinite: true,
            },
        )
        .unwrap();
        assert!(t.quarantined);
    }

    #[test]
    fn rank_limits() {
        assert!(encode_tensor(&[], &[]).is_err());
        assert!(encode_tensor(&[1, 1, 1, 1], &[0.0]).is_err());
        assert!(encode_tensor(&[2, 3], &[0.0; 5]).is_err());
    }

    proptest! {
        #[test]
        fn round_trip_is_bitwise(
            dims in prop::collection::vec(0usize..5, 1..=3),
            seed in any::<u64>(),
        ) {
            let n: usize = dims.iter().product();
            let values: Vec<f64> = (0..n)
                .map(|i| f64::from_bits(seed.wrapping_mul(i as u64 + 1)) )
                .map(|v| if v.is_finite() { v } else { 0.5 })
                .collect();
            let bytes = encode_tensor(&dims, &values).unwrap();
            prop_assert_eq!(bytes.len(), 7 + 8 * dims.len() + 8 * n);
            let t = decode_tensor(&bytes, Path::new("p"), ReadOptions::default()).unwrap();
            prop_assert_eq!(&t.dims, &dims);
            let same = t.values.iter().zip(&values).all(|(a, b)| a.to_bits() == b.to_bits());
            prop_assert!(same);
            prop_assert_eq!(encode_tensor(&t.dims, &t.values).unwrap(), bytes);
        }
    }
}
