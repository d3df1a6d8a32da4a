//! Binary feature matrices.
//!
//! Layout, all integers little-endian:
//!
//! | offset | size      | field                                  |
//! |--------|-----------|----------------------------------------|
//! | 0      | 4         | magic `b"VFEA"`                        |
//! | 4      | 1         | dtype code: 1 = f32, 2 = f64           |
//! | 5      | 1         | rank (1 or 2)                          |
//! | 6      | 2         | reserved, zero                         |
//! | 8      | 8 × rank  | dims as u64                            |
//! | ...    | ...       | row-major values in the declared dtype |
//!
//! A rank-1 file is read as a single row.

use std::fs;
use std::path::Path;

use ndarray::Array2;

use crate::error::{Error, Result};

pub const FEATURE_MAGIC: [u8; 4] = *b"VFEA";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FeatureDtype {
    F32 = 1,
    F64 = 2,
}

impl FeatureDtype {
    fn width(self) -> usize {
        match self {
            FeatureDtype::F32 => 4,
            FeatureDtype::F64 => 8,
        }
    }
}

pub fn write_features(path: &Path, values: &Array2<f64>, dtype: FeatureDtype) -> Result<()> {
    let mut buf = Vec::with_capacity(24 + values.len() * dtype.width());
    buf.extend_from_slice(&FEATURE_MAGIC);
    buf.push(dtype as u8);
    buf.push(2);
    buf.extend_from_slice(&[0, 0]);
    buf.extend_from_slice(&(values.nrows() as u64).to_le_bytes());
    buf.extend_from_slice(&(values.ncols() as u64).to_le_bytes());
    for &v in values.iter() {
        match dtype {
            FeatureDtype::F32 => buf.extend_from_slice(&(v as f32).to_le_bytes()),
            FeatureDtype::F64 => buf.extend_from_slice(&v.to_le_bytes()),
        }
    }
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    fs::write(path, buf).map_err(|e| Error::io(path, e))
}

pub fn read_features(path: &Path) -> Result<Array2<f64>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes).map_err(|message| Error::Parse { path: path.to_path_buf(), line: 0, message })
}

fn decode(bytes: &[u8]) -> std::result::Result<Array2<f64>, String> {
    if bytes.len() < 8 || bytes[..4] != FEATURE_MAGIC {
        return Err("not a feature file (bad magic)".into());
    }
    let dtype = match bytes[4] {
        1 => FeatureDtype::F32,
        2 => FeatureDtype::F64,
        c => return Err(format!("unknown dtype code {c}")),
    };
    let rank = bytes[5] as usize;
    if !(1..=2).contains(&rank) {
        return Err(format!("unsupported rank {rank}"));
    }
    let header = 8 + 8 * rank;
    if bytes.len() < header {
        return Err("truncated header".into());
    }
    let dims: Vec<usize> = (0..rank)
        .map(|i| u64::from_le_bytes(bytes[8 + 8 * i..16 + 8 * i].try_into().unwrap()) as usize)
        .collect();
    let (rows, cols) = if rank == 1 { (1, dims[0]) } else { (dims[0], dims[1]) };
    let count = rows.checked_mul(cols).ok_or("dimension overflow")?;
    let body = &bytes[header..];
    if body.len() != count * dtype.width() {
        return Err(format!("expected {} data bytes, found {}", count * dtype.width(), body.len()));
    }
    let values: Vec<f64> = match dtype {
        FeatureDtype::F32 => body.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64).collect(),
        FeatureDtype::F64 => body.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect(),
    };
    Array2::from_shape_vec((rows, cols), values).map_err(|e| e.to_string())
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn round_trips_both_dtypes() {
        let dir = tempfile::tempdir().unwrap();
        let m = array![[1.0, -2.5, 3.25], [0.0, 4.0, -1.0]];
        for dtype in [FeatureDtype::F32, FeatureDtype::F64] {
            let p = dir.path().join(format!("{dtype:?}.feat"));
            write_features(&p, &m, dtype).unwrap();
            assert_eq!(read_features(&p).unwrap(), m);
        }
    }

    #[test]
    fn header_layout_is_fixed() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.feat");
        write_features(&p, &array![[1.0f64]], FeatureDtype::F64).unwrap();
        let bytes = std::fs::read(&p).unwrap();
        assert_eq!(&bytes[..8], b"VFEA\x02\x02\x00\x00");
        assert_eq!(&bytes[8..24], &[1, 0, 0, 0, 0, 0, 0, 0, 1, 0, 0, 0, 0, 0, 0, 0]);
        assert_eq!(&bytes[24..], &1.0f64.to_le_bytes());
    }

    #[test]
    fn rejects_corrupt_files() {
        assert!(decode(b"NOPE\x02\x02\x00\x00").is_err());
        let mut bytes = b"VFEA\x02\x02\x00\x00".to_vec();
        bytes.extend_from_slice(&2u64.to_le_bytes());
        bytes.extend_from_slice(&2u64.to_le_bytes());
        bytes.extend_from_slice(&[0; 8]);
        assert!(decode(&bytes).unwrap_err().contains("expected 32"));
        let mut rank1 = b"VFEA\x01\x01\x00\x00".to_vec();
        rank1.extend_from_slice(&1u64.to_le_bytes());
        rank1.extend_from_slice(&2.0f32.to_le_bytes());
        assert_eq!(decode(&rank1).unwrap(), array![[2.0]]);
    }
}
