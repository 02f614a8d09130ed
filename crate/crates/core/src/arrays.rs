//! Minimal binary container for dense little-endian arrays.
//!
//! Layout: 8-byte magic, dtype tag (u8), rank (u8), two reserved bytes,
//! `rank` dimensions as u64, then the elements in row-major order.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"TTARRAY1";
const HEADER_FIXED: usize = 12;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum DType {
    F64 = 1,
    U32 = 2,
}

impl DType {
    fn width(self) -> usize {
        match self {
            DType::F64 => 8,
            DType::U32 => 4,
        }
    }
}

fn encode_header(dtype: DType, dims: &[usize]) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_FIXED + 8 * dims.len());
    out.extend_from_slice(MAGIC);
    out.push(dtype as u8);
    out.push(dims.len() as u8);
    out.extend_from_slice(&[0, 0]);
    for &d in dims {
        out.extend_from_slice(&(d as u64).to_le_bytes());
    }
    out
}

fn decode<'a>(path: &Path, bytes: &'a [u8], expected: DType) -> Result<(Vec<usize>, &'a [u8])> {
    if bytes.len() < HEADER_FIXED {
        return Err(Error::corrupt(path, "file shorter than array header"));
    }
    if &bytes[..8] != MAGIC {
        return Err(Error::corrupt(path, "bad magic"));
    }
    let dtype = match bytes[8] {
        1 => DType::F64,
        2 => DType::U32,
        other => return Err(Error::corrupt(path, format!("unknown dtype tag {other}"))),
    };
    if dtype != expected {
        return Err(Error::corrupt(
            path,
            format!("expected {expected:?} array, found {dtype:?}"),
        ));
    }
    let rank = bytes[9] as usize;
    let body_start = HEADER_FIXED + 8 * rank;
    if bytes.len() < body_start {
        return Err(Error::corrupt(path, "truncated dimension table"));
    }
    let dims: Vec<usize> = bytes[HEADER_FIXED..body_start]
        .chunks_exact(8)
        .map(|c| u64::from_le_bytes(c.try_into().unwrap()) as usize)
        .collect();
    let count = dims
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .ok_or_else(|| Error::corrupt(path, "dimension product overflows"))?;
    let body = &bytes[body_start..];
    if body.len() != count * dtype.width() {
        return Err(Error::corrupt(
            path,
            format!(
                "expected {} payload bytes for dims {:?}, found {}",
                count * dtype.width(),
                dims,
                body.len()
            ),
        ));
    }
    Ok((dims, body))
}

pub fn encode_f64(dims: &[usize], data: &[f64]) -> Vec<u8> {
    debug_assert_eq!(dims.iter().product::<usize>(), data.len());
    let mut out = encode_header(DType::F64, dims);
    out.reserve(data.len() * 8);
    for v in data {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn encode_u32(dims: &[usize], data: &[u32]) -> Vec<u8> {
    debug_assert_eq!(dims.iter().product::<usize>(), data.len());
    let mut out = encode_header(DType::U32, dims);
    out.reserve(data.len() * 4);
    for v in data {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn write_f64(path: &Path, dims: &[usize], data: &[f64]) -> Result<()> {
    fs::write(path, encode_f64(dims, data)).map_err(|e| Error::io(path, e))
}

pub fn write_u32(path: &Path, dims: &[usize], data: &[u32]) -> Result<()> {
    fs::write(path, encode_u32(dims, data)).map_err(|e| Error::io(path, e))
}

pub fn decode_f64(path: &Path, bytes: &[u8]) -> Result<(Vec<usize>, Vec<f64>)> {
    let (dims, body) = decode(path, bytes, DType::F64)?;
    let data = body
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok((dims, data))
}

pub fn decode_u32(path: &Path, bytes: &[u8]) -> Result<(Vec<usize>, Vec<u32>)> {
    let (dims, body) = decode(path, bytes, DType::U32)?;
    let data = body
        .chunks_exact(4)
        .map(|c| u32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok((dims, data))
}

pub fn read_f64(path: &Path) -> Result<(Vec<usize>, Vec<f64>)> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_f64(path, &bytes)
}

pub fn read_u32(path: &Path) -> Result<(Vec<usize>, Vec<u32>)> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_u32(path, &bytes)
}
