//! Embedding matrix files: `u32` rows, `u32` cols, then row-major `f32`, all
//! little-endian.

use std::path::Path;

use crate::error::{Error, Result};

pub fn encode_matrix(rows: &[Vec<f64>]) -> Result<Vec<u8>> {
    let cols = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != cols) {
        return Err(Error::InvalidInput("ragged matrix".into()));
    }
    let mut out = Vec::with_capacity(8 + 4 * rows.len() * cols);
    out.extend_from_slice(&(rows.len() as u32).to_le_bytes());
    out.extend_from_slice(&(cols as u32).to_le_bytes());
    for v in rows.iter().flatten() {
        out.extend_from_slice(&(*v as f32).to_le_bytes());
    }
    Ok(out)
}

pub fn decode_matrix(bytes: &[u8]) -> Result<Vec<Vec<f64>>> {
    let word = |i: usize| -> Option<[u8; 4]> { bytes.get(i..i + 4).map(|b| b.try_into().unwrap()) };
    let (Some(r), Some(c)) = (word(0), word(4)) else {
        return Err(Error::InvalidInput("matrix header truncated".into()));
    };
    let (rows, cols) = (
        u32::from_le_bytes(r) as usize,
        u32::from_le_bytes(c) as usize,
    );
    let expected = rows
        .checked_mul(cols)
        .and_then(|n| n.checked_mul(4))
        .and_then(|n| n.checked_add(8))
        .ok_or_else(|| Error::InvalidInput("matrix dimensions overflow".into()))?;
    if bytes.len() != expected {
        return Err(Error::InvalidInput(format!(
            "matrix {rows}x{cols} needs {expected} bytes, file has {}",
            bytes.len()
        )));
    }
    Ok(bytes[8..]
        .chunks_exact(4)
        .map(|b| f64::from(f32::from_le_bytes(b.try_into().unwrap())))
        .collect::<Vec<_>>()
        .chunks(cols.max(1))
        .take(rows)
        .map(<[f64]>::to_vec)
        .collect())
}

pub fn read_matrix(path: &Path) -> Result<Vec<Vec<f64>>> {
    decode_matrix(&std::fs::read(path).map_err(|e| Error::io(path, e))?)
}

pub fn write_matrix(path: &Path, rows: &[Vec<f64>]) -> Result<()> {
    std::fs::write(path, encode_matrix(rows)?).map_err(|e| Error::io(path, e))
}
