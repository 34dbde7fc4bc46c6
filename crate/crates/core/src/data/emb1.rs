//! The `EMB1` embedding matrix file format.
//!
//! Layout: bytes 0-3 magic `EMB1`, bytes 4-7 row count (u32 LE), bytes 8-11
//! column count (u32 LE), then rows*cols IEEE-754 f32 values, little-endian,
//! row-major. Nothing else; the file length is fully determined by the header.

use crate::error::{Error, Result};
use std::fs;
use std::io::Write;
use std::path::Path;

const MAGIC: &[u8; 4] = b"EMB1";

/// Writes a row-major f64 matrix as an `EMB1` file (values narrowed to f32).
pub fn write_matrix(path: &Path, rows: usize, cols: usize, data: &[f64]) -> Result<()> {
    if data.len() != rows * cols || rows > u32::MAX as usize || cols > u32::MAX as usize {
        return Err(Error::DimMismatch(format!(
            "matrix {}x{} vs {} values",
            rows,
            cols,
            data.len()
        )));
    }
    let mut buf = Vec::with_capacity(12 + 4 * data.len());
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&(rows as u32).to_le_bytes());
    buf.extend_from_slice(&(cols as u32).to_le_bytes());
    for &v in data {
        buf.extend_from_slice(&(v as f32).to_le_bytes());
    }
    let mut f = fs::File::create(path)?;
    f.write_all(&buf)?;
    Ok(())
}

/// Reads an `EMB1` file, widening the stored f32 values to f64.
pub fn read_matrix(path: &Path) -> Result<(usize, usize, Vec<f64>)> {
    let bytes = fs::read(path)?;
    let corrupt = |detail: String| Error::CorruptFile {
        path: path.display().to_string(),
        detail,
    };
    if bytes.len() < 12 {
        return Err(corrupt(format!("only {} bytes, header needs 12", bytes.len())));
    }
    if &bytes[0..4] != MAGIC {
        return Err(corrupt(format!("bad magic {:?}", &bytes[0..4])));
    }
    let rows = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    let cols = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let expected = 12 + 4 * rows * cols;
    if bytes.len() != expected {
        return Err(corrupt(format!(
            "length {} does not match {rows}x{cols} payload ({expected})",
            bytes.len()
        )));
    }
    let data = bytes[12..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
        .collect();
    Ok((rows, cols, data))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_bit_exact_at_f32() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.emb1");
        let data: Vec<f64> = vec![1.0, -0.5, 3.25, f32::MIN_POSITIVE as f64, 0.0, -7.75];
        write_matrix(&path, 2, 3, &data).unwrap();
        let (r, c, back) = read_matrix(&path).unwrap();
        assert_eq!((r, c), (2, 3));
        assert_eq!(back, data);
    }

    #[test]
    fn bad_magic_is_corrupt() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.emb1");
        std::fs::write(&path, b"NOPE\x01\x00\x00\x00\x01\x00\x00\x00\x00\x00\x80\x3f").unwrap();
        assert!(matches!(read_matrix(&path), Err(Error::CorruptFile { .. })));
    }

    #[test]
    fn truncated_payload_is_corrupt() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("short.emb1");
        let mut bytes = Vec::new();
        bytes.extend_from_slice(b"EMB1");
        bytes.extend_from_slice(&2u32.to_le_bytes());
        bytes.extend_from_slice(&3u32.to_le_bytes());
        bytes.extend_from_slice(&[0u8; 8]); // 6 floats expected, 2 provided
        std::fs::write(&path, bytes).unwrap();
        assert!(matches!(read_matrix(&path), Err(Error::CorruptFile { .. })));
    }

    #[test]
    fn header_shorter_than_twelve_bytes() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("tiny.emb1");
        std::fs::write(&path, b"EMB1").unwrap();
        assert!(matches!(read_matrix(&path), Err(Error::CorruptFile { .. })));
    }
}
