//! Flat binary matrix files: row-major, 8-byte little-endian reals, no header.
//! Shapes live in the accompanying structured-text manifest.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg::Mat;

pub fn write_matrix(path: &Path, m: &Mat) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for r in 0..m.nrows() {
        for c in 0..m.ncols() {
            w.write_f64::<LittleEndian>(m[(r, c)])?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn read_matrix(path: &Path, rows: usize, cols: usize) -> Result<Mat> {
    let mut bytes = Vec::new();
    BufReader::new(File::open(path)?).read_to_end(&mut bytes)?;
    let expected = rows * cols * 8;
    if bytes.len() != expected {
        return Err(Error::Format {
            path: path.to_path_buf(),
            message: format!(
                "expected {expected} bytes for a {rows}x{cols} matrix, found {}",
                bytes.len()
            ),
        });
    }
    let mut cursor = &bytes[..];
    let mut m = Mat::zeros(rows, cols);
    for r in 0..rows {
        for c in 0..cols {
            m[(r, c)] = cursor.read_f64::<LittleEndian>()?;
        }
    }
    Ok(m)
}

pub fn write_vector(path: &Path, v: &[f64]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for x in v {
        w.write_f64::<LittleEndian>(*x)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_vector(path: &Path, len: usize) -> Result<Vec<f64>> {
    Ok(read_matrix(path, 1, len)?.iter().copied().collect())
}

pub fn write_toml<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = toml::to_string_pretty(value).map_err(|e| Error::Format {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    std::fs::write(path, text)?;
    Ok(())
}

pub fn read_toml<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path)?;
    toml::from_str(&text).map_err(|e| Error::Format {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}
