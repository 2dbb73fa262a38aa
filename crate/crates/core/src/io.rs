//! Matrix and trajectory files.
//!
//! Matrices are stored either as headerless CSV or in the `RFM1` binary
//! layout: the 4-byte magic `RFM1`, row and column counts as little-endian
//! `u64`, then `rows × cols` little-endian `f64` values in row-major order.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::matrix::DenseMatrix;
use crate::polish::SweepRecord;

pub const RFM1_MAGIC: &[u8; 4] = b"RFM1";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MatrixFormat {
    Csv,
    Rfm1,
}

impl MatrixFormat {
    /// `.csv` selects CSV; anything else is written as RFM1.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some(ext) if ext.eq_ignore_ascii_case("csv") => MatrixFormat::Csv,
            _ => MatrixFormat::Rfm1,
        }
    }
}

pub fn encode_rfm1(m: &DenseMatrix) -> Vec<u8> {
    let mut out = Vec::with_capacity(20 + 8 * m.len());
    out.extend_from_slice(RFM1_MAGIC);
    out.extend_from_slice(&(m.rows() as u64).to_le_bytes());
    out.extend_from_slice(&(m.cols() as u64).to_le_bytes());
    for v in m.as_slice() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode_rfm1(bytes: &[u8]) -> Result<DenseMatrix> {
    if bytes.len() < 20 || &bytes[..4] != RFM1_MAGIC {
        return Err(Error::Parse("missing RFM1 header".into()));
    }
    let word = |at: usize| u64::from_le_bytes(bytes[at..at + 8].try_into().expect("8 bytes"));
    let (rows, cols) = (word(4) as usize, word(12) as usize);
    let expected = rows
        .checked_mul(cols)
        .and_then(|n| n.checked_mul(8))
        .and_then(|n| n.checked_add(20))
        .ok_or_else(|| Error::Parse("RFM1 dimensions overflow".into()))?;
    if bytes.len() != expected {
        return Err(Error::Parse(format!(
            "RFM1 payload is {} bytes, expected {expected} for {rows}x{cols}",
            bytes.len()
        )));
    }
    let data = bytes[20..]
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();
    DenseMatrix::new(rows, cols, data)
}

pub fn encode_csv(m: &DenseMatrix) -> String {
    let mut s = String::new();
    for i in 0..m.rows() {
        let line: Vec<String> = m.row(i).iter().map(|v| v.to_string()).collect();
        s.push_str(&line.join(","));
        s.push('\n');
    }
    s
}

pub fn decode_csv(text: &str) -> Result<DenseMatrix> {
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let row = line
            .split(',')
            .map(|tok| {
                tok.trim()
                    .parse::<f64>()
                    .map_err(|_| Error::Parse(format!("line {}: bad number `{}`", lineno + 1, tok.trim())))
            })
            .collect::<Result<Vec<f64>>>()?;
        rows.push(row);
    }
    DenseMatrix::from_rows(&rows)
}

pub fn save_matrix(m: &DenseMatrix, path: &Path) -> Result<()> {
    match MatrixFormat::from_path(path) {
        MatrixFormat::Csv => fs::write(path, encode_csv(m))?,
        MatrixFormat::Rfm1 => fs::write(path, encode_rfm1(m))?,
    }
    Ok(())
}

/// Reads a CSV or RFM1 file, detected by the magic bytes.
pub fn load_matrix(path: &Path) -> Result<DenseMatrix> {
    let bytes = fs::read(path)?;
    let parsed = if bytes.starts_with(RFM1_MAGIC) {
        decode_rfm1(&bytes)
    } else {
        std::str::from_utf8(&bytes)
            .map_err(|_| Error::Parse("file is neither RFM1 nor UTF-8 CSV".into()))
            .and_then(decode_csv)
    };
    parsed.map_err(|e| match e {
        Error::Io(io) => Error::Io(io),
        other => Error::data(path, other.to_string()),
    })
}

pub fn load_nonneg_matrix(path: &Path) -> Result<DenseMatrix> {
    let m = load_matrix(path)?;
    m.ensure_nonneg().map_err(|e| Error::data(path, e.to_string()))?;
    Ok(m)
}

/// `iter,objective`
pub fn write_objective_csv(path: &Path, trajectory: &[f64]) -> Result<()> {
    let mut out = BufWriter::new(fs::File::create(path)?);
    writeln!(out, "iter,objective")?;
    for (i, v) in trajectory.iter().enumerate() {
        writeln!(out, "{},{}", i + 1, v)?;
    }
    out.flush()?;
    Ok(())
}

/// `iter,objective_polished[,rre_clean],refresh`
pub fn write_polish_csv(path: &Path, records: &[SweepRecord]) -> Result<()> {
    let with_clean = records.first().is_some_and(|r| r.rre_clean.is_some());
    let mut out = BufWriter::new(fs::File::create(path)?);
    if with_clean {
        writeln!(out, "iter,objective_polished,rre_clean,refresh")?;
    } else {
        writeln!(out, "iter,objective_polished,refresh")?;
    }
    for r in records {
        let flag = u8::from(r.refresh);
        match (with_clean, r.rre_clean) {
            (true, Some(c)) => writeln!(out, "{},{},{},{}", r.iter, r.objective, c, flag)?,
            _ => writeln!(out, "{},{},{}", r.iter, r.objective, flag)?,
        }
    }
    out.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_parses() {
        let m = decode_csv("1,2\n3,4").unwrap();
        assert_eq!(m, DenseMatrix::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap());
        assert!(decode_csv("1,nan\n3,4").is_err());
        assert!(decode_csv("1,2\n3").is_err());
        assert!(decode_csv("1,x").is_err());
    }

    #[test]
    fn rfm1_layout() {
        let m = DenseMatrix::from_rows(&[vec![1.5, -2.0, 0.0]]).unwrap();
        let bytes = encode_rfm1(&m);
        assert_eq!(&bytes[..4], b"RFM1");
        assert_eq!(u64::from_le_bytes(bytes[4..12].try_into().unwrap()), 1);
        assert_eq!(u64::from_le_bytes(bytes[12..20].try_into().unwrap()), 3);
        assert_eq!(f64::from_le_bytes(bytes[20..28].try_into().unwrap()), 1.5);
        assert_eq!(decode_rfm1(&bytes).unwrap(), m);
        assert!(decode_rfm1(&bytes[..27]).is_err());
    }

    #[test]
    fn files_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let m = DenseMatrix::from_fn(3, 4, |i, j| (i as f64 + 0.1) / (j as f64 + 3.0));
        let bin = dir.path().join("m.rfm");
        save_matrix(&m, &bin).unwrap();
        let back = load_matrix(&bin).unwrap();
        assert!(back.as_slice().iter().zip(m.as_slice()).all(|(a, b)| a.to_bits() == b.to_bits()));
        let csv = dir.path().join("m.csv");
        save_matrix(&m, &csv).unwrap();
        let back = load_matrix(&csv).unwrap();
        for (a, b) in back.as_slice().iter().zip(m.as_slice()) {
            assert!((a - b).abs() <= 1e-12);
        }
    }

    #[test]
    fn load_reports_data_errors() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("bad.csv");
        fs::write(&p, "1,nan\n").unwrap();
        assert!(matches!(load_matrix(&p), Err(Error::Data { .. })));
        fs::write(&p, "1,-1\n").unwrap();
        assert!(load_matrix(&p).is_ok());
        assert!(matches!(load_nonneg_matrix(&p), Err(Error::Data { .. })));
    }
}
