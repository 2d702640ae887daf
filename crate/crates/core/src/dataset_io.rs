//! Reading and writing code/factor matrices.
//!
//! Two formats are supported. CSV files carry a header of `c_0, c_1, ...`
//! (codes) or `z_0, z_1, ...` (factors). Binary files start with the magic
//! bytes `IWO1`, followed by little-endian `u32` row and column counts and
//! row-major little-endian `f32` values.

use crate::linalg::Matrix;
use crate::synth::RepresentationDataset;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

pub const MAGIC: &[u8; 4] = b"IWO1";

#[derive(Debug, thiserror::Error)]
pub enum IngestError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{path}, line {line}: {message}")]
    Format {
        path: PathBuf,
        line: u64,
        message: String,
    },
    #[error("codes have {codes} rows but factors have {factors}")]
    RowMismatch { codes: usize, factors: usize },
    #[error("{0}")]
    Invalid(String),
}

/// Column prefix of a matrix kind in CSV headers.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Columns {
    Codes,
    Factors,
}

impl Columns {
    fn prefix(self) -> &'static str {
        match self {
            Columns::Codes => "c",
            Columns::Factors => "z",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    Csv,
    Binary,
}

impl Format {
    /// `.bin` selects the binary format; anything else is CSV.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some("bin") => Format::Binary,
            _ => Format::Csv,
        }
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> IngestError + '_ {
    move |source| IngestError::Io {
        path: path.to_path_buf(),
        source,
    }
}

pub fn write_matrix(path: &Path, m: &Matrix, columns: Columns) -> Result<(), IngestError> {
    let file = File::create(path).map_err(io_err(path))?;
    let mut w = BufWriter::new(file);
    match Format::from_path(path) {
        Format::Binary => {
            let dims = |n: usize| {
                u32::try_from(n).map_err(|_| IngestError::Invalid(format!("dimension {n} exceeds u32")))
            };
            w.write_all(MAGIC).map_err(io_err(path))?;
            w.write_all(&dims(m.rows())?.to_le_bytes()).map_err(io_err(path))?;
            w.write_all(&dims(m.cols())?.to_le_bytes()).map_err(io_err(path))?;
            for v in m.as_slice() {
                w.write_all(&(*v as f32).to_le_bytes()).map_err(io_err(path))?;
            }
        }
        Format::Csv => {
            let mut cw = csv::Writer::from_writer(w);
            let header: Vec<String> = (0..m.cols()).map(|i| format!("{}_{i}", columns.prefix())).collect();
            let csv_err = |e: csv::Error| IngestError::Invalid(format!("{}: {e}", path.display()));
            cw.write_record(&header).map_err(csv_err)?;
            for r in 0..m.rows() {
                cw.write_record(m.row(r).iter().map(|v| v.to_string())).map_err(csv_err)?;
            }
            cw.flush().map_err(io_err(path))?;
            return Ok(());
        }
    }
    w.flush().map_err(io_err(path))
}

/// Reads a matrix, detecting the binary format by its magic bytes.
pub fn read_matrix(path: &Path, columns: Columns) -> Result<Matrix, IngestError> {
    let mut bytes = Vec::new();
    File::open(path)
        .map_err(io_err(path))?
        .read_to_end(&mut bytes)
        .map_err(io_err(path))?;
    if bytes.starts_with(MAGIC) {
        read_binary(path, &bytes)
    } else {
        read_csv(path, &bytes, columns)
    }
}

fn read_binary(path: &Path, bytes: &[u8]) -> Result<Matrix, IngestError> {
    let bad = |message: String| IngestError::Format {
        path: path.to_path_buf(),
        line: 0,
        message,
    };
    if bytes.len() < 12 {
        return Err(bad("truncated header".into()));
    }
    let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().expect("4 bytes")) as usize;
    let (rows, cols) = (u32_at(4), u32_at(8));
    let expected = rows
        .checked_mul(cols)
        .and_then(|n| n.checked_mul(4))
        .and_then(|n| n.checked_add(12))
        .ok_or_else(|| bad("dimensions overflow".into()))?;
    if bytes.len() != expected {
        return Err(bad(format!(
            "expected {expected} bytes for {rows}x{cols}, found {}",
            bytes.len()
        )));
    }
    let data: Vec<f64> = bytes[12..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64)
        .collect();
    if let Some(i) = data.iter().position(|v| !v.is_finite()) {
        return Err(bad(format!("non-finite value at row {}, column {}", i / cols.max(1), i % cols.max(1))));
    }
    Ok(Matrix::from_vec(rows, cols, data))
}

fn read_csv(path: &Path, bytes: &[u8], columns: Columns) -> Result<Matrix, IngestError> {
    let bad = |line: u64, message: String| IngestError::Format {
        path: path.to_path_buf(),
        line,
        message,
    };
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(BufReader::new(bytes));
    let header = reader
        .headers()
        .map_err(|e| bad(1, e.to_string()))?
        .clone();
    for (i, name) in header.iter().enumerate() {
        let want = format!("{}_{i}", columns.prefix());
        if name.trim() != want {
            return Err(bad(1, format!("column {i} is named {name:?}, expected {want:?}")));
        }
    }
    let cols = header.len();
    if cols == 0 {
        return Err(bad(1, "empty header".into()));
    }
    let mut data = Vec::new();
    let mut rows = 0;
    for record in reader.records() {
        let record = record.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            bad(line, e.to_string())
        })?;
        let line = record.position().map_or(0, |p| p.line());
        if record.len() != cols {
            return Err(bad(line, format!("{} fields, expected {cols}", record.len())));
        }
        for (i, field) in record.iter().enumerate() {
            let v: f64 = field
                .trim()
                .parse()
                .map_err(|_| bad(line, format!("column {i}: {field:?} is not a number")))?;
            if !v.is_finite() {
                return Err(bad(line, format!("column {i}: non-finite value")));
            }
            data.push(v);
        }
        rows += 1;
    }
    Ok(Matrix::from_vec(rows, cols, data))
}

/// Loads paired code and factor files.
pub fn load_dataset(codes: &Path, factors: &Path) -> Result<RepresentationDataset, IngestError> {
    let c = read_matrix(codes, Columns::Codes)?;
    let z = read_matrix(factors, Columns::Factors)?;
    if c.rows() != z.rows() {
        return Err(IngestError::RowMismatch {
            codes: c.rows(),
            factors: z.rows(),
        });
    }
    RepresentationDataset::new(c, z).map_err(|e| IngestError::Invalid(e.to_string()))
}
