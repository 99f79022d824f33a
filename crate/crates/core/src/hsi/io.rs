//! Matrix file formats.
//!
//! Binary (`raw-f64`) layout: 4-byte magic, rows and columns as `u32` LE,
//! a `u32` LE image width (0 when unused), then `rows·cols` LE `f64`
//! values in column-major order.
//!
//! CSV layout: a header line `rows,cols[,width,height]` followed by `rows`
//! lines of `cols` comma-separated values.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use nalgebra::DMatrix;

use super::{AbundanceMatrix, EndmemberMatrix, HsiImage};
use crate::error::{Error, Result};

const HEADER_LEN: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    Csv,
    RawF64,
}

impl Format {
    /// `.csv` files are CSV; everything else is binary.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some(ext) if ext.eq_ignore_ascii_case("csv") => Format::Csv,
            _ => Format::RawF64,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MatrixKind {
    Image,
    Endmembers,
    Abundances,
}

impl MatrixKind {
    pub fn magic(self) -> &'static [u8; 4] {
        match self {
            MatrixKind::Image => b"HSI0",
            MatrixKind::Endmembers => b"EMM0",
            MatrixKind::Abundances => b"ABN0",
        }
    }

    pub fn from_magic(magic: &[u8]) -> Option<Self> {
        [MatrixKind::Image, MatrixKind::Endmembers, MatrixKind::Abundances]
            .into_iter()
            .find(|k| k.magic() == magic)
    }
}

/// A matrix read from disk together with its optional grid shape.
#[derive(Debug, Clone, PartialEq)]
pub struct MatrixFile {
    pub data: DMatrix<f64>,
    pub shape: Option<(usize, usize)>,
}

pub fn encode_raw(kind: MatrixKind, data: &DMatrix<f64>, width: Option<usize>) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN + 8 * data.len());
    out.extend_from_slice(kind.magic());
    out.extend_from_slice(&(data.nrows() as u32).to_le_bytes());
    out.extend_from_slice(&(data.ncols() as u32).to_le_bytes());
    out.extend_from_slice(&(width.unwrap_or(0) as u32).to_le_bytes());
    for v in data.as_slice() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode_raw(kind: MatrixKind, bytes: &[u8]) -> Result<MatrixFile> {
    if bytes.is_empty() {
        return Err(Error::Parse { line: 0, message: "empty file".into() });
    }
    if bytes.len() < HEADER_LEN {
        return Err(Error::Parse { line: 0, message: "truncated header".into() });
    }
    if &bytes[..4] != kind.magic() {
        return Err(Error::Parse {
            line: 0,
            message: format!(
                "bad magic {:?}, expected {:?}",
                String::from_utf8_lossy(&bytes[..4]),
                String::from_utf8_lossy(kind.magic())
            ),
        });
    }
    let word = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().unwrap()) as usize;
    let (rows, cols, width) = (word(4), word(8), word(12));
    let body = &bytes[HEADER_LEN..];
    if body.len() != rows * cols * 8 {
        return Err(Error::DimensionMismatch(format!(
            "header declares {rows}x{cols} but payload holds {} bytes",
            body.len()
        )));
    }
    let values: Vec<f64> = body
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    if let Some(i) = values.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite { row: i % rows.max(1), col: i / rows.max(1) });
    }
    let shape = if width == 0 {
        None
    } else if cols % width != 0 {
        return Err(Error::DimensionMismatch(format!("width {width} does not divide {cols} pixels")));
    } else {
        Some((width, cols / width))
    };
    Ok(MatrixFile { data: DMatrix::from_vec(rows, cols, values), shape })
}

pub fn encode_csv(data: &DMatrix<f64>, shape: Option<(usize, usize)>) -> String {
    let mut out = String::new();
    match shape {
        Some((w, h)) => writeln!(out, "{},{},{},{}", data.nrows(), data.ncols(), w, h),
        None => writeln!(out, "{},{}", data.nrows(), data.ncols()),
    }
    .unwrap();
    for row in data.row_iter() {
        let line: Vec<String> = row.iter().map(|v| format!("{v:e}")).collect();
        out.push_str(&line.join(","));
        out.push('\n');
    }
    out
}

pub fn decode_csv(text: &str) -> Result<MatrixFile> {
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let (_, header) = lines
        .next()
        .ok_or_else(|| Error::Parse { line: 0, message: "empty file".into() })?;
    let dims: Vec<usize> = header
        .split(',')
        .map(|t| t.trim().parse::<usize>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|e| Error::Parse { line: 1, message: format!("malformed header {header:?}: {e}") })?;
    let (rows, cols, shape) = match dims.as_slice() {
        [r, c] => (*r, *c, None),
        [r, c, w, h] => (*r, *c, Some((*w, *h))),
        _ => {
            return Err(Error::Parse {
                line: 1,
                message: format!("header must be rows,cols[,width,height], got {header:?}"),
            })
        }
    };
    if let Some((w, h)) = shape {
        if w * h != cols {
            return Err(Error::DimensionMismatch(format!("{w}x{h} grid does not match {cols} columns")));
        }
    }
    let mut data = DMatrix::zeros(rows, cols);
    let mut seen = 0;
    for (idx, line) in lines {
        let lineno = idx + 1;
        if seen == rows {
            return Err(Error::Parse { line: lineno, message: format!("more than {rows} data rows") });
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != cols {
            return Err(Error::Parse {
                line: lineno,
                message: format!("row {seen} has {} values, expected {cols}", fields.len()),
            });
        }
        for (j, f) in fields.iter().enumerate() {
            let v: f64 = f.trim().parse().map_err(|e| Error::Parse {
                line: lineno,
                message: format!("row {seen}, column {j}: {e}"),
            })?;
            if !v.is_finite() {
                return Err(Error::NonFinite { row: seen, col: j });
            }
            data[(seen, j)] = v;
        }
        seen += 1;
    }
    if seen != rows {
        return Err(Error::Parse {
            line: 0,
            message: format!("expected {rows} data rows, found {seen}"),
        });
    }
    Ok(MatrixFile { data, shape })
}

pub fn read_matrix(path: &Path, kind: MatrixKind, format: Format) -> Result<MatrixFile> {
    match format {
        Format::RawF64 => decode_raw(kind, &fs::read(path)?),
        Format::Csv => decode_csv(&fs::read_to_string(path)?),
    }
}

pub fn write_matrix(
    path: &Path,
    kind: MatrixKind,
    format: Format,
    data: &DMatrix<f64>,
    shape: Option<(usize, usize)>,
) -> Result<()> {
    match format {
        Format::RawF64 => fs::write(path, encode_raw(kind, data, shape.map(|s| s.0)))?,
        Format::Csv => fs::write(path, encode_csv(data, shape))?,
    }
    Ok(())
}

pub fn load_image(path: &Path, format: Format) -> Result<HsiImage> {
    let f = read_matrix(path, MatrixKind::Image, format)?;
    let n = f.data.ncols();
    let (w, h) = f.shape.unwrap_or((n, 1));
    HsiImage::with_shape(f.data, w, h)
}

pub fn save_image(path: &Path, image: &HsiImage, format: Format) -> Result<()> {
    let shape = (image.height() > 1).then_some((image.width(), image.height()));
    write_matrix(path, MatrixKind::Image, format, image.data(), shape)
}

pub fn load_endmembers(path: &Path, format: Format) -> Result<EndmemberMatrix> {
    EndmemberMatrix::new(read_matrix(path, MatrixKind::Endmembers, format)?.data)
}

pub fn save_endmembers(path: &Path, e: &EndmemberMatrix, format: Format) -> Result<()> {
    write_matrix(path, MatrixKind::Endmembers, format, e.data(), None)
}

/// Loads abundances, marking them normalized when every column sums to one.
pub fn load_abundances(path: &Path, format: Format) -> Result<AbundanceMatrix> {
    let data = read_matrix(path, MatrixKind::Abundances, format)?.data;
    AbundanceMatrix::normalized(data.clone()).or_else(|_| AbundanceMatrix::new(data))
}

pub fn save_abundances(path: &Path, a: &AbundanceMatrix, format: Format) -> Result<()> {
    write_matrix(path, MatrixKind::Abundances, format, a.data(), None)
}
