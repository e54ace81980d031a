//! Dataset file formats.
//!
//! Canonical binary layout (`.cret`):
//!
//! ```text
//! magic  b"CRET"        4 bytes
//! version u32 LE        = 1
//! n       u64 LE        row count
//! d       u32 LE        column count
//! reserved u32 LE       = 0
//! payload n*d f32 LE    row-major
//! ids     optional      n newline-separated UTF-8 ids
//! ```
//!
//! A missing id section means ids are the decimal row indices. CSV files
//! carry one embedding per row with an optional leading id column (present
//! when the first header cell is exactly `id`). NPY acceptance is limited to
//! v1.0 single 2-D float32/float64 arrays.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use ndarray::Array2;

use crate::error::{Error, Result};
use crate::store::EmbeddingDataset;

const MAGIC: &[u8; 4] = b"CRET";
const VERSION: u32 = 1;
/// Refuse headers describing more elements than this; corrupt headers must
/// not drive allocations.
const MAX_ELEMENTS: u64 = 1 << 33;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EmbeddingFormat {
    Binary,
    Csv,
    Npy,
}

impl EmbeddingFormat {
    /// Guesses the format from a file extension.
    pub fn from_path(path: &Path) -> Option<Self> {
        match path.extension()?.to_str()? {
            "cret" | "bin" => Some(Self::Binary),
            "csv" => Some(Self::Csv),
            "npy" => Some(Self::Npy),
            _ => None,
        }
    }
}

/// Element type found in an NPY header.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NpyElement {
    F32,
    F64,
}

pub fn load_embeddings(path: &Path, format: EmbeddingFormat) -> Result<EmbeddingDataset> {
    match format {
        EmbeddingFormat::Binary => load_binary(path),
        EmbeddingFormat::Csv => load_csv(path),
        EmbeddingFormat::Npy => load_npy(path).map(|(ds, _)| ds),
    }
}

fn io_err(path: &Path, source: std::io::Error) -> Error {
    Error::Io {
        path: path.to_path_buf(),
        source,
    }
}

// ---------------------------------------------------------------------------
// binary
// ---------------------------------------------------------------------------

/// Writes the canonical binary format. Values are narrowed to f32.
pub fn save_binary(ds: &EmbeddingDataset, path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| io_err(path, e))?;
    let mut w = BufWriter::new(file);
    let werr = |e| io_err(path, e);

    w.write_all(MAGIC).map_err(werr)?;
    w.write_u32::<LittleEndian>(VERSION).map_err(werr)?;
    w.write_u64::<LittleEndian>(ds.len() as u64).map_err(werr)?;
    w.write_u32::<LittleEndian>(ds.dim() as u32).map_err(werr)?;
    w.write_u32::<LittleEndian>(0).map_err(werr)?;
    for v in ds.vectors().iter() {
        w.write_f32::<LittleEndian>(*v as f32).map_err(werr)?;
    }
    for id in ds.ids() {
        w.write_all(id.as_bytes()).map_err(werr)?;
        w.write_all(b"\n").map_err(werr)?;
    }
    w.flush().map_err(werr)?;
    Ok(())
}

pub fn load_binary(path: &Path) -> Result<EmbeddingDataset> {
    let file = File::open(path).map_err(|e| io_err(path, e))?;
    let mut r = BufReader::new(file);
    let head = |detail: &str| Error::MalformedHeader {
        path: path.to_path_buf(),
        detail: detail.to_string(),
    };

    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)
        .map_err(|_| head("file shorter than magic"))?;
    if &magic != MAGIC {
        return Err(head("bad magic bytes (expected CRET)"));
    }
    let version = r
        .read_u32::<LittleEndian>()
        .map_err(|_| head("truncated version field"))?;
    if version != VERSION {
        return Err(head(&format!("unsupported version {version}")));
    }
    let n = r
        .read_u64::<LittleEndian>()
        .map_err(|_| head("truncated row count"))?;
    let d = r
        .read_u32::<LittleEndian>()
        .map_err(|_| head("truncated column count"))? as u64;
    let reserved = r
        .read_u32::<LittleEndian>()
        .map_err(|_| head("truncated reserved field"))?;
    if reserved != 0 {
        return Err(head("reserved field must be 0"));
    }
    if n < 2 || d < 2 {
        return Err(Error::TooSmall {
            rows: n as usize,
            cols: d as usize,
        });
    }
    if n.saturating_mul(d) > MAX_ELEMENTS {
        return Err(head("implausibly large dimensions"));
    }

    let (n, d) = (n as usize, d as usize);
    let mut data = Vec::with_capacity(n * d);
    for idx in 0..n * d {
        let offset = 24 + 4 * idx as u64;
        let v = r.read_f32::<LittleEndian>().map_err(|_| Error::MalformedBinary {
            path: path.to_path_buf(),
            detail: format!("payload ends early; expected {} f32 values", n * d),
            offset,
        })?;
        if !v.is_finite() {
            return Err(Error::NonFinite {
                path: path.to_path_buf(),
                row: (idx / d) as u64,
                col: idx % d,
            });
        }
        data.push(v as f64);
    }

    let mut rest = Vec::new();
    r.read_to_end(&mut rest).map_err(|e| io_err(path, e))?;
    let vectors = Array2::from_shape_vec((n, d), data).expect("shape checked");
    if rest.is_empty() {
        return EmbeddingDataset::from_vectors(vectors);
    }
    let ids_offset = 24 + 4 * (n * d) as u64;
    let text = std::str::from_utf8(&rest).map_err(|e| Error::MalformedBinary {
        path: path.to_path_buf(),
        detail: format!("id section is not UTF-8: {e}"),
        offset: ids_offset + e.valid_up_to() as u64,
    })?;
    let mut ids: Vec<&str> = text.split('\n').collect();
    if ids.last() == Some(&"") {
        ids.pop();
    }
    if ids.len() != n {
        return Err(Error::MalformedBinary {
            path: path.to_path_buf(),
            detail: format!("id section has {} lines, expected {n}", ids.len()),
            offset: ids_offset,
        });
    }
    EmbeddingDataset::new(ids.into_iter().map(String::from).collect(), vectors)
}

// ---------------------------------------------------------------------------
// csv
// ---------------------------------------------------------------------------

pub fn load_csv(path: &Path) -> Result<EmbeddingDataset> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| Error::MalformedHeader {
            path: path.to_path_buf(),
            detail: e.to_string(),
        })?;

    let mut records = reader.records();
    let first = match records.next() {
        Some(rec) => rec.map_err(|e| csv_error(path, e))?,
        None => return Err(Error::TooSmall { rows: 0, cols: 0 }),
    };

    let with_ids = first.get(0) == Some("id");
    let expected = first.len();
    if with_ids && expected < 3 {
        return Err(Error::MalformedHeader {
            path: path.to_path_buf(),
            detail: "id header with fewer than 2 value columns".into(),
        });
    }

    let mut ids: Vec<String> = Vec::new();
    let mut data: Vec<f64> = Vec::new();
    let mut rows = 0usize;

    let mut consume = |record: csv::StringRecord| -> Result<()> {
        let line = record.position().map(|p| p.line()).unwrap_or(0);
        if record.len() != expected {
            return Err(Error::RaggedRow {
                path: path.to_path_buf(),
                row: line,
                expected,
                found: record.len(),
            });
        }
        let value_fields = if with_ids {
            ids.push(record.get(0).unwrap_or_default().to_string());
            1..record.len()
        } else {
            0..record.len()
        };
        for col in value_fields {
            let raw = record.get(col).unwrap_or_default();
            let v: f64 = raw.parse().map_err(|_| Error::BadNumber {
                path: path.to_path_buf(),
                row: line,
                col,
                value: raw.to_string(),
            })?;
            if !v.is_finite() {
                return Err(Error::NonFinite {
                    path: path.to_path_buf(),
                    row: line,
                    col,
                });
            }
            data.push(v);
        }
        rows += 1;
        Ok(())
    };

    if !with_ids {
        consume(first)?;
    }
    for rec in records {
        consume(rec.map_err(|e| csv_error(path, e))?)?;
    }

    let d = if with_ids { expected - 1 } else { expected };
    if rows < 2 || d < 2 {
        return Err(Error::TooSmall { rows, cols: d });
    }
    let vectors = Array2::from_shape_vec((rows, d), data).expect("length checked");
    if with_ids {
        EmbeddingDataset::new(ids, vectors)
    } else {
        EmbeddingDataset::from_vectors(vectors)
    }
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    let line = e.position().map(|p| p.line()).unwrap_or(0);
    match e.kind() {
        csv::ErrorKind::UnequalLengths { expected_len, len, .. } => Error::RaggedRow {
            path: path.to_path_buf(),
            row: line,
            expected: *expected_len as usize,
            found: *len as usize,
        },
        _ => Error::MalformedHeader {
            path: path.to_path_buf(),
            detail: e.to_string(),
        },
    }
}

/// Writes a CSV with an `id` header column. Floats use the shortest exact
/// decimal representation.
pub fn save_csv(ds: &EmbeddingDataset, path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| io_err(path, e))?;
    let mut w = BufWriter::new(file);
    let werr = |e| io_err(path, e);

    write!(w, "id").map_err(werr)?;
    for c in 0..ds.dim() {
        write!(w, ",c{c}").map_err(werr)?;
    }
    writeln!(w).map_err(werr)?;
    for i in 0..ds.len() {
        write!(w, "{}", ds.id(i)).map_err(werr)?;
        for v in ds.row(i).iter() {
            write!(w, ",{v}").map_err(werr)?;
        }
        writeln!(w).map_err(werr)?;
    }
    w.flush().map_err(werr)?;
    Ok(())
}

// ---------------------------------------------------------------------------
// npy (v1.0, single 2-D float array)
// ---------------------------------------------------------------------------

pub fn load_npy(path: &Path) -> Result<(EmbeddingDataset, NpyElement)> {
    let mut file = File::open(path).map_err(|e| io_err(path, e))?;
    let mut bytes = Vec::new();
    file.read_to_end(&mut bytes).map_err(|e| io_err(path, e))?;
    let unsupported = |detail: &str| Error::UnsupportedNpy {
        path: path.to_path_buf(),
        detail: detail.to_string(),
    };

    if bytes.len() < 10 || &bytes[0..6] != b"\x93NUMPY" {
        return Err(unsupported("missing NUMPY magic"));
    }
    let (major, minor) = (bytes[6], bytes[7]);
    if (major, minor) != (1, 0) {
        return Err(unsupported(&format!(
            "version {major}.{minor}; only 1.0 is supported"
        )));
    }
    let header_len = u16::from_le_bytes([bytes[8], bytes[9]]) as usize;
    let body_start = 10 + header_len;
    if bytes.len() < body_start {
        return Err(unsupported("truncated header"));
    }
    let header = std::str::from_utf8(&bytes[10..body_start])
        .map_err(|_| unsupported("header is not ASCII"))?;

    let descr = dict_value(header, "descr").ok_or_else(|| unsupported("missing descr"))?;
    let element = match descr.trim_matches(['\'', '"']) {
        "<f4" | "|f4" | "=f4" => NpyElement::F32,
        "<f8" | "|f8" | "=f8" => NpyElement::F64,
        other => return Err(unsupported(&format!("dtype {other:?}; need <f4 or <f8"))),
    };
    let fortran = match dict_value(header, "fortran_order").as_deref() {
        Some("True") => true,
        Some("False") => false,
        _ => return Err(unsupported("missing fortran_order")),
    };
    let shape_raw = dict_value(header, "shape").ok_or_else(|| unsupported("missing shape"))?;
    let dims: Vec<usize> = shape_raw
        .trim_matches(['(', ')'])
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| s.parse::<usize>().map_err(|_| unsupported("bad shape")))
        .collect::<std::result::Result<_, _>>()?;
    if dims.len() != 2 {
        return Err(unsupported(&format!(
            "array has {} dimensions; need exactly 2",
            dims.len()
        )));
    }
    let (n, d) = (dims[0], dims[1]);
    if n < 2 || d < 2 {
        return Err(Error::TooSmall { rows: n, cols: d });
    }
    if (n as u64).saturating_mul(d as u64) > MAX_ELEMENTS {
        return Err(unsupported("implausibly large dimensions"));
    }

    let item = match element {
        NpyElement::F32 => 4,
        NpyElement::F64 => 8,
    };
    let body = &bytes[body_start..];
    if body.len() < n * d * item {
        return Err(Error::MalformedBinary {
            path: path.to_path_buf(),
            detail: format!("payload has {} bytes, expected {}", body.len(), n * d * item),
            offset: body_start as u64 + body.len() as u64,
        });
    }

    let mut vectors = Array2::zeros((n, d));
    for idx in 0..n * d {
        let v = match element {
            NpyElement::F32 => {
                let s = &body[idx * 4..idx * 4 + 4];
                f32::from_le_bytes([s[0], s[1], s[2], s[3]]) as f64
            }
            NpyElement::F64 => {
                let s = &body[idx * 8..idx * 8 + 8];
                f64::from_le_bytes([s[0], s[1], s[2], s[3], s[4], s[5], s[6], s[7]])
            }
        };
        // fortran order stores column-major
        let (r, c) = if fortran {
            (idx % n, idx / n)
        } else {
            (idx / d, idx % d)
        };
        if !v.is_finite() {
            return Err(Error::NonFinite {
                path: path.to_path_buf(),
                row: r as u64,
                col: c,
            });
        }
        vectors[(r, c)] = v;
    }
    Ok((EmbeddingDataset::from_vectors(vectors)?, element))
}

/// Pulls the raw value string for `key` out of a python dict literal.
fn dict_value(header: &str, key: &str) -> Option<String> {
    let pat = format!("'{key}':");
    let start = header.find(&pat)? + pat.len();
    let rest = header[start..].trim_start();
    let end = if rest.starts_with('(') {
        rest.find(')')? + 1
    } else {
        rest.find([',', '}'])?
    };
    Some(rest[..end].trim().to_string())
}
