//! Embedding file formats.
//!
//! Binary `UTSE` layout (all little-endian):
//!
//! ```text
//! b"UTSE" | u32 version = 1 | u64 n | u64 D | n*D f32, row-major
//! ```
//!
//! CSV: one embedding per line, no header.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use crate::cloud::PointCloud;
use crate::error::{Result, UtsError};

pub const UTSE_MAGIC: &[u8; 4] = b"UTSE";
pub const UTSE_VERSION: u32 = 1;
const HEADER_LEN: usize = 4 + 4 + 8 + 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EmbeddingFormat {
    Binary,
    Csv,
}

impl EmbeddingFormat {
    /// Guess from the file extension; anything other than `.csv` is binary.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some(e) if e.eq_ignore_ascii_case("csv") => EmbeddingFormat::Csv,
            _ => EmbeddingFormat::Binary,
        }
    }
}

impl FromStr for EmbeddingFormat {
    type Err = UtsError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "binary" | "utse" => Ok(EmbeddingFormat::Binary),
            "csv" => Ok(EmbeddingFormat::Csv),
            other => Err(UtsError::parse("format", format!("unknown format `{other}`"))),
        }
    }
}

pub fn load_embeddings(path: &Path, format: EmbeddingFormat) -> Result<PointCloud> {
    let bytes = fs::read(path)?;
    match format {
        EmbeddingFormat::Binary => decode_utse(&bytes),
        EmbeddingFormat::Csv => decode_csv(&bytes),
    }
}

pub fn save_embeddings(path: &Path, cloud: &PointCloud, format: EmbeddingFormat) -> Result<()> {
    let bytes = match format {
        EmbeddingFormat::Binary => encode_utse(cloud),
        EmbeddingFormat::Csv => encode_csv(cloud),
    };
    let mut w = BufWriter::new(fs::File::create(path)?);
    w.write_all(&bytes)?;
    w.flush()?;
    Ok(())
}

/// Encode as `UTSE`. Coordinates are narrowed to `f32`.
pub fn encode_utse(cloud: &PointCloud) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN + 4 * cloud.as_slice().len());
    out.extend_from_slice(UTSE_MAGIC);
    out.extend_from_slice(&UTSE_VERSION.to_le_bytes());
    out.extend_from_slice(&(cloud.len() as u64).to_le_bytes());
    out.extend_from_slice(&(cloud.dim() as u64).to_le_bytes());
    for &v in cloud.as_slice() {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
    out
}

pub fn decode_utse(bytes: &[u8]) -> Result<PointCloud> {
    if bytes.len() < HEADER_LEN {
        return Err(UtsError::parse(
            format!("byte {}", bytes.len()),
            "truncated header",
        ));
    }
    if &bytes[0..4] != UTSE_MAGIC {
        return Err(UtsError::parse("byte 0", "bad magic (expected `UTSE`)"));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != UTSE_VERSION {
        return Err(UtsError::parse(
            "byte 4",
            format!("unsupported version {version}"),
        ));
    }
    let n = u64::from_le_bytes(bytes[8..16].try_into().unwrap());
    let dim = u64::from_le_bytes(bytes[16..24].try_into().unwrap());
    if n == 0 || dim == 0 {
        return Err(UtsError::parse("byte 8", format!("empty shape {n}x{dim}")));
    }
    let count = n
        .checked_mul(dim)
        .and_then(|c| usize::try_from(c).ok())
        .ok_or_else(|| UtsError::parse("byte 8", "shape overflows"))?;
    let expected = count
        .checked_mul(4)
        .and_then(|b| b.checked_add(HEADER_LEN))
        .ok_or_else(|| UtsError::parse("byte 8", "shape overflows"))?;
    if bytes.len() != expected {
        return Err(UtsError::parse(
            format!("byte {}", bytes.len().min(expected)),
            format!(
                "payload length {} does not match header {n}x{dim} (expected {expected} bytes)",
                bytes.len()
            ),
        ));
    }
    let mut data = Vec::with_capacity(count);
    for (k, chunk) in bytes[HEADER_LEN..].chunks_exact(4).enumerate() {
        let v = f32::from_le_bytes(chunk.try_into().unwrap());
        if !v.is_finite() {
            return Err(UtsError::parse(
                format!("byte {}", HEADER_LEN + 4 * k),
                format!("non-finite value {v}"),
            ));
        }
        data.push(f64::from(v));
    }
    PointCloud::new(data, n as usize, dim as usize)
}

fn encode_csv(cloud: &PointCloud) -> Vec<u8> {
    let mut out = String::new();
    for row in cloud.rows() {
        let line: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        out.push_str(&line.join(","));
        out.push('\n');
    }
    out.into_bytes()
}

pub fn decode_csv(bytes: &[u8]) -> Result<PointCloud> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(bytes);
    let mut data = Vec::new();
    let mut dim = 0usize;
    let mut n = 0usize;
    for record in reader.records() {
        let record = record.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            UtsError::parse(format!("line {line}"), e.to_string())
        })?;
        let line = record.position().map_or(n as u64 + 1, |p| p.line());
        if record.len() == 1 && record.get(0) == Some("") {
            continue;
        }
        if n == 0 {
            dim = record.len();
        } else if record.len() != dim {
            return Err(UtsError::parse(
                format!("line {line}"),
                format!("row has {} fields, expected {dim}", record.len()),
            ));
        }
        for (col, field) in record.iter().enumerate() {
            let v: f64 = field.parse().map_err(|_| {
                UtsError::parse(
                    format!("line {line}, column {}", col + 1),
                    format!("invalid number `{field}`"),
                )
            })?;
            if !v.is_finite() {
                return Err(UtsError::parse(
                    format!("line {line}, column {}", col + 1),
                    format!("non-finite value `{field}`"),
                ));
            }
            data.push(v);
        }
        n += 1;
    }
    if n == 0 {
        return Err(UtsError::parse("line 1", "no rows"));
    }
    PointCloud::new(data, n, dim)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn binary_round_trip() {
        let c = PointCloud::from_rows(&[[0.5, -1.25], [3.0, 4.0], [1e-3, 7.5]]).unwrap();
        let bytes = encode_utse(&c);
        assert_eq!(bytes.len(), 24 + 6 * 4);
        assert_eq!(&bytes[..4], b"UTSE");
        let back = decode_utse(&bytes).unwrap();
        assert_eq!(back.len(), 3);
        assert_eq!(back.dim(), 2);
        assert_eq!(encode_utse(&back), bytes);
    }

    #[test]
    fn binary_rejects_bad_input() {
        let c = PointCloud::from_rows(&[[1.0, 2.0]]).unwrap();
        let mut bytes = encode_utse(&c);
        bytes[24..28].copy_from_slice(&f32::NAN.to_le_bytes());
        let err = decode_utse(&bytes).unwrap_err();
        assert!(err.to_string().contains("byte 24"), "{err}");

        let mut bytes = encode_utse(&c);
        bytes.pop();
        assert!(decode_utse(&bytes).is_err());
        assert!(decode_utse(b"NOPE").is_err());
    }

    #[test]
    fn csv_parses_rows() {
        let c = decode_csv(b"0.0,1.0\n1.0,0.0").unwrap();
        assert_eq!((c.len(), c.dim()), (2, 2));
        assert_eq!(c.row(1), &[1.0, 0.0]);
    }

    #[test]
    fn csv_errors_name_the_line() {
        let err = decode_csv(b"0.0,1.0\nNaN,0.0\n").unwrap_err();
        assert!(err.to_string().contains("line 2"), "{err}");
        let err = decode_csv(b"0.0,1.0\n1.0\n").unwrap_err();
        assert!(err.to_string().contains("line 2"), "{err}");
    }
}
