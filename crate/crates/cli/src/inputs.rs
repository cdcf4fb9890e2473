//! Reading embeddings, signature sets and the small CSV side tables.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::BufReader;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use anyhow::{bail, Context, Result};
use uts::io::{load_embeddings, EmbeddingFormat};
use uts::signature::{read_jsonl, SignatureVector};
use uts::{PointCloud, UtsError};

/// `path`, `model=path` or `model/dataset=path`.
#[derive(Debug, Clone, PartialEq)]
pub struct InputSpec {
    pub model: String,
    pub dataset: String,
    pub path: PathBuf,
}

impl FromStr for InputSpec {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        let (label, path) = match s.split_once('=') {
            Some((l, p)) => (Some(l), PathBuf::from(p)),
            None => (None, PathBuf::from(s)),
        };
        if path.as_os_str().is_empty() {
            return Err(format!("no path in `{s}`"));
        }
        let stem = path.file_stem().map(|x| x.to_string_lossy().into_owned()).unwrap_or_default();
        let (model, dataset) = match label.map(|l| l.split_once('/')) {
            None => (stem.clone(), stem),
            Some(Some((m, d))) => (m.to_string(), d.to_string()),
            Some(None) => (label.unwrap_or_default().to_string(), stem),
        };
        Ok(InputSpec { model, dataset, path })
    }
}

/// Loads embeddings and scales every row to unit length.
pub fn load_cloud(path: &Path) -> Result<PointCloud> {
    let cloud = load_embeddings(path, EmbeddingFormat::from_path(path))
        .with_context(|| format!("cannot load embeddings from {}", path.display()))?;
    Ok(cloud.normalize_rows()?)
}

pub fn load_signatures(path: &Path) -> Result<Vec<SignatureVector>> {
    let f = File::open(path).with_context(|| format!("cannot open {}", path.display()))?;
    read_jsonl(BufReader::new(f)).with_context(|| format!("cannot read signatures from {}", path.display()))
}

/// Row indices, one per line or comma separated; blank lines ignored.
pub fn load_indices(path: &Path, n: usize) -> Result<Vec<usize>> {
    let text = std::fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))?;
    let mut out = Vec::new();
    for token in text.split(|c: char| c == ',' || c.is_whitespace()).filter(|t| !t.is_empty()) {
        let i: usize = token
            .parse()
            .map_err(|_| UtsError::Parse { location: path.display().to_string(), message: format!("bad index `{token}`") })?;
        if i >= n {
            return Err(UtsError::Bounds(format!("index {i} out of range for {n} rows")).into());
        }
        out.push(i);
    }
    if out.is_empty() {
        bail!(UtsError::Precondition(format!("{} lists no indices", path.display())));
    }
    Ok(out)
}

fn reader(path: &Path) -> Result<csv::Reader<File>> {
    csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .with_context(|| format!("cannot open {}", path.display()))
}

fn parse_error(path: &Path, row: usize, message: impl Into<String>) -> anyhow::Error {
    UtsError::Parse { location: format!("{} row {row}", path.display()), message: message.into() }.into()
}

/// Targets keyed by `(model, dataset)`; header `model,dataset,target`.
pub fn load_targets(path: &Path) -> Result<BTreeMap<(String, String), String>> {
    let mut r = reader(path)?;
    let headers = r.headers()?.clone();
    if headers.iter().collect::<Vec<_>>() != ["model", "dataset", "target"] {
        bail!(UtsError::Schema(format!("{}: expected header model,dataset,target", path.display())));
    }
    let mut out = BTreeMap::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec?;
        let key = (rec[0].to_string(), rec[1].to_string());
        if out.insert(key, rec[2].to_string()).is_some() {
            return Err(parse_error(path, i + 1, format!("duplicate entry for {}/{}", &rec[0], &rec[1])));
        }
    }
    Ok(out)
}

/// Per-model properties; header `model,<name>,<name>,...`.
pub fn load_extras(path: &Path) -> Result<BTreeMap<String, BTreeMap<String, f64>>> {
    let mut r = reader(path)?;
    let headers = r.headers()?.clone();
    if headers.get(0) != Some("model") || headers.len() < 2 {
        bail!(UtsError::Schema(format!("{}: expected header model,<property>,...", path.display())));
    }
    let mut out = BTreeMap::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec?;
        let mut props = BTreeMap::new();
        for (name, v) in headers.iter().zip(rec.iter()).skip(1) {
            let x: f64 = v.parse().map_err(|_| parse_error(path, i + 1, format!("bad number `{v}`")))?;
            if !x.is_finite() {
                return Err(parse_error(path, i + 1, format!("{name} is not finite")));
            }
            props.insert(name.to_string(), x);
        }
        out.insert(rec[0].to_string(), props);
    }
    Ok(out)
}
