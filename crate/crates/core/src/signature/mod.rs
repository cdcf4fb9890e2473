//! Global and local signature vectors and their comparison.

mod analysis;
mod compute;
mod config;
mod space;

pub use analysis::{cka, correlation_report, CorrelationReport};
pub use compute::{compute_global_signature, compute_local_signature, DEFAULT_LOCAL_K};
pub use config::{Budgets, Descriptor, DescriptorConfig};
pub use space::{
    apply_normalization, componentwise_distance, fit_normalization, pca_reduce, signature_distance,
    signature_matrix, NormalizationState, PcaReduction, PcaTarget, DEFAULT_VARIANCE_TARGET,
};

use std::io::{BufRead, Write};

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use crate::error::{Result, UtsError};

#[derive(Debug, Clone, Default, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Source {
    pub model: String,
    pub dataset: String,
}

/// An ordered set of named descriptor values with provenance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SignatureVector {
    pub source: Source,
    pub seed: u64,
    pub config_hash: String,
    pub realized_sizes: IndexMap<String, usize>,
    pub components: IndexMap<String, f64>,
    /// Row id of the anchor for local signatures.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub anchor: Option<String>,
    /// Optional class label carried alongside the vector (e.g. retrievable = 1).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
}

impl SignatureVector {
    pub fn new(components: IndexMap<String, f64>) -> Self {
        Self {
            source: Source::default(),
            seed: 0,
            config_hash: String::new(),
            realized_sizes: IndexMap::new(),
            components,
            anchor: None,
            label: None,
        }
    }

    pub fn from_pairs<S: Into<String>>(pairs: impl IntoIterator<Item = (S, f64)>) -> Self {
        Self::new(pairs.into_iter().map(|(k, v)| (k.into(), v)).collect())
    }

    pub fn with_source(mut self, model: impl Into<String>, dataset: impl Into<String>) -> Self {
        self.source = Source {
            model: model.into(),
            dataset: dataset.into(),
        };
        self
    }

    pub fn len(&self) -> usize {
        self.components.len()
    }

    pub fn is_empty(&self) -> bool {
        self.components.is_empty()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> + '_ {
        self.components.keys().map(String::as_str)
    }

    pub fn values(&self) -> Vec<f64> {
        self.components.values().copied().collect()
    }

    pub fn get(&self, name: &str) -> Option<f64> {
        self.components.get(name).copied()
    }

    /// Identifier used for rows in CV provenance: `model/dataset/seed[/anchor]`.
    pub fn row_id(&self) -> String {
        let mut id = format!("{}/{}/{}", self.source.model, self.source.dataset, self.seed);
        if let Some(a) = &self.anchor {
            id.push('/');
            id.push_str(a);
        }
        id
    }

    pub(crate) fn same_schema(&self, other: &SignatureVector) -> Result<()> {
        if self.components.len() != other.components.len()
            || self.components.keys().zip(other.components.keys()).any(|(a, b)| a != b)
        {
            let mine: Vec<&str> = self.names().collect();
            let theirs: Vec<&str> = other.names().collect();
            return Err(UtsError::Schema(format!(
                "component sets differ: {mine:?} vs {theirs:?}"
            )));
        }
        Ok(())
    }
}

/// Writes one JSON object per line.
pub fn write_jsonl<W: Write>(mut out: W, set: &[SignatureVector]) -> Result<()> {
    for v in set {
        serde_json::to_writer(&mut out, v)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_jsonl<R: BufRead>(input: R) -> Result<Vec<SignatureVector>> {
    let mut set = Vec::new();
    for (i, line) in input.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let v: SignatureVector = serde_json::from_str(&line)
            .map_err(|e| UtsError::parse(format!("line {}", i + 1), e.to_string()))?;
        if let Some((name, _)) = v.components.iter().find(|(_, x)| !x.is_finite()) {
            return Err(UtsError::parse(
                format!("line {}", i + 1),
                format!("component {name} is not finite"),
            ));
        }
        set.push(v);
    }
    Ok(set)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn jsonl_round_trip_keeps_order() {
        let v = SignatureVector::from_pairs([("zeta", 1.5), ("alpha", -2.0)]).with_source("m", "d");
        let mut buf = Vec::new();
        write_jsonl(&mut buf, &[v.clone(), v.clone()]).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.find("zeta").unwrap() < text.find("alpha").unwrap());
        assert!(text.starts_with(r#"{"source":{"model":"m","dataset":"d"},"seed":0"#));
        let back = read_jsonl(&buf[..]).unwrap();
        assert_eq!(back, vec![v.clone(), v]);
    }

    #[test]
    fn jsonl_errors_name_the_line() {
        let err = read_jsonl("\n{not json}\n".as_bytes()).unwrap_err();
        assert!(err.to_string().contains("line 2"), "{err}");
    }
}
