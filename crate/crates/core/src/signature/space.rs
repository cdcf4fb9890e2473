use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use super::SignatureVector;
use crate::error::{Result, UtsError};
use crate::linalg;

/// Cumulative explained-variance fraction used to pick the PCA dimension.
pub const DEFAULT_VARIANCE_TARGET: f64 = 0.91;

/// Component names and the row-major value matrix of a signature set.
pub fn signature_matrix(set: &[SignatureVector]) -> Result<(Vec<String>, Vec<f64>)> {
    let first = set
        .first()
        .ok_or_else(|| UtsError::Schema("empty signature set".into()))?;
    for v in &set[1..] {
        first.same_schema(v)?;
    }
    let names = first.names().map(str::to_string).collect();
    let data = set.iter().flat_map(|v| v.components.values().copied()).collect();
    Ok((names, data))
}

/// Per-component maximum absolute value over a fitting set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormalizationState {
    /// Retained components and their (positive) maxima, in schema order.
    pub maxima: IndexMap<String, f64>,
    /// Components whose maximum was zero; dropped on apply.
    pub constant: Vec<String>,
    /// Full schema of the fitting set.
    pub schema: Vec<String>,
    /// Row ids of the vectors the maxima were computed from.
    pub fitted_on: Vec<String>,
}

pub fn fit_normalization(set: &[SignatureVector]) -> Result<NormalizationState> {
    let (names, data) = signature_matrix(set)?;
    let k = names.len();
    let mut maxima = IndexMap::new();
    let mut constant = Vec::new();
    for (c, name) in names.iter().enumerate() {
        let m = data.iter().skip(c).step_by(k).map(|v| v.abs()).fold(0.0, f64::max);
        if m > 0.0 {
            maxima.insert(name.clone(), m);
        } else {
            constant.push(name.clone());
        }
    }
    Ok(NormalizationState {
        maxima,
        constant,
        schema: names,
        fitted_on: set.iter().map(SignatureVector::row_id).collect(),
    })
}

/// Divides each retained component by its fitted maximum. Values are not
/// clamped, so unseen vectors can leave `[-1, 1]`.
pub fn apply_normalization(
    v: &SignatureVector,
    state: &NormalizationState,
) -> Result<SignatureVector> {
    if v.components.len() != state.schema.len()
        || v.names().zip(&state.schema).any(|(a, b)| a != b)
    {
        return Err(UtsError::Schema(
            "signature components do not match the normalization schema".into(),
        ));
    }
    let components = state
        .maxima
        .iter()
        .map(|(name, m)| (name.clone(), v.components[name] / m))
        .collect();
    Ok(SignatureVector {
        components,
        ..v.clone()
    })
}

fn check_pair(a: &SignatureVector, b: &SignatureVector) -> Result<()> {
    a.same_schema(b)
}

/// `|a_i - b_i|` per component.
pub fn componentwise_distance(a: &SignatureVector, b: &SignatureVector) -> Result<Vec<f64>> {
    check_pair(a, b)?;
    Ok(a.components
        .values()
        .zip(b.components.values())
        .map(|(x, y)| (x - y).abs())
        .collect())
}

/// Manhattan distance between signatures.
pub fn signature_distance(a: &SignatureVector, b: &SignatureVector) -> Result<f64> {
    Ok(componentwise_distance(a, b)?.iter().sum())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PcaTarget {
    /// Smallest number of axes whose explained variance reaches the fraction.
    Variance(f64),
    Components(usize),
}

impl Default for PcaTarget {
    fn default() -> Self {
        PcaTarget::Variance(DEFAULT_VARIANCE_TARGET)
    }
}

/// Principal axes of a signature set and the projected coordinates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PcaReduction {
    pub components: Vec<String>,
    pub mean: Vec<f64>,
    /// `L` rows of length `K`, one unit loading vector per axis.
    pub loadings: Vec<Vec<f64>>,
    pub explained_variance_ratio: Vec<f64>,
    pub coordinates: Vec<Vec<f64>>,
    /// Row ids of the vectors the axes were fitted on.
    pub fitted_on: Vec<String>,
}

impl PcaReduction {
    pub fn project(&self, v: &SignatureVector) -> Result<Vec<f64>> {
        if v.components.len() != self.components.len()
            || v.names().zip(&self.components).any(|(a, b)| a != b)
        {
            return Err(UtsError::Schema("signature does not match the PCA schema".into()));
        }
        let centered: Vec<f64> = v.values().iter().zip(&self.mean).map(|(x, m)| x - m).collect();
        Ok(self
            .loadings
            .iter()
            .map(|l| l.iter().zip(&centered).map(|(a, b)| a * b).sum())
            .collect())
    }

    /// Maps reduced coordinates back to the centered signature space.
    pub fn back_project(&self, coords: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.mean.len()];
        for (c, l) in coords.iter().zip(&self.loadings) {
            out.iter_mut().zip(l).for_each(|(o, a)| *o += c * a);
        }
        out
    }
}

/// Mean-centered PCA over the signature matrix.
pub fn pca_reduce(set: &[SignatureVector], target: PcaTarget) -> Result<PcaReduction> {
    if set.len() < 2 {
        return Err(UtsError::Precondition("PCA needs at least 2 signatures".into()));
    }
    let (names, data) = signature_matrix(set)?;
    let (n, k) = (set.len(), names.len());
    let (mean, cov) = linalg::covariance(&data, n, k);
    let (vals, vecs) = linalg::symmetric_eigen(&cov, k)?;
    let total: f64 = vals.iter().map(|v| v.max(0.0)).sum();
    if total <= 0.0 {
        return Err(UtsError::Degenerate("signature set has zero variance".into()));
    }
    let scale = vals[0].max(0.0);
    let rank = vals.iter().filter(|&&v| v > 1e-12 * scale).count();
    let ratios: Vec<f64> = vals.iter().map(|v| v.max(0.0) / total).collect();
    let wanted = match target {
        PcaTarget::Components(l) => l.max(1),
        PcaTarget::Variance(f) => {
            let mut acc = 0.0;
            let mut l = 0;
            for r in &ratios {
                l += 1;
                acc += r;
                if acc >= f - 1e-12 {
                    break;
                }
            }
            l
        }
    };
    if wanted > rank {
        log::warn!("signature covariance has rank {rank}; using {rank} axes instead of {wanted}");
    }
    let l = wanted.min(rank);
    let loadings: Vec<Vec<f64>> = vecs.into_iter().take(l).collect();
    let mut red = PcaReduction {
        components: names,
        mean,
        loadings,
        explained_variance_ratio: ratios[..l].to_vec(),
        coordinates: Vec::new(),
        fitted_on: set.iter().map(SignatureVector::row_id).collect(),
    };
    red.coordinates = set.iter().map(|v| red.project(v)).collect::<Result<_>>()?;
    Ok(red)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sig(vals: &[f64]) -> SignatureVector {
        SignatureVector::from_pairs(vals.iter().enumerate().map(|(i, &v)| (format!("c{i}"), v)))
    }

    #[test]
    fn normalization_examples() {
        let set = vec![sig(&[2.0, 0.0, 1.0]), sig(&[-4.0, 0.0, 3.0])];
        let st = fit_normalization(&set).unwrap();
        assert_eq!(st.maxima["c0"], 4.0);
        assert_eq!(st.constant, vec!["c1".to_string()]);
        let out = apply_normalization(&set[1], &st).unwrap();
        assert_eq!(out.values(), vec![-1.0, 1.0]);
        let unseen = apply_normalization(&sig(&[8.0, 5.0, 0.0]), &st).unwrap();
        assert_eq!(unseen.values(), vec![2.0, 0.0]);

        let single = fit_normalization(&[sig(&[3.0, -2.0, 0.5])]).unwrap();
        let v = apply_normalization(&sig(&[3.0, -2.0, 0.5]), &single).unwrap();
        assert_eq!(v.values(), vec![1.0, -1.0, 1.0]);
    }

    #[test]
    fn schema_mismatch_is_rejected() {
        let a = sig(&[1.0, 2.0]);
        let b = SignatureVector::from_pairs([("c0", 1.0), ("other", 2.0)]);
        assert!(matches!(signature_distance(&a, &b), Err(UtsError::Schema(_))));
        assert!(matches!(fit_normalization(&[a, b]), Err(UtsError::Schema(_))));
    }

    #[test]
    fn distance_examples() {
        let a = sig(&[0.1, 0.2, 0.3]);
        let b = sig(&[0.2, 0.3, 0.4]);
        assert!((signature_distance(&a, &b).unwrap() - 0.3).abs() < 1e-12);
        assert_eq!(signature_distance(&a, &a).unwrap(), 0.0);
        let c = sig(&[0.1, 0.3, 0.3]);
        let d = componentwise_distance(&a, &c).unwrap();
        assert!(d[0] == 0.0 && (d[1] - 0.1).abs() < 1e-12 && d[2] == 0.0);
    }

    #[test]
    fn pca_rank_two_set() {
        // Points spanning a 2-D plane inside 4-D signature space.
        let set: Vec<SignatureVector> = (0..6)
            .map(|i| {
                let (a, b) = (i as f64, ((i * i) % 5) as f64);
                sig(&[a + b, a - b, 2.0 * a, b])
            })
            .collect();
        let red = pca_reduce(&set, PcaTarget::Variance(1.0)).unwrap();
        assert_eq!(red.loadings.len(), 2);
        let r = &red.explained_variance_ratio;
        assert!(r[0] >= r[1] && r.iter().sum::<f64>() <= 1.0 + 1e-12);
        for (v, c) in set.iter().zip(&red.coordinates) {
            let back = red.back_project(c);
            for ((x, m), y) in v.values().iter().zip(&red.mean).zip(&back) {
                assert!((x - m - y).abs() < 1e-8);
            }
        }
    }
}
