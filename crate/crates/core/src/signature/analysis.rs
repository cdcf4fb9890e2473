use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::SignatureVector;
use crate::cloud::{dot, PointCloud};
use crate::clustering::average_linkage;
use crate::cloud::DistanceMatrix;
use crate::error::{Result, UtsError};
use crate::linalg;

fn centered(cloud: &PointCloud) -> Vec<f64> {
    let (n, d) = (cloud.len(), cloud.dim());
    let mean = linalg::column_means(cloud.as_slice(), n, d);
    let mut out = cloud.as_slice().to_vec();
    for row in out.chunks_exact_mut(d) {
        row.iter_mut().zip(&mean).for_each(|(v, m)| *v -= m);
    }
    out
}

fn frobenius_sq(m: &[f64]) -> f64 {
    dot(m, m)
}

/// Linear centered kernel alignment of row-paired clouds.
pub fn cka(x: &PointCloud, y: &PointCloud) -> Result<f64> {
    let n = x.len();
    if y.len() != n {
        return Err(UtsError::Pairing(format!(
            "CKA needs paired rows ({n} vs {})",
            y.len()
        )));
    }
    let (dx, dy) = (x.dim(), y.dim());
    let (xc, yc) = (centered(x), centered(y));
    // ‖YᵀX‖² = ⟨XXᵀ, YYᵀ⟩, so use whichever side is smaller.
    let (cross, xx, yy) = if n <= dx.max(dy) {
        let (kx, ky) = (linalg::gram(&xc, n, dx), linalg::gram(&yc, n, dy));
        (dot(&kx, &ky), frobenius_sq(&kx), frobenius_sq(&ky))
    } else {
        let mut yx = vec![0.0; dy * dx];
        for (rx, ry) in xc.chunks_exact(dx).zip(yc.chunks_exact(dy)) {
            for (a, &vy) in ry.iter().enumerate() {
                let out = &mut yx[a * dx..(a + 1) * dx];
                out.iter_mut().zip(rx).for_each(|(o, &vx)| *o += vy * vx);
            }
        }
        (
            frobenius_sq(&yx),
            frobenius_sq(&linalg::cross_product(&xc, n, dx)),
            frobenius_sq(&linalg::cross_product(&yc, n, dy)),
        )
    };
    let denom = xx.sqrt() * yy.sqrt();
    if !(denom > 0.0) {
        return Err(UtsError::Degenerate("CKA is undefined for a constant cloud".into()));
    }
    Ok((cross / denom).clamp(0.0, 1.0))
}

fn pearson(a: &[f64], b: &[f64]) -> Option<f64> {
    let n = a.len() as f64;
    let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
    }
    if saa <= 0.0 || sbb <= 0.0 {
        return None;
    }
    Some((sab / (saa * sbb).sqrt()).clamp(-1.0, 1.0))
}

/// Correlations between signature components, aggregated over groups.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationReport {
    /// Variables in display order (average-linkage leaf order on `1 - |mean|`).
    pub variables: Vec<String>,
    /// Row-major mean correlation; `None` where no group defined it.
    pub mean: Vec<Option<f64>>,
    /// Row-major population variance across the groups that defined it.
    pub variance: Vec<Option<f64>>,
    pub groups: usize,
}

impl CorrelationReport {
    pub fn get(&self, a: &str, b: &str) -> Option<f64> {
        let i = self.variables.iter().position(|v| v == a)?;
        let j = self.variables.iter().position(|v| v == b)?;
        self.mean[i * self.variables.len() + j]
    }

    /// Matrix CSV: header row of variable names, then one row per variable.
    pub fn to_csv(&self, which: &[Option<f64>]) -> String {
        let k = self.variables.len();
        let mut out = String::from("variable");
        for v in &self.variables {
            out.push(',');
            out.push_str(v);
        }
        out.push('\n');
        for (i, v) in self.variables.iter().enumerate() {
            out.push_str(v);
            for x in &which[i * k..(i + 1) * k] {
                out.push(',');
                if let Some(x) = x {
                    out.push_str(&x.to_string());
                }
            }
            out.push('\n');
        }
        out
    }
}

/// Pearson correlations of components (plus per-model extras) within each
/// group, averaged across groups.
///
/// `extras` maps a model id to named per-source properties such as the
/// embedding dimension; every model in the groups must have the same keys.
pub fn correlation_report(
    groups: &BTreeMap<String, Vec<SignatureVector>>,
    extras: &BTreeMap<String, BTreeMap<String, f64>>,
) -> Result<CorrelationReport> {
    let first = groups
        .values()
        .flat_map(|g| g.first())
        .next()
        .ok_or_else(|| UtsError::Grouping("no signatures to correlate".into()))?;
    let extra_names: Vec<String> = extras
        .values()
        .next()
        .map(|m| m.keys().cloned().collect())
        .unwrap_or_default();
    let mut variables: Vec<String> = first.names().map(str::to_string).collect();
    variables.extend(extra_names.iter().cloned());
    let k = variables.len();

    let mut sums = vec![0.0; k * k];
    let mut sq = vec![0.0; k * k];
    let mut counts = vec![0usize; k * k];
    for (name, set) in groups {
        if set.len() < 3 {
            return Err(UtsError::Grouping(format!(
                "group {name} has {} signatures; at least 3 are needed",
                set.len()
            )));
        }
        let mut columns: Vec<Vec<f64>> = vec![Vec::with_capacity(set.len()); k];
        for v in set {
            first.same_schema(v)?;
            for (c, x) in v.components.values().enumerate() {
                columns[c].push(*x);
            }
            let props = extras.get(&v.source.model);
            for (e, en) in extra_names.iter().enumerate() {
                let x = props.and_then(|p| p.get(en)).ok_or_else(|| {
                    UtsError::Schema(format!("no `{en}` for model {}", v.source.model))
                })?;
                columns[first.len() + e].push(*x);
            }
        }
        for i in 0..k {
            for j in 0..k {
                if let Some(r) = pearson(&columns[i], &columns[j]) {
                    sums[i * k + j] += r;
                    sq[i * k + j] += r * r;
                    counts[i * k + j] += 1;
                }
            }
        }
    }
    let mean: Vec<Option<f64>> = (0..k * k)
        .map(|c| (counts[c] > 0).then(|| sums[c] / counts[c] as f64))
        .collect();
    let variance: Vec<Option<f64>> = (0..k * k)
        .map(|c| {
            mean[c].map(|m| (sq[c] / counts[c] as f64 - m * m).max(0.0))
        })
        .collect();

    let order = if k >= 2 {
        let mut d = vec![0.0; k * k];
        for i in 0..k {
            for j in 0..k {
                if i != j {
                    let a = mean[i * k + j].map_or(1.0, |r| 1.0 - r.abs());
                    let b = mean[j * k + i].map_or(1.0, |r| 1.0 - r.abs());
                    d[i * k + j] = 0.5 * (a + b);
                }
            }
        }
        average_linkage(&DistanceMatrix::from_full(d, k)?)?.leaf_order()
    } else {
        (0..k).collect()
    };
    let pick = |m: &[Option<f64>]| -> Vec<Option<f64>> {
        let mut out = Vec::with_capacity(k * k);
        for &i in &order {
            for &j in &order {
                out.push(m[i * k + j]);
            }
        }
        out
    };
    Ok(CorrelationReport {
        variables: order.iter().map(|&i| variables[i].clone()).collect(),
        mean: pick(&mean),
        variance: pick(&variance),
        groups: groups.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cka_identity_and_shape_paths() {
        let x = PointCloud::from_rows(&[[1.0, 2.0], [0.5, -1.0], [3.0, 0.0], [2.0, 2.0]]).unwrap();
        assert!((cka(&x, &x).unwrap() - 1.0).abs() < 1e-12);
        let wide = PointCloud::from_rows(&[[1.0, 2.0, 0.0, 1.0, 5.0], [0.0, 1.0, 1.0, 1.0, 0.0], [2.0, 0.0, 3.0, 1.0, 1.0]])
            .unwrap();
        assert!((cka(&wide, &wide).unwrap() - 1.0).abs() < 1e-12);
        assert!(matches!(cka(&x, &wide), Err(UtsError::Pairing(_))));
    }

    #[test]
    fn correlation_of_duplicate_and_negated_components() {
        let make = |x: f64, y: f64| {
            SignatureVector::from_pairs([("a", x), ("a_copy", x), ("neg_a", -x), ("b", y)])
        };
        let mut groups = BTreeMap::new();
        groups.insert(
            "g1".to_string(),
            vec![make(1.0, 3.0), make(2.0, 1.0), make(4.0, 2.0), make(0.5, 0.0)],
        );
        groups.insert(
            "g2".to_string(),
            vec![make(0.0, 1.0), make(1.0, 5.0), make(3.0, 2.0)],
        );
        let r = correlation_report(&groups, &BTreeMap::new()).unwrap();
        assert!((r.get("a", "a_copy").unwrap() - 1.0).abs() < 1e-12);
        assert!((r.get("a", "neg_a").unwrap() + 1.0).abs() < 1e-12);
        assert_eq!(r.groups, 2);
        assert_eq!(r.variables.len(), 4);
    }

    #[test]
    fn constant_component_is_missing() {
        let set: Vec<SignatureVector> = (0..4)
            .map(|i| SignatureVector::from_pairs([("x", i as f64), ("c", 1.0)]))
            .collect();
        let groups = BTreeMap::from([("g".to_string(), set)]);
        let r = correlation_report(&groups, &BTreeMap::new()).unwrap();
        assert_eq!(r.get("x", "c"), None);
    }
}
