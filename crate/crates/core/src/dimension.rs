//! Intrinsic-dimension and isotropy descriptors.

use std::collections::HashSet;

use crate::cloud::{DistanceKernel, Metric, PointCloud};
use crate::error::{Result, UtsError};
use crate::linalg;

/// Default eigenvalue fraction for the Fukunaga–Olsen rule.
pub const DEFAULT_FO_ALPHA: f64 = 0.5;

/// Eigenvalues of the sample covariance, descending and clamped at zero.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectrumSummary {
    pub eigenvalues: Vec<f64>,
}

impl SpectrumSummary {
    pub fn new(mut eigenvalues: Vec<f64>) -> Self {
        eigenvalues.iter_mut().for_each(|v| *v = v.max(0.0));
        eigenvalues.sort_by(|a, b| b.total_cmp(a));
        Self { eigenvalues }
    }

    pub fn total(&self) -> f64 {
        self.eigenvalues.iter().sum()
    }
}

/// Spectrum of the mean-centered covariance (divisor `n - 1`).
///
/// Uses the `D × D` covariance when `D <= n`, otherwise the `n × n` Gram
/// matrix, whose nonzero eigenvalues coincide; the result always has `D` entries.
pub fn covariance_spectrum(cloud: &PointCloud) -> Result<SpectrumSummary> {
    let (n, d) = (cloud.len(), cloud.dim());
    if n < 2 {
        return Err(UtsError::Degenerate(
            "covariance spectrum needs at least 2 points".into(),
        ));
    }
    let mut eig = if d <= n {
        let (_, cov) = linalg::covariance(cloud.as_slice(), n, d);
        linalg::symmetric_eigenvalues(&cov, d)?
    } else {
        let gram = linalg::centered_gram(cloud.as_slice(), n, d);
        linalg::symmetric_eigenvalues(&gram, n)?
    };
    eig.resize(d, 0.0);
    Ok(SpectrumSummary::new(eig))
}

fn dedup_rows(cloud: &PointCloud) -> PointCloud {
    let mut seen: HashSet<Vec<u64>> = HashSet::with_capacity(cloud.len());
    let keep: Vec<usize> = cloud
        .rows()
        .enumerate()
        .filter(|(_, r)| seen.insert(r.iter().map(|v| (v + 0.0).to_bits()).collect()))
        .map(|(i, _)| i)
        .collect();
    cloud.select(&keep)
}

/// TwoNN intrinsic dimension.
///
/// With `μ_i = d2_i / d1_i` sorted ascending and `F(μ_(k)) = k/N`, fits
/// `-log(1 - F) = d · log μ` through the origin, leaving out the top point
/// where `1 - F = 0`. Duplicate rows are removed first.
pub fn twonn_dimension(cloud: &PointCloud, metric: Metric) -> Result<f64> {
    let distinct = dedup_rows(cloud);
    let n = distinct.len();
    if n < 3 {
        return Err(UtsError::Degenerate(format!(
            "TwoNN needs at least 3 distinct points (got {n})"
        )));
    }
    let kernel = DistanceKernel::new(&distinct, metric);
    let mut mu: Vec<f64> = Vec::with_capacity(n);
    for i in 0..n {
        let (mut d1, mut d2) = (f64::INFINITY, f64::INFINITY);
        for j in 0..n {
            if j == i {
                continue;
            }
            let d = kernel.dist(i, j);
            if d < d1 {
                d2 = d1;
                d1 = d;
            } else if d < d2 {
                d2 = d;
            }
        }
        // Zero d1 happens for distinct rows that coincide under the metric
        // (e.g. parallel vectors under cosine distance).
        if d1 > 0.0 {
            mu.push(d2 / d1);
        }
    }
    if mu.len() < 3 {
        return Err(UtsError::Degenerate(
            "TwoNN: fewer than 3 points with a positive nearest-neighbor distance".into(),
        ));
    }
    mu.sort_by(f64::total_cmp);
    let m = mu.len();
    let (mut sxy, mut sxx) = (0.0, 0.0);
    for (k, &u) in mu.iter().enumerate().take(m - 1) {
        let f = (k + 1) as f64 / m as f64;
        let x = u.ln();
        let y = -(1.0 - f).ln();
        sxy += x * y;
        sxx += x * x;
    }
    if sxx <= 0.0 {
        return Err(UtsError::Degenerate(
            "TwoNN: all neighbor-distance ratios equal 1".into(),
        ));
    }
    Ok(sxy / sxx)
}

/// Fukunaga–Olsen PCA dimension: eigenvalues at least `alpha · λ_max`.
pub fn pca_fo_dimension(spectrum: &SpectrumSummary, alpha: f64) -> Result<usize> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(UtsError::Precondition(format!(
            "alpha_fo must lie in (0, 1) (got {alpha})"
        )));
    }
    let max = spectrum.eigenvalues.iter().copied().fold(0.0, f64::max);
    if max <= 0.0 {
        return Err(UtsError::Degenerate("spectrum is identically zero".into()));
    }
    Ok(spectrum
        .eigenvalues
        .iter()
        .filter(|&&l| l >= alpha * max)
        .count())
}

/// Exponentiated Shannon entropy of the normalized spectrum.
///
/// Evaluated as `S · exp(-Σ q ln q / S)` with `q = λ / λ_max` and `S = Σ q`,
/// which is exactly `k` for `k` equal eigenvalues.
pub fn effective_rank(spectrum: &SpectrumSummary) -> Result<f64> {
    let max = spectrum.eigenvalues.iter().copied().fold(0.0, f64::max);
    if max <= 0.0 {
        return Err(UtsError::Degenerate("total variance is zero".into()));
    }
    let q: Vec<f64> = spectrum.eigenvalues.iter().map(|&l| l / max).filter(|&q| q > 0.0).collect();
    let s: f64 = q.iter().sum();
    let plogp: f64 = q.iter().map(|&q| q * q.ln()).sum();
    Ok(s * (-plogp / s).exp())
}

/// IsoScore from a covariance spectrum.
///
/// The spectrum is the diagonal of the covariance after rotating the cloud
/// onto its principal axes. Steps: scale the diagonal to norm `√D`, take the
/// isotropy defect `δ = ‖Σ̂ - 1‖ / √(2(D - √D))`, convert it to the fraction of
/// dimensions used `k = (D - δ²(D - √D))² / D²`, and rescale `(D·k - 1)/(D - 1)`.
pub fn isoscore_from_spectrum(spectrum: &SpectrumSummary) -> Result<f64> {
    let dim = spectrum.eigenvalues.len();
    let nrm = spectrum.eigenvalues.iter().map(|v| v * v).sum::<f64>().sqrt();
    if nrm <= 0.0 {
        return Err(UtsError::Degenerate("covariance is zero".into()));
    }
    if dim == 1 {
        return Ok(1.0);
    }
    let d = dim as f64;
    let sd = d.sqrt();
    let defect = spectrum
        .eigenvalues
        .iter()
        .map(|&v| {
            let e = sd * v / nrm - 1.0;
            e * e
        })
        .sum::<f64>()
        .sqrt()
        / (2.0 * (d - sd)).sqrt();
    let used = (d - defect * defect * (d - sd)).powi(2) / (d * d);
    Ok(((d * used - 1.0) / (d - 1.0)).clamp(0.0, 1.0))
}

pub fn isoscore(cloud: &PointCloud) -> Result<f64> {
    isoscore_from_spectrum(&covariance_spectrum(cloud)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spectrum(v: &[f64]) -> SpectrumSummary {
        SpectrumSummary::new(v.to_vec())
    }

    #[test]
    fn spectrum_examples() {
        let s = covariance_spectrum(&PointCloud::from_rows(&[[-1.0, 0.0], [1.0, 0.0]]).unwrap()).unwrap();
        assert!((s.eigenvalues[0] - 2.0).abs() < 1e-12 && s.eigenvalues[1].abs() < 1e-12);

        let s = covariance_spectrum(
            &PointCloud::from_rows(&[[1.0, 0.0], [-1.0, 0.0], [0.0, 1.0], [0.0, -1.0]]).unwrap(),
        )
        .unwrap();
        assert!((s.eigenvalues[0] - s.eigenvalues[1]).abs() < 1e-12);

        let rank1: Vec<[f64; 3]> = (0..6).map(|i| [i as f64, 2.0 * i as f64, -(i as f64)]).collect();
        let s = covariance_spectrum(&PointCloud::from_rows(&rank1).unwrap()).unwrap();
        assert!(s.eigenvalues[0] > 1.0);
        assert!(s.eigenvalues[1] < 1e-10 && s.eigenvalues[2] < 1e-10);

        assert!(covariance_spectrum(&PointCloud::from_rows(&[[1.0, 2.0]]).unwrap()).is_err());
    }

    #[test]
    fn gram_path_matches_covariance_path() {
        // 3 points in 5-D goes through the Gram matrix.
        let c = PointCloud::from_rows(&[
            [1.0, 0.5, 0.0, 2.0, -1.0],
            [0.0, 1.0, 3.0, 0.0, 0.5],
            [2.0, -1.0, 1.0, 1.0, 0.0],
        ])
        .unwrap();
        let s = covariance_spectrum(&c).unwrap();
        assert_eq!(s.eigenvalues.len(), 5);
        let (_, cov) = linalg::covariance(c.as_slice(), 3, 5);
        let direct = linalg::symmetric_eigenvalues(&cov, 5).unwrap();
        for (a, b) in s.eigenvalues.iter().zip(&direct) {
            assert!((a - b.max(0.0)).abs() < 1e-10);
        }
    }

    #[test]
    fn fo_examples() {
        assert_eq!(pca_fo_dimension(&spectrum(&[4.0, 3.0, 1.0, 0.1]), 0.5).unwrap(), 2);
        assert_eq!(pca_fo_dimension(&spectrum(&[2.0, 2.0, 2.0]), 0.5).unwrap(), 3);
        assert_eq!(pca_fo_dimension(&spectrum(&[1.0, 0.0, 0.0]), 0.5).unwrap(), 1);
        assert!(pca_fo_dimension(&spectrum(&[0.0, 0.0]), 0.5).is_err());
    }

    #[test]
    fn effective_rank_examples() {
        assert!((effective_rank(&spectrum(&[3.0; 7])).unwrap() - 7.0).abs() < 1e-12);
        assert!((effective_rank(&spectrum(&[0.5, 0.5, 0.0])).unwrap() - 2.0).abs() < 1e-12);
        assert_eq!(effective_rank(&spectrum(&[2.0, 0.0, 0.0])).unwrap(), 1.0);
        assert!(effective_rank(&spectrum(&[0.0, 0.0])).is_err());
    }

    #[test]
    fn isoscore_extremes() {
        assert!((isoscore_from_spectrum(&spectrum(&[1.0; 10])).unwrap() - 1.0).abs() < 1e-12);
        let mut one_axis = vec![0.0; 10];
        one_axis[0] = 5.0;
        assert!(isoscore_from_spectrum(&spectrum(&one_axis)).unwrap() < 1e-12);
    }

    #[test]
    fn twonn_rejects_duplicates_only() {
        let c = PointCloud::from_rows(&[[1.0, 1.0], [1.0, 1.0], [0.0, 0.0], [0.0, 0.0]]).unwrap();
        assert!(matches!(twonn_dimension(&c, Metric::Euclidean), Err(UtsError::Degenerate(_))));
    }
}
