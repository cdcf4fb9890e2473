//! Magnitude, spread, Vendi score, pairwise similarity and uniformity.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::cloud::{dot, squared_euclidean, DistanceMatrix, PointCloud};
use crate::error::{Result, UtsError};
use crate::linalg;

/// Fraction of `n` that defines the convergence scale `t_cut`.
pub const MAGNITUDE_CONVERGENCE: f64 = 0.95;
/// Grid points used for magnitude curves unless configured otherwise.
pub const DEFAULT_MAGNITUDE_GRID: usize = 32;
/// Maximum `‖ζw - 1‖∞` accepted from the weight solve.
pub const MAGNITUDE_RESIDUAL_TOL: f64 = 1e-8;
/// Number of consecutive grid points in each local slope fit.
const SLOPE_WINDOW: usize = 4;

fn closest_pair(dm: &DistanceMatrix) -> (usize, usize) {
    let n = dm.len();
    let mut best = (0, 1.min(n.saturating_sub(1)), f64::INFINITY);
    for i in 0..n {
        for j in i + 1..n {
            if dm.get(i, j) < best.2 {
                best = (i, j, dm.get(i, j));
            }
        }
    }
    (best.0, best.1)
}

/// `Mag(tX) = Σ w` where `ζ w = 1` and `ζ_ij = exp(-t d_ij)`.
pub fn magnitude(dm: &DistanceMatrix, t: f64) -> Result<f64> {
    if !(t > 0.0) {
        return Err(UtsError::Precondition(format!("scale t must be positive (got {t})")));
    }
    let n = dm.len();
    if n == 1 {
        return Ok(1.0);
    }
    for i in 0..n {
        for j in i + 1..n {
            if dm.get(i, j) == 0.0 {
                return Err(UtsError::Conditioning { i, j });
            }
        }
    }
    let zeta: Vec<f64> = dm.as_slice().iter().map(|&d| (-t * d).exp()).collect();
    let ones = vec![1.0; n];
    let w = linalg::solve_symmetric(&zeta, n, &ones);
    let residual = zeta
        .chunks_exact(n)
        .map(|row| (dot(row, &w) - 1.0).abs())
        .fold(0.0, f64::max);
    if !(residual <= MAGNITUDE_RESIDUAL_TOL) {
        let (i, j) = closest_pair(dm);
        log::debug!("magnitude solve residual {residual:e} at t={t}");
        return Err(UtsError::Conditioning { i, j });
    }
    Ok(w.iter().sum())
}

/// Magnitude sampled on a log-spaced grid ending at the convergence scale.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MagnitudeCurve {
    pub t_grid: Vec<f64>,
    pub values: Vec<f64>,
    pub t_cut: f64,
}

impl MagnitudeCurve {
    pub fn new(t_grid: Vec<f64>, values: Vec<f64>, t_cut: f64) -> Result<Self> {
        if t_grid.len() != values.len() || t_grid.is_empty() {
            return Err(UtsError::Precondition(
                "magnitude curve needs equally many (nonzero) scales and values".into(),
            ));
        }
        if t_grid.windows(2).any(|w| w[0] >= w[1]) || t_grid[0] < 0.0 {
            return Err(UtsError::Precondition(
                "magnitude curve scales must be nonnegative and strictly ascending".into(),
            ));
        }
        Ok(Self {
            t_grid,
            values,
            t_cut,
        })
    }

    /// `t,magnitude` rows.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("t,magnitude\n");
        for (t, v) in self.t_grid.iter().zip(&self.values) {
            let _ = writeln!(out, "{t},{v}");
        }
        out
    }
}

/// Smallest `t` with `Mag(tX) >= 0.95 n`, by doubling/halving then bisection.
/// The search starts at the reciprocal mean distance, so rescaling the
/// distances by `c` rescales the result by `1/c`.
pub fn convergence_scale(dm: &DistanceMatrix) -> Result<f64> {
    let n = dm.len();
    if n == 1 {
        return Ok(1.0);
    }
    let target = MAGNITUDE_CONVERGENCE * n as f64;
    let reached = |t: f64| -> Result<bool> { Ok(magnitude(dm, t)? >= target) };
    let mean = dm.as_slice().iter().sum::<f64>() / (n * (n - 1)) as f64;
    let start = if mean > 0.0 { 1.0 / mean } else { 1.0 };

    let (mut lo, mut hi);
    if reached(start)? {
        hi = start;
        lo = 0.5 * start;
        let mut steps = 0;
        while reached(lo)? {
            hi = lo;
            lo *= 0.5;
            steps += 1;
            if steps > 200 {
                return Err(UtsError::Estimation("convergence scale underflow".into()));
            }
        }
    } else {
        lo = start;
        hi = 2.0 * start;
        let mut steps = 0;
        while !reached(hi)? {
            lo = hi;
            hi *= 2.0;
            steps += 1;
            if steps > 200 {
                return Err(UtsError::Estimation("convergence scale overflow".into()));
            }
        }
    }
    while (hi - lo) > 1e-2 * hi {
        let mid = 0.5 * (lo + hi);
        if reached(mid)? {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(hi)
}

/// Magnitude function on `grid_size` log-spaced scales in `[t_cut/1000, t_cut]`.
pub fn magnitude_function(dm: &DistanceMatrix, grid_size: usize) -> Result<MagnitudeCurve> {
    let grid_size = grid_size.max(2);
    let t_cut = convergence_scale(dm)?;
    let t0 = t_cut / 1000.0;
    let ratio = (t_cut / t0).ln();
    let t_grid: Vec<f64> = (0..grid_size)
        .map(|i| {
            if i + 1 == grid_size {
                t_cut
            } else {
                t0 * (ratio * i as f64 / (grid_size - 1) as f64).exp()
            }
        })
        .collect();
    let values = t_grid
        .iter()
        .map(|&t| magnitude(dm, t))
        .collect::<Result<Vec<_>>>()?;
    MagnitudeCurve::new(t_grid, values, t_cut)
}

/// Growth rate of the magnitude function: the largest least-squares slope of
/// `log Mag` against `log t` over windows of consecutive grid points.
pub fn magnitude_dimension(curve: &MagnitudeCurve) -> Result<f64> {
    if curve.t_grid.len() < 8 {
        return Err(UtsError::Estimation(format!(
            "magnitude dimension needs at least 8 grid points (got {})",
            curve.t_grid.len()
        )));
    }
    let (lt, lv): (Vec<f64>, Vec<f64>) = curve
        .t_grid
        .iter()
        .zip(&curve.values)
        .filter(|(&t, &v)| t > 0.0 && v > 0.0)
        .map(|(t, v)| (t.ln(), v.ln()))
        .unzip();
    if lt.len() < SLOPE_WINDOW {
        return Err(UtsError::Estimation(
            "fewer than 4 usable points on the magnitude curve".into(),
        ));
    }
    Ok((0..=lt.len() - SLOPE_WINDOW)
        .map(|s| linalg::linear_fit(&lt[s..s + SLOPE_WINDOW], &lv[s..s + SLOPE_WINDOW]).0)
        .fold(f64::NEG_INFINITY, f64::max))
}

/// Trapezoidal area under the curve from the first grid scale to `t_cut`.
pub fn magnitude_area(curve: &MagnitudeCurve) -> f64 {
    curve
        .t_grid
        .windows(2)
        .zip(curve.values.windows(2))
        .map(|(t, v)| 0.5 * (t[1] - t[0]) * (v[0] + v[1]))
        .sum()
}

/// `E_0 = Σ_x 1 / Σ_x' exp(-d(x, x'))`.
pub fn spread(dm: &DistanceMatrix) -> f64 {
    (0..dm.len())
        .map(|i| 1.0 / dm.row(i).iter().map(|&d| (-d).exp()).sum::<f64>())
        .sum()
}

/// Exponentiated eigenvalue entropy of the cosine Gram matrix scaled by `1/n`.
pub fn vendi_score(cloud: &PointCloud) -> Result<f64> {
    cloud.require_unit_rows("Vendi score")?;
    let (n, d) = (cloud.len(), cloud.dim());
    // K = X Xᵀ and Xᵀ X share their nonzero eigenvalues.
    let mut eig = if n <= d {
        linalg::symmetric_eigenvalues(&linalg::gram(cloud.as_slice(), n, d), n)?
    } else {
        linalg::symmetric_eigenvalues(&linalg::cross_product(cloud.as_slice(), n, d), d)?
    };
    eig.iter_mut().for_each(|l| *l = (*l / n as f64).max(0.0));
    let total: f64 = eig.iter().sum();
    let h: f64 = eig
        .iter()
        .map(|&l| l / total)
        .filter(|&p| p > 0.0)
        .map(|p| -p * p.ln())
        .sum();
    Ok(h.exp())
}

/// Kernel for the mean pairwise similarity descriptor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SimilarityKernel {
    /// `⟨x, y⟩` on unit-normalized rows.
    Cosine,
    /// `exp(-‖x - y‖)`.
    ExpEuclidean,
}

/// Mean of the kernel over all ordered pairs, diagonal included.
pub fn mean_pairwise_similarity(cloud: &PointCloud, kernel: SimilarityKernel) -> Result<f64> {
    let n = cloud.len();
    let nn = (n * n) as f64;
    match kernel {
        SimilarityKernel::Cosine => {
            cloud.require_unit_rows("cosine pairwise similarity")?;
            // Σ_i Σ_j ⟨x_i, x_j⟩ = ‖Σ_i x_i‖².
            let mut s = vec![0.0; cloud.dim()];
            for r in cloud.rows() {
                s.iter_mut().zip(r).for_each(|(a, b)| *a += b);
            }
            Ok(dot(&s, &s) / nn)
        }
        SimilarityKernel::ExpEuclidean => {
            let mut off = 0.0;
            for i in 0..n {
                for j in i + 1..n {
                    off += (-squared_euclidean(cloud.row(i), cloud.row(j)).sqrt()).exp();
                }
            }
            Ok((n as f64 + 2.0 * off) / nn)
        }
    }
}

/// Default RBF scale for the uniformity descriptor.
pub const DEFAULT_UNIFORMITY_T: f64 = 2.0;

/// `log mean exp(-t ‖x - y‖²)` over all ordered pairs, diagonal included.
pub fn uniformity(cloud: &PointCloud, t: f64) -> Result<f64> {
    if !(t > 0.0) {
        return Err(UtsError::Precondition(format!("uniformity t must be positive (got {t})")));
    }
    cloud.require_unit_rows("uniformity")?;
    let n = cloud.len();
    let mut off = 0.0;
    for i in 0..n {
        for j in i + 1..n {
            off += (-t * squared_euclidean(cloud.row(i), cloud.row(j))).exp();
        }
    }
    Ok(((n as f64 + 2.0 * off) / (n * n) as f64).ln())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cloud::{pairwise_distances, Metric};

    fn two_points(d: f64) -> DistanceMatrix {
        DistanceMatrix::from_full(vec![0.0, d, d, 0.0], 2).unwrap()
    }

    #[test]
    fn magnitude_closed_forms() {
        assert_eq!(magnitude(&DistanceMatrix::from_full(vec![0.0], 1).unwrap(), 3.0).unwrap(), 1.0);
        for d in [0.1f64, 1.0, 5.0] {
            let expected = 2.0 / (1.0 + (-d).exp());
            assert!((magnitude(&two_points(d), 1.0).unwrap() - expected).abs() < 1e-12);
            assert!((spread(&two_points(d)) - expected).abs() < 1e-12);
        }
    }

    #[test]
    fn magnitude_rejects_duplicates() {
        let c = PointCloud::from_rows(&[[0.0, 0.0], [1.0, 0.0], [1.0, 0.0]]).unwrap();
        let err = magnitude(&pairwise_distances(&c, Metric::Euclidean), 1.0).unwrap_err();
        assert!(matches!(err, UtsError::Conditioning { i: 1, j: 2 }));
        assert!(magnitude_function(&pairwise_distances(&c, Metric::Euclidean), 8).is_err());
    }

    #[test]
    fn two_point_curve_matches_closed_form() {
        let curve = magnitude_function(&two_points(1.0), 4).unwrap();
        assert_eq!(curve.t_grid.len(), 4);
        for (t, v) in curve.t_grid.iter().zip(&curve.values) {
            assert!((v - 2.0 / (1.0 + (-t).exp())).abs() < 1e-12);
        }
        assert!(*curve.values.last().unwrap() >= 0.95 * 2.0);
    }

    #[test]
    fn area_examples() {
        let flat = MagnitudeCurve::new(vec![0.0, 0.5, 1.0, 2.0], vec![1.0; 4], 2.0).unwrap();
        assert_eq!(magnitude_area(&flat), 2.0);
        let linear = MagnitudeCurve::new(vec![0.0, 0.7, 2.0], vec![0.0, 0.7, 2.0], 2.0).unwrap();
        assert!((magnitude_area(&linear) - 2.0).abs() < 1e-15);
    }

    #[test]
    fn dimension_of_constant_curve_is_zero() {
        let t: Vec<f64> = (1..=10).map(|i| i as f64).collect();
        let curve = MagnitudeCurve::new(t, vec![1.0; 10], 10.0).unwrap();
        assert_eq!(magnitude_dimension(&curve).unwrap(), 0.0);
        let short = MagnitudeCurve::new(vec![1.0, 2.0], vec![1.0, 1.0], 2.0).unwrap();
        assert!(magnitude_dimension(&short).is_err());
    }

    #[test]
    fn spread_limits() {
        let c = PointCloud::from_rows(&[[0.2, 0.1]; 6]).unwrap();
        assert!((spread(&pairwise_distances(&c, Metric::Euclidean)) - 1.0).abs() < 1e-12);
        let far = PointCloud::from_rows(&[[0.0], [1e3], [2e3]]).unwrap();
        assert!((spread(&pairwise_distances(&far, Metric::Euclidean)) - 3.0).abs() < 1e-12);
    }

    #[test]
    fn vendi_examples() {
        let same = PointCloud::from_rows(&[[0.6, 0.8]; 5]).unwrap();
        assert!((vendi_score(&same).unwrap() - 1.0).abs() < 1e-9);
        let eye: Vec<Vec<f64>> = (0..4)
            .map(|i| (0..4).map(|j| if i == j { 1.0 } else { 0.0 }).collect())
            .collect();
        assert!((vendi_score(&PointCloud::from_rows(&eye).unwrap()).unwrap() - 4.0).abs() < 1e-9);
        let sixty = PointCloud::from_rows(&[[1.0, 0.0], [0.5, 3f64.sqrt() / 2.0]]).unwrap();
        let (a, b) = (0.75f64, 0.25f64);
        let expected = (-(a * a.ln() + b * b.ln())).exp();
        assert!((vendi_score(&sixty).unwrap() - expected).abs() < 1e-12);
        assert!((expected - 1.755).abs() < 1e-3);
        assert!(vendi_score(&PointCloud::from_rows(&[[2.0, 0.0]]).unwrap()).is_err());
    }

    #[test]
    fn pairwise_similarity_examples() {
        let same = PointCloud::from_rows(&[[0.0, 1.0]; 3]).unwrap();
        assert!((mean_pairwise_similarity(&same, SimilarityKernel::Cosine).unwrap() - 1.0).abs() < 1e-15);
        let ortho = PointCloud::from_rows(&[[1.0, 0.0], [0.0, 1.0]]).unwrap();
        assert_eq!(mean_pairwise_similarity(&ortho, SimilarityKernel::Cosine).unwrap(), 0.5);
        let unit = PointCloud::from_rows(&[[0.0], [1.0]]).unwrap();
        let v = mean_pairwise_similarity(&unit, SimilarityKernel::ExpEuclidean).unwrap();
        assert!((v - (2.0 + 2.0 * (-1f64).exp()) / 4.0).abs() < 1e-15);
        assert!((v - 0.6839).abs() < 1e-4);
    }

    #[test]
    fn uniformity_examples() {
        let same = PointCloud::from_rows(&[[1.0, 0.0]; 4]).unwrap();
        assert_eq!(uniformity(&same, 2.0).unwrap(), 0.0);
        let anti = PointCloud::from_rows(&[[1.0, 0.0], [-1.0, 0.0]]).unwrap();
        let expected = ((2.0 + 2.0 * (-8f64).exp()) / 4.0).ln();
        assert!((uniformity(&anti, 2.0).unwrap() - expected).abs() < 1e-15);
        assert!((expected + 0.6928).abs() < 1e-4);
    }
}
