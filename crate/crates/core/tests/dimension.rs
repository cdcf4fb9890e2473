mod common;

use common::*;
use proptest::prelude::*;
use uts::dimension::{
    covariance_spectrum, effective_rank, isoscore, isoscore_from_spectrum, pca_fo_dimension,
    twonn_dimension, SpectrumSummary,
};
use uts::homology::{default_ph_sizes, geometric_sizes, ph_dimension};
use uts::{synthetic, Metric, PointCloud};

/// Maximum-likelihood TwoNN: `(N - 1) / Σ log μ_i`.
fn twonn_mle(points: &[Vec<f64>]) -> f64 {
    let n = points.len();
    let mut log_sum = 0.0;
    for i in 0..n {
        let (mut d1, mut d2) = (f64::INFINITY, f64::INFINITY);
        for j in 0..n {
            if i == j {
                continue;
            }
            let d = euclid(&points[i], &points[j]);
            if d < d1 {
                d2 = d1;
                d1 = d;
            } else if d < d2 {
                d2 = d;
            }
        }
        log_sum += (d2 / d1).ln();
    }
    (n - 1) as f64 / log_sum
}

fn rows(c: &PointCloud) -> Vec<Vec<f64>> {
    c.rows().map(|r| r.to_vec()).collect()
}

#[test]
fn twonn_recovers_segment_and_square() {
    for (truth, tol, small, large) in [
        (1.0, 0.2, synthetic::segment(1000, 1), synthetic::segment(10_000, 2)),
        (2.0, 0.3, synthetic::square(1000, 1), synthetic::square(10_000, 2)),
    ] {
        let est = twonn_dimension(&small, Metric::Euclidean).unwrap();
        let oracle = twonn_mle(&rows(&large));
        assert!((oracle - truth).abs() < tol, "oracle {oracle}");
        assert!((est - truth).abs() < tol, "estimate {est} vs truth {truth}");
        assert!((est - oracle).abs() < tol, "estimate {est} vs oracle {oracle}");
    }
}

#[test]
fn twonn_rejects_duplicate_only_input() {
    let c = cloud(&vec![vec![0.5, 0.5]; 10]);
    assert!(twonn_dimension(&c, Metric::Euclidean).is_err());
}

/// Slope fit of mean MST length against sample size, on a larger cloud.
fn ph_dimension_oracle(points: &[Vec<f64>], trials: usize, seed: u64) -> f64 {
    let mut r = rng(seed);
    let sizes = geometric_sizes(64, points.len(), 8);
    let (mut lx, mut ly) = (Vec::new(), Vec::new());
    for &size in &sizes {
        let mut acc = 0.0;
        for _ in 0..trials {
            let idx = rand::seq::index::sample(&mut r, points.len(), size);
            let sub: Vec<Vec<f64>> = idx.iter().map(|i| points[i].clone()).collect();
            acc += kruskal_mst(&sub, 1.0);
        }
        lx.push((size as f64).ln());
        ly.push((acc / trials as f64).ln());
    }
    1.0 / (1.0 - ols_slope(&lx, &ly))
}

#[test]
fn ph_dimension_recovers_segment_and_square() {
    for (truth, tol, small, large) in [
        (1.0, 0.2, synthetic::segment(2000, 3), synthetic::segment(4000, 4)),
        (2.0, 0.3, synthetic::square(2000, 3), synthetic::square(4000, 4)),
    ] {
        let est = ph_dimension(&small, Metric::Euclidean, 1.0, &default_ph_sizes(2000), 5, 0).unwrap();
        let oracle = ph_dimension_oracle(&rows(&large), 3, 9);
        assert!((oracle - truth).abs() < tol, "oracle {oracle}");
        assert!((est - truth).abs() < tol, "estimate {est} vs truth {truth}");
        assert!((est - oracle).abs() < tol, "estimate {est} vs oracle {oracle}");
    }
}

#[test]
fn spectrum_matches_jacobi_on_both_solver_paths() {
    let mut r = rng(21);
    for (n, d) in [(40, 5), (6, 12), (12, 12)] {
        let x = gaussian_rows(&mut r, n, d);
        let c = cloud(&x);
        let mean: Vec<f64> = (0..d).map(|j| x.iter().map(|row| row[j]).sum::<f64>() / n as f64).collect();
        let mut cov = vec![0.0; d * d];
        for row in &x {
            for i in 0..d {
                for j in 0..d {
                    cov[i * d + j] += (row[i] - mean[i]) * (row[j] - mean[j]) / (n - 1) as f64;
                }
            }
        }
        let oracle = jacobi_eigenvalues(cov, d);
        let got = covariance_spectrum(&c).unwrap().eigenvalues;
        assert_eq!(got.len(), d);
        for (a, b) in got.iter().zip(&oracle) {
            assert!((a - b.max(0.0)).abs() < 1e-9, "{got:?} vs {oracle:?}");
        }
    }
}

/// IsoScore of a known covariance diagonal, evaluated step by step.
fn isoscore_of_diagonal(diag: &[f64]) -> f64 {
    let d = diag.len() as f64;
    let norm = diag.iter().map(|v| v * v).sum::<f64>().sqrt();
    let scaled: Vec<f64> = diag.iter().map(|v| v * d.sqrt() / norm).collect();
    let defect = scaled.iter().map(|v| (v - 1.0).powi(2)).sum::<f64>().sqrt() / (2.0 * (d - d.sqrt())).sqrt();
    let dims_used = (d - defect * defect * (d - d.sqrt())).powi(2) / d;
    (dims_used - 1.0) / (d - 1.0)
}

#[test]
fn isoscore_matches_known_covariance() {
    let mut r = rng(4);
    let iso = cloud(&gaussian_rows(&mut r, 5000, 10));
    let oracle = isoscore_of_diagonal(&[1.0; 10]);
    assert!((oracle - 1.0).abs() < 1e-12);
    let s = isoscore(&iso).unwrap();
    assert!(s >= 0.95, "{s}");
    assert!((s - oracle).abs() < 0.05);

    let mut axis = vec![0.0; 10];
    axis[0] = 10f64.sqrt();
    let oracle = isoscore_of_diagonal(&axis);
    assert!(oracle.abs() < 1e-12);
    let rank1: Vec<Vec<f64>> = gaussian_rows(&mut r, 5000, 1)
        .into_iter()
        .map(|g| {
            let mut row = vec![0.0; 10];
            row[0] = g[0];
            row
        })
        .collect();
    assert!(isoscore(&cloud(&rank1)).unwrap() <= 0.05);
}

#[test]
fn isoscore_decreases_as_variance_concentrates() {
    let mut last = f64::INFINITY;
    for eps in [1.0, 0.5, 0.2, 0.1, 0.01, 0.0] {
        let mut v = vec![1.0; 3];
        v.extend(vec![eps; 5]);
        let s = isoscore_from_spectrum(&SpectrumSummary::new(v)).unwrap();
        assert!(s < last || (eps == 1.0 && s == 1.0), "eps {eps}: {s} after {last}");
        assert!((0.0..=1.0).contains(&s));
        last = s;
    }
}

#[test]
fn spectral_examples() {
    let s = |v: &[f64]| SpectrumSummary::new(v.to_vec());
    assert_eq!(pca_fo_dimension(&s(&[4.0, 3.0, 1.0, 0.1]), 0.5).unwrap(), 2);
    assert_eq!(pca_fo_dimension(&s(&[1.0, 0.0, 0.0]), 0.5).unwrap(), 1);
    for k in 1..=12 {
        assert_eq!(effective_rank(&s(&vec![0.7; k])).unwrap(), k as f64);
    }
    assert!((effective_rank(&s(&[0.5, 0.5, 0.0])).unwrap() - 2.0).abs() < 1e-15);
    assert!(effective_rank(&s(&[0.0, 0.0])).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn spectral_descriptors_are_rotation_and_scale_invariant(seed in any::<u64>(), d in 2usize..6, scale in 0.1f64..10.0) {
        let mut r = rng(seed);
        let x = gaussian_rows(&mut r, 40, d);
        let stretched: Vec<Vec<f64>> = x.iter().map(|row| row.iter().enumerate().map(|(i, v)| v * (i + 1) as f64).collect()).collect();
        let q = random_orthogonal(&mut r, d);
        let rotated = rotate(&stretched, &q);
        let scaled: Vec<Vec<f64>> = stretched.iter().map(|row| row.iter().map(|v| v * scale).collect()).collect();
        let base = covariance_spectrum(&cloud(&stretched)).unwrap();
        let er = effective_rank(&base).unwrap();
        let iso = isoscore(&cloud(&stretched)).unwrap();
        for other in [&rotated, &scaled] {
            let spec = covariance_spectrum(&cloud(other)).unwrap();
            prop_assert!((effective_rank(&spec).unwrap() - er).abs() < 1e-6);
            prop_assert!((isoscore(&cloud(other)).unwrap() - iso).abs() < 1e-6);
        }
        prop_assert!((1.0 - 1e-12..=d as f64 + 1e-12).contains(&er));
        prop_assert!((0.0..=1.0).contains(&iso));
        let fo = pca_fo_dimension(&base, 0.5).unwrap();
        prop_assert!((1..=d).contains(&fo));
    }

    #[test]
    fn twonn_is_exactly_scale_invariant(seed in any::<u64>(), power in -3i32..4) {
        let mut r = rng(seed);
        let x = gaussian_rows(&mut r, 60, 3);
        let s = 2f64.powi(power);
        let y: Vec<Vec<f64>> = x.iter().map(|row| row.iter().map(|v| v * s).collect()).collect();
        let a = twonn_dimension(&cloud(&x), Metric::Euclidean).unwrap();
        let b = twonn_dimension(&cloud(&y), Metric::Euclidean).unwrap();
        prop_assert_eq!(a, b);
    }
}
