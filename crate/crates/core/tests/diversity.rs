mod common;

use common::*;
use proptest::prelude::*;
use rand::Rng;
use uts::diversity::{
    convergence_scale, magnitude, magnitude_area, magnitude_dimension, magnitude_function,
    mean_pairwise_similarity, spread, uniformity, vendi_score, SimilarityKernel,
    MAGNITUDE_CONVERGENCE,
};
use uts::{pairwise_distances, synthetic, DistanceMatrix, Metric};

fn magnitude_oracle(dm: &DistanceMatrix, t: f64) -> f64 {
    let n = dm.len();
    let zeta: Vec<f64> = dm.as_slice().iter().map(|d| (-t * d).exp()).collect();
    gauss_solve(zeta, n, vec![1.0; n]).iter().sum()
}

fn random_dm(r: &mut rand_chacha::ChaCha8Rng, n: usize, d: usize) -> DistanceMatrix {
    let rows: Vec<Vec<f64>> = (0..n).map(|_| (0..d).map(|_| r.gen::<f64>()).collect()).collect();
    pairwise_distances(&cloud(&rows), Metric::Euclidean)
}

#[test]
fn magnitude_matches_elimination_oracle() {
    let mut r = rng(1);
    for _ in 0..30 {
        let n = r.gen_range(2..=30);
        let dm = random_dm(&mut r, n, 3);
        let t = 10f64.powf(r.gen_range(-1.0..1.5));
        let got = magnitude(&dm, t).unwrap();
        let want = magnitude_oracle(&dm, t);
        assert!((got - want).abs() <= 1e-9 * want.abs().max(1.0), "{got} vs {want}");
    }
}

#[test]
fn convergence_scale_reaches_target_on_random_clouds() {
    let mut r = rng(2);
    for _ in 0..20 {
        let n = r.gen_range(2..=50);
        let d = r.gen_range(1..5);
        let dm = random_dm(&mut r, n, d);
        let t_cut = convergence_scale(&dm).unwrap();
        let at_cut = magnitude_oracle(&dm, t_cut);
        assert!(at_cut >= MAGNITUDE_CONVERGENCE * n as f64 - 1e-9, "n={n} Mag={at_cut}");
        // Within the bisection tolerance of the smallest such scale.
        assert!(magnitude_oracle(&dm, t_cut * 0.98) < MAGNITUDE_CONVERGENCE * n as f64);
    }
}

/// Adaptive Simpson quadrature.
fn simpson(f: &dyn Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> f64 {
    fn rec(f: &dyn Fn(f64) -> f64, a: f64, b: f64, fa: f64, fm: f64, fb: f64, whole: f64, tol: f64) -> f64 {
        let m = 0.5 * (a + b);
        let (lm, rm) = (0.5 * (a + m), 0.5 * (m + b));
        let (flm, frm) = (f(lm), f(rm));
        let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
        let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
        if (left + right - whole).abs() <= 15.0 * tol {
            left + right + (left + right - whole) / 15.0
        } else {
            rec(f, a, m, fa, flm, fm, left, tol / 2.0) + rec(f, m, b, fm, frm, fb, right, tol / 2.0)
        }
    }
    let m = 0.5 * (a + b);
    let (fa, fm, fb) = (f(a), f(m), f(b));
    rec(f, a, b, fa, fm, fb, (b - a) / 6.0 * (fa + 4.0 * fm + fb), tol)
}

#[test]
fn two_point_area_matches_quadrature() {
    let dm = DistanceMatrix::from_full(vec![0.0, 1.0, 1.0, 0.0], 2).unwrap();
    let f = |t: f64| 2.0 / (1.0 + (-t).exp());
    // Trapezoid error shrinks quadratically with the grid spacing.
    let mut last = f64::INFINITY;
    for g in [32, 64, 128] {
        let curve = magnitude_function(&dm, g).unwrap();
        let exact = simpson(&f, curve.t_grid[0], curve.t_cut, 1e-12);
        let err = (magnitude_area(&curve) - exact).abs();
        assert!(err < last);
        last = err;
    }
    let curve = magnitude_function(&dm, 100).unwrap();
    let exact = simpson(&f, curve.t_grid[0], curve.t_cut, 1e-12);
    assert!((magnitude_area(&curve) - exact).abs() < 1e-3, "{} vs {exact}", magnitude_area(&curve));
}

/// Steepest local slope of log Mag on a 4× denser grid, over windows of the
/// same log-width as the estimator's.
fn dense_slope_oracle(dm: &DistanceMatrix, t_cut: f64) -> f64 {
    let points = 125;
    let t0 = t_cut / 1000.0;
    let lt: Vec<f64> = (0..points)
        .map(|i| t0.ln() + (t_cut / t0).ln() * i as f64 / (points - 1) as f64)
        .collect();
    let lv: Vec<f64> = lt.iter().map(|&l| magnitude_oracle_fast(dm, l.exp()).ln()).collect();
    let w = 13;
    (0..=points - w)
        .map(|s| ols_slope(&lt[s..s + w], &lv[s..s + w]))
        .fold(f64::NEG_INFINITY, f64::max)
}

fn magnitude_oracle_fast(dm: &DistanceMatrix, t: f64) -> f64 {
    // Elimination is O(n^3) in the test; fall back to the library above 300 points.
    if dm.len() <= 300 {
        magnitude_oracle(dm, t)
    } else {
        magnitude(dm, t).unwrap()
    }
}

#[test]
fn magnitude_dimension_recovers_segment_and_square() {
    for (truth, tol, c) in [(1.0, 0.3, synthetic::segment(1000, 5)), (2.0, 0.4, synthetic::square(1000, 5))] {
        let dm = pairwise_distances(&c, Metric::Euclidean);
        let curve = magnitude_function(&dm, 32).unwrap();
        let est = magnitude_dimension(&curve).unwrap();
        let oracle = dense_slope_oracle(&dm, curve.t_cut);
        assert!((oracle - truth).abs() < tol, "oracle {oracle}");
        assert!((est - truth).abs() < tol, "estimate {est} vs truth {truth}");
        assert!((est - oracle).abs() < 0.1, "estimate {est} vs oracle {oracle}");
    }
}

#[test]
fn spread_limits_are_monotone() {
    let mut r = rng(3);
    let dm = random_dm(&mut r, 12, 2);
    let mut last = 0.0;
    for k in -8..=8 {
        let s = spread(&dm.scaled(2f64.powi(k)));
        assert!(s > last);
        last = s;
    }
    assert!((spread(&dm.scaled(1e-9)) - 1.0).abs() < 1e-6);
    assert!((spread(&dm.scaled(1e9)) - 12.0).abs() < 1e-6);
}

#[test]
fn uniformity_decreases_as_points_spread() {
    let mut last = 1.0;
    for s in [0.01, 0.1, 0.3, 0.6, 1.0, 1.5] {
        let rows: Vec<Vec<f64>> = (0..8)
            .map(|i| {
                let a = s * i as f64 / 7.0 * std::f64::consts::PI;
                vec![a.cos(), a.sin()]
            })
            .collect();
        let u = uniformity(&cloud(&rows), 2.0).unwrap();
        assert!(u < last && u <= 0.0, "s={s}: {u}");
        last = u;
    }
}

fn vendi_oracle(rows: &[Vec<f64>]) -> f64 {
    let n = rows.len();
    let mut k = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            k[i * n + j] = rows[i].iter().zip(&rows[j]).map(|(a, b)| a * b).sum::<f64>() / n as f64;
        }
    }
    let h: f64 = jacobi_eigenvalues(k, n)
        .into_iter()
        .filter(|&l| l > 1e-15)
        .map(|l| -l * l.ln())
        .sum();
    h.exp()
}

#[test]
fn vendi_matches_jacobi_oracle() {
    let mut r = rng(8);
    for (n, d) in [(5, 3), (8, 20), (15, 6)] {
        let rows = unit_rows(gaussian_rows(&mut r, n, d));
        let got = vendi_score(&cloud(&rows)).unwrap();
        assert!((got - vendi_oracle(&rows)).abs() < 1e-9);
    }
}

fn direct_mean(rows: &[Vec<f64>], k: impl Fn(&[f64], &[f64]) -> f64) -> f64 {
    let n = rows.len() as f64;
    rows.iter().flat_map(|a| rows.iter().map(|b| k(a, b))).sum::<f64>() / (n * n)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn convergence_scale_follows_rescaling(seed in any::<u64>(), n in 3usize..=20, log_c in -12.0f64..6.0) {
        let mut r = rng(seed);
        let dm = pairwise_distances(&random_unit_cloud(&mut r, n, 4), Metric::Euclidean);
        let c = log_c.exp();
        let scaled = DistanceMatrix::from_full(dm.as_slice().iter().map(|d| c * d).collect(), n).unwrap();
        let t = convergence_scale(&dm).unwrap();
        let ts = convergence_scale(&scaled).unwrap();
        prop_assert!((ts * c / t - 1.0).abs() < 0.03, "{t} vs {ts} at scale {c}");
        prop_assert!(magnitude(&scaled, ts).unwrap() >= MAGNITUDE_CONVERGENCE * n as f64 - 1e-9);
    }

    #[test]
    fn magnitude_is_bounded_and_nondecreasing(seed in any::<u64>(), n in 2usize..=20) {
        let mut r = rng(seed);
        let dm = random_dm(&mut r, n, 2);
        let mut last = 0.0;
        for k in -6..=6 {
            let m = magnitude(&dm, 2f64.powi(k)).unwrap();
            prop_assert!(m > 0.0 && m <= n as f64 + 1e-9);
            prop_assert!(m >= last - 1e-9);
            last = m;
        }
    }

    #[test]
    fn two_point_spread_equals_magnitude(d in 1e-3f64..20.0) {
        let dm = DistanceMatrix::from_full(vec![0.0, d, d, 0.0], 2).unwrap();
        let m = magnitude(&dm, 1.0).unwrap();
        prop_assert!((spread(&dm) - m).abs() < 1e-12);
        prop_assert!((m - 2.0 / (1.0 + (-d).exp())).abs() < 1e-12);
    }

    #[test]
    fn vendi_is_bounded_and_permutation_invariant(seed in any::<u64>(), n in 2usize..12) {
        let mut r = rng(seed);
        let rows = unit_rows(gaussian_rows(&mut r, n, 4));
        let v = vendi_score(&cloud(&rows)).unwrap();
        prop_assert!(v >= 1.0 - 1e-9 && v <= n as f64 + 1e-9);
        let mut shuffled = rows.clone();
        shuffled.reverse();
        prop_assert!((vendi_score(&cloud(&shuffled)).unwrap() - v).abs() < 1e-9);
    }

    #[test]
    fn similarities_match_double_sums(seed in any::<u64>(), n in 1usize..15) {
        let mut r = rng(seed);
        let rows = unit_rows(gaussian_rows(&mut r, n, 5));
        let c = cloud(&rows);
        let cos = direct_mean(&rows, |a, b| a.iter().zip(b).map(|(x, y)| x * y).sum());
        let exp = direct_mean(&rows, |a, b| (-euclid(a, b)).exp());
        let rbf = direct_mean(&rows, |a, b| (-2.0 * euclid(a, b).powi(2)).exp()).ln();
        prop_assert!((mean_pairwise_similarity(&c, SimilarityKernel::Cosine).unwrap() - cos).abs() < 1e-12);
        prop_assert!((mean_pairwise_similarity(&c, SimilarityKernel::ExpEuclidean).unwrap() - exp).abs() < 1e-12);
        prop_assert!((uniformity(&c, 2.0).unwrap() - rbf).abs() < 1e-12);
    }
}
