//! Persistent homology and the descriptors derived from persistence diagrams.

mod rips;

use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub use rips::{enclosing_radius, rips_persistence, MAX_HOMOLOGY_DIM};

use crate::cloud::{sample_indices, DistanceKernel, Metric, PointCloud, SampleSpec};
use crate::error::{Result, UtsError};
use crate::linalg::linear_fit;

/// One `(dim, birth, death)` triple; `death` may be `+∞`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PersistencePair {
    pub dim: usize,
    pub birth: f64,
    pub death: f64,
}

impl PersistencePair {
    pub fn new(dim: usize, birth: f64, death: f64) -> Self {
        Self { dim, birth, death }
    }

    pub fn is_finite(&self) -> bool {
        self.death.is_finite()
    }

    pub fn lifetime(&self) -> f64 {
        self.death - self.birth
    }

    pub fn is_alive_at(&self, tau: f64) -> bool {
        self.birth <= tau && tau < self.death
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PersistenceDiagram {
    pub pairs: Vec<PersistencePair>,
    pub max_dim: usize,
}

impl PersistenceDiagram {
    pub fn new(pairs: Vec<PersistencePair>, max_dim: usize) -> Self {
        Self { pairs, max_dim }
    }

    pub fn in_dim(&self, dim: usize) -> impl Iterator<Item = &PersistencePair> + '_ {
        self.pairs.iter().filter(move |p| p.dim == dim)
    }

    pub fn finite_in_dim(&self, dim: usize) -> impl Iterator<Item = &PersistencePair> + '_ {
        self.in_dim(dim).filter(|p| p.is_finite())
    }

    /// Pairs sorted by `(dim, birth, death)`, for comparisons.
    pub fn sorted_pairs(&self) -> Vec<PersistencePair> {
        let mut v = self.pairs.clone();
        v.sort_by(|a, b| {
            a.dim
                .cmp(&b.dim)
                .then(a.birth.total_cmp(&b.birth))
                .then(a.death.total_cmp(&b.death))
        });
        v
    }

    /// `dim,birth,death` rows with `inf` for infinite deaths.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("dim,birth,death\n");
        for p in &self.pairs {
            let death = if p.death.is_finite() {
                p.death.to_string()
            } else {
                "inf".to_string()
            };
            let _ = writeln!(out, "{},{},{}", p.dim, p.birth, death);
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut pairs = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || (lineno == 0 && line.starts_with("dim")) {
                continue;
            }
            let fields: Vec<&str> = line.split(',').map(str::trim).collect();
            let loc = || format!("line {}", lineno + 1);
            if fields.len() != 3 {
                return Err(UtsError::parse(loc(), "expected `dim,birth,death`"));
            }
            let dim: usize = fields[0]
                .parse()
                .map_err(|_| UtsError::parse(loc(), "bad dimension"))?;
            let birth: f64 = fields[1]
                .parse()
                .map_err(|_| UtsError::parse(loc(), "bad birth"))?;
            let death: f64 = if fields[2].eq_ignore_ascii_case("inf") {
                f64::INFINITY
            } else {
                fields[2]
                    .parse()
                    .map_err(|_| UtsError::parse(loc(), "bad death"))?
            };
            if !(birth <= death) {
                return Err(UtsError::parse(loc(), "birth exceeds death"));
            }
            pairs.push(PersistencePair::new(dim, birth, death));
        }
        let max_dim = pairs.iter().map(|p| p.dim).max().unwrap_or(0);
        Ok(Self { pairs, max_dim })
    }
}

/// Betti numbers at one filtration value.
#[derive(Debug, Clone, PartialEq)]
pub struct BettiProfile {
    pub tau: f64,
    pub betti: Vec<usize>,
}

pub fn betti_profile(diag: &PersistenceDiagram, tau: f64) -> BettiProfile {
    let mut betti = vec![0usize; diag.max_dim + 1];
    for p in &diag.pairs {
        if p.dim <= diag.max_dim && p.is_alive_at(tau) {
            betti[p.dim] += 1;
        }
    }
    BettiProfile { tau, betti }
}

/// Alternating sum of Betti numbers at `tau`.
pub fn euler_characteristic(diag: &PersistenceDiagram, tau: f64) -> i64 {
    betti_profile(diag, tau)
        .betti
        .iter()
        .enumerate()
        .map(|(i, &b)| if i % 2 == 0 { b as i64 } else { -(b as i64) })
        .sum()
}

/// Mean lifetime and mean midlife over the finite pairs of one dimension.
pub fn ph_stats(diag: &PersistenceDiagram, dim: usize) -> Result<(f64, f64)> {
    let (mut n, mut life, mut mid) = (0usize, 0.0, 0.0);
    for p in diag.finite_in_dim(dim) {
        n += 1;
        life += p.lifetime();
        mid += 0.5 * (p.birth + p.death);
    }
    if n == 0 {
        return Err(UtsError::UndefinedStatistic(format!(
            "no finite H{dim} pairs"
        )));
    }
    Ok((life / n as f64, mid / n as f64))
}

/// Shannon entropy (natural log) of the normalized finite lifetimes.
pub fn persistence_entropy(diag: &PersistenceDiagram, dim: usize) -> Result<f64> {
    let lifetimes: Vec<f64> = diag.finite_in_dim(dim).map(|p| p.lifetime()).collect();
    let total: f64 = lifetimes.iter().sum();
    if !(total > 0.0) {
        return Err(UtsError::UndefinedStatistic(format!(
            "H{dim} has no positive finite lifetime"
        )));
    }
    Ok(-lifetimes
        .iter()
        .map(|&l| l / total)
        .filter(|&p| p > 0.0)
        .map(|p| p * p.ln())
        .sum::<f64>())
}

/// Total MST length with each edge raised to `alpha`; equal to `Σ (d-b)^α`
/// over the finite H0 pairs of the Rips filtration.
pub fn h0_alpha_sum(cloud: &PointCloud, metric: Metric, alpha: f64) -> f64 {
    let n = cloud.len();
    if n < 2 {
        return 0.0;
    }
    let kernel = DistanceKernel::new(cloud, metric);
    // Prim's algorithm on the implicit complete graph.
    let mut in_tree = vec![false; n];
    let mut best = vec![f64::INFINITY; n];
    let mut current = 0usize;
    in_tree[0] = true;
    let mut total = 0.0;
    for _ in 1..n {
        let mut next = usize::MAX;
        let mut next_d = f64::INFINITY;
        for j in 0..n {
            if in_tree[j] {
                continue;
            }
            let d = kernel.dist(current, j);
            if d < best[j] {
                best[j] = d;
            }
            if best[j] < next_d || (best[j] == next_d && j < next) {
                next_d = best[j];
                next = j;
            }
        }
        in_tree[next] = true;
        if next_d > 0.0 {
            total += next_d.powf(alpha);
        }
        current = next;
    }
    total
}

/// `n_lo .. n_hi` in `count` geometric steps, rounded and deduplicated.
pub fn geometric_sizes(n_lo: usize, n_hi: usize, count: usize) -> Vec<usize> {
    let (lo, hi) = (n_lo.max(2) as f64, n_hi.max(2) as f64);
    let mut out: Vec<usize> = (0..count)
        .map(|i| {
            let f = if count > 1 { i as f64 / (count - 1) as f64 } else { 1.0 };
            (lo * (hi / lo).powf(f)).round() as usize
        })
        .collect();
    out.dedup();
    out
}

/// Default PH-dimension sizes for a sample budget: 8 geometric steps from
/// 64 (or a quarter of the budget when that is smaller) up to the budget.
pub fn default_ph_sizes(budget: usize) -> Vec<usize> {
    let lo = 64.min(budget / 4).max(3);
    geometric_sizes(lo, budget, 8)
}

/// Fractal dimension from the growth of the α-weighted H0 persistence sum.
///
/// For each size, `E = Σ (d-b)^α` is averaged over `trials` seeded subsets;
/// the least-squares slope `m` of `log E` against `log n` gives `α / (1 - m)`.
pub fn ph_dimension(
    cloud: &PointCloud,
    metric: Metric,
    alpha: f64,
    sizes: &[usize],
    trials: usize,
    seed: u64,
) -> Result<f64> {
    if !(alpha > 0.0) {
        return Err(UtsError::Precondition(format!("alpha must be positive (got {alpha})")));
    }
    if sizes.len() < 4 {
        return Err(UtsError::Precondition(format!(
            "PH dimension needs at least 4 sample sizes (got {})",
            sizes.len()
        )));
    }
    if sizes.windows(2).any(|w| w[0] >= w[1]) {
        return Err(UtsError::Precondition("sample sizes must be strictly ascending".into()));
    }
    if let Some(&last) = sizes.last() {
        if last > cloud.len() {
            return Err(UtsError::Bounds(format!(
                "sample size {last} exceeds cloud size {}",
                cloud.len()
            )));
        }
    }
    let trials = trials.max(1);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut log_n = Vec::with_capacity(sizes.len());
    let mut log_e = Vec::with_capacity(sizes.len());
    for &size in sizes {
        let mut acc = 0.0;
        for _ in 0..trials {
            let idx = sample_indices(cloud.len(), SampleSpec::new(size, rng.gen()));
            acc += h0_alpha_sum(&cloud.select(&idx), metric, alpha);
        }
        let mean = acc / trials as f64;
        if !(mean > 0.0) {
            return Err(UtsError::Degenerate(format!(
                "total H0 persistence is zero at sample size {size}"
            )));
        }
        log_n.push((size as f64).ln());
        log_e.push(mean.ln());
    }
    let (slope, _) = linear_fit(&log_n, &log_e);
    if slope >= 1.0 {
        return Err(UtsError::Divergence { slope });
    }
    Ok(alpha / (1.0 - slope))
}
