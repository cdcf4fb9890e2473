//! Point clouds, metrics, seeded sampling and exact neighbor search.

use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Result, UtsError};

/// Tolerance used when checking that rows have unit Euclidean norm.
pub const UNIT_NORM_TOL: f64 = 1e-6;

/// An `n × D` matrix of embedding coordinates stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct PointCloud {
    data: Vec<f64>,
    n: usize,
    dim: usize,
    /// Optional source label, e.g. `model/dataset`.
    pub id: Option<String>,
}

impl PointCloud {
    pub fn new(data: Vec<f64>, n: usize, dim: usize) -> Result<Self> {
        if n == 0 || dim == 0 {
            return Err(UtsError::Degenerate(format!(
                "point cloud must have n >= 1 and D >= 1 (got n={n}, D={dim})"
            )));
        }
        if data.len() != n * dim {
            return Err(UtsError::Degenerate(format!(
                "data length {} does not match {n}x{dim}",
                data.len()
            )));
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(UtsError::Degenerate(format!(
                "non-finite value at row {}, column {}",
                pos / dim,
                pos % dim
            )));
        }
        Ok(Self {
            data,
            n,
            dim,
            id: None,
        })
    }

    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let n = rows.len();
        let dim = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(n * dim);
        for (i, r) in rows.iter().enumerate() {
            let r = r.as_ref();
            if r.len() != dim {
                return Err(UtsError::Degenerate(format!(
                    "row {i} has length {} (expected {dim})",
                    r.len()
                )));
            }
            data.extend_from_slice(r);
        }
        Self::new(data, n, dim)
    }

    pub fn with_id(mut self, id: impl Into<String>) -> Self {
        self.id = Some(id.into());
        self
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn rows(&self) -> impl ExactSizeIterator<Item = &[f64]> + '_ {
        self.data.chunks_exact(self.dim)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    /// New cloud made of the given rows, in the given order.
    pub fn select(&self, indices: &[usize]) -> PointCloud {
        let mut data = Vec::with_capacity(indices.len() * self.dim);
        for &i in indices {
            data.extend_from_slice(self.row(i));
        }
        PointCloud {
            data,
            n: indices.len(),
            dim: self.dim,
            id: self.id.clone(),
        }
    }

    /// Index of the first row whose norm deviates from 1 by more than `tol`.
    pub fn first_non_unit_row(&self, tol: f64) -> Option<usize> {
        self.rows().position(|r| (norm(r) - 1.0).abs() > tol)
    }

    pub fn is_unit_normalized(&self) -> bool {
        self.first_non_unit_row(UNIT_NORM_TOL).is_none()
    }

    pub(crate) fn require_unit_rows(&self, what: &str) -> Result<()> {
        match self.first_non_unit_row(UNIT_NORM_TOL) {
            None => Ok(()),
            Some(i) => Err(UtsError::Precondition(format!(
                "{what} requires unit-normalized rows; row {i} has norm {}",
                norm(self.row(i))
            ))),
        }
    }

    /// Scale every row to unit Euclidean norm.
    pub fn normalize_rows(&self) -> Result<PointCloud> {
        let mut data = self.data.clone();
        for (i, row) in data.chunks_exact_mut(self.dim).enumerate() {
            let nrm = norm(row);
            if nrm == 0.0 {
                return Err(UtsError::Degenerate(format!("row {i} has zero norm")));
            }
            row.iter_mut().for_each(|v| *v /= nrm);
        }
        Ok(PointCloud {
            data,
            n: self.n,
            dim: self.dim,
            id: self.id.clone(),
        })
    }

    /// Draw `min(spec.size, n)` distinct rows without replacement.
    pub fn sample(&self, spec: SampleSpec) -> PointCloud {
        self.select(&sample_indices(self.n, spec))
    }
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
pub(crate) fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

#[inline]
pub(crate) fn squared_euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| {
            let d = x - y;
            d * d
        })
        .sum()
}

/// Distance function between embeddings.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    Euclidean,
    /// `1 - cos(x, y)`, with range `[0, 2]`.
    Cosine,
}

impl Metric {
    pub const ALL: [Metric; 2] = [Metric::Euclidean, Metric::Cosine];

    pub fn name(self) -> &'static str {
        match self {
            Metric::Euclidean => "euclidean",
            Metric::Cosine => "cosine",
        }
    }

    pub fn distance(self, a: &[f64], b: &[f64]) -> f64 {
        match self {
            Metric::Euclidean => squared_euclidean(a, b).sqrt(),
            Metric::Cosine => cosine_distance(a, b, norm(a), norm(b)),
        }
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Metric {
    type Err = UtsError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "euclidean" => Ok(Metric::Euclidean),
            "cosine" => Ok(Metric::Cosine),
            other => Err(UtsError::parse("metric", format!("unknown metric `{other}`"))),
        }
    }
}

#[inline]
fn cosine_distance(a: &[f64], b: &[f64], na: f64, nb: f64) -> f64 {
    if na == 0.0 || nb == 0.0 {
        return if a == b { 0.0 } else { 1.0 };
    }
    (1.0 - dot(a, b) / (na * nb)).max(0.0)
}

/// Row-wise distance evaluation with cached norms.
pub(crate) struct DistanceKernel<'a> {
    cloud: &'a PointCloud,
    metric: Metric,
    norms: Vec<f64>,
}

impl<'a> DistanceKernel<'a> {
    pub(crate) fn new(cloud: &'a PointCloud, metric: Metric) -> Self {
        let norms = match metric {
            Metric::Cosine => cloud.rows().map(norm).collect(),
            Metric::Euclidean => Vec::new(),
        };
        Self {
            cloud,
            metric,
            norms,
        }
    }

    #[inline]
    pub(crate) fn dist(&self, i: usize, j: usize) -> f64 {
        if i == j {
            return 0.0;
        }
        let (a, b) = (self.cloud.row(i), self.cloud.row(j));
        match self.metric {
            Metric::Euclidean => squared_euclidean(a, b).sqrt(),
            Metric::Cosine => cosine_distance(a, b, self.norms[i], self.norms[j]),
        }
    }
}

/// Dense symmetric matrix of pairwise distances.
#[derive(Debug, Clone, PartialEq)]
pub struct DistanceMatrix {
    d: Vec<f64>,
    n: usize,
    metric: Option<Metric>,
}

impl DistanceMatrix {
    /// Build from a full row-major matrix, checking symmetry, zero diagonal and sign.
    pub fn from_full(d: Vec<f64>, n: usize) -> Result<Self> {
        if d.len() != n * n {
            return Err(UtsError::Precondition(format!(
                "distance matrix of length {} is not {n}x{n}",
                d.len()
            )));
        }
        for i in 0..n {
            if d[i * n + i] != 0.0 {
                return Err(UtsError::Precondition(format!(
                    "nonzero diagonal entry at {i}"
                )));
            }
            for j in (i + 1)..n {
                let (a, b) = (d[i * n + j], d[j * n + i]);
                if !a.is_finite() || a < 0.0 {
                    return Err(UtsError::Precondition(format!(
                        "entry ({i},{j}) = {a} is not a finite nonnegative distance"
                    )));
                }
                if (a - b).abs() > 1e-12 * a.abs().max(1.0) {
                    return Err(UtsError::Precondition(format!(
                        "matrix is not symmetric at ({i},{j})"
                    )));
                }
            }
        }
        Ok(Self { d, n, metric: None })
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn metric(&self) -> Option<Metric> {
        self.metric
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.d[i * self.n + j]
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.d[i * self.n..(i + 1) * self.n]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.d
    }

    /// Largest pairwise distance.
    pub fn diameter(&self) -> f64 {
        self.d.iter().copied().fold(0.0, f64::max)
    }

    /// Distances `d(i,j)` for `i < j`, in row order.
    pub fn upper_triangle(&self) -> Vec<f64> {
        let n = self.n;
        let mut out = Vec::with_capacity(n * n.saturating_sub(1) / 2);
        for i in 0..n {
            out.extend_from_slice(&self.d[i * n + i + 1..(i + 1) * n]);
        }
        out
    }

    /// Every entry multiplied by `t`.
    pub fn scaled(&self, t: f64) -> DistanceMatrix {
        DistanceMatrix {
            d: self.d.iter().map(|v| v * t).collect(),
            n: self.n,
            metric: self.metric,
        }
    }

    /// Sub-matrix restricted to `indices`.
    pub fn select(&self, indices: &[usize]) -> DistanceMatrix {
        let m = indices.len();
        let mut d = Vec::with_capacity(m * m);
        for &i in indices {
            for &j in indices {
                d.push(self.get(i, j));
            }
        }
        DistanceMatrix {
            d,
            n: m,
            metric: self.metric,
        }
    }
}

/// Full pairwise distance matrix. Rows are filled independently, so the
/// result does not depend on the worker count.
pub fn pairwise_distances(cloud: &PointCloud, metric: Metric) -> DistanceMatrix {
    let n = cloud.len();
    let kernel = DistanceKernel::new(cloud, metric);
    let mut d = vec![0.0; n * n];
    d.par_chunks_mut(n.max(1)).enumerate().for_each(|(i, row)| {
        for (j, v) in row.iter_mut().enumerate() {
            // Always evaluate with the lower index first so (i,j) and (j,i) agree bitwise.
            *v = if i <= j {
                kernel.dist(i, j)
            } else {
                kernel.dist(j, i)
            };
        }
    });
    DistanceMatrix {
        d,
        n,
        metric: Some(metric),
    }
}

/// Target size and seed of a subsample.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SampleSpec {
    pub size: usize,
    pub seed: u64,
}

impl SampleSpec {
    pub fn new(size: usize, seed: u64) -> Self {
        Self { size, seed }
    }
}

/// Seeded partial Fisher-Yates draw of `min(size, n)` distinct indices.
pub fn sample_indices(n: usize, spec: SampleSpec) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let m = spec.size.max(1).min(n);
    let mut idx: Vec<usize> = (0..n).collect();
    let (chosen, _) = idx.partial_shuffle(&mut rng, m);
    chosen.to_vec()
}

/// Exact `k` nearest neighbors of `anchor`, ties broken by lower index.
pub fn knn(cloud: &PointCloud, anchor: usize, k: usize, metric: Metric) -> Result<Vec<usize>> {
    let n = cloud.len();
    if anchor >= n {
        return Err(UtsError::Bounds(format!(
            "anchor {anchor} out of range for {n} points"
        )));
    }
    if k == 0 || k >= n {
        return Err(UtsError::Bounds(format!(
            "k = {k} must satisfy 1 <= k <= n-1 = {}",
            n.saturating_sub(1)
        )));
    }
    let kernel = DistanceKernel::new(cloud, metric);
    let mut cand: Vec<(f64, usize)> = (0..n)
        .filter(|&j| j != anchor)
        .map(|j| (kernel.dist(anchor, j), j))
        .collect();
    let cmp = |a: &(f64, usize), b: &(f64, usize)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
    if k < cand.len() {
        cand.select_nth_unstable_by(k - 1, cmp);
        cand.truncate(k);
    }
    cand.sort_unstable_by(cmp);
    Ok(cand.into_iter().map(|(_, j)| j).collect())
}
