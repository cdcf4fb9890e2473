//! k-means, silhouette scoring and average-linkage hierarchical clustering.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cloud::{squared_euclidean, DistanceKernel, DistanceMatrix, Metric, PointCloud};
use crate::error::{Result, UtsError};

/// Candidate cluster counts for the silhouette descriptor.
pub const DEFAULT_K_SET: [usize; 6] = [3, 5, 10, 20, 50, 100];
const MAX_LLOYD_ITERATIONS: usize = 300;
const CENTROID_SHIFT_TOL: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterAssignment {
    pub labels: Vec<usize>,
    pub k: usize,
    pub inertia: f64,
}

impl ClusterAssignment {
    /// Wraps labels that were not produced by [`kmeans`]; inertia is unknown (NaN).
    pub fn from_labels(labels: Vec<usize>) -> Result<Self> {
        let k = labels.iter().max().map_or(0, |m| m + 1);
        Ok(Self {
            labels,
            k,
            inertia: f64::NAN,
        })
    }
}

fn nearest(centroids: &[f64], dim: usize, x: &[f64]) -> (usize, f64) {
    centroids
        .chunks_exact(dim)
        .enumerate()
        .map(|(c, mu)| (c, squared_euclidean(mu, x)))
        .fold((0, f64::INFINITY), |best, cur| if cur.1 < best.1 { cur } else { best })
}

fn plus_plus_seeds(cloud: &PointCloud, k: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let n = cloud.len();
    let mut centroids = cloud.row(rng.gen_range(0..n)).to_vec();
    let mut d2: Vec<f64> = cloud.rows().map(|r| squared_euclidean(r, &centroids)).collect();
    for _ in 1..k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let mut target = rng.gen::<f64>() * total;
            let mut chosen = n - 1;
            for (i, &w) in d2.iter().enumerate() {
                if target < w {
                    chosen = i;
                    break;
                }
                target -= w;
            }
            chosen
        } else {
            rng.gen_range(0..n)
        };
        let c = cloud.row(pick);
        centroids.extend_from_slice(c);
        for (i, r) in cloud.rows().enumerate() {
            d2[i] = d2[i].min(squared_euclidean(r, c));
        }
    }
    centroids
}

/// Lloyd's algorithm with k-means++ seeding.
pub fn kmeans(cloud: &PointCloud, k: usize, seed: u64) -> Result<ClusterAssignment> {
    kmeans_with_history(cloud, k, seed).map(|(a, _)| a)
}

/// [`kmeans`] plus the inertia after each centroid update.
pub fn kmeans_with_history(cloud: &PointCloud, k: usize, seed: u64) -> Result<(ClusterAssignment, Vec<f64>)> {
    let (n, dim) = (cloud.len(), cloud.dim());
    if k > n {
        return Err(UtsError::Bounds(format!("k = {k} exceeds the {n} points")));
    }
    if k < 2 {
        return Err(UtsError::Precondition(format!("k must be at least 2 (got {k})")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centroids = plus_plus_seeds(cloud, k, &mut rng);
    let mut labels = vec![0usize; n];
    let mut dists = vec![0.0; n];
    let mut history = Vec::new();

    for _ in 0..MAX_LLOYD_ITERATIONS {
        for (i, r) in cloud.rows().enumerate() {
            (labels[i], dists[i]) = nearest(&centroids, dim, r);
        }
        repair_empty(k, &mut labels, &mut dists);

        let mut sums = vec![0.0; k * dim];
        let mut counts = vec![0usize; k];
        for (i, r) in cloud.rows().enumerate() {
            counts[labels[i]] += 1;
            sums[labels[i] * dim..(labels[i] + 1) * dim]
                .iter_mut()
                .zip(r)
                .for_each(|(s, v)| *s += v);
        }
        let mut shift: f64 = 0.0;
        for c in 0..k {
            let new = &mut sums[c * dim..(c + 1) * dim];
            new.iter_mut().for_each(|v| *v /= counts[c] as f64);
            shift = shift.max(squared_euclidean(new, &centroids[c * dim..(c + 1) * dim]).sqrt());
        }
        centroids = sums;
        history.push(inertia(cloud, &labels, &centroids));
        if shift < CENTROID_SHIFT_TOL {
            break;
        }
    }
    for (i, r) in cloud.rows().enumerate() {
        (labels[i], dists[i]) = nearest(&centroids, dim, r);
    }
    repair_empty(k, &mut labels, &mut dists);
    let inertia = inertia(cloud, &labels, &centroids);
    Ok((ClusterAssignment { labels, k, inertia }, history))
}

fn inertia(cloud: &PointCloud, labels: &[usize], centroids: &[f64]) -> f64 {
    let dim = cloud.dim();
    cloud
        .rows()
        .zip(labels)
        .map(|(r, &l)| squared_euclidean(r, &centroids[l * dim..(l + 1) * dim]))
        .sum()
}

/// Moves the point farthest from its centroid into each empty cluster.
fn repair_empty(k: usize, labels: &mut [usize], dists: &mut [f64]) {
    loop {
        let mut counts = vec![0usize; k];
        labels.iter().for_each(|&l| counts[l] += 1);
        let Some(empty) = counts.iter().position(|&c| c == 0) else {
            return;
        };
        let donor = (0..labels.len())
            .filter(|&i| counts[labels[i]] > 1)
            .max_by(|&a, &b| dists[a].total_cmp(&dists[b]).then(b.cmp(&a)))
            .expect("k <= n guarantees a cluster with two or more points");
        labels[donor] = empty;
        dists[donor] = 0.0;
    }
}

/// Mean silhouette coefficient; singleton clusters contribute zero.
pub fn silhouette(cloud: &PointCloud, labels: &ClusterAssignment, metric: Metric) -> Result<f64> {
    let n = cloud.len();
    if labels.labels.len() != n {
        return Err(UtsError::Precondition(format!(
            "{} labels for {n} points",
            labels.labels.len()
        )));
    }
    let k = labels.labels.iter().max().map_or(0, |m| m + 1);
    let mut sizes = vec![0usize; k];
    labels.labels.iter().for_each(|&l| sizes[l] += 1);
    if n < 2 || sizes.iter().filter(|&&s| s > 0).count() < 2 {
        return Err(UtsError::UndefinedStatistic(
            "silhouette needs at least two nonempty clusters".into(),
        ));
    }
    let kernel = DistanceKernel::new(cloud, metric);
    let per_point: Vec<f64> = (0..n)
        .into_par_iter()
        .map(|i| {
            let own = labels.labels[i];
            if sizes[own] == 1 {
                return 0.0;
            }
            let mut sums = vec![0.0; k];
            for j in 0..n {
                if j != i {
                    sums[labels.labels[j]] += kernel.dist(i, j);
                }
            }
            let a = sums[own] / (sizes[own] - 1) as f64;
            let b = (0..k)
                .filter(|&c| c != own && sizes[c] > 0)
                .map(|c| sums[c] / sizes[c] as f64)
                .fold(f64::INFINITY, f64::min);
            let m = a.max(b);
            if m > 0.0 {
                (b - a) / m
            } else {
                0.0
            }
        })
        .collect();
    Ok(per_point.iter().sum::<f64>() / n as f64)
}

/// Silhouette-maximizing cluster count over `k_set`; ties go to the smaller k.
pub fn best_silhouette(
    cloud: &PointCloud,
    k_set: &[usize],
    seed: u64,
    metric: Metric,
) -> Result<(usize, f64)> {
    let mut ks: Vec<usize> = k_set.iter().copied().filter(|&k| k <= cloud.len()).collect();
    ks.sort_unstable();
    ks.dedup();
    if ks.is_empty() {
        return Err(UtsError::Bounds(format!(
            "every k in {k_set:?} exceeds the {} points",
            cloud.len()
        )));
    }
    let scores = ks
        .par_iter()
        .map(|&k| silhouette(cloud, &kmeans(cloud, k, seed)?, metric))
        .collect::<Result<Vec<f64>>>()?;
    let mut best = (ks[0], scores[0]);
    for (&k, &s) in ks.iter().zip(&scores).skip(1) {
        if s > best.1 {
            best = (k, s);
        }
    }
    Ok(best)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Merge {
    pub left: usize,
    pub right: usize,
    pub height: f64,
    /// Leaves are `0..n`; the i-th merge creates node `n + i`.
    pub id: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dendrogram {
    pub leaves: usize,
    pub merges: Vec<Merge>,
}

impl Dendrogram {
    /// Flat labels from cutting the tree into `k` clusters, numbered by first leaf.
    pub fn cut(&self, k: usize) -> Result<Vec<usize>> {
        let n = self.leaves;
        if k == 0 || k > n {
            return Err(UtsError::Bounds(format!("cannot cut {n} leaves into {k} clusters")));
        }
        let mut parent: Vec<usize> = (0..2 * n).collect();
        fn find(p: &mut [usize], mut x: usize) -> usize {
            while p[x] != x {
                p[x] = p[p[x]];
                x = p[x];
            }
            x
        }
        for m in &self.merges[..n - k] {
            parent[m.left] = m.id;
            parent[m.right] = m.id;
        }
        let mut labels = vec![usize::MAX; n];
        let mut root_label = std::collections::HashMap::new();
        for (leaf, label) in labels.iter_mut().enumerate() {
            let root = find(&mut parent, leaf);
            let next = root_label.len();
            *label = *root_label.entry(root).or_insert(next);
        }
        Ok(labels)
    }

    /// Leaves in left-to-right order of the drawn tree.
    pub fn leaf_order(&self) -> Vec<usize> {
        let n = self.leaves;
        let Some(root) = self.merges.last() else {
            return (0..n).collect();
        };
        let mut out = Vec::with_capacity(n);
        let mut stack = vec![root.id];
        while let Some(node) = stack.pop() {
            if node < n {
                out.push(node);
            } else {
                let m = &self.merges[node - n];
                stack.push(m.right);
                stack.push(m.left);
            }
        }
        out
    }

    /// Cophenetic distance matrix (row-major, `n × n`).
    pub fn cophenetic(&self) -> Vec<f64> {
        let n = self.leaves;
        let mut members: Vec<Vec<usize>> = (0..n).map(|i| vec![i]).collect();
        let mut out = vec![0.0; n * n];
        for m in &self.merges {
            let (l, r) = (members[m.left].clone(), members[m.right].clone());
            for &a in &l {
                for &b in &r {
                    out[a * n + b] = m.height;
                    out[b * n + a] = m.height;
                }
            }
            members.push(l.into_iter().chain(r).collect());
        }
        out
    }
}

/// UPGMA on a symmetric, zero-diagonal distance matrix.
pub fn average_linkage(distances: &DistanceMatrix) -> Result<Dendrogram> {
    let n = distances.len();
    let mut d: Vec<Vec<f64>> = (0..n).map(|i| distances.row(i).to_vec()).collect();
    let mut size = vec![1usize; n];
    let mut node: Vec<usize> = (0..n).collect();
    let mut active = vec![true; n];
    let mut merges = Vec::with_capacity(n.saturating_sub(1));
    for step in 0..n.saturating_sub(1) {
        // (height, smaller node id, larger node id, slot i, slot j)
        let mut best: Option<(f64, usize, usize, usize, usize)> = None;
        for i in (0..n).filter(|&i| active[i]) {
            for j in (i + 1..n).filter(|&j| active[j]) {
                let cand = (d[i][j], node[i].min(node[j]), node[i].max(node[j]), i, j);
                let better = match best {
                    None => true,
                    Some(b) => cand.0 < b.0 || (cand.0 == b.0 && (cand.1, cand.2) < (b.1, b.2)),
                };
                if better {
                    best = Some(cand);
                }
            }
        }
        let (h, left, right, i, j) = best.expect("at least two active clusters");
        merges.push(Merge {
            left,
            right,
            height: h,
            id: n + step,
        });
        let (si, sj) = (size[i] as f64, size[j] as f64);
        for m in 0..n {
            if active[m] && m != i && m != j {
                let v = (si * d[i][m] + sj * d[j][m]) / (si + sj);
                d[i][m] = v;
                d[m][i] = v;
            }
        }
        size[i] += size[j];
        node[i] = n + step;
        active[j] = false;
    }
    // Floating-point averaging can undershoot a previous height by an ulp.
    for k in 1..merges.len() {
        if merges[k].height < merges[k - 1].height {
            merges[k].height = merges[k - 1].height;
        }
    }
    Ok(Dendrogram { leaves: n, merges })
}

/// Adjusted Rand index between two flat labelings.
pub fn adjusted_rand_index(a: &[usize], b: &[usize]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(UtsError::Precondition("labelings differ in length".into()));
    }
    let n = a.len();
    let ka = a.iter().max().map_or(0, |m| m + 1);
    let kb = b.iter().max().map_or(0, |m| m + 1);
    let mut table = vec![0u64; ka * kb];
    for (&x, &y) in a.iter().zip(b) {
        table[x * kb + y] += 1;
    }
    let c2 = |v: u64| (v * v.saturating_sub(1)) as f64 / 2.0;
    let index: f64 = table.iter().map(|&v| c2(v)).sum();
    let rows: f64 = (0..ka).map(|x| c2(table[x * kb..(x + 1) * kb].iter().sum())).sum();
    let cols: f64 = (0..kb).map(|y| c2((0..ka).map(|x| table[x * kb + y]).sum())).sum();
    let expected = rows * cols / c2(n as u64);
    let max = 0.5 * (rows + cols);
    if max == expected {
        return Ok(1.0);
    }
    Ok((index - expected) / (max - expected))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn blobs() -> PointCloud {
        let mut rows = Vec::new();
        for i in 0..5 {
            let e = 0.01 * i as f64;
            rows.push([e, -e]);
            rows.push([10.0 + e, 10.0 - e]);
        }
        PointCloud::from_rows(&rows).unwrap()
    }

    #[test]
    fn kmeans_trivial_cases() {
        let c = PointCloud::from_rows(&[[0.0], [1.0], [5.0], [9.0]]).unwrap();
        let a = kmeans(&c, 4, 1).unwrap();
        assert_eq!(a.inertia, 0.0);
        let mut l = a.labels.clone();
        l.sort_unstable();
        assert_eq!(l, vec![0, 1, 2, 3]);

        let same = PointCloud::from_rows(&[[2.0, 2.0]; 6]).unwrap();
        let a = kmeans(&same, 2, 3).unwrap();
        assert_eq!(a.inertia, 0.0);
        assert!(a.labels.contains(&0) && a.labels.contains(&1));

        assert!(matches!(kmeans(&c, 5, 0), Err(UtsError::Bounds(_))));
    }

    #[test]
    fn silhouette_examples() {
        let c = blobs();
        let a = kmeans(&c, 2, 7).unwrap();
        assert!(silhouette(&c, &a, Metric::Euclidean).unwrap() >= 0.95);

        let two = PointCloud::from_rows(&[[0.0], [1.0]]).unwrap();
        let labels = ClusterAssignment::from_labels(vec![0, 1]).unwrap();
        assert_eq!(silhouette(&two, &labels, Metric::Euclidean).unwrap(), 0.0);

        let one = ClusterAssignment::from_labels(vec![0, 0]).unwrap();
        assert!(matches!(
            silhouette(&two, &one, Metric::Euclidean),
            Err(UtsError::UndefinedStatistic(_))
        ));
    }

    #[test]
    fn best_silhouette_skips_large_k() {
        let c = PointCloud::from_rows(&[[0.0], [0.1], [5.0], [9.0]]).unwrap();
        let (k, _) = best_silhouette(&c, &DEFAULT_K_SET, 0, Metric::Euclidean).unwrap();
        assert_eq!(k, 3);
        assert!(matches!(
            best_silhouette(&c, &[5, 10], 0, Metric::Euclidean),
            Err(UtsError::Bounds(_))
        ));
    }

    #[test]
    fn linkage_examples() {
        let d = DistanceMatrix::from_full(
            vec![0.0, 1.0, 10.0, 1.0, 0.0, 10.0, 10.0, 10.0, 0.0],
            3,
        )
        .unwrap();
        let t = average_linkage(&d).unwrap();
        assert_eq!((t.merges[0].left, t.merges[0].right, t.merges[0].height), (0, 1, 1.0));
        assert_eq!((t.merges[1].left, t.merges[1].right, t.merges[1].height), (2, 3, 10.0));

        let eq = DistanceMatrix::from_full(
            (0..16).map(|i| if i % 5 == 0 { 0.0 } else { 2.0 }).collect(),
            4,
        )
        .unwrap();
        let t = average_linkage(&eq).unwrap();
        let pairs: Vec<(usize, usize)> = t.merges.iter().map(|m| (m.left, m.right)).collect();
        assert_eq!(pairs, vec![(0, 1), (2, 3), (4, 5)]);
        assert!(t.merges.iter().all(|m| m.height == 2.0));
        assert_eq!(t.cut(2).unwrap(), vec![0, 0, 1, 1]);
    }

    #[test]
    fn ari_examples() {
        assert_eq!(adjusted_rand_index(&[0, 0, 1, 1], &[1, 1, 0, 0]).unwrap(), 1.0);
        let v = adjusted_rand_index(&[0, 0, 1, 1], &[0, 1, 0, 1]).unwrap();
        assert!((v + 0.5).abs() < 1e-12);
    }
}
