use indexmap::IndexMap;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::config::{Descriptor, DescriptorConfig};
use super::{SignatureVector, Source};
use crate::cloud::{knn, pairwise_distances, DistanceMatrix, Metric, PointCloud};
use crate::clustering::best_silhouette;
use crate::dimension::{
    covariance_spectrum, effective_rank, isoscore, pca_fo_dimension, twonn_dimension,
};
use crate::diversity::{
    magnitude_area, magnitude_dimension, magnitude_function, mean_pairwise_similarity, spread,
    uniformity, vendi_score, SimilarityKernel,
};
use crate::error::{Result, UtsError};
use crate::homology::{
    default_ph_sizes, euler_characteristic, persistence_entropy, ph_dimension, ph_stats,
    rips_persistence,
};

/// Neighborhood size for local signatures.
pub const DEFAULT_LOCAL_K: usize = 100;

/// Up to `budget` distinct rows from the descriptor's own random stream.
/// A budget covering the cloud keeps every row in its original order.
fn stream_sample(n: usize, budget: usize, seed: u64, stream: u64) -> Vec<usize> {
    if budget >= n {
        return (0..n).collect();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    let mut idx: Vec<usize> = (0..n).collect();
    let (chosen, _) = idx.partial_shuffle(&mut rng, budget);
    chosen.to_vec()
}

fn suffixed(name: &str, metric: Metric) -> String {
    format!("{name}:{}", metric.name())
}

fn distances(sample: &PointCloud, metric: Metric) -> DistanceMatrix {
    pairwise_distances(sample, metric)
}

/// Values for one descriptor on its sample, in schema order.
fn descriptor_values(
    d: Descriptor,
    sample: &PointCloud,
    config: &DescriptorConfig,
    seed: u64,
) -> Result<Vec<(String, f64)>> {
    let mut out = Vec::new();
    if !d.is_metric_dependent() {
        let value = match d {
            Descriptor::PcaDimension => {
                pca_fo_dimension(&covariance_spectrum(sample)?, config.fo_alpha)? as f64
            }
            Descriptor::EffectiveRank => effective_rank(&covariance_spectrum(sample)?)?,
            Descriptor::VendiScore => vendi_score(sample)?,
            Descriptor::Uniformity => uniformity(sample, config.uniformity_t)?,
            Descriptor::Isoscore => isoscore(sample)?,
            _ => unreachable!("metric-dependent descriptor"),
        };
        out.push((d.name().to_string(), value));
        return Ok(out);
    }
    for &metric in &config.metrics {
        match d {
            Descriptor::PhDimension => {
                let sizes = default_ph_sizes(sample.len());
                let v = ph_dimension(sample, metric, config.ph_alpha, &sizes, config.ph_trials, seed)?;
                out.push((suffixed("ph_dimension", metric), v));
            }
            Descriptor::PhStatistics => {
                let diag = rips_persistence(&distances(sample, metric), config.max_dim, None)?;
                for dim in 0..=config.max_dim {
                    let (life, mid) = ph_stats(&diag, dim)?;
                    out.push((suffixed(&format!("ph_h{dim}_mean_lifetime"), metric), life));
                    out.push((suffixed(&format!("ph_h{dim}_mean_midlife"), metric), mid));
                }
            }
            Descriptor::PersistenceEntropy => {
                let diag = rips_persistence(&distances(sample, metric), config.max_dim, None)?;
                for dim in 0..=config.max_dim {
                    let h = persistence_entropy(&diag, dim)?;
                    out.push((suffixed(&format!("persistence_entropy_h{dim}"), metric), h));
                }
            }
            Descriptor::EulerCharacteristic => {
                let dm = distances(sample, metric);
                let tau = median(dm.upper_triangle());
                let diag = rips_persistence(&dm, config.max_dim, None)?;
                out.push((
                    suffixed("euler_characteristic", metric),
                    euler_characteristic(&diag, tau) as f64,
                ));
            }
            Descriptor::Twonn => {
                out.push((suffixed("twonn_dimension", metric), twonn_dimension(sample, metric)?));
            }
            Descriptor::Magnitude => {
                let curve = magnitude_function(&distances(sample, metric), config.magnitude_grid)?;
                out.push((suffixed("magnitude_dimension", metric), magnitude_dimension(&curve)?));
                out.push((suffixed("magnitude_area", metric), magnitude_area(&curve)));
            }
            Descriptor::Spread => {
                out.push((suffixed("spread", metric), spread(&distances(sample, metric))));
            }
            Descriptor::PairwiseSimilarity => {
                let kernel = match metric {
                    Metric::Cosine => SimilarityKernel::Cosine,
                    Metric::Euclidean => SimilarityKernel::ExpEuclidean,
                };
                out.push((
                    suffixed("mean_pairwise_similarity", metric),
                    mean_pairwise_similarity(sample, kernel)?,
                ));
            }
            Descriptor::Silhouette => {
                let (k, s) = best_silhouette(sample, &config.k_set, seed, metric)?;
                out.push((suffixed("silhouette", metric), s));
                out.push((suffixed("silhouette_k", metric), k as f64));
            }
            _ => unreachable!("metric-independent descriptor"),
        }
    }
    Ok(out)
}

fn median(mut v: Vec<f64>) -> f64 {
    if v.is_empty() {
        return 0.0;
    }
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    if v.len() % 2 == 1 {
        v[m]
    } else {
        0.5 * (v[m - 1] + v[m])
    }
}

fn assemble(
    cloud: &PointCloud,
    config: &DescriptorConfig,
    seed: u64,
    sample_for: impl Fn(Descriptor) -> Vec<usize> + Sync,
) -> Result<SignatureVector> {
    config.validate()?;
    if cloud.is_empty() {
        return Err(UtsError::Degenerate("cloud has no rows".into()));
    }
    cloud.require_unit_rows("signature computation")?;
    let enabled = config.enabled();
    let results: Vec<Result<(usize, Vec<(String, f64)>)>> = enabled
        .par_iter()
        .map(|&d| {
            let idx = sample_for(d);
            let sample = cloud.select(&idx);
            descriptor_values(d, &sample, config, seed)
                .map(|vals| (idx.len(), vals))
                .map_err(|e| UtsError::Component {
                    component: d.name().to_string(),
                    source: Box::new(e),
                })
        })
        .collect();

    let mut components = IndexMap::new();
    let mut realized_sizes = IndexMap::new();
    for (d, r) in enabled.iter().zip(results) {
        let (size, vals) = r?;
        realized_sizes.insert(d.name().to_string(), size);
        for (name, v) in vals {
            if !v.is_finite() {
                return Err(UtsError::Component {
                    component: d.name().to_string(),
                    source: Box::new(UtsError::Degenerate(format!("{name} is not finite"))),
                });
            }
            components.insert(name, v);
        }
    }
    Ok(SignatureVector {
        source: Source {
            model: cloud.id.clone().unwrap_or_default(),
            dataset: String::new(),
        },
        seed,
        config_hash: config.hash(),
        realized_sizes,
        components,
        anchor: None,
        label: None,
    })
}

/// Signature of a whole cloud. Each descriptor draws its own subsample of at
/// most its budget from a stream keyed by `(seed, descriptor)`.
pub fn compute_global_signature(
    cloud: &PointCloud,
    config: &DescriptorConfig,
    seed: u64,
) -> Result<SignatureVector> {
    let n = cloud.len();
    assemble(cloud, config, seed, |d| {
        stream_sample(n, config.budgets.get(d), seed, d.stream())
    })
}

/// Signature of the `k` cosine nearest neighbors of `anchor` (anchor excluded),
/// computed on the full neighborhood without subsampling.
pub fn compute_local_signature(
    cloud: &PointCloud,
    anchor: usize,
    k: usize,
    config: &DescriptorConfig,
) -> Result<SignatureVector> {
    let neighbors = knn(cloud, anchor, k, Metric::Cosine)?;
    let hood = cloud.select(&neighbors);
    let seed = config.seeds.first().copied().unwrap_or(0);
    let mut v = assemble(&hood, config, seed, |_| (0..k).collect())?;
    v.anchor = Some(anchor.to_string());
    Ok(v)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stream_samples_are_independent_and_deterministic() {
        let a = stream_sample(1000, 50, 7, 1);
        assert_eq!(a, stream_sample(1000, 50, 7, 1));
        assert_ne!(a, stream_sample(1000, 50, 7, 2));
        assert_ne!(a, stream_sample(1000, 50, 8, 1));
        let mut s = a.clone();
        s.sort_unstable();
        s.dedup();
        assert_eq!(s.len(), 50);
        assert_eq!(stream_sample(10, 50, 7, 1), (0..10).collect::<Vec<_>>());
    }

    #[test]
    fn median_even_and_odd() {
        assert_eq!(median(vec![3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(vec![4.0, 1.0, 2.0, 3.0]), 2.5);
    }
}
