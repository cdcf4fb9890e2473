//! Seeded synthetic point clouds with known geometry.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::cloud::PointCloud;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn gaussian_vec(r: &mut ChaCha8Rng, d: usize) -> Vec<f64> {
    (0..d).map(|_| r.sample(StandardNormal)).collect()
}

fn unit(mut v: Vec<f64>) -> Vec<f64> {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.iter_mut().for_each(|x| *x /= n);
    v
}

fn build(rows: Vec<Vec<f64>>) -> PointCloud {
    PointCloud::from_rows(&rows).expect("generated rows are finite and equal-width")
}

/// Uniform points on `[0, 1]`, one coordinate each.
pub fn segment(n: usize, seed: u64) -> PointCloud {
    let mut r = rng(seed);
    build((0..n).map(|_| vec![r.gen::<f64>()]).collect())
}

/// Uniform points in the unit square.
pub fn square(n: usize, seed: u64) -> PointCloud {
    let mut r = rng(seed);
    build((0..n).map(|_| vec![r.gen::<f64>(), r.gen::<f64>()]).collect())
}

/// Uniform points in the unit cube `[0, 1]^d`.
pub fn uniform_cube(n: usize, d: usize, seed: u64) -> PointCloud {
    let mut r = rng(seed);
    build((0..n).map(|_| (0..d).map(|_| r.gen::<f64>()).collect()).collect())
}

/// Zero-mean Gaussian with per-axis standard deviations `scales`.
pub fn gaussian(n: usize, scales: &[f64], seed: u64) -> PointCloud {
    let mut r = rng(seed);
    build(
        (0..n)
            .map(|_| scales.iter().map(|s| s * r.sample::<f64, _>(StandardNormal)).collect())
            .collect(),
    )
}

/// Uniform points on the unit sphere `S^{d-1}`.
pub fn sphere_shell(n: usize, d: usize, seed: u64) -> PointCloud {
    let mut r = rng(seed);
    build((0..n).map(|_| unit(gaussian_vec(&mut r, d))).collect())
}

/// Points `a + t·b` on a random line, `t` uniform in `[-1, 1]`, normalized
/// onto the sphere (an arc, so still one-dimensional).
pub fn line(n: usize, d: usize, seed: u64) -> PointCloud {
    let mut r = rng(seed);
    let a = unit(gaussian_vec(&mut r, d));
    let b: Vec<f64> = unit(gaussian_vec(&mut r, d)).iter().map(|x| 0.5 * x).collect();
    build(
        (0..n)
            .map(|_| {
                let t: f64 = r.gen_range(-1.0..1.0);
                unit(a.iter().zip(&b).map(|(x, y)| x + t * y).collect())
            })
            .collect(),
    )
}

/// `k` Gaussian blobs of width `spread` around random unit centers,
/// normalized onto the sphere. Returns the cloud and each row's blob.
pub fn blobs(n: usize, d: usize, k: usize, spread: f64, seed: u64) -> (PointCloud, Vec<usize>) {
    let mut r = rng(seed);
    let centers: Vec<Vec<f64>> = (0..k).map(|_| unit(gaussian_vec(&mut r, d))).collect();
    let mut labels = Vec::with_capacity(n);
    let rows = (0..n)
        .map(|i| {
            let c = i % k;
            labels.push(c);
            unit(
                centers[c]
                    .iter()
                    .map(|x| x + spread * r.sample::<f64, _>(StandardNormal))
                    .collect(),
            )
        })
        .collect();
    (build(rows), labels)
}

/// Distinct cloud families for clustering and classification checks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Generator {
    /// Uniform on the full sphere: isotropic, high intrinsic dimension.
    SphereShell,
    /// Gaussian with geometrically decaying axis scales, then normalized.
    AnisotropicGaussian,
    /// Eight tight blobs.
    Clusters,
    /// A noisy great circle: one intrinsic dimension.
    Circle,
}

impl Generator {
    pub const ALL: [Generator; 4] = [
        Generator::SphereShell,
        Generator::AnisotropicGaussian,
        Generator::Clusters,
        Generator::Circle,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Generator::SphereShell => "sphere_shell",
            Generator::AnisotropicGaussian => "anisotropic_gaussian",
            Generator::Clusters => "clusters",
            Generator::Circle => "circle",
        }
    }

    /// `n` unit-normalized rows in `d` dimensions.
    pub fn sample(self, n: usize, d: usize, seed: u64) -> PointCloud {
        let cloud = match self {
            Generator::SphereShell => sphere_shell(n, d, seed),
            Generator::AnisotropicGaussian => {
                let scales: Vec<f64> = (0..d).map(|i| 0.6f64.powi(i as i32)).collect();
                build(gaussian(n, &scales, seed).rows().map(|r| unit(r.to_vec())).collect())
            }
            Generator::Clusters => blobs(n, d, 8, 0.05, seed).0,
            Generator::Circle => {
                let mut r = rng(seed);
                let u = unit(gaussian_vec(&mut r, d));
                let mut v = gaussian_vec(&mut r, d);
                let proj: f64 = u.iter().zip(&v).map(|(a, b)| a * b).sum();
                v.iter_mut().zip(&u).for_each(|(x, a)| *x -= proj * a);
                let v = unit(v);
                build(
                    (0..n)
                        .map(|_| {
                            let t = r.gen_range(0.0..std::f64::consts::TAU);
                            let (s, c) = t.sin_cos();
                            unit(
                                u.iter()
                                    .zip(&v)
                                    .map(|(a, b)| {
                                        c * a + s * b + 0.01 * r.sample::<f64, _>(StandardNormal)
                                    })
                                    .collect(),
                            )
                        })
                        .collect(),
                )
            }
        };
        cloud.with_id(self.name())
    }
}
