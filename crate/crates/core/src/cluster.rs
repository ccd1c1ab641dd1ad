//! Embedding fusion, PCA reduction, k-means and head-cluster downsampling.

use alloc::vec;
use alloc::vec::Vec;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::hashing::mix64;
use crate::linalg::symmetric_eigen;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ClusterError {
    #[error("need at least {need} vectors, got {got}")]
    TooFewVectors { need: usize, got: usize },
    #[error("vector {index} has dimension {got}, expected {expected}")]
    DimMismatch { index: usize, expected: usize, got: usize },
    #[error("target dimension {target} exceeds input dimension {input}")]
    TargetDimTooLarge { target: usize, input: usize },
    #[error("k = {k} exceeds the {distinct} distinct vectors")]
    KTooLarge { k: usize, distinct: usize },
    #[error("k must be at least 1")]
    ZeroK,
    #[error("vector {0} has a non-finite entry")]
    NonFinite(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EmbeddingSource {
    Text,
    Vision,
    Fused,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingVector {
    pub values: Vec<f64>,
    pub source: EmbeddingSource,
}

impl EmbeddingVector {
    pub fn dim(&self) -> usize {
        self.values.len()
    }
}

/// Concatenates a text and a vision embedding.
pub fn fuse(text: &EmbeddingVector, vision: &EmbeddingVector) -> EmbeddingVector {
    let mut values = Vec::with_capacity(text.dim() + vision.dim());
    values.extend_from_slice(&text.values);
    values.extend_from_slice(&vision.values);
    EmbeddingVector {
        values,
        source: EmbeddingSource::Fused,
    }
}

fn check_matrix(vectors: &[Vec<f64>]) -> Result<usize, ClusterError> {
    let dim = vectors.first().map_or(0, Vec::len);
    for (i, v) in vectors.iter().enumerate() {
        if v.len() != dim {
            return Err(ClusterError::DimMismatch {
                index: i,
                expected: dim,
                got: v.len(),
            });
        }
        if v.iter().any(|x| !x.is_finite()) {
            return Err(ClusterError::NonFinite(i));
        }
    }
    Ok(dim)
}

/// Result of a PCA projection.
#[derive(Debug, Clone, PartialEq)]
pub struct Reduction {
    pub vectors: Vec<Vec<f64>>,
    /// Variance along the kept directions over total variance; 0 when the
    /// data has no variance.
    pub captured_variance_ratio: f64,
    /// Set when every input vector is identical. The projection is then all
    /// zeros.
    pub degenerate: bool,
    pub mean: Vec<f64>,
    /// `target_dim` unit principal directions, strongest first.
    pub components: Vec<Vec<f64>>,
}

/// Projects centred vectors onto their top `target_dim` principal
/// directions. Each direction's largest-magnitude loading is made positive.
pub fn reduce_dim(vectors: &[Vec<f64>], target_dim: usize) -> Result<Reduction, ClusterError> {
    if vectors.len() < 2 {
        return Err(ClusterError::TooFewVectors {
            need: 2,
            got: vectors.len(),
        });
    }
    let d = check_matrix(vectors)?;
    if target_dim > d {
        return Err(ClusterError::TargetDimTooLarge {
            target: target_dim,
            input: d,
        });
    }
    let n = vectors.len() as f64;
    let mut mean = vec![0.0; d];
    for v in vectors {
        for (m, x) in mean.iter_mut().zip(v) {
            *m += x;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n);
    let mut cov = vec![0.0; d * d];
    let mut centred = vec![0.0; d];
    for v in vectors {
        for j in 0..d {
            centred[j] = v[j] - mean[j];
        }
        for i in 0..d {
            let ci = centred[i];
            if ci == 0.0 {
                continue;
            }
            for j in i..d {
                cov[i * d + j] += ci * centred[j];
            }
        }
    }
    for i in 0..d {
        for j in i..d {
            cov[i * d + j] /= n;
            cov[j * d + i] = cov[i * d + j];
        }
    }
    let total: f64 = (0..d).map(|i| cov[i * d + i]).sum();
    let degenerate = vectors.iter().all(|v| v == &vectors[0]);
    let (values, vecs) = symmetric_eigen(&cov, d);
    let mut components: Vec<Vec<f64>> = (0..target_dim).map(|r| vecs[r * d..(r + 1) * d].to_vec()).collect();
    for c in &mut components {
        let lead = c.iter().copied().fold(0.0f64, |best, x| if libm::fabs(x) > libm::fabs(best) { x } else { best });
        if lead < 0.0 {
            c.iter_mut().for_each(|x| *x = -*x);
        }
    }
    let projected = vectors
        .iter()
        .map(|v| {
            if degenerate {
                return vec![0.0; target_dim];
            }
            components
                .iter()
                .map(|c| c.iter().zip(v).zip(&mean).map(|((ci, x), m)| ci * (x - m)).sum())
                .collect()
        })
        .collect();
    let captured: f64 = values[..target_dim].iter().map(|v| v.max(0.0)).sum();
    Ok(Reduction {
        vectors: projected,
        captured_variance_ratio: if total > 0.0 { captured / total } else { 0.0 },
        degenerate,
        mean,
        components,
    })
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn distinct_count(vectors: &[Vec<f64>]) -> usize {
    let mut keys: Vec<Vec<u64>> = vectors.iter().map(|v| v.iter().map(|x| (x + 0.0).to_bits()).collect()).collect();
    keys.sort_unstable();
    keys.dedup();
    keys.len()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterModel {
    pub k: usize,
    pub centroids: Vec<Vec<f64>>,
    /// Cluster of each input vector, in input order.
    pub assignment: Vec<usize>,
    pub inertia: f64,
    pub seed: u64,
    /// Inertia after each assignment step.
    pub inertia_history: Vec<f64>,
    pub iterations: usize,
}

impl ClusterModel {
    pub fn sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.k];
        for &a in &self.assignment {
            sizes[a] += 1;
        }
        sizes
    }
}

/// Nearest centroid and its squared distance; ties go to the lower index.
fn nearest(v: &[f64], centroids: &[Vec<f64>]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (i, c) in centroids.iter().enumerate() {
        let d = sq_dist(v, c);
        if d < best.1 {
            best = (i, d);
        }
    }
    best
}

fn plus_plus_init(vectors: &[Vec<f64>], k: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let n = vectors.len();
    let mut centroids = Vec::with_capacity(k);
    centroids.push(vectors[rng.random_range(0..n)].clone());
    let mut d2: Vec<f64> = vectors.iter().map(|v| sq_dist(v, &centroids[0])).collect();
    while centroids.len() < k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let mut target = rng.random::<f64>() * total;
            let mut chosen = None;
            for (i, &w) in d2.iter().enumerate() {
                if w > 0.0 {
                    chosen = Some(i);
                    if target < w {
                        break;
                    }
                    target -= w;
                }
            }
            chosen.expect("positive total implies a positive weight")
        } else {
            rng.random_range(0..n)
        };
        let c = vectors[pick].clone();
        for (w, v) in d2.iter_mut().zip(vectors) {
            *w = w.min(sq_dist(v, &c));
        }
        centroids.push(c);
    }
    centroids
}

/// k-means++ seeding followed by Lloyd iterations until the assignment stops
/// changing or `max_iters` assignment steps have run.
///
/// A cluster left empty by an update is re-seeded at the point farthest from
/// its own centroid.
pub fn kmeans_fit(vectors: &[Vec<f64>], k: usize, seed: u64, max_iters: usize) -> Result<ClusterModel, ClusterError> {
    if k == 0 {
        return Err(ClusterError::ZeroK);
    }
    let dim = check_matrix(vectors)?;
    let distinct = distinct_count(vectors);
    if k > distinct {
        return Err(ClusterError::KTooLarge { k, distinct });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centroids = plus_plus_init(vectors, k, &mut rng);
    let mut assignment: Vec<usize> = Vec::new();
    let mut history = Vec::new();
    let mut iterations = 0;
    let max_iters = max_iters.max(1);
    loop {
        let mut inertia = 0.0;
        let mut dists = Vec::with_capacity(vectors.len());
        let next: Vec<usize> = vectors
            .iter()
            .map(|v| {
                let (c, d) = nearest(v, &centroids);
                inertia += d;
                dists.push(d);
                c
            })
            .collect();
        iterations += 1;
        history.push(inertia);
        let converged = next == assignment;
        assignment = next;
        if converged || iterations >= max_iters {
            break;
        }
        // update step
        let mut sums = vec![vec![0.0; dim]; k];
        let mut counts = vec![0usize; k];
        for (v, &a) in vectors.iter().zip(&assignment) {
            counts[a] += 1;
            for (s, x) in sums[a].iter_mut().zip(v) {
                *s += x;
            }
        }
        let mut taken: Vec<usize> = Vec::new();
        for c in 0..k {
            if counts[c] > 0 {
                centroids[c] = sums[c].iter().map(|s| s / counts[c] as f64).collect();
            } else {
                let far = (0..vectors.len())
                    .filter(|i| !taken.contains(i))
                    .max_by(|&i, &j| dists[i].total_cmp(&dists[j]).then(j.cmp(&i)))
                    .expect("k <= distinct vectors");
                taken.push(far);
                centroids[c] = vectors[far].clone();
            }
        }
    }
    Ok(ClusterModel {
        k,
        centroids,
        inertia: *history.last().expect("at least one step"),
        assignment,
        seed,
        inertia_history: history,
        iterations,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplingPlan {
    pub cap_factor: f64,
    pub seed: u64,
    /// Per-cluster cap, `ceil(cap_factor * N / k)`.
    pub cap: usize,
    pub per_cluster_quota: Vec<usize>,
    /// Indices of kept vectors, ascending.
    pub selected: Vec<usize>,
}

/// Caps every cluster at `ceil(cap_factor * N / k)` members, sampling capped
/// clusters uniformly without replacement.
pub fn balanced_downsample(assignment: &[usize], k: usize, cap_factor: f64, seed: u64) -> SamplingPlan {
    let n = assignment.len();
    let mut members: Vec<Vec<usize>> = vec![Vec::new(); k];
    for (i, &a) in assignment.iter().enumerate() {
        members[a].push(i);
    }
    let raw = cap_factor * n as f64 / k.max(1) as f64;
    let cap = if raw.is_finite() && raw < n as f64 {
        libm::ceil(raw - 1e-9).max(0.0) as usize
    } else {
        n
    };
    let mut quotas = Vec::with_capacity(k);
    let mut selected = Vec::new();
    for (c, m) in members.iter().enumerate() {
        let quota = m.len().min(cap);
        quotas.push(quota);
        if quota == m.len() {
            selected.extend_from_slice(m);
        } else {
            let mut rng = ChaCha8Rng::seed_from_u64(mix64(seed ^ mix64(c as u64 + 1)));
            selected.extend(sample(&mut rng, m.len(), quota).into_iter().map(|j| m[j]));
        }
    }
    selected.sort_unstable();
    SamplingPlan {
        cap_factor,
        seed,
        cap,
        per_cluster_quota: quotas,
        selected,
    }
}
