//! Partitioners compared against induced hypergraphs: uniform random groups,
//! a single all-token edge, and K-Means with an inertia elbow.

use std::fmt;

use ndarray::{Array2, ArrayView1};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::embeddings::{l2_normalize, SentenceInstance};
use crate::error::{Error, Result};
use crate::hac::relabel_first_appearance;
use crate::hypergraph::{induce, InductionConfig};

/// Lloyd iteration cap per K-Means run.
pub const KMEANS_MAX_ITER: usize = 100;
/// Upper end of the elbow sweep, further capped by the token count.
pub const KMEANS_K_MAX: usize = 10;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum Partitioner {
    Induce(InductionConfig),
    /// Uniform label per token over `ceil(n / 4)` groups.
    Random,
    NoClustering,
    KMeansElbow,
}

impl fmt::Display for Partitioner {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Partitioner::Induce(_) => f.write_str("adaptive-hac"),
            Partitioner::Random => f.write_str("random"),
            Partitioner::NoClustering => f.write_str("no-clustering"),
            Partitioner::KMeansElbow => f.write_str("kmeans-elbow"),
        }
    }
}

impl Partitioner {
    /// Flat labels in first-appearance order. `seed` drives the stochastic
    /// baselines and is ignored by the deterministic ones.
    pub fn partition(&self, instance: &SentenceInstance, seed: u64) -> Result<Vec<usize>> {
        let n = instance.len();
        if n == 0 {
            return Err(Error::DegenerateInput(format!(
                "instance {} has no tokens",
                instance.id
            )));
        }
        match self {
            Partitioner::Induce(cfg) => Ok(induce(instance, cfg)?.0.labels().to_vec()),
            Partitioner::NoClustering => Ok(vec![0; n]),
            Partitioner::Random => {
                let groups = n.div_ceil(4);
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let labels: Vec<usize> = (0..n).map(|_| rng.random_range(0..groups)).collect();
                Ok(relabel_first_appearance(&labels))
            }
            Partitioner::KMeansElbow => {
                let x = l2_normalize(&instance.embeddings);
                Ok(kmeans_elbow(&x, seed)?.labels)
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct KMeansFit {
    pub labels: Vec<usize>,
    pub inertia: f64,
    pub iterations: usize,
}

fn sq_dist(a: ArrayView1<f64>, b: ArrayView1<f64>) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// k-means++ seeding. When every point already coincides with a center the
/// remaining centers are drawn uniformly.
fn seed_centers(x: &Array2<f64>, k: usize, rng: &mut ChaCha8Rng) -> Array2<f64> {
    let n = x.nrows();
    let mut centers = Array2::zeros((k, x.ncols()));
    let first = rng.random_range(0..n);
    centers.row_mut(0).assign(&x.row(first));
    let mut closest: Vec<f64> = x.rows().into_iter().map(|r| sq_dist(r, x.row(first))).collect();
    for c in 1..k {
        let total: f64 = closest.iter().sum();
        let pick = if total > 0.0 {
            let mut target = rng.random::<f64>() * total;
            let mut chosen = n - 1;
            for (i, &w) in closest.iter().enumerate() {
                if target < w {
                    chosen = i;
                    break;
                }
                target -= w;
            }
            chosen
        } else {
            rng.random_range(0..n)
        };
        centers.row_mut(c).assign(&x.row(pick));
        for (i, row) in x.rows().into_iter().enumerate() {
            closest[i] = closest[i].min(sq_dist(row, x.row(pick)));
        }
    }
    centers
}

/// Lloyd's algorithm from k-means++ seeds. Empty clusters keep their center.
pub fn kmeans(x: &Array2<f64>, k: usize, rng: &mut ChaCha8Rng) -> Result<KMeansFit> {
    let n = x.nrows();
    if k == 0 || k > n {
        return Err(Error::Config(format!("k-means needs 1 <= k <= {n}, got {k}")));
    }
    let mut centers = seed_centers(x, k, rng);
    let mut labels = vec![usize::MAX; n];
    let mut iterations = 0;
    while iterations < KMEANS_MAX_ITER {
        iterations += 1;
        let mut changed = false;
        for (i, row) in x.rows().into_iter().enumerate() {
            let mut best = (0, f64::INFINITY);
            for (c, center) in centers.rows().into_iter().enumerate() {
                let d = sq_dist(row, center);
                if d < best.1 {
                    best = (c, d);
                }
            }
            if labels[i] != best.0 {
                labels[i] = best.0;
                changed = true;
            }
        }
        if !changed {
            break;
        }
        let mut sums = Array2::<f64>::zeros(centers.raw_dim());
        let mut counts = vec![0usize; k];
        for (row, &l) in x.rows().into_iter().zip(&labels) {
            let mut s = sums.row_mut(l);
            s += &row;
            counts[l] += 1;
        }
        for (c, &count) in counts.iter().enumerate() {
            if count > 0 {
                centers.row_mut(c).assign(&(&sums.row(c) / count as f64));
            }
        }
    }
    let inertia = x
        .rows()
        .into_iter()
        .zip(&labels)
        .map(|(row, &l)| sq_dist(row, centers.row(l)))
        .sum();
    Ok(KMeansFit {
        labels: relabel_first_appearance(&labels),
        inertia,
        iterations,
    })
}

/// Index of the largest `I[K-1] - 2 I[K] + I[K+1]` over interior K, where
/// `inertias[i]` belongs to `K = i + 1`. Fewer than three runs give `K = 1`.
pub fn elbow_k(inertias: &[f64]) -> usize {
    if inertias.len() < 3 {
        return 1;
    }
    let mut best = (2, f64::NEG_INFINITY);
    for k in 2..inertias.len() {
        let second = inertias[k - 2] - 2.0 * inertias[k - 1] + inertias[k];
        if second > best.1 {
            best = (k, second);
        }
    }
    best.0
}

/// Runs K-Means for every `K` in `1..=min(n, 10)` and keeps the elbow.
pub fn kmeans_elbow(x: &Array2<f64>, seed: u64) -> Result<KMeansFit> {
    let k_max = x.nrows().min(KMEANS_K_MAX);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let fits = (1..=k_max)
        .map(|k| kmeans(x, k, &mut rng))
        .collect::<Result<Vec<_>>>()?;
    let inertias: Vec<f64> = fits.iter().map(|f| f.inertia).collect();
    let k = elbow_k(&inertias);
    Ok(fits.into_iter().nth(k - 1).expect("k within the sweep"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn instance(x: Array2<f64>) -> SentenceInstance {
        let tokens = (0..x.nrows()).map(|i| format!("t{i}")).collect();
        SentenceInstance::new("i", tokens, 0, vec![], x).unwrap()
    }

    #[test]
    fn elbow_picks_largest_second_difference() {
        assert_eq!(elbow_k(&[100.0, 10.0, 9.0, 8.5]), 2);
        assert_eq!(elbow_k(&[100.0, 90.0, 5.0, 4.0, 3.5]), 3);
        assert_eq!(elbow_k(&[3.0, 1.0]), 1);
        assert_eq!(elbow_k(&[3.0]), 1);
    }

    #[test]
    fn kmeans_separates_two_blobs() {
        let x = array![[0.0, 0.0], [0.1, 0.0], [5.0, 5.0], [5.1, 5.0], [5.0, 5.1]];
        let fit = kmeans(&x, 2, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        assert_eq!(fit.labels, vec![0, 0, 1, 1, 1]);
        assert!(fit.inertia < 0.05);
        assert!(kmeans(&x, 6, &mut ChaCha8Rng::seed_from_u64(0)).is_err());
    }

    #[test]
    fn duplicate_points_do_not_break_seeding() {
        let x = array![[1.0, 0.0], [1.0, 0.0], [1.0, 0.0]];
        let fit = kmeans(&x, 3, &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
        assert_eq!(fit.inertia, 0.0);
    }

    #[test]
    fn baselines_shapes() {
        let inst = instance(Array2::from_shape_fn((9, 3), |(i, j)| {
            ((i * 7 + j * 3) % 5) as f64 + 0.5
        }));
        assert_eq!(Partitioner::NoClustering.partition(&inst, 0).unwrap(), vec![0; 9]);
        let random = Partitioner::Random.partition(&inst, 3).unwrap();
        assert_eq!(random.len(), 9);
        assert!(random.iter().all(|&l| l < 3));
        assert_eq!(random, Partitioner::Random.partition(&inst, 3).unwrap());
        let km = Partitioner::KMeansElbow.partition(&inst, 1).unwrap();
        assert_eq!(km, Partitioner::KMeansElbow.partition(&inst, 1).unwrap());
    }
}
