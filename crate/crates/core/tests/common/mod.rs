//! Brute-force reference implementations shared by the integration tests.
//! Each one recomputes from raw points by definition and never calls the
//! library routine it checks.
#![allow(dead_code)]

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use hgabsa::{DistanceMetric, Linkage};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_points(rng: &mut ChaCha8Rng, n: usize, d: usize) -> Array2<f64> {
    Array2::from_shape_fn((n, d), |_| rng.random_range(-3.0..3.0))
}

pub fn euclid(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

fn cosine_distance(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    (1.0 - dot / (na * nb)).max(0.0)
}

fn rows(x: &Array2<f64>) -> Vec<Vec<f64>> {
    x.rows().into_iter().map(|r| r.to_vec()).collect()
}

/// Cluster-to-cluster dissimilarity straight from the member points.
fn cluster_distance(pts: &[Vec<f64>], a: &[usize], b: &[usize], method: Linkage, metric: DistanceMetric) -> f64 {
    let point = |i: usize, j: usize| match metric {
        DistanceMetric::Euclidean => euclid(&pts[i], &pts[j]),
        DistanceMetric::Cosine => cosine_distance(&pts[i], &pts[j]),
    };
    let pairs = || a.iter().flat_map(|&i| b.iter().map(move |&j| (i, j)));
    match method {
        Linkage::Single => pairs().map(|(i, j)| point(i, j)).fold(f64::INFINITY, f64::min),
        Linkage::Complete => pairs().map(|(i, j)| point(i, j)).fold(0.0, f64::max),
        Linkage::Average => pairs().map(|(i, j)| point(i, j)).sum::<f64>() / (a.len() * b.len()) as f64,
        Linkage::Ward => {
            let centroid = |c: &[usize]| -> Vec<f64> {
                let d = pts[0].len();
                (0..d)
                    .map(|k| c.iter().map(|&i| pts[i][k]).sum::<f64>() / c.len() as f64)
                    .collect()
            };
            let (na, nb) = (a.len() as f64, b.len() as f64);
            (2.0 * na * nb / (na + nb)).sqrt() * euclid(&centroid(a), &centroid(b))
        }
    }
}

/// `(left, right, height, size)` per merge, cubic time. Ties go to the
/// smallest `(min id, max id)` pair.
pub fn naive_linkage(x: &Array2<f64>, method: Linkage, metric: DistanceMetric) -> Vec<(usize, usize, f64, usize)> {
    let pts = rows(x);
    let n = pts.len();
    let mut clusters: Vec<(usize, Vec<usize>)> = (0..n).map(|i| (i, vec![i])).collect();
    let mut out = Vec::new();
    for t in 0..n - 1 {
        let mut best: Option<(f64, usize, usize, usize, usize)> = None;
        for p in 0..clusters.len() {
            for q in p + 1..clusters.len() {
                let dist = cluster_distance(&pts, &clusters[p].1, &clusters[q].1, method, metric);
                let (lo, hi) = {
                    let (a, b) = (clusters[p].0, clusters[q].0);
                    (a.min(b), a.max(b))
                };
                let better = match best {
                    None => true,
                    Some((bd, blo, bhi, _, _)) => (dist, lo, hi) < (bd, blo, bhi),
                };
                if better {
                    best = Some((dist, lo, hi, p, q));
                }
            }
        }
        let (dist, lo, hi, p, q) = best.expect("two clusters remain");
        let mut members = clusters[p].1.clone();
        members.extend(&clusters[q].1);
        out.push((lo, hi, dist, members.len()));
        clusters.remove(q);
        clusters.remove(p);
        clusters.push((n + t, members));
    }
    out
}

/// Mean silhouette straight from the definition; singletons score 0.
pub fn naive_silhouette(x: &Array2<f64>, labels: &[usize]) -> f64 {
    let pts = rows(x);
    let n = pts.len();
    let mut total = 0.0;
    for i in 0..n {
        let own: Vec<usize> = (0..n).filter(|&j| j != i && labels[j] == labels[i]).collect();
        if own.is_empty() {
            continue;
        }
        let a = own.iter().map(|&j| euclid(&pts[i], &pts[j])).sum::<f64>() / own.len() as f64;
        let mut others: Vec<usize> = labels.iter().copied().filter(|&l| l != labels[i]).collect();
        others.sort_unstable();
        others.dedup();
        let b = others
            .iter()
            .map(|&c| {
                let m: Vec<usize> = (0..n).filter(|&j| labels[j] == c).collect();
                m.iter().map(|&j| euclid(&pts[i], &pts[j])).sum::<f64>() / m.len() as f64
            })
            .fold(f64::INFINITY, f64::min);
        total += (b - a) / a.max(b);
    }
    total / n as f64
}

pub fn naive_davies_bouldin(x: &Array2<f64>, labels: &[usize]) -> f64 {
    let pts = rows(x);
    let d = pts[0].len();
    let mut ids: Vec<usize> = labels.to_vec();
    ids.sort_unstable();
    ids.dedup();
    let members: Vec<Vec<usize>> = ids
        .iter()
        .map(|&c| (0..pts.len()).filter(|&i| labels[i] == c).collect())
        .collect();
    let centers: Vec<Vec<f64>> = members
        .iter()
        .map(|m| {
            (0..d)
                .map(|k| m.iter().map(|&i| pts[i][k]).sum::<f64>() / m.len() as f64)
                .collect()
        })
        .collect();
    let spread: Vec<f64> = members
        .iter()
        .zip(&centers)
        .map(|(m, c)| m.iter().map(|&i| euclid(&pts[i], c)).sum::<f64>() / m.len() as f64)
        .collect();
    let k = ids.len();
    (0..k)
        .map(|i| {
            (0..k)
                .filter(|&j| j != i)
                .map(|j| (spread[i] + spread[j]) / euclid(&centers[i], &centers[j]))
                .fold(f64::NEG_INFINITY, f64::max)
        })
        .sum::<f64>()
        / k as f64
}

/// ARI by enumerating every pair of items.
pub fn pair_counting_ari(a: &[usize], b: &[usize]) -> f64 {
    let n = a.len();
    let (mut both, mut only_a, mut only_b, mut neither) = (0.0, 0.0, 0.0, 0.0);
    for i in 0..n {
        for j in i + 1..n {
            match (a[i] == a[j], b[i] == b[j]) {
                (true, true) => both += 1.0,
                (true, false) => only_a += 1.0,
                (false, true) => only_b += 1.0,
                (false, false) => neither += 1.0,
            }
        }
    }
    let total = both + only_a + only_b + neither;
    let same_a = both + only_a;
    let same_b = both + only_b;
    let expected = same_a * same_b / total;
    let max = 0.5 * (same_a + same_b);
    if max == expected {
        return 1.0;
    }
    (both - expected) / (max - expected)
}

/// Population standard deviation, two-pass.
pub fn pop_std(v: &[f64]) -> f64 {
    let m = v.iter().sum::<f64>() / v.len() as f64;
    (v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / v.len() as f64).sqrt()
}

/// Random model, input and partition for one gradient-check draw.
pub fn gradient_problem(seed: u64) -> (Array2<f64>, hgabsa::Hypergraph, hgabsa::hypergat::HyperGatParams, usize) {
    let mut r = rng(seed);
    let n = r.random_range(2..=9);
    let d = r.random_range(2..=5);
    let heads = r.random_range(1..=3);
    let dh = r.random_range(1..=4);
    let classes = r.random_range(2..=4);
    let x = random_points(&mut r, n, d);
    let labels: Vec<usize> = (0..n).map(|_| r.random_range(0..3)).collect();
    let hg = hgabsa::Hypergraph::from_labels(&labels).unwrap();
    let params = hgabsa::hypergat::HyperGatParams::init(d, heads, dh, classes, &mut r).unwrap();
    let label = r.random_range(0..classes);
    (x, hg, params, label)
}

/// Largest relative error between the analytic gradient and central finite
/// differences over every parameter entry. With `dropout > 0` each loss
/// evaluation re-seeds the mask stream, so the masks are fixed.
pub fn gradient_check(seed: u64, beta: f64, dropout: f64) -> f64 {
    use hgabsa::hypergat::{backward, forward_train, loss};
    let (x, hg, params, label) = gradient_problem(seed);
    let mask_seed = seed ^ 0xd20f;
    let objective = |p: &hgabsa::hypergat::HyperGatParams| {
        let trace = forward_train(&x, &hg, p, dropout, &mut rng(mask_seed)).unwrap();
        loss(&trace, label, p, beta).unwrap()
    };
    let trace = forward_train(&x, &hg, &params, dropout, &mut rng(mask_seed)).unwrap();
    let grads = backward(&trace, &hg, &params, label, beta).unwrap();
    let analytic: Vec<f64> = grads.tensors().into_iter().flatten().copied().collect();

    let h = 1e-5;
    let mut worst: f64 = 0.0;
    let mut probe = params.clone();
    let mut k = 0;
    for t in 0..params.tensors().len() {
        for i in 0..params.tensors()[t].len() {
            let orig = params.tensors()[t][i];
            probe.tensors_mut()[t][i] = orig + h;
            let up = objective(&probe);
            probe.tensors_mut()[t][i] = orig - h;
            let down = objective(&probe);
            probe.tensors_mut()[t][i] = orig;
            let numeric = (up - down) / (2.0 * h);
            let a = analytic[k];
            worst = worst.max((a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-6));
            k += 1;
        }
    }
    worst
}

/// Caterpillar dendrogram whose merge heights are `heights`, sorted.
pub fn chain(heights: &[f64]) -> hgabsa::LinkageMatrix {
    let mut heights = heights.to_vec();
    heights.sort_by(f64::total_cmp);
    let n = heights.len() + 1;
    let merges = heights
        .iter()
        .enumerate()
        .map(|(t, &h)| {
            let prev = if t == 0 { 0 } else { n + t - 1 };
            hgabsa::Merge {
                left: prev.min(t + 1),
                right: prev.max(t + 1),
                height: h,
                size: t + 2,
            }
        })
        .collect();
    hgabsa::LinkageMatrix::new(n, merges).unwrap()
}
