//! Cluster-quality and classification scores.

use std::collections::HashMap;

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hac::{pairwise_distances, relabel_first_appearance, DistanceMetric};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClusterQuality {
    pub silhouette: f64,
    pub davies_bouldin: f64,
}

fn check_lengths(a: usize, b: usize, what: &str) -> Result<()> {
    if a != b {
        return Err(Error::Shape(format!("{what}: lengths {a} and {b} differ")));
    }
    Ok(())
}

/// Mean silhouette under Euclidean distance. Points in singleton clusters
/// score 0. Defined for `2 <= k <= n - 1` clusters.
pub fn silhouette(x: &Array2<f64>, labels: &[usize]) -> Result<f64> {
    let n = x.nrows();
    check_lengths(n, labels.len(), "silhouette")?;
    let labels = relabel_first_appearance(labels);
    let k = labels.iter().max().map_or(0, |m| m + 1);
    if k < 2 || k + 1 > n {
        return Err(Error::Domain(format!(
            "silhouette needs 2..={} clusters, got {k}",
            n.saturating_sub(1)
        )));
    }
    let dist = pairwise_distances(x, DistanceMetric::Euclidean);
    let mut counts = vec![0usize; k];
    labels.iter().for_each(|&l| counts[l] += 1);

    let mut total = 0.0;
    let mut sums = vec![0.0; k];
    for i in 0..n {
        if counts[labels[i]] == 1 {
            continue;
        }
        sums.iter_mut().for_each(|s| *s = 0.0);
        for j in 0..n {
            sums[labels[j]] += dist[[i, j]];
        }
        let own = labels[i];
        let a = sums[own] / (counts[own] - 1) as f64;
        let b = (0..k)
            .filter(|&c| c != own)
            .map(|c| sums[c] / counts[c] as f64)
            .fold(f64::INFINITY, f64::min);
        let denom = a.max(b);
        if denom > 0.0 {
            total += (b - a) / denom;
        }
    }
    Ok(total / n as f64)
}

fn centroids(x: &Array2<f64>, labels: &[usize], k: usize) -> (Vec<Array1<f64>>, Vec<usize>) {
    let mut sums = vec![Array1::zeros(x.ncols()); k];
    let mut counts = vec![0usize; k];
    for (row, &l) in x.rows().into_iter().zip(labels) {
        sums[l] += &row;
        counts[l] += 1;
    }
    for (s, &c) in sums.iter_mut().zip(&counts) {
        *s /= c as f64;
    }
    (sums, counts)
}

fn dist(a: ndarray::ArrayView1<f64>, b: ndarray::ArrayView1<f64>) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Mean over clusters of the worst `(s_i + s_j) / d(c_i, c_j)`, with `s` the
/// mean distance to the centroid. Needs at least two clusters.
pub fn davies_bouldin(x: &Array2<f64>, labels: &[usize]) -> Result<f64> {
    check_lengths(x.nrows(), labels.len(), "davies_bouldin")?;
    let labels = relabel_first_appearance(labels);
    let k = labels.iter().max().map_or(0, |m| m + 1);
    if k < 2 {
        return Err(Error::Domain(format!("davies-bouldin needs >= 2 clusters, got {k}")));
    }
    let (centers, counts) = centroids(x, &labels, k);
    let mut spread = vec![0.0; k];
    for (row, &l) in x.rows().into_iter().zip(&labels) {
        spread[l] += dist(row, centers[l].view());
    }
    spread.iter_mut().zip(&counts).for_each(|(s, &c)| *s /= c as f64);

    let mut total = 0.0;
    for i in 0..k {
        let worst = (0..k)
            .filter(|&j| j != i)
            .map(|j| {
                let sep = dist(centers[i].view(), centers[j].view());
                let num = spread[i] + spread[j];
                if sep > 0.0 {
                    num / sep
                } else if num == 0.0 {
                    0.0
                } else {
                    f64::INFINITY
                }
            })
            .fold(0.0, f64::max);
        total += worst;
    }
    Ok(total / k as f64)
}

pub fn cluster_quality(x: &Array2<f64>, labels: &[usize]) -> Result<ClusterQuality> {
    Ok(ClusterQuality {
        silhouette: silhouette(x, labels)?,
        davies_bouldin: davies_bouldin(x, labels)?,
    })
}

pub fn accuracy(preds: &[usize], labels: &[usize]) -> Result<f64> {
    check_lengths(preds.len(), labels.len(), "accuracy")?;
    if labels.is_empty() {
        return Err(Error::DegenerateInput("accuracy of zero predictions".into()));
    }
    let hits = preds.iter().zip(labels).filter(|(p, l)| p == l).count();
    Ok(hits as f64 / labels.len() as f64)
}

/// Unweighted mean of per-class F1 over classes that occur in either the
/// predictions or the gold labels.
pub fn macro_f1(preds: &[usize], labels: &[usize], num_classes: usize) -> Result<f64> {
    check_lengths(preds.len(), labels.len(), "macro_f1")?;
    let mut tp = vec![0usize; num_classes];
    let mut fp = vec![0usize; num_classes];
    let mut fn_ = vec![0usize; num_classes];
    for (&p, &l) in preds.iter().zip(labels) {
        if p >= num_classes || l >= num_classes {
            return Err(Error::Shape(format!("class index outside [0, {num_classes})")));
        }
        if p == l {
            tp[p] += 1;
        } else {
            fp[p] += 1;
            fn_[l] += 1;
        }
    }
    let scores: Vec<f64> = (0..num_classes)
        .filter(|&c| tp[c] + fp[c] + fn_[c] > 0)
        .map(|c| {
            let denom = 2 * tp[c] + fp[c] + fn_[c];
            2.0 * tp[c] as f64 / denom as f64
        })
        .collect();
    if scores.is_empty() {
        return Err(Error::DegenerateInput("macro-F1 over no classes".into()));
    }
    Ok(scores.iter().sum::<f64>() / scores.len() as f64)
}

fn comb2(v: usize) -> f64 {
    let v = v as f64;
    v * (v - 1.0) / 2.0
}

/// Adjusted Rand index from the contingency table. Two identical trivial
/// partitions (or fewer than two items) score 1.
pub fn adjusted_rand_index(a: &[usize], b: &[usize]) -> Result<f64> {
    check_lengths(a.len(), b.len(), "adjusted_rand_index")?;
    let n = a.len();
    let mut left: HashMap<usize, usize> = HashMap::new();
    let mut right: HashMap<usize, usize> = HashMap::new();
    let mut joint: HashMap<(usize, usize), usize> = HashMap::new();
    for (&x, &y) in a.iter().zip(b) {
        *left.entry(x).or_default() += 1;
        *right.entry(y).or_default() += 1;
        *joint.entry((x, y)).or_default() += 1;
    }
    let total = comb2(n);
    if total == 0.0 {
        return Ok(1.0);
    }
    let index: f64 = joint.values().copied().map(comb2).sum();
    let sum_a: f64 = left.values().copied().map(comb2).sum();
    let sum_b: f64 = right.values().copied().map(comb2).sum();
    let expected = sum_a * sum_b / total;
    let max_index = 0.5 * (sum_a + sum_b);
    let denom = max_index - expected;
    if denom == 0.0 {
        return Ok(if index == expected { 1.0 } else { 0.0 });
    }
    Ok((index - expected) / denom)
}

/// Min, mean and max of the finite entries, or `None` if there are none.
pub fn summarize(values: &[f64]) -> Option<(f64, f64, f64)> {
    let finite: Vec<f64> = values.iter().copied().filter(|v| v.is_finite()).collect();
    if finite.is_empty() {
        return None;
    }
    let min = finite.iter().copied().fold(f64::INFINITY, f64::min);
    let max = finite.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    Some((min, finite.iter().sum::<f64>() / finite.len() as f64, max))
}
