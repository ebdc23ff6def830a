//! Hierarchical agglomerative clustering.
//!
//! [`linkage`] always merges the globally closest pair of active clusters,
//! keyed by `(distance, min id, max id)`, and updates inter-cluster distances
//! with the Lance-Williams recurrences. A per-cluster nearest-neighbour cache
//! keeps the search linear per step in the common case while the distance
//! matrix stays `O(n^2)`.
//!
//! Cluster ids follow the usual linkage-matrix convention: leaves are
//! `0..n`, the cluster created by merge `t` gets id `n + t`.

use std::cmp::Ordering;
use std::fmt;
use std::str::FromStr;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DistanceMetric {
    Euclidean,
    /// `1 - cos(x, y)`; any pair involving a zero vector is at distance 1.
    Cosine,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Linkage {
    Single,
    Complete,
    Average,
    /// Requires [`DistanceMetric::Euclidean`].
    Ward,
}

impl Linkage {
    pub const ALL: [Linkage; 4] = [Linkage::Single, Linkage::Complete, Linkage::Average, Linkage::Ward];
}

impl DistanceMetric {
    pub const ALL: [DistanceMetric; 2] = [DistanceMetric::Euclidean, DistanceMetric::Cosine];
}

impl fmt::Display for Linkage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Linkage::Single => "single",
            Linkage::Complete => "complete",
            Linkage::Average => "average",
            Linkage::Ward => "ward",
        })
    }
}

impl fmt::Display for DistanceMetric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DistanceMetric::Euclidean => "euclidean",
            DistanceMetric::Cosine => "cosine",
        })
    }
}

impl FromStr for Linkage {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "single" => Ok(Linkage::Single),
            "complete" => Ok(Linkage::Complete),
            "average" => Ok(Linkage::Average),
            "ward" => Ok(Linkage::Ward),
            other => Err(Error::Config(format!("unknown linkage `{other}`"))),
        }
    }
}

impl FromStr for DistanceMetric {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "euclidean" => Ok(DistanceMetric::Euclidean),
            "cosine" => Ok(DistanceMetric::Cosine),
            other => Err(Error::Config(format!("unknown metric `{other}`"))),
        }
    }
}

/// Checks that a linkage/metric pair is supported.
pub fn check_combination(method: Linkage, metric: DistanceMetric) -> Result<()> {
    if method == Linkage::Ward && metric != DistanceMetric::Euclidean {
        return Err(Error::UnsupportedCombination(format!(
            "ward linkage requires euclidean distance, got {metric}"
        )));
    }
    Ok(())
}

/// One row `[left, right, height, size]` of a linkage matrix.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Merge {
    /// Smaller of the two merged cluster ids.
    pub left: usize,
    pub right: usize,
    pub height: f64,
    pub size: usize,
}

/// Merge history of `n` leaves; exactly `n - 1` rows.
#[derive(Clone, Debug, PartialEq)]
pub struct LinkageMatrix {
    n: usize,
    merges: Vec<Merge>,
}

impl LinkageMatrix {
    /// Validates ids, sizes and row count.
    pub fn new(n: usize, merges: Vec<Merge>) -> Result<Self> {
        if n < 2 || merges.len() != n - 1 {
            return Err(Error::DegenerateInput(format!(
                "{} merges for {n} leaves",
                merges.len()
            )));
        }
        let mut sizes = vec![1usize; n];
        let mut used = vec![false; 2 * n - 1];
        for (t, m) in merges.iter().enumerate() {
            let next = n + t;
            for id in [m.left, m.right] {
                if id >= next || used[id] {
                    return Err(Error::DegenerateInput(format!(
                        "merge {t} reuses or forward-references id {id}"
                    )));
                }
                used[id] = true;
            }
            let size = sizes[m.left] + sizes[m.right];
            if size != m.size || m.height.is_nan() || m.height < 0.0 {
                return Err(Error::DegenerateInput(format!(
                    "merge {t} has inconsistent size or height"
                )));
            }
            sizes.push(size);
        }
        Ok(LinkageMatrix { n, merges })
    }

    /// Leaf count.
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn merges(&self) -> &[Merge] {
        &self.merges
    }

    pub fn heights(&self) -> Vec<f64> {
        self.merges.iter().map(|m| m.height).collect()
    }

    /// Rows as `[left, right, height, size]`.
    pub fn to_rows(&self) -> Vec<[f64; 4]> {
        self.merges
            .iter()
            .map(|m| [m.left as f64, m.right as f64, m.height, m.size as f64])
            .collect()
    }
}

fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let (mut dot, mut na, mut nb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    if na == 0.0 || nb == 0.0 {
        return 1.0;
    }
    // Rounding can push the cosine slightly past 1.
    (1.0 - dot / (na.sqrt() * nb.sqrt())).max(0.0)
}

/// Symmetric `n x n` distance matrix with zero diagonal.
pub fn pairwise_distances(x: &Array2<f64>, metric: DistanceMetric) -> Array2<f64> {
    let n = x.nrows();
    let x = x.as_standard_layout();
    let rows: Vec<&[f64]> = x
        .rows()
        .into_iter()
        .map(|r| r.to_slice().expect("standard layout"))
        .collect();
    let mut out = Array2::zeros((n, n));
    for i in 0..n {
        for j in (i + 1)..n {
            let d = match metric {
                DistanceMetric::Euclidean => euclidean(rows[i], rows[j]),
                DistanceMetric::Cosine => cosine(rows[i], rows[j]),
            };
            out[[i, j]] = d;
            out[[j, i]] = d;
        }
    }
    out
}

/// Total order on candidate merges: distance, then the `(min id, max id)`
/// pair lexicographically.
#[inline]
fn candidate_cmp(da: f64, a: (usize, usize), db: f64, b: (usize, usize)) -> Ordering {
    da.total_cmp(&db).then_with(|| a.cmp(&b))
}

#[inline]
fn id_pair(a: usize, b: usize) -> (usize, usize) {
    if a < b {
        (a, b)
    } else {
        (b, a)
    }
}

struct Workspace {
    /// Pairwise cluster dissimilarities indexed by slot; squared for Ward.
    dist: Vec<f64>,
    n: usize,
    id: Vec<usize>,
    size: Vec<usize>,
    active: Vec<bool>,
    nn: Vec<usize>,
}

impl Workspace {
    #[inline]
    fn d(&self, i: usize, j: usize) -> f64 {
        self.dist[i * self.n + j]
    }

    #[inline]
    fn set(&mut self, i: usize, j: usize, v: f64) {
        self.dist[i * self.n + j] = v;
        self.dist[j * self.n + i] = v;
    }

    #[inline]
    fn better(&self, i: usize, a: usize, b: usize) -> bool {
        candidate_cmp(
            self.d(i, a),
            id_pair(self.id[i], self.id[a]),
            self.d(i, b),
            id_pair(self.id[i], self.id[b]),
        ) == Ordering::Less
    }

    fn refresh_nn(&mut self, i: usize) {
        let mut best = usize::MAX;
        for j in 0..self.n {
            if j == i || !self.active[j] {
                continue;
            }
            if best == usize::MAX || self.better(i, j, best) {
                best = j;
            }
        }
        self.nn[i] = best;
    }
}

/// Agglomerative clustering of the rows of `x`.
pub fn linkage(x: &Array2<f64>, method: Linkage, metric: DistanceMetric) -> Result<LinkageMatrix> {
    let n = x.nrows();
    if n < 2 {
        return Err(Error::DegenerateInput(format!(
            "linkage needs at least 2 points, got {n}"
        )));
    }
    check_combination(method, metric)?;
    let mut dist = pairwise_distances(x, metric).into_raw_vec_and_offset().0;
    if method == Linkage::Ward {
        dist.iter_mut().for_each(|v| *v *= *v);
    }

    let mut ws = Workspace {
        dist,
        n,
        id: (0..n).collect(),
        size: vec![1; n],
        active: vec![true; n],
        nn: vec![usize::MAX; n],
    };
    for i in 0..n {
        ws.refresh_nn(i);
    }

    let mut merges = Vec::with_capacity(n - 1);
    for t in 0..(n - 1) {
        // Closest active pair.
        let mut a = usize::MAX;
        for i in 0..n {
            if !ws.active[i] {
                continue;
            }
            if a == usize::MAX {
                a = i;
                continue;
            }
            let (bi, ba) = (ws.nn[i], ws.nn[a]);
            if candidate_cmp(
                ws.d(i, bi),
                id_pair(ws.id[i], ws.id[bi]),
                ws.d(a, ba),
                id_pair(ws.id[a], ws.id[ba]),
            ) == Ordering::Less
            {
                a = i;
            }
        }
        let b = ws.nn[a];
        let raw = ws.d(a, b);
        let height = if method == Linkage::Ward { raw.sqrt() } else { raw };
        let (size_a, size_b) = (ws.size[a], ws.size[b]);
        let (left, right) = id_pair(ws.id[a], ws.id[b]);
        merges.push(Merge {
            left,
            right,
            height,
            size: size_a + size_b,
        });

        // The merged cluster lives in slot `a`; slot `b` retires.
        ws.active[b] = false;
        let (fa, fb) = (size_a as f64, size_b as f64);
        for k in 0..n {
            if !ws.active[k] || k == a {
                continue;
            }
            let (dak, dbk) = (ws.d(a, k), ws.d(b, k));
            let updated = match method {
                Linkage::Single => dak.min(dbk),
                Linkage::Complete => dak.max(dbk),
                Linkage::Average => (fa * dak + fb * dbk) / (fa + fb),
                Linkage::Ward => {
                    let fk = ws.size[k] as f64;
                    ((fa + fk) * dak + (fb + fk) * dbk - fk * raw) / (fa + fb + fk)
                }
            };
            ws.set(a, k, updated.max(0.0));
        }
        ws.id[a] = n + t;
        ws.size[a] = size_a + size_b;

        if t + 2 == n {
            break;
        }
        for k in 0..n {
            if !ws.active[k] || k == a {
                continue;
            }
            if ws.nn[k] == a || ws.nn[k] == b {
                ws.refresh_nn(k);
            } else if ws.better(k, a, ws.nn[k]) {
                ws.nn[k] = a;
            }
        }
        ws.refresh_nn(a);
    }

    LinkageMatrix::new(n, merges)
}

/// Flat clustering from applying every merge with height `<= threshold`.
/// Labels are `0..k` in order of first appearance over the leaves.
pub fn cut_tree(z: &LinkageMatrix, threshold: f64) -> Vec<usize> {
    let n = z.n();
    let mut parent: Vec<usize> = (0..n).collect();
    fn find(parent: &mut [usize], mut i: usize) -> usize {
        while parent[i] != i {
            parent[i] = parent[parent[i]];
            i = parent[i];
        }
        i
    }
    // Any leaf under each cluster id stands in for the cluster.
    let mut representative: Vec<usize> = (0..n).collect();
    for m in z.merges() {
        let (ra, rb) = (representative[m.left], representative[m.right]);
        representative.push(ra);
        if m.height <= threshold {
            let (pa, pb) = (find(&mut parent, ra), find(&mut parent, rb));
            if pa != pb {
                parent[pb] = pa;
            }
        }
    }
    relabel_first_appearance(&(0..n).map(|i| find(&mut parent, i)).collect::<Vec<_>>())
}

/// Maps arbitrary labels to `0..k` in order of first appearance.
pub fn relabel_first_appearance(labels: &[usize]) -> Vec<usize> {
    let mut seen = std::collections::HashMap::new();
    labels
        .iter()
        .map(|&l| {
            let next = seen.len();
            *seen.entry(l).or_insert(next)
        })
        .collect()
}
