//! Hypergraph over the tokens of one sentence: one hyperedge per cluster of
//! the flat partition, with a dense incidence matrix.

use std::fmt::Write as _;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::cutoff::{apply_strategy, CutoffConfig, CutoffResult, CutoffStrategy};
use crate::embeddings::{l2_normalize, SentenceInstance};
use crate::error::{Error, Result};
use crate::hac::{cut_tree, linkage, relabel_first_appearance, DistanceMetric, Linkage};

#[derive(Clone, Debug, PartialEq)]
pub struct Hypergraph {
    n: usize,
    edges: Vec<Vec<usize>>,
    /// `n x |E|`, `incidence[[v, e]] == 1` iff `v` belongs to edge `e`.
    incidence: Array2<u8>,
    /// Edge index of every node.
    membership: Vec<usize>,
}

impl Hypergraph {
    /// Edges are ordered by first appearance of their label; members ascend.
    pub fn from_labels(labels: &[usize]) -> Result<Self> {
        if labels.is_empty() {
            return Err(Error::DegenerateInput("hypergraph from empty labels".into()));
        }
        let membership = relabel_first_appearance(labels);
        let edge_count = membership.iter().max().map_or(0, |m| m + 1);
        let n = labels.len();
        let mut edges = vec![Vec::new(); edge_count];
        let mut incidence = Array2::zeros((n, edge_count));
        for (v, &e) in membership.iter().enumerate() {
            edges[e].push(v);
            incidence[[v, e]] = 1;
        }
        debug_assert!(incidence
            .rows()
            .into_iter()
            .all(|r| r.iter().map(|&x| x as usize).sum::<usize>() == 1));
        Ok(Hypergraph {
            n,
            edges,
            incidence,
            membership,
        })
    }

    /// Node count.
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn edges(&self) -> &[Vec<usize>] {
        &self.edges
    }

    pub fn incidence(&self) -> &Array2<u8> {
        &self.incidence
    }

    /// Flat cluster label of each node (its edge index).
    pub fn labels(&self) -> &[usize] {
        &self.membership
    }

    /// Same structure with nodes renamed by `perm`: node `v` becomes `perm[v]`.
    pub fn permuted(&self, perm: &[usize]) -> Result<Self> {
        if perm.len() != self.n {
            return Err(Error::Shape(format!(
                "permutation of length {} for {} nodes",
                perm.len(),
                self.n
            )));
        }
        let mut labels = vec![0; self.n];
        for (v, &e) in self.membership.iter().enumerate() {
            labels[perm[v]] = e;
        }
        Hypergraph::from_labels(&labels)
    }
}

/// Everything needed to turn an instance into a hypergraph.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct InductionConfig {
    pub linkage: Linkage,
    pub metric: DistanceMetric,
    pub strategy: CutoffStrategy,
    pub cutoff: CutoffConfig,
}

impl Default for InductionConfig {
    fn default() -> Self {
        InductionConfig {
            linkage: Linkage::Ward,
            metric: DistanceMetric::Euclidean,
            strategy: CutoffStrategy::Dynamic,
            cutoff: CutoffConfig::default(),
        }
    }
}

/// Clusters the ℓ2-normalized embeddings and cuts at the strategy's threshold.
/// A single-token instance becomes one singleton edge without clustering.
pub fn induce(instance: &SentenceInstance, cfg: &InductionConfig) -> Result<(Hypergraph, CutoffResult)> {
    if instance.len() == 1 {
        return Ok((Hypergraph::from_labels(&[0])?, CutoffResult::trivial()));
    }
    let x = l2_normalize(&instance.embeddings);
    let z = linkage(&x, cfg.linkage, cfg.metric)?;
    let cut = apply_strategy(&z, cfg.strategy, &cfg.cutoff)?;
    let labels = cut_tree(&z, cut.delta_elbow);
    Ok((Hypergraph::from_labels(&labels)?, cut))
}

/// One line per edge, `e<k>: tok tok ...`, tokens in index order.
pub fn dump_edges(hg: &Hypergraph, instance: &SentenceInstance) -> Result<String> {
    if instance.tokens.len() != hg.n() {
        return Err(Error::Shape(format!(
            "{} tokens for a hypergraph on {} nodes",
            instance.tokens.len(),
            hg.n()
        )));
    }
    let mut out = String::new();
    for (e, members) in hg.edges().iter().enumerate() {
        let words: Vec<&str> = members.iter().map(|&v| instance.tokens[v].as_str()).collect();
        writeln!(out, "e{e}: {}", words.join(" ")).expect("writing to String");
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn edges_follow_first_appearance() {
        let hg = Hypergraph::from_labels(&[0, 0, 1, 2, 1]).unwrap();
        assert_eq!(hg.edges(), &[vec![0, 1], vec![2, 4], vec![3]]);
        assert_eq!(
            hg.incidence(),
            &array![[1, 0, 0], [1, 0, 0], [0, 1, 0], [0, 0, 1], [0, 1, 0]]
        );
        let hg = Hypergraph::from_labels(&[7, 3, 7]).unwrap();
        assert_eq!(hg.edges(), &[vec![0, 2], vec![1]]);
    }

    #[test]
    fn degenerate_label_sets() {
        let one = Hypergraph::from_labels(&[5, 5, 5, 5]).unwrap();
        assert_eq!(one.incidence(), &Array2::<u8>::ones((4, 1)));
        let distinct = Hypergraph::from_labels(&[2, 1, 0]).unwrap();
        assert_eq!(distinct.incidence(), &Array2::<u8>::eye(3));
        assert!(matches!(Hypergraph::from_labels(&[]), Err(Error::DegenerateInput(_))));
    }

    #[test]
    fn single_token_bypass() {
        let inst = SentenceInstance::new("x", vec!["ok".into()], 0, vec![], array![[0.3, 0.1]]).unwrap();
        let (hg, cut) = induce(&inst, &InductionConfig::default()).unwrap();
        assert_eq!(hg.edges(), &[vec![0]]);
        assert_eq!(cut.r, 0);
    }

    #[test]
    fn constant_heights_fallback_gives_one_edge() {
        // Four points at the corners of a regular tetrahedron: single linkage
        // merges at one constant height.
        let x = array![[1.0, 1.0, 1.0], [1.0, -1.0, -1.0], [-1.0, 1.0, -1.0], [-1.0, -1.0, 1.0]];
        let inst = SentenceInstance::new("t", vec!["a".into(); 4], 0, vec![], x).unwrap();
        let cfg = InductionConfig {
            linkage: Linkage::Single,
            strategy: CutoffStrategy::FallbackOnly,
            cutoff: CutoffConfig {
                rho: 1.0,
                lambda: 2.0,
                ..CutoffConfig::default()
            },
            ..InductionConfig::default()
        };
        let (hg, cut) = induce(&inst, &cfg).unwrap();
        assert!(cut.kappa.iter().all(|k| k.abs() < 1e-12));
        assert_eq!(hg.num_edges(), 1);
    }

    #[test]
    fn dump_format() {
        let inst = SentenceInstance::new(
            "x",
            vec!["service".into(), "good".into(), "slow".into()],
            0,
            vec![0],
            array![[1.0], [1.0], [2.0]],
        )
        .unwrap();
        let hg = Hypergraph::from_labels(&[0, 0, 1]).unwrap();
        let text = dump_edges(&hg, &inst).unwrap();
        assert_eq!(text, "e0: service good\ne1: slow\n");
        assert_eq!(text, dump_edges(&hg, &inst).unwrap());
    }

    #[test]
    fn permutation_relabels_members() {
        let hg = Hypergraph::from_labels(&[0, 0, 1]).unwrap();
        let p = hg.permuted(&[2, 0, 1]).unwrap();
        assert_eq!(p.labels()[2], p.labels()[0]);
        assert_ne!(p.labels()[1], p.labels()[0]);
    }
}
