//! Per-sentence hypergraph induction and hypergraph attention classification.
//!
//! The pipeline takes a token-embedding matrix for each sentence, clusters the
//! tokens with hierarchical agglomerative clustering, picks a per-instance
//! dendrogram cut with the acceleration-fallback criterion, and turns the
//! resulting flat partition into hyperedges. A small multi-head hypergraph
//! attention network then classifies each instance from its hyperedges.
//!
//! ```text
//! embeddings (n x d) --l2--> linkage Z --cutoff--> labels --> hypergraph H
//!                                                               |
//!                           softmax(W2 * mean_e(concat_h E^h) + b2) <--+
//! ```
//!
//! Module map:
//!
//! * [`embeddings`]: interchange format (JSONL + `HEMB` sidecar), ℓ2
//!   normalization and a planted-cluster synthetic generator.
//! * [`hac`]: pairwise distances, Lance-Williams agglomerative clustering and
//!   tree cutting.
//! * [`cutoff`]: the acceleration-fallback threshold and its fixed-window
//!   ablation variants.
//! * [`hypergraph`]: incidence structure built from a flat partition.
//! * [`hypergat`]: attention heads, pooling, classifier, loss, analytic
//!   gradients, Adam training and checkpoints.
//! * [`metrics`]: silhouette, Davies-Bouldin, ARI, accuracy and macro-F1.
//! * [`harness`]: experiment runners behind the `hgabsa` CLI.

pub mod cutoff;
pub mod embeddings;
mod error;
pub mod hac;
pub mod harness;
pub mod hypergat;
pub mod hypergraph;
pub mod metrics;

pub use cutoff::{apply_strategy, compute_cutoff, CutoffBranch, CutoffConfig, CutoffResult, CutoffStrategy};
pub use embeddings::{l2_normalize, Dataset, SentenceInstance, SyntheticSpec};
pub use error::{Error, Result};
pub use hac::{cut_tree, linkage, pairwise_distances, DistanceMetric, Linkage, LinkageMatrix, Merge};
pub use hypergraph::{induce, Hypergraph, InductionConfig};
