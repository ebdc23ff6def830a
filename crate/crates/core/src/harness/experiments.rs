//! Grid experiments producing [`ResultRow`]s.

use std::time::Instant;

use serde::Serialize;

use super::{run_jobs, ExperimentKind, ExperimentSpec, Partitioner, ResultRow};
use crate::cutoff::CutoffConfig;
use crate::embeddings::{l2_normalize, Dataset, SentenceInstance};
use crate::error::{Error, Result};
use crate::hac::check_combination;
use crate::hypergat::{split_dataset, train_items, TrainConfig, TrainOutcome, TrainingItem};
use crate::hypergraph::{Hypergraph, InductionConfig};
use crate::metrics::{adjusted_rand_index, davies_bouldin, silhouette, summarize};

/// splitmix64 finalizer; spreads `(seed, stream)` into a per-instance seed.
pub(crate) fn mix(seed: u64, stream: u64) -> u64 {
    let mut z = seed ^ stream.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

const EVAL_STREAM: u64 = 0;
const TRAIN_STREAM: u64 = 1 << 32;

/// Per-instance measurements over the evaluation split.
#[derive(Clone, Debug)]
pub struct Evaluation {
    pub edges: Vec<usize>,
    /// Empty unless every evaluated instance carries planted labels.
    pub ari: Vec<f64>,
    /// `NaN` where the score is undefined for the partition.
    pub silhouette: Vec<f64>,
    pub davies_bouldin: Vec<f64>,
    pub outcome: Option<TrainOutcome>,
}

impl Evaluation {
    fn fill(&self, mut row: ResultRow) -> ResultRow {
        let mean = |v: &[f64]| (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64);
        row.instances = self.edges.len();
        row.mean_edges = mean(&self.edges.iter().map(|&e| e as f64).collect::<Vec<_>>());
        row.ari_mean = mean(&self.ari);
        if let Some((lo, avg, hi)) = summarize(&self.silhouette) {
            (row.silhouette_min, row.silhouette_mean, row.silhouette_max) = (Some(lo), Some(avg), Some(hi));
        }
        if let Some((lo, avg, hi)) = summarize(&self.davies_bouldin) {
            (row.davies_bouldin_min, row.davies_bouldin_mean, row.davies_bouldin_max) = (Some(lo), Some(avg), Some(hi));
        }
        if let Some(eval) = self.outcome.as_ref().and_then(|o| o.last("eval")) {
            row.accuracy = Some(eval.accuracy);
            row.macro_f1 = Some(eval.macro_f1);
        }
        row
    }
}

fn partition_all(
    partitioner: &Partitioner,
    instances: &[SentenceInstance],
    seed: u64,
    stream: u64,
) -> Result<Vec<Vec<usize>>> {
    instances
        .iter()
        .enumerate()
        .map(|(i, inst)| partitioner.partition(inst, mix(seed, stream + i as u64)))
        .collect()
}

fn items(instances: &[SentenceInstance], labels: &[Vec<usize>]) -> Result<Vec<TrainingItem>> {
    instances
        .iter()
        .zip(labels)
        .map(|(inst, l)| {
            Ok(TrainingItem {
                x: inst.embeddings.clone(),
                hg: Hypergraph::from_labels(l)?,
                label: inst.label,
            })
        })
        .collect()
}

/// Splits `dataset` with `train.eval_fraction` and `seed`, partitions the
/// evaluation split and scores it. With `classify`, also trains on the
/// training split (hypergraphs from the same partitioner) with `seed`.
/// An empty evaluation split falls back to the whole dataset.
pub fn evaluate_partitioner(
    partitioner: &Partitioner,
    dataset: &Dataset,
    seed: u64,
    train: &TrainConfig,
    classify: bool,
) -> Result<Evaluation> {
    let (train_set, mut eval_set) = split_dataset(dataset, train.eval_fraction, seed)?;
    if eval_set.is_empty() {
        eval_set = dataset.clone();
    }
    let eval_labels = partition_all(partitioner, &eval_set.instances, seed, EVAL_STREAM)?;

    let mut eval = Evaluation {
        edges: Vec::with_capacity(eval_labels.len()),
        ari: Vec::new(),
        silhouette: Vec::with_capacity(eval_labels.len()),
        davies_bouldin: Vec::with_capacity(eval_labels.len()),
        outcome: None,
    };
    let planted = eval_set.instances.iter().all(|i| i.planted.is_some());
    for (inst, labels) in eval_set.instances.iter().zip(&eval_labels) {
        eval.edges.push(labels.iter().max().map_or(0, |m| m + 1));
        if planted {
            eval.ari.push(adjusted_rand_index(
                labels,
                inst.planted.as_deref().unwrap_or_default(),
            )?);
        }
        let x = l2_normalize(&inst.embeddings);
        eval.silhouette.push(undefined_as_nan(silhouette(&x, labels))?);
        eval.davies_bouldin.push(undefined_as_nan(davies_bouldin(&x, labels))?);
    }

    if classify {
        if train_set.is_empty() {
            return Err(Error::DegenerateInput("no training instances after the split".into()));
        }
        let train_labels = partition_all(partitioner, &train_set.instances, seed, TRAIN_STREAM)?;
        let cfg = TrainConfig { seed, ..train.clone() };
        eval.outcome = Some(train_items(
            &items(&train_set.instances, &train_labels)?,
            &items(&eval_set.instances, &eval_labels)?,
            dataset.dim,
            dataset.num_classes,
            &cfg,
        )?);
    }
    Ok(eval)
}

fn undefined_as_nan(score: Result<f64>) -> Result<f64> {
    match score {
        Err(Error::Domain(_)) => Ok(f64::NAN),
        other => other,
    }
}

fn load_all(spec: &ExperimentSpec) -> Result<Vec<Dataset>> {
    spec.seeds.iter().map(|&s| spec.data.load(s)).collect()
}

/// One job per `(config, seed)`; configs are supplied in output order.
fn run_grid<C: Sync>(
    spec: &ExperimentSpec,
    configs: &[C],
    job: impl Fn(&C, &Dataset, u64) -> Result<ResultRow> + Sync,
) -> Result<Vec<ResultRow>> {
    let data = load_all(spec)?;
    let jobs: Vec<(usize, usize)> = (0..configs.len())
        .flat_map(|c| (0..spec.seeds.len()).map(move |s| (c, s)))
        .collect();
    run_jobs(&jobs, |&(c, s)| job(&configs[c], &data[s], spec.seeds[s]))
}

fn timed_row(
    spec: &ExperimentSpec,
    partitioner: &Partitioner,
    dataset: &Dataset,
    seed: u64,
    row: ResultRow,
) -> Result<ResultRow> {
    let start = Instant::now();
    let eval = evaluate_partitioner(partitioner, dataset, seed, &spec.train, spec.classify)?;
    let mut row = eval.fill(row);
    row.wall_seconds = start.elapsed().as_secs_f64();
    Ok(row)
}

fn induction_row(
    spec: &ExperimentSpec,
    kind: ExperimentKind,
    config: String,
    cfg: InductionConfig,
    dataset: &Dataset,
    seed: u64,
) -> Result<ResultRow> {
    let row = ResultRow::blank(kind, config, seed).describe_induction(&cfg);
    timed_row(spec, &Partitioner::Induce(cfg), dataset, seed, row)
}

/// The eight cutoff strategies (or `spec.strategies`) over all seeds.
pub fn run_cutoff_ablation(spec: &ExperimentSpec) -> Result<Vec<ResultRow>> {
    spec.validate()?;
    run_grid(spec, &spec.strategies, |&strategy, dataset, seed| {
        let cfg = InductionConfig {
            strategy,
            ..spec.induction
        };
        induction_row(spec, ExperimentKind::Cutoff, strategy.to_string(), cfg, dataset, seed)
    })
}

/// Linkage/metric pairs over all seeds. Unsupported pairs become skipped
/// rows carrying the reason.
pub fn run_linkage_grid(spec: &ExperimentSpec) -> Result<Vec<ResultRow>> {
    spec.validate()?;
    run_grid(spec, &spec.linkage_grid, |&(linkage, metric), dataset, seed| {
        let cfg = InductionConfig {
            linkage,
            metric,
            ..spec.induction
        };
        let config = format!("{linkage}+{metric}");
        if let Err(e) = check_combination(linkage, metric) {
            let mut row = ResultRow::blank(ExperimentKind::Linkage, config, seed).describe_induction(&cfg);
            row.skipped_reason = e.to_string();
            return Ok(row);
        }
        induction_row(spec, ExperimentKind::Linkage, config, cfg, dataset, seed)
    })
}

/// Induced hypergraphs against the random, single-edge and K-Means partitions.
pub fn run_baseline_comparison(spec: &ExperimentSpec) -> Result<Vec<ResultRow>> {
    spec.validate()?;
    let methods = [
        Partitioner::Induce(spec.induction),
        Partitioner::Random,
        Partitioner::NoClustering,
        Partitioner::KMeansElbow,
    ];
    run_grid(spec, &methods, |method, dataset, seed| {
        let mut row = ResultRow::blank(ExperimentKind::Baselines, method.to_string(), seed);
        if let Partitioner::Induce(cfg) = method {
            row = row.describe_induction(cfg);
        }
        timed_row(spec, method, dataset, seed, row)
    })
}

/// Lambda sweep at the base rho, then rho sweep at the base lambda.
pub fn run_sensitivity(spec: &ExperimentSpec) -> Result<Vec<ResultRow>> {
    spec.validate()?;
    let base = spec.induction.cutoff;
    let mut configs: Vec<(String, CutoffConfig)> = spec
        .lambdas
        .iter()
        .map(|&lambda| (format!("lambda={lambda}"), CutoffConfig { lambda, ..base }))
        .collect();
    configs.extend(
        spec.rhos
            .iter()
            .map(|&rho| (format!("rho={rho}"), CutoffConfig { rho, ..base })),
    );
    for (_, c) in &configs {
        c.validate()?;
    }
    run_grid(spec, &configs, |(name, cutoff), dataset, seed| {
        let cfg = InductionConfig {
            cutoff: *cutoff,
            ..spec.induction
        };
        induction_row(spec, ExperimentKind::Sensitivity, name.clone(), cfg, dataset, seed)
    })
}

/// One trained model per seed.
#[derive(Clone, Debug, Serialize)]
pub struct TrainRun {
    pub seed: u64,
    pub row: ResultRow,
    #[serde(skip)]
    pub outcome: TrainOutcome,
}

/// Trains with the base induction per seed, always classifying.
pub fn run_train(spec: &ExperimentSpec) -> Result<Vec<TrainRun>> {
    spec.validate()?;
    let data = load_all(spec)?;
    let jobs: Vec<usize> = (0..spec.seeds.len()).collect();
    run_jobs(&jobs, |&s| {
        let seed = spec.seeds[s];
        let start = Instant::now();
        let partitioner = Partitioner::Induce(spec.induction);
        let eval = evaluate_partitioner(&partitioner, &data[s], seed, &spec.train, true)?;
        let row = ResultRow::blank(ExperimentKind::Train, spec.induction.strategy.to_string(), seed)
            .describe_induction(&spec.induction);
        let mut row = eval.fill(row);
        row.wall_seconds = start.elapsed().as_secs_f64();
        Ok(TrainRun {
            seed,
            row,
            outcome: eval.outcome.expect("classification requested"),
        })
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embeddings::SyntheticSpec;
    use crate::harness::DataSource;

    fn small_spec() -> ExperimentSpec {
        ExperimentSpec {
            data: DataSource::Synthetic(SyntheticSpec {
                num_instances: 12,
                ..SyntheticSpec::default()
            }),
            seeds: vec![1, 2],
            classify: false,
            ..ExperimentSpec::default()
        }
    }

    #[test]
    fn mix_spreads_streams() {
        assert_ne!(mix(0, 0), mix(0, 1));
        assert_ne!(mix(0, 1), mix(1, 0));
    }

    #[test]
    fn rows_follow_config_then_seed_order() {
        let rows = run_cutoff_ablation(&small_spec()).unwrap();
        assert_eq!(rows.len(), 16);
        assert_eq!(rows[0].config, "dynamic");
        assert_eq!((rows[0].seed, rows[1].seed), (1, 2));
        assert_eq!(rows[2].config, "fallback");
        assert!(rows.iter().all(|r| r.instances == 3 && r.accuracy.is_none()));
    }

    #[test]
    fn ward_cosine_is_a_skipped_row() {
        let spec = ExperimentSpec {
            linkage_grid: vec![(crate::Linkage::Ward, crate::DistanceMetric::Cosine)],
            seeds: vec![0],
            ..small_spec()
        };
        let rows = run_linkage_grid(&spec).unwrap();
        assert_eq!(rows.len(), 1);
        assert!(!rows[0].skipped_reason.is_empty());
        assert_eq!(rows[0].instances, 0);
    }

    #[test]
    fn no_clustering_has_one_edge() {
        let rows = run_baseline_comparison(&small_spec()).unwrap();
        let single: Vec<_> = rows.iter().filter(|r| r.config == "no-clustering").collect();
        assert_eq!(single.len(), 2);
        assert!(single
            .iter()
            .all(|r| r.mean_edges == Some(1.0) && r.silhouette_mean.is_none()));
    }
}
