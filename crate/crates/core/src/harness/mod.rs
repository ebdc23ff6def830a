//! Experiment runners behind the `hgabsa run` subcommands.
//!
//! Every experiment expands its grid into `(config, seed)` jobs, runs them on
//! a rayon pool sized by `HGABSA_WORKERS` and collects rows in config-then-seed
//! order. A job derives all of its randomness from its seed, so the CSV bytes
//! outside `wall_seconds` do not depend on the worker count. Timing cells run
//! serially on the calling thread.

mod baselines;
mod experiments;
mod timing;

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cutoff::CutoffStrategy;
use crate::embeddings::{generate_synthetic, load_dataset, Dataset, SyntheticSpec};
use crate::error::{Error, Result};
use crate::hac::{DistanceMetric, Linkage};
use crate::hypergat::TrainConfig;
use crate::hypergraph::{dump_edges, induce, InductionConfig};

pub use baselines::{elbow_k, kmeans, kmeans_elbow, KMeansFit, Partitioner, KMEANS_K_MAX, KMEANS_MAX_ITER};
pub use experiments::{
    evaluate_partitioner, run_baseline_comparison, run_cutoff_ablation, run_linkage_grid, run_sensitivity, run_train,
    Evaluation, TrainRun,
};
pub use timing::{fit_loglog, run_timing, time_partitioner, TimingFit, TimingReport, TimingRow};

/// Bumped whenever a CSV column is added, removed or reinterpreted.
pub const SCHEMA_VERSION: u32 = 1;
pub const WORKERS_ENV: &str = "HGABSA_WORKERS";

/// Where instances come from. A synthetic source is regenerated per seed
/// with its `seed` field replaced by the run seed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DataSource {
    File(PathBuf),
    Synthetic(SyntheticSpec),
}

impl DataSource {
    pub fn load(&self, seed: u64) -> Result<Dataset> {
        match self {
            DataSource::File(path) => load_dataset(path),
            DataSource::Synthetic(spec) => generate_synthetic(&SyntheticSpec { seed, ..spec.clone() }),
        }
    }
}

/// `synth:<options>` or a JSONL path.
impl FromStr for DataSource {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.strip_prefix("synth:") {
            Some(options) => Ok(DataSource::Synthetic(options.parse()?)),
            None if s == "synth" => Ok(DataSource::Synthetic(SyntheticSpec::default())),
            None => Ok(DataSource::File(PathBuf::from(s))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ExperimentKind {
    Cutoff,
    Linkage,
    Baselines,
    Sensitivity,
    Timing,
    Train,
}

impl fmt::Display for ExperimentKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ExperimentKind::Cutoff => "cutoff",
            ExperimentKind::Linkage => "linkage",
            ExperimentKind::Baselines => "baselines",
            ExperimentKind::Sensitivity => "sensitivity",
            ExperimentKind::Timing => "timing",
            ExperimentKind::Train => "train",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TimingSpec {
    /// Token counts of the sweep.
    pub sizes: Vec<usize>,
    pub dim: usize,
    /// Instances per cell.
    pub instances: usize,
    /// Repetitions per cell; the minimum is the headline number.
    pub reps: usize,
    pub seed: u64,
}

impl Default for TimingSpec {
    fn default() -> Self {
        TimingSpec {
            sizes: vec![10, 20, 40, 80, 160],
            dim: 64,
            instances: 20,
            reps: 5,
            seed: 0,
        }
    }
}

/// Everything an experiment needs; echoed to `config.json`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSpec {
    pub data: DataSource,
    pub seeds: Vec<u64>,
    /// Base induction settings; grids vary one part of it.
    pub induction: InductionConfig,
    pub strategies: Vec<CutoffStrategy>,
    pub linkage_grid: Vec<(Linkage, DistanceMetric)>,
    pub lambdas: Vec<f64>,
    pub rhos: Vec<f64>,
    pub train: TrainConfig,
    /// Train a classifier per job and report eval accuracy and macro-F1.
    pub classify: bool,
    pub timing: TimingSpec,
}

/// The seven supported linkage/metric pairs.
pub fn default_linkage_grid() -> Vec<(Linkage, DistanceMetric)> {
    let mut grid = Vec::new();
    for linkage in Linkage::ALL {
        for metric in DistanceMetric::ALL {
            if !(linkage == Linkage::Ward && metric == DistanceMetric::Cosine) {
                grid.push((linkage, metric));
            }
        }
    }
    grid
}

/// `count` evenly spaced points from `lo` to `hi` inclusive.
pub fn linspace(lo: f64, hi: f64, count: usize) -> Vec<f64> {
    match count {
        0 => Vec::new(),
        1 => vec![lo],
        _ => (0..count)
            .map(|i| lo + (hi - lo) * i as f64 / (count - 1) as f64)
            .collect(),
    }
}

impl Default for ExperimentSpec {
    fn default() -> Self {
        ExperimentSpec {
            data: DataSource::Synthetic(SyntheticSpec::default()),
            seeds: vec![0],
            induction: InductionConfig::default(),
            strategies: CutoffStrategy::ablation_grid(),
            linkage_grid: default_linkage_grid(),
            lambdas: linspace(0.0, 2.0, 9),
            rhos: (1..=10).map(|i| i as f64 / 10.0).collect(),
            train: TrainConfig::default(),
            classify: true,
            timing: TimingSpec::default(),
        }
    }
}

impl ExperimentSpec {
    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            return Err(Error::Config("at least one seed is required".into()));
        }
        let empty = [
            ("strategy", self.strategies.is_empty()),
            ("linkage", self.linkage_grid.is_empty()),
            ("lambda", self.lambdas.is_empty()),
            ("rho", self.rhos.is_empty()),
            ("timing size", self.timing.sizes.is_empty()),
        ];
        if let Some((name, _)) = empty.iter().find(|(_, e)| *e) {
            return Err(Error::Config(format!("the {name} grid is empty")));
        }
        if self.timing.reps == 0 || self.timing.instances == 0 {
            return Err(Error::Config("timing needs at least one rep and one instance".into()));
        }
        self.induction.cutoff.validate()?;
        self.train.validate()
    }
}

/// One `(config, seed)` cell. Structural columns cover the evaluation
/// split; `accuracy` and `macro_f1` are empty unless a classifier was trained.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub schema_version: u32,
    pub experiment: String,
    pub config: String,
    pub linkage: String,
    pub metric: String,
    pub strategy: String,
    pub rho: Option<f64>,
    pub lambda: Option<f64>,
    pub seed: u64,
    pub instances: usize,
    pub mean_edges: Option<f64>,
    pub ari_mean: Option<f64>,
    pub silhouette_min: Option<f64>,
    pub silhouette_mean: Option<f64>,
    pub silhouette_max: Option<f64>,
    pub davies_bouldin_min: Option<f64>,
    pub davies_bouldin_mean: Option<f64>,
    pub davies_bouldin_max: Option<f64>,
    pub accuracy: Option<f64>,
    pub macro_f1: Option<f64>,
    pub skipped_reason: String,
    pub wall_seconds: f64,
}

impl ResultRow {
    pub(crate) fn blank(experiment: ExperimentKind, config: String, seed: u64) -> Self {
        ResultRow {
            schema_version: SCHEMA_VERSION,
            experiment: experiment.to_string(),
            config,
            linkage: String::new(),
            metric: String::new(),
            strategy: String::new(),
            rho: None,
            lambda: None,
            seed,
            instances: 0,
            mean_edges: None,
            ari_mean: None,
            silhouette_min: None,
            silhouette_mean: None,
            silhouette_max: None,
            davies_bouldin_min: None,
            davies_bouldin_mean: None,
            davies_bouldin_max: None,
            accuracy: None,
            macro_f1: None,
            skipped_reason: String::new(),
            wall_seconds: 0.0,
        }
    }

    pub(crate) fn describe_induction(mut self, cfg: &InductionConfig) -> Self {
        self.linkage = cfg.linkage.to_string();
        self.metric = cfg.metric.to_string();
        self.strategy = cfg.strategy.to_string();
        self.rho = Some(match cfg.strategy {
            CutoffStrategy::AccelerationOnly(rho) | CutoffStrategy::AccelerationMin(rho) => rho,
            CutoffStrategy::Dynamic | CutoffStrategy::FallbackOnly => cfg.cutoff.rho,
        });
        self.lambda = Some(cfg.cutoff.lambda);
        self
    }
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::Format {
            record: 0,
            message: format!("{}: {other:?}", path.display()),
        },
    }
}

pub fn write_csv<T: Serialize>(path: impl AsRef<Path>, rows: &[T]) -> Result<()> {
    let path = path.as_ref();
    let mut writer = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
    for row in rows {
        writer.serialize(row).map_err(|e| csv_error(path, e))?;
    }
    writer.flush().map_err(|e| Error::io(path, e))
}

pub fn read_results(path: impl AsRef<Path>) -> Result<Vec<ResultRow>> {
    let path = path.as_ref();
    let mut reader = csv::Reader::from_path(path).map_err(|e| csv_error(path, e))?;
    reader
        .deserialize()
        .map(|r| r.map_err(|e| csv_error(path, e)))
        .collect()
}

/// Worker count from `HGABSA_WORKERS`, defaulting to rayon's choice.
pub fn workers() -> Result<Option<usize>> {
    match std::env::var(WORKERS_ENV) {
        Err(_) => Ok(None),
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n > 0 => Ok(Some(n)),
            _ => Err(Error::Config(format!(
                "{WORKERS_ENV} must be a positive integer, got `{v}`"
            ))),
        },
    }
}

/// Maps `f` over `jobs` in parallel, keeping input order.
pub(crate) fn run_jobs<J, T, F>(jobs: &[J], f: F) -> Result<Vec<T>>
where
    J: Sync,
    T: Send,
    F: Fn(&J) -> Result<T> + Sync,
{
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = workers()? {
        builder = builder.num_threads(n);
    }
    let pool = builder
        .build()
        .map_err(|e| Error::Config(format!("cannot start worker pool: {e}")))?;
    pool.install(|| jobs.par_iter().map(&f).collect::<Vec<_>>())
        .into_iter()
        .collect()
}

/// Every instance's induced edges, headed by `# <id> label=<label>`.
pub fn dump_hyperedges(dataset: &Dataset, cfg: &InductionConfig) -> Result<String> {
    let mut out = String::new();
    for inst in &dataset.instances {
        let (hg, _) = induce(inst, cfg)?;
        out.push_str(&format!("# {} label={}\n", inst.id, inst.label));
        out.push_str(&dump_edges(&hg, inst)?);
    }
    Ok(out)
}

/// Files written by [`run_experiment`].
#[derive(Clone, Debug, Default)]
pub struct Outputs {
    pub results: Option<PathBuf>,
    pub timing: Option<PathBuf>,
    pub config: PathBuf,
    pub hyperedges: Option<PathBuf>,
    pub extra: Vec<PathBuf>,
}

/// Runs one experiment and writes its files under `out_dir`.
pub fn run_experiment(kind: ExperimentKind, spec: &ExperimentSpec, out_dir: &Path, dump: bool) -> Result<Outputs> {
    spec.validate()?;
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let config = out_dir.join("config.json");
    let echo = serde_json::json!({ "experiment": kind, "schema_version": SCHEMA_VERSION, "spec": spec });
    let text = serde_json::to_string_pretty(&echo).map_err(|e| Error::Config(e.to_string()))?;
    fs::write(&config, text + "\n").map_err(|e| Error::io(&config, e))?;
    let mut outputs = Outputs {
        config,
        ..Outputs::default()
    };

    let rows = match kind {
        ExperimentKind::Cutoff => Some(run_cutoff_ablation(spec)?),
        ExperimentKind::Linkage => Some(run_linkage_grid(spec)?),
        ExperimentKind::Baselines => Some(run_baseline_comparison(spec)?),
        ExperimentKind::Sensitivity => Some(run_sensitivity(spec)?),
        ExperimentKind::Train => {
            let runs = run_train(spec)?;
            for run in &runs {
                let history = out_dir.join(format!("history_seed{}.csv", run.seed));
                fs::write(&history, crate::hypergat::history_csv(&run.outcome.history))
                    .map_err(|e| Error::io(&history, e))?;
                let checkpoint = out_dir.join(format!("checkpoint_seed{}.hgat", run.seed));
                crate::hypergat::save_checkpoint(&run.outcome.params, &checkpoint)?;
                outputs.extra.extend([history, checkpoint]);
            }
            Some(runs.into_iter().map(|r| r.row).collect())
        }
        ExperimentKind::Timing => {
            let report = run_timing(spec)?;
            let timing = out_dir.join("timing.csv");
            write_csv(&timing, &report.rows)?;
            let fit = out_dir.join("timing_fit.csv");
            write_csv(&fit, &report.fits)?;
            outputs.timing = Some(timing);
            outputs.extra.push(fit);
            None
        }
    };
    if let Some(rows) = rows {
        let results = out_dir.join("results.csv");
        write_csv(&results, &rows)?;
        outputs.results = Some(results);
    }
    if dump {
        let seed = spec.seeds[0];
        let dataset = spec.data.load(seed)?;
        let path = out_dir.join("hyperedges.txt");
        fs::write(&path, dump_hyperedges(&dataset, &spec.induction)?).map_err(|e| Error::io(&path, e))?;
        outputs.hyperedges = Some(path);
    }
    Ok(outputs)
}
