use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};

use hgabsa::embeddings::{generate_synthetic, save_dataset, save_dataset_with_sidecar};
use hgabsa::harness::{self, DataSource, ExperimentKind, ExperimentSpec};
use hgabsa::hypergat::LossReduction;
use hgabsa::{CutoffStrategy, DistanceMetric, Linkage, SyntheticSpec};

#[derive(Parser)]
#[command(
    name = "hgabsa",
    version,
    about = "Hypergraph induction and classification experiments"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Experiment {
    Cutoff,
    Linkage,
    Baselines,
    Sensitivity,
    Timing,
    Train,
}

impl From<Experiment> for ExperimentKind {
    fn from(e: Experiment) -> Self {
        match e {
            Experiment::Cutoff => ExperimentKind::Cutoff,
            Experiment::Linkage => ExperimentKind::Linkage,
            Experiment::Baselines => ExperimentKind::Baselines,
            Experiment::Sensitivity => ExperimentKind::Sensitivity,
            Experiment::Timing => ExperimentKind::Timing,
            Experiment::Train => ExperimentKind::Train,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment and write results.csv / timing.csv and config.json.
    Run(Box<RunArgs>),
    /// Write a planted-cluster dataset as JSONL.
    Synth {
        /// Generator options, e.g. `instances=50,k=2-6,sigma=0.5,seed=3`.
        #[arg(long, default_value = "")]
        spec: String,
        #[arg(long)]
        out: PathBuf,
        /// Store embeddings in this HEMB sidecar (next to the JSONL) instead of inline.
        #[arg(long)]
        sidecar: Option<String>,
    },
}

#[derive(clap::Args)]
struct RunArgs {
    experiment: Experiment,
    /// JSONL dataset path or `synth:<options>`.
    #[arg(long, default_value = "synth")]
    data: DataSource,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_delimiter = ',', default_value = "0")]
    seeds: Vec<u64>,
    #[arg(long)]
    rho: Option<f64>,
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    epsilon: Option<f64>,
    /// Linkage methods; a list forms the grid of the `linkage` experiment.
    #[arg(long, value_delimiter = ',')]
    linkage: Vec<Linkage>,
    /// Distance metrics; a list forms the grid of the `linkage` experiment.
    #[arg(long, value_delimiter = ',')]
    metric: Vec<DistanceMetric>,
    /// Cutoff strategies (`dynamic`, `fallback`, `accel@0.5`, `accel-min@0.2`);
    /// a list forms the grid of the `cutoff` experiment.
    #[arg(long, value_delimiter = ',')]
    strategy: Vec<CutoffStrategy>,
    /// Also write every instance's induced edges (first seed) to hyperedges.txt.
    #[arg(long)]
    dump_hyperedges: bool,
    #[arg(long, value_enum)]
    loss_reduction: Option<LossArg>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    eval_fraction: Option<f64>,
    /// Skip classifier training in the structural experiments.
    #[arg(long)]
    no_classify: bool,
    #[arg(long, value_delimiter = ',')]
    timing_sizes: Vec<usize>,
    #[arg(long)]
    timing_dim: Option<usize>,
    #[arg(long)]
    timing_instances: Option<usize>,
    #[arg(long)]
    timing_reps: Option<usize>,
}

#[derive(Clone, Copy, ValueEnum)]
enum LossArg {
    Mean,
    Sum,
}

fn single<T: Copy>(values: &[T], name: &str, grid: bool) -> Result<Option<T>> {
    match values {
        [] => Ok(None),
        [v] => Ok(Some(*v)),
        _ if grid => Ok(None),
        _ => bail!("--{name} takes a single value for this experiment"),
    }
}

fn build_spec(args: &RunArgs) -> Result<ExperimentSpec> {
    let kind = ExperimentKind::from(args.experiment);
    let mut spec = ExperimentSpec {
        data: args.data.clone(),
        seeds: args.seeds.clone(),
        classify: !args.no_classify,
        ..ExperimentSpec::default()
    };
    let cutoff = &mut spec.induction.cutoff;
    if let Some(v) = args.rho {
        cutoff.rho = v;
    }
    if let Some(v) = args.lambda {
        cutoff.lambda = v;
    }
    if let Some(v) = args.epsilon {
        cutoff.epsilon = v;
    }

    let linkage_grid = kind == ExperimentKind::Linkage;
    if let Some(l) = single(&args.linkage, "linkage", linkage_grid)? {
        spec.induction.linkage = l;
    }
    if let Some(m) = single(&args.metric, "metric", linkage_grid)? {
        spec.induction.metric = m;
    }
    if linkage_grid && !(args.linkage.is_empty() && args.metric.is_empty()) {
        let linkages = if args.linkage.is_empty() {
            Linkage::ALL.to_vec()
        } else {
            args.linkage.clone()
        };
        let metrics = if args.metric.is_empty() {
            DistanceMetric::ALL.to_vec()
        } else {
            args.metric.clone()
        };
        spec.linkage_grid = linkages
            .iter()
            .flat_map(|&l| metrics.iter().map(move |&m| (l, m)))
            .collect();
    }

    let strategy_grid = kind == ExperimentKind::Cutoff;
    if let Some(s) = single(&args.strategy, "strategy", strategy_grid)? {
        spec.induction.strategy = s;
    }
    if strategy_grid && !args.strategy.is_empty() {
        spec.strategies = args.strategy.clone();
    }

    if let Some(r) = args.loss_reduction {
        spec.train.loss_reduction = match r {
            LossArg::Mean => LossReduction::Mean,
            LossArg::Sum => LossReduction::Sum,
        };
    }
    if let Some(e) = args.epochs {
        spec.train.epochs = e;
    }
    if let Some(f) = args.eval_fraction {
        spec.train.eval_fraction = f;
    }
    if !args.timing_sizes.is_empty() {
        spec.timing.sizes = args.timing_sizes.clone();
    }
    if let Some(d) = args.timing_dim {
        spec.timing.dim = d;
    }
    if let Some(i) = args.timing_instances {
        spec.timing.instances = i;
    }
    if let Some(r) = args.timing_reps {
        spec.timing.reps = r;
    }
    spec.validate()?;
    Ok(spec)
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::Run(args) => {
            let spec = build_spec(&args)?;
            let kind = ExperimentKind::from(args.experiment);
            let outputs = harness::run_experiment(kind, &spec, &args.out, args.dump_hyperedges)
                .with_context(|| format!("running the {kind} experiment"))?;
            let written = [
                outputs.results,
                outputs.timing,
                Some(outputs.config),
                outputs.hyperedges,
            ]
            .into_iter()
            .flatten()
            .chain(outputs.extra);
            for path in written {
                println!("wrote {}", path.display());
            }
        }
        Command::Synth { spec, out, sidecar } => {
            let spec: SyntheticSpec = spec.parse()?;
            let dataset = generate_synthetic(&spec)?;
            match sidecar {
                Some(name) => save_dataset_with_sidecar(&dataset, &out, &name)?,
                None => save_dataset(&dataset, &out)?,
            }
            println!("wrote {} instances to {}", dataset.len(), out.display());
        }
    }
    Ok(())
}
