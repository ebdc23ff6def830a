//! Mini-batch Adam training over precomputed hypergraphs.

use std::fmt::Write as _;

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{backward, cross_entropy, forward, forward_train, HyperGatParams};
use crate::embeddings::Dataset;
use crate::error::{Error, Result};
use crate::hypergraph::{induce, Hypergraph, InductionConfig};
use crate::metrics::{accuracy, macro_f1};

/// How per-instance cross-entropy terms combine within a batch.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossReduction {
    Mean,
    Sum,
}

impl std::str::FromStr for LossReduction {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mean" => Ok(LossReduction::Mean),
            "sum" => Ok(LossReduction::Sum),
            other => Err(Error::Config(format!("unknown loss reduction `{other}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    /// Weight `beta` of `||theta||^2`.
    pub l2_beta: f64,
    pub epochs: usize,
    pub dropout: f64,
    pub seed: u64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub heads: usize,
    /// Defaults to `max(1, d / heads)`.
    pub head_dim: Option<usize>,
    pub loss_reduction: LossReduction,
    /// Share of instances held out for evaluation by [`train`].
    pub eval_fraction: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-2,
            batch_size: 16,
            l2_beta: 2e-5,
            epochs: 50,
            dropout: 0.2,
            seed: 0,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            heads: 4,
            head_dim: None,
            loss_reduction: LossReduction::Mean,
            eval_fraction: 0.25,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.learning_rate.is_nan() || self.learning_rate < 0.0 {
            return bad(format!("learning rate {} must be >= 0", self.learning_rate));
        }
        if self.batch_size == 0 || self.heads == 0 || self.head_dim == Some(0) {
            return bad("batch size, heads and head dim must be positive".into());
        }
        if self.l2_beta.is_nan() || self.l2_beta < 0.0 {
            return bad(format!("l2 beta {} must be >= 0", self.l2_beta));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout {} outside [0, 1)", self.dropout));
        }
        if !(0.0..1.0).contains(&self.eval_fraction) {
            return bad(format!("eval fraction {} outside [0, 1)", self.eval_fraction));
        }
        Ok(())
    }
}

/// Adam with bias correction.
#[derive(Clone, Debug)]
pub struct Adam {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    step: i32,
    m: HyperGatParams,
    v: HyperGatParams,
}

impl Adam {
    pub fn new(params: &HyperGatParams, cfg: &TrainConfig) -> Self {
        Adam {
            lr: cfg.learning_rate,
            beta1: cfg.adam_beta1,
            beta2: cfg.adam_beta2,
            eps: cfg.adam_eps,
            step: 0,
            m: params.zeros_like(),
            v: params.zeros_like(),
        }
    }

    pub fn step(&mut self, params: &mut HyperGatParams, grads: &HyperGatParams) {
        self.step += 1;
        let c1 = 1.0 - self.beta1.powi(self.step);
        let c2 = 1.0 - self.beta2.powi(self.step);
        let (b1, b2, lr, eps) = (self.beta1, self.beta2, self.lr, self.eps);
        let tensors = params
            .tensors_mut()
            .into_iter()
            .zip(grads.tensors())
            .zip(self.m.tensors_mut())
            .zip(self.v.tensors_mut());
        for (((p, g), m), v) in tensors {
            for i in 0..p.len() {
                m[i] = b1 * m[i] + (1.0 - b1) * g[i];
                v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
                let m_hat = m[i] / c1;
                let v_hat = v[i] / c2;
                p[i] -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    /// 0 is the untrained model.
    pub epoch: usize,
    pub split: String,
    pub loss: f64,
    pub accuracy: f64,
    pub macro_f1: f64,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub params: HyperGatParams,
    pub history: Vec<EpochMetrics>,
    /// Mean training objective of the last epoch.
    pub final_train_loss: f64,
}

impl TrainOutcome {
    /// Last recorded metrics for `split`.
    pub fn last(&self, split: &str) -> Option<&EpochMetrics> {
        self.history.iter().rev().find(|m| m.split == split)
    }
}

/// Deterministic shuffled split; returns `(train, eval)`.
pub fn split_dataset(dataset: &Dataset, eval_fraction: f64, seed: u64) -> Result<(Dataset, Dataset)> {
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_5b17));
    let n_eval = (dataset.len() as f64 * eval_fraction).round() as usize;
    let pick = |idx: &[usize]| {
        Dataset::new(
            idx.iter().map(|&i| dataset.instances[i].clone()).collect(),
            dataset.num_classes,
            dataset.dim,
        )
    };
    let (eval_idx, train_idx) = order.split_at(n_eval);
    Ok((pick(train_idx)?, pick(eval_idx)?))
}

/// Model input, fixed hypergraph and gold label of one instance.
#[derive(Clone, Debug)]
pub struct TrainingItem {
    pub x: Array2<f64>,
    pub hg: Hypergraph,
    pub label: usize,
}

/// Induces every instance's hypergraph with `induction`.
pub fn prepare(dataset: &Dataset, induction: &InductionConfig) -> Result<Vec<TrainingItem>> {
    dataset
        .instances
        .iter()
        .map(|inst| {
            let (hg, _) = induce(inst, induction)?;
            Ok(TrainingItem {
                x: inst.embeddings.clone(),
                hg,
                label: inst.label,
            })
        })
        .collect()
}

fn evaluate(items: &[TrainingItem], params: &HyperGatParams, beta: f64, classes: usize) -> Result<(f64, f64, f64)> {
    if items.is_empty() {
        return Ok((f64::NAN, f64::NAN, f64::NAN));
    }
    let mut total = 0.0;
    let mut preds = Vec::with_capacity(items.len());
    let mut gold = Vec::with_capacity(items.len());
    for item in items {
        let trace = forward(&item.x, &item.hg, params)?;
        total += cross_entropy(&trace, item.label)?;
        preds.push(trace.predicted());
        gold.push(item.label);
    }
    let loss = total / items.len() as f64 + beta * params.squared_norm();
    Ok((loss, accuracy(&preds, &gold)?, macro_f1(&preds, &gold, classes)?))
}

/// Eval-mode class predictions.
pub fn predict(dataset: &Dataset, induction: &InductionConfig, params: &HyperGatParams) -> Result<Vec<usize>> {
    prepare(dataset, induction)?
        .iter()
        .map(|item| Ok(forward(&item.x, &item.hg, params)?.predicted()))
        .collect()
}

/// Splits with `cfg.eval_fraction` and trains on the larger part.
pub fn train(dataset: &Dataset, induction: &InductionConfig, cfg: &TrainConfig) -> Result<TrainOutcome> {
    if dataset.is_empty() {
        return Err(Error::DegenerateInput("training on an empty dataset".into()));
    }
    let (train_set, eval_set) = split_dataset(dataset, cfg.eval_fraction, cfg.seed)?;
    train_on_split(&train_set, &eval_set, induction, cfg)
}

/// Hypergraphs are induced once up front; the embeddings are fixed inputs,
/// so the structure does not change across epochs.
pub fn train_on_split(
    train_set: &Dataset,
    eval_set: &Dataset,
    induction: &InductionConfig,
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    if !eval_set.is_empty() && (eval_set.dim != train_set.dim || eval_set.num_classes != train_set.num_classes) {
        return Err(Error::Dimension(
            "train and eval splits disagree on width or classes".into(),
        ));
    }
    train_items(
        &prepare(train_set, induction)?,
        &prepare(eval_set, induction)?,
        train_set.dim,
        train_set.num_classes,
        cfg,
    )
}

/// Trains on prepared items, whatever produced their hypergraphs.
pub fn train_items(
    train_items: &[TrainingItem],
    eval_items: &[TrainingItem],
    dim: usize,
    classes: usize,
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if train_items.is_empty() {
        return Err(Error::DegenerateInput("training on an empty dataset".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let head_dim = cfg.head_dim.unwrap_or((dim / cfg.heads).max(1));
    let mut params = HyperGatParams::init(dim, cfg.heads, head_dim, classes, &mut rng)?;
    let mut adam = Adam::new(&params, cfg);

    let mut history = Vec::new();
    let mut record = |epoch: usize, params: &HyperGatParams, train_loss: Option<f64>| -> Result<()> {
        let (loss, acc, f1) = evaluate(train_items, params, cfg.l2_beta, classes)?;
        history.push(EpochMetrics {
            epoch,
            split: "train".into(),
            loss: train_loss.unwrap_or(loss),
            accuracy: acc,
            macro_f1: f1,
        });
        if !eval_items.is_empty() {
            let (loss, acc, f1) = evaluate(eval_items, params, cfg.l2_beta, classes)?;
            history.push(EpochMetrics {
                epoch,
                split: "eval".into(),
                loss,
                accuracy: acc,
                macro_f1: f1,
            });
        }
        Ok(())
    };
    record(0, &params, None)?;

    let mut order: Vec<usize> = (0..train_items.len()).collect();
    let mut final_train_loss = f64::NAN;
    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        let mut batches = 0usize;
        for batch in order.chunks(cfg.batch_size) {
            let mut grads = params.zeros_like();
            let mut data_loss = 0.0;
            for &i in batch {
                let item = &train_items[i];
                let trace = forward_train(&item.x, &item.hg, &params, cfg.dropout, &mut rng)?;
                data_loss += cross_entropy(&trace, item.label)?;
                grads.add_scaled(&backward(&trace, &item.hg, &params, item.label, 0.0)?, 1.0);
            }
            if cfg.loss_reduction == LossReduction::Mean {
                let scale = 1.0 / batch.len() as f64;
                grads.scale(scale);
                data_loss *= scale;
            }
            epoch_loss += data_loss + cfg.l2_beta * params.squared_norm();
            grads.add_scaled(&params, 2.0 * cfg.l2_beta);
            adam.step(&mut params, &grads);
            batches += 1;
        }
        if !params.is_finite() {
            return Err(Error::Config(format!("parameters diverged in epoch {epoch}")));
        }
        final_train_loss = epoch_loss / batches as f64;
        record(epoch, &params, Some(final_train_loss))?;
    }

    Ok(TrainOutcome {
        params,
        history,
        final_train_loss,
    })
}

/// `epoch,split,loss,accuracy,macro_f1`, one row per epoch and split.
pub fn history_csv(history: &[EpochMetrics]) -> String {
    let mut out = String::from("epoch,split,loss,accuracy,macro_f1\n");
    for m in history {
        writeln!(out, "{},{},{},{},{}", m.epoch, m.split, m.loss, m.accuracy, m.macro_f1).expect("writing to String");
    }
    out
}
