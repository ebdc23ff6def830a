//! Multi-head hypergraph attention classifier.
//!
//! For each head `h` with projection `W1` (`d x d_h`) and attention vector
//! `a` (`d_h`):
//!
//! ```text
//! P      = X W1                                  n x d_h
//! s_i    = a . leaky_relu(P_i)                   per-node score
//! A[e,i] = softmax_{i in e}(s_i), 0 off-edge     |E| x n
//! E^h    = A P                                   |E| x d_h
//! ```
//!
//! Heads are concatenated to `|E| x (H d_h)`, mean-pooled over edges, and
//! fed to a linear classifier `W2 pooled + b2` with a softmax on top.
//! [`backward`] returns exact gradients of `-log P[label] + beta ||theta||^2`.

mod checkpoint;
mod train;

pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint};
pub use train::{
    history_csv, predict, prepare, split_dataset, train, train_items, train_on_split, Adam, EpochMetrics,
    LossReduction, TrainConfig, TrainOutcome, TrainingItem,
};

use ndarray::{s, Array1, Array2, Axis};
use rand::Rng;

use crate::error::{Error, Result};
use crate::hypergraph::Hypergraph;

pub const LEAKY_SLOPE: f64 = 0.2;

#[derive(Clone, Debug, PartialEq)]
pub struct AttentionHead {
    /// `d x d_h`.
    pub projection: Array2<f64>,
    /// `d_h`.
    pub attention: Array1<f64>,
}

/// All trainable parameters. Also used as the gradient container.
#[derive(Clone, Debug, PartialEq)]
pub struct HyperGatParams {
    pub heads: Vec<AttentionHead>,
    /// `C x (H d_h)`.
    pub classifier: Array2<f64>,
    /// `C`.
    pub bias: Array1<f64>,
}

fn glorot<R: Rng>(rows: usize, cols: usize, fan_in: usize, fan_out: usize, rng: &mut R) -> Vec<f64> {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    (0..rows * cols).map(|_| rng.random_range(-limit..=limit)).collect()
}

impl HyperGatParams {
    /// Glorot-uniform matrices and attention vectors, zero bias.
    pub fn init<R: Rng>(dim: usize, heads: usize, head_dim: usize, classes: usize, rng: &mut R) -> Result<Self> {
        if dim == 0 || heads == 0 || head_dim == 0 || classes == 0 {
            return Err(Error::Shape(format!(
                "model dims must be positive (d={dim}, H={heads}, d_h={head_dim}, C={classes})"
            )));
        }
        let heads = (0..heads)
            .map(|_| AttentionHead {
                projection: Array2::from_shape_vec((dim, head_dim), glorot(dim, head_dim, dim, head_dim, rng))
                    .expect("shape matches"),
                attention: Array1::from_vec(glorot(head_dim, 1, head_dim, 1, rng)),
            })
            .collect::<Vec<_>>();
        let pooled = heads.len() * head_dim;
        Ok(HyperGatParams {
            heads,
            classifier: Array2::from_shape_vec((classes, pooled), glorot(classes, pooled, pooled, classes, rng))
                .expect("shape matches"),
            bias: Array1::zeros(classes),
        })
    }

    pub fn zeros_like(&self) -> Self {
        HyperGatParams {
            heads: self
                .heads
                .iter()
                .map(|h| AttentionHead {
                    projection: Array2::zeros(h.projection.raw_dim()),
                    attention: Array1::zeros(h.attention.len()),
                })
                .collect(),
            classifier: Array2::zeros(self.classifier.raw_dim()),
            bias: Array1::zeros(self.bias.len()),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.heads[0].projection.nrows()
    }

    pub fn head_dim(&self) -> usize {
        self.heads[0].projection.ncols()
    }

    pub fn pooled_dim(&self) -> usize {
        self.heads.len() * self.head_dim()
    }

    pub fn num_classes(&self) -> usize {
        self.bias.len()
    }

    pub fn check_shapes(&self) -> Result<()> {
        let (d, dh) = (self.input_dim(), self.head_dim());
        for (i, h) in self.heads.iter().enumerate() {
            if h.projection.dim() != (d, dh) || h.attention.len() != dh {
                return Err(Error::Shape(format!("head {i} shapes differ from head 0")));
            }
        }
        if self.classifier.dim() != (self.num_classes(), self.pooled_dim()) {
            return Err(Error::Shape(format!(
                "classifier is {:?}, expected ({}, {})",
                self.classifier.dim(),
                self.num_classes(),
                self.pooled_dim()
            )));
        }
        Ok(())
    }

    /// Parameter tensors in a fixed order: per head `W1`, `a`; then `W2`, `b2`.
    pub fn tensors(&self) -> Vec<&[f64]> {
        let mut out: Vec<&[f64]> = Vec::with_capacity(2 * self.heads.len() + 2);
        for h in &self.heads {
            out.push(h.projection.as_slice().expect("standard layout"));
            out.push(h.attention.as_slice().expect("contiguous"));
        }
        out.push(self.classifier.as_slice().expect("standard layout"));
        out.push(self.bias.as_slice().expect("contiguous"));
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out: Vec<&mut [f64]> = Vec::with_capacity(2 * self.heads.len() + 2);
        for h in &mut self.heads {
            out.push(h.projection.as_slice_mut().expect("standard layout"));
            out.push(h.attention.as_slice_mut().expect("contiguous"));
        }
        out.push(self.classifier.as_slice_mut().expect("standard layout"));
        out.push(self.bias.as_slice_mut().expect("contiguous"));
        out
    }

    /// `||theta||^2` over every tensor.
    pub fn squared_norm(&self) -> f64 {
        self.tensors().iter().flat_map(|t| t.iter()).map(|v| v * v).sum()
    }

    /// `self += alpha * other`.
    pub fn add_scaled(&mut self, other: &HyperGatParams, alpha: f64) {
        for (dst, src) in self.tensors_mut().into_iter().zip(other.tensors()) {
            dst.iter_mut().zip(src).for_each(|(d, s)| *d += alpha * s);
        }
    }

    pub fn scale(&mut self, alpha: f64) {
        for t in self.tensors_mut() {
            t.iter_mut().for_each(|v| *v *= alpha);
        }
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.iter().all(|v| v.is_finite()))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct HeadTrace {
    /// `X W1`, `n x d_h`.
    pub projected: Array2<f64>,
    /// Per-node scores `a . leaky_relu(P_i)`.
    pub scores: Array1<f64>,
    /// `|E| x n`.
    pub attention: Array2<f64>,
    /// `|E| x d_h`.
    pub edge_features: Array2<f64>,
}

/// Intermediate values of one forward pass.
#[derive(Clone, Debug, PartialEq)]
pub struct ForwardTrace {
    /// Model input after dropout.
    pub input: Array2<f64>,
    pub heads: Vec<HeadTrace>,
    /// `|E| x (H d_h)`.
    pub concat: Array2<f64>,
    /// Pooled features fed to the classifier, after dropout.
    pub pooled: Array1<f64>,
    /// Inverted-dropout multipliers applied to the pooled features.
    pub pooled_mask: Option<Array1<f64>>,
    pub logits: Array1<f64>,
    pub log_probs: Array1<f64>,
    pub probs: Array1<f64>,
}

impl ForwardTrace {
    pub fn predicted(&self) -> usize {
        self.logits
            .iter()
            .enumerate()
            .fold(
                (0, f64::NEG_INFINITY),
                |best, (i, &v)| if v > best.1 { (i, v) } else { best },
            )
            .0
    }
}

#[inline]
fn leaky_relu(v: f64) -> f64 {
    if v > 0.0 {
        v
    } else {
        LEAKY_SLOPE * v
    }
}

#[inline]
fn leaky_relu_grad(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else {
        LEAKY_SLOPE
    }
}

/// `(log_softmax(v), softmax(v))`, computed through log-sum-exp.
pub fn log_softmax(v: &Array1<f64>) -> (Array1<f64>, Array1<f64>) {
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + v.iter().map(|x| (x - max).exp()).sum::<f64>().ln();
    let log_probs = v.mapv(|x| x - lse);
    let probs = log_probs.mapv(f64::exp);
    (log_probs, probs)
}

/// Edge-restricted softmax of node scores; `|E| x n`.
pub fn attention_head(x: &Array2<f64>, hg: &Hypergraph, head: &AttentionHead) -> Array2<f64> {
    let projected = x.dot(&head.projection);
    let scores = node_scores(&projected, &head.attention);
    masked_softmax(&scores, hg)
}

fn node_scores(projected: &Array2<f64>, attention: &Array1<f64>) -> Array1<f64> {
    projected
        .rows()
        .into_iter()
        .map(|row| row.iter().zip(attention).map(|(&p, &a)| a * leaky_relu(p)).sum())
        .collect()
}

fn masked_softmax(scores: &Array1<f64>, hg: &Hypergraph) -> Array2<f64> {
    let mut out = Array2::zeros((hg.num_edges(), hg.n()));
    for (e, members) in hg.edges().iter().enumerate() {
        let max = members.iter().map(|&i| scores[i]).fold(f64::NEG_INFINITY, f64::max);
        let mut total = 0.0;
        for &i in members {
            let w = (scores[i] - max).exp();
            out[[e, i]] = w;
            total += w;
        }
        for &i in members {
            out[[e, i]] /= total;
        }
    }
    out
}

/// `E_e = sum_i H[i,e] A[e,i] P_i`.
pub fn aggregate_edges(projected: &Array2<f64>, hg: &Hypergraph, attention: &Array2<f64>) -> Array2<f64> {
    let mut out = Array2::zeros((hg.num_edges(), projected.ncols()));
    let incidence = hg.incidence();
    for (e, members) in hg.edges().iter().enumerate() {
        let mut row = out.row_mut(e);
        for &i in members {
            let weight = f64::from(incidence[[i, e]]) * attention[[e, i]];
            row.scaled_add(weight, &projected.row(i));
        }
    }
    out
}

fn check_inputs(x: &Array2<f64>, hg: &Hypergraph, params: &HyperGatParams) -> Result<()> {
    params.check_shapes()?;
    if x.nrows() != hg.n() {
        return Err(Error::Shape(format!(
            "{} input rows for a {}-node hypergraph",
            x.nrows(),
            hg.n()
        )));
    }
    if x.ncols() != params.input_dim() {
        return Err(Error::Shape(format!(
            "input width {} but projections expect {}",
            x.ncols(),
            params.input_dim()
        )));
    }
    Ok(())
}

fn dropout_mask<R: Rng>(len: usize, rate: f64, rng: &mut R) -> Vec<f64> {
    let keep = 1.0 - rate;
    (0..len)
        .map(|_| if rng.random::<f64>() < keep { 1.0 / keep } else { 0.0 })
        .collect()
}

/// Evaluation-mode forward pass.
pub fn forward(x: &Array2<f64>, hg: &Hypergraph, params: &HyperGatParams) -> Result<ForwardTrace> {
    check_inputs(x, hg, params)?;
    Ok(forward_impl(x.to_owned(), hg, params, None))
}

/// Training-mode forward pass: inverted dropout on the input entries and on
/// the pooled features.
pub fn forward_train<R: Rng>(
    x: &Array2<f64>,
    hg: &Hypergraph,
    params: &HyperGatParams,
    dropout: f64,
    rng: &mut R,
) -> Result<ForwardTrace> {
    check_inputs(x, hg, params)?;
    if !(0.0..1.0).contains(&dropout) {
        return Err(Error::Config(format!("dropout rate {dropout} outside [0, 1)")));
    }
    if dropout == 0.0 {
        return Ok(forward_impl(x.to_owned(), hg, params, None));
    }
    let input_mask = Array2::from_shape_vec(x.raw_dim(), dropout_mask(x.len(), dropout, rng)).expect("same shape");
    let pooled_mask = Array1::from_vec(dropout_mask(params.pooled_dim(), dropout, rng));
    Ok(forward_impl(x * &input_mask, hg, params, Some(pooled_mask)))
}

fn forward_impl(
    input: Array2<f64>,
    hg: &Hypergraph,
    params: &HyperGatParams,
    pooled_mask: Option<Array1<f64>>,
) -> ForwardTrace {
    let dh = params.head_dim();
    let edges = hg.num_edges();
    let mut concat = Array2::zeros((edges, params.pooled_dim()));
    let mut heads = Vec::with_capacity(params.heads.len());
    for (h, head) in params.heads.iter().enumerate() {
        let projected = input.dot(&head.projection);
        let scores = node_scores(&projected, &head.attention);
        let attention = masked_softmax(&scores, hg);
        let edge_features = aggregate_edges(&projected, hg, &attention);
        concat.slice_mut(s![.., h * dh..(h + 1) * dh]).assign(&edge_features);
        heads.push(HeadTrace {
            projected,
            scores,
            attention,
            edge_features,
        });
    }
    let mut pooled = concat.mean_axis(Axis(0)).expect("at least one edge");
    if let Some(mask) = &pooled_mask {
        pooled *= mask;
    }
    let logits = params.classifier.dot(&pooled) + &params.bias;
    let (log_probs, probs) = log_softmax(&logits);

    let trace = ForwardTrace {
        input,
        heads,
        concat,
        pooled,
        pooled_mask,
        logits,
        log_probs,
        probs,
    };
    #[cfg(debug_assertions)]
    assert_distributions(&trace, hg);
    trace
}

/// Attention rows are distributions supported exactly on their edge, class
/// probabilities sum to one and every node sits in exactly one edge.
#[cfg(debug_assertions)]
fn assert_distributions(trace: &ForwardTrace, hg: &Hypergraph) {
    for row in hg.incidence().rows() {
        assert_eq!(row.iter().map(|&v| u32::from(v)).sum::<u32>(), 1, "incidence row sum");
    }
    for head in &trace.heads {
        for (e, row) in head.attention.rows().into_iter().enumerate() {
            let total: f64 = row.sum();
            assert!((total - 1.0).abs() <= 1e-9, "attention row {e} sums to {total}");
            for (i, &w) in row.iter().enumerate() {
                let member = hg.incidence()[[i, e]] == 1;
                assert!(
                    if member { w.is_finite() && w >= 0.0 } else { w == 0.0 },
                    "attention support differs from edge {e} at node {i}"
                );
            }
        }
    }
    let p: f64 = trace.probs.sum();
    assert!((p - 1.0).abs() <= 1e-12, "class probabilities sum to {p}");
}

/// `-log P[label]`, from the log-softmax so it is finite whenever the logits are.
pub fn cross_entropy(trace: &ForwardTrace, label: usize) -> Result<f64> {
    trace
        .log_probs
        .get(label)
        .map(|lp| -lp)
        .ok_or_else(|| Error::Shape(format!("label {label} outside {} classes", trace.log_probs.len())))
}

/// Single-instance objective `-log P[label] + beta ||theta||^2`.
pub fn loss(trace: &ForwardTrace, label: usize, params: &HyperGatParams, beta: f64) -> Result<f64> {
    Ok(cross_entropy(trace, label)? + beta * params.squared_norm())
}

/// Exact gradient of [`loss`] for the given trace. With a training trace the
/// recorded dropout masks are treated as constants.
pub fn backward(
    trace: &ForwardTrace,
    hg: &Hypergraph,
    params: &HyperGatParams,
    label: usize,
    beta: f64,
) -> Result<HyperGatParams> {
    let classes = params.num_classes();
    if label >= classes {
        return Err(Error::Shape(format!("label {label} outside {classes} classes")));
    }
    let mut grads = params.zeros_like();

    let mut d_logits = trace.probs.clone();
    d_logits[label] -= 1.0;
    for c in 0..classes {
        grads.classifier.row_mut(c).scaled_add(d_logits[c], &trace.pooled);
    }
    grads.bias.assign(&d_logits);

    let mut d_pooled = params.classifier.t().dot(&d_logits);
    if let Some(mask) = &trace.pooled_mask {
        d_pooled *= mask;
    }
    // Mean pooling spreads the gradient evenly over edge rows.
    let d_edge_row = d_pooled / hg.num_edges() as f64;

    let dh = params.head_dim();
    let n = hg.n();
    for (h, (head, head_trace)) in params.heads.iter().zip(&trace.heads).enumerate() {
        let d_edge = d_edge_row.slice(s![h * dh..(h + 1) * dh]);
        let projected = &head_trace.projected;
        let attention = &head_trace.attention;
        let mut d_projected = Array2::<f64>::zeros((n, dh));
        let mut d_scores = Array1::<f64>::zeros(n);

        for (e, members) in hg.edges().iter().enumerate() {
            // dL/dA[e,i] = dE_e . P_i, then back through the edge softmax.
            let mut weighted = 0.0;
            let mut d_att = Vec::with_capacity(members.len());
            for &i in members {
                let a = attention[[e, i]];
                d_projected.row_mut(i).scaled_add(a, &d_edge);
                let g = d_edge.dot(&projected.row(i));
                weighted += a * g;
                d_att.push(g);
            }
            for (&i, g) in members.iter().zip(d_att) {
                d_scores[i] += attention[[e, i]] * (g - weighted);
            }
        }

        let grad_head = &mut grads.heads[h];
        for i in 0..n {
            let ds = d_scores[i];
            if ds == 0.0 {
                continue;
            }
            for k in 0..dh {
                let p = projected[[i, k]];
                grad_head.attention[k] += ds * leaky_relu(p);
                d_projected[[i, k]] += ds * head.attention[k] * leaky_relu_grad(p);
            }
        }
        grad_head.projection = trace.input.t().dot(&d_projected);
    }

    if beta != 0.0 {
        grads.add_scaled(params, 2.0 * beta);
    }
    Ok(grads)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn params(dim: usize, heads: usize, dh: usize, classes: usize, seed: u64) -> HyperGatParams {
        HyperGatParams::init(dim, heads, dh, classes, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap()
    }

    #[test]
    fn identical_rows_attend_uniformly() {
        let x = Array2::from_elem((4, 3), 0.7);
        let hg = Hypergraph::from_labels(&[0; 4]).unwrap();
        let p = params(3, 1, 2, 2, 1);
        let att = attention_head(&x, &hg, &p.heads[0]);
        for &w in att.iter() {
            assert!((w - 0.25).abs() < 1e-15);
        }
    }

    #[test]
    fn singleton_edge_has_unit_weight() {
        let x = array![[1.0, -2.0], [0.5, 0.5], [3.0, 1.0]];
        let hg = Hypergraph::from_labels(&[0, 1, 0]).unwrap();
        let att = attention_head(&x, &hg, &params(2, 1, 2, 2, 3).heads[0]);
        assert_eq!(att[[1, 1]], 1.0);
        assert_eq!(att[[1, 0]], 0.0);
        assert_eq!(att[[0, 1]], 0.0);
    }

    #[test]
    fn softmax_is_shift_invariant_within_edge() {
        let hg = Hypergraph::from_labels(&[0, 0, 1]).unwrap();
        let scores = array![0.3, -1.2, 4.0];
        let shifted = array![10.3, 8.8, 4.0];
        let a = masked_softmax(&scores, &hg);
        let b = masked_softmax(&shifted, &hg);
        for (x, y) in a.iter().zip(b.iter()) {
            assert!((x - y).abs() < 1e-14);
        }
    }

    #[test]
    fn aggregation_is_a_convex_combination() {
        let projected = array![[1.0, 2.0], [5.0, -2.0]];
        let hg = Hypergraph::from_labels(&[0, 0]).unwrap();
        let att = array![[0.25, 0.75]];
        let e = aggregate_edges(&projected, &hg, &att);
        assert_eq!(e, array![[4.0, -1.0]]);
        let uniform = aggregate_edges(&projected, &hg, &array![[0.5, 0.5]]);
        assert_eq!(uniform, array![[3.0, 0.0]]);
        let single = Hypergraph::from_labels(&[0, 1]).unwrap();
        let e = aggregate_edges(&projected, &single, &array![[1.0, 0.0], [0.0, 1.0]]);
        assert_eq!(e, projected);
    }

    #[test]
    fn zero_classifier_gives_uniform_probabilities() {
        let mut p = params(3, 2, 2, 3, 5);
        p.classifier.fill(0.0);
        let x = array![[0.1, 0.2, 0.3], [0.3, -0.1, 0.0]];
        let hg = Hypergraph::from_labels(&[0, 1]).unwrap();
        let t = forward(&x, &hg, &p).unwrap();
        for &v in t.probs.iter() {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
        assert!((cross_entropy(&t, 0).unwrap() - 3f64.ln()).abs() < 1e-14);
        let reg = loss(&t, 0, &p, 0.5).unwrap() - cross_entropy(&t, 0).unwrap();
        assert!((reg - 0.5 * p.squared_norm()).abs() < 1e-12);
    }

    #[test]
    fn single_edge_pool_equals_row() {
        let p = params(2, 2, 1, 2, 9);
        let x = array![[1.0, 0.5], [-0.3, 0.2]];
        let hg = Hypergraph::from_labels(&[4, 4]).unwrap();
        let t = forward(&x, &hg, &p).unwrap();
        assert_eq!(t.pooled, t.concat.row(0));
    }

    #[test]
    fn eval_forward_is_bitwise_repeatable() {
        let p = params(3, 2, 2, 3, 11);
        let x = array![[0.1, 0.2, 0.3], [0.3, -0.1, 0.0], [1.0, 1.0, -1.0]];
        let hg = Hypergraph::from_labels(&[0, 1, 0]).unwrap();
        assert_eq!(forward(&x, &hg, &p).unwrap(), forward(&x, &hg, &p).unwrap());
    }

    #[test]
    fn regularizer_gradient_alone() {
        // The beta term contributes exactly 2 * beta * theta.
        let p = params(2, 1, 2, 2, 13);
        let x = Array2::zeros((2, 2));
        let hg = Hypergraph::from_labels(&[0, 0]).unwrap();
        let t = forward(&x, &hg, &p).unwrap();
        let g0 = backward(&t, &hg, &p, 0, 0.0).unwrap();
        let g1 = backward(&t, &hg, &p, 0, 0.25).unwrap();
        let mut diff = g1.clone();
        diff.add_scaled(&g0, -1.0);
        let mut expected = p.clone();
        expected.scale(0.5);
        for (a, b) in diff.tensors().iter().zip(expected.tensors()) {
            for (x, y) in a.iter().zip(b) {
                assert!((x - y).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn certain_prediction_has_zero_gradient() {
        let mut p = params(2, 1, 1, 2, 17);
        // Saturate the bias so that P[0] rounds to exactly 1.
        p.bias = array![1000.0, -1000.0];
        let x = array![[0.2, 0.1]];
        let hg = Hypergraph::from_labels(&[0]).unwrap();
        let t = forward(&x, &hg, &p).unwrap();
        assert_eq!(t.probs[0], 1.0);
        let g = backward(&t, &hg, &p, 0, 0.0).unwrap();
        assert!(g.tensors().iter().all(|t| t.iter().all(|&v| v == 0.0)));
    }

    #[test]
    fn shape_errors() {
        let p = params(3, 1, 1, 2, 1);
        let hg = Hypergraph::from_labels(&[0, 0]).unwrap();
        assert!(matches!(forward(&Array2::zeros((2, 4)), &hg, &p), Err(Error::Shape(_))));
        assert!(matches!(forward(&Array2::zeros((3, 3)), &hg, &p), Err(Error::Shape(_))));
    }
}
