//! Multiclass softmax regression on sparse vectors, trained with mini-batch Adam.
//!
//! Objective: mean cross-entropy over the batch plus `(l2_penalty / 2) * ||W||²`
//! (biases are not penalized). Parameters start at zero, so a run is fully
//! determined by the data, the config and its seed.
//!
//! Summation order is fixed: sparse entries are accumulated in index order and
//! per-example contributions in batch order. Weights are row-major, one row
//! per class.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::featurizer::SparseVector;
use crate::hash::{mix_indices, rng_stream};
use crate::{Error, Result};

const STREAM_HOLDOUT: u64 = 0;
const STREAM_DROPOUT: u64 = 0xd0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Share of the training examples held out for early stopping.
    pub early_stop_fraction: f64,
    pub early_stop_patience: usize,
    pub l2_penalty: f64,
    /// Inverted dropout on input features; 0 disables it.
    pub input_dropout: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_epsilon: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-3,
            batch_size: 64,
            max_epochs: 20,
            early_stop_fraction: 0.1,
            early_stop_patience: 2,
            l2_penalty: 1e-6,
            input_dropout: 0.0,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_epsilon: 1e-8,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.into()));
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return bad("learning_rate must be positive");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be positive");
        }
        if self.max_epochs == 0 {
            return bad("max_epochs must be positive");
        }
        if !(0.0..=0.5).contains(&self.early_stop_fraction) {
            return bad("early_stop_fraction must be in [0, 0.5]");
        }
        if !(self.l2_penalty.is_finite() && self.l2_penalty >= 0.0) {
            return bad("l2_penalty must be non-negative");
        }
        if !(0.0..1.0).contains(&self.input_dropout) {
            return bad("input_dropout must be in [0, 1)");
        }
        if !(0.0..1.0).contains(&self.adam_beta1) || !(0.0..1.0).contains(&self.adam_beta2) {
            return bad("adam betas must be in [0, 1)");
        }
        if !(self.adam_epsilon.is_finite() && self.adam_epsilon > 0.0) {
            return bad("adam_epsilon must be positive");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    /// Text features only.
    Plain,
    /// Text features followed by the one-hot block of another model's prediction.
    Injected,
}

impl ModelKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ModelKind::Plain => "plain",
            ModelKind::Injected => "injected",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainMeta {
    pub epochs_run: usize,
    /// Accuracy on the held-out slice at the returned epoch; `None` without a holdout.
    pub final_validation_accuracy: Option<f64>,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    kind: ModelKind,
    num_classes: usize,
    hash_dim: usize,
    dim: usize,
    weights: Vec<f64>,
    biases: Vec<f64>,
    label_space_fingerprint: u64,
    featurizer_fingerprint: u64,
    train_meta: TrainMeta,
}

/// Everything that identifies what a model's inputs mean.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ModelTag {
    pub kind: ModelKind,
    pub hash_dim: usize,
    pub label_space_fingerprint: u64,
    pub featurizer_fingerprint: u64,
}

impl Model {
    pub fn from_parts(tag: ModelTag, num_classes: usize, weights: Vec<f64>, biases: Vec<f64>, train_meta: TrainMeta) -> Result<Self> {
        if num_classes < 2 {
            return Err(Error::InvalidModel("need at least two classes"));
        }
        if biases.len() != num_classes || weights.len() % num_classes != 0 {
            return Err(Error::InvalidModel("parameter shapes disagree with class count"));
        }
        let dim = weights.len() / num_classes;
        let expected = match tag.kind {
            ModelKind::Plain => tag.hash_dim,
            ModelKind::Injected => tag.hash_dim + num_classes,
        };
        if dim != expected || dim == 0 {
            return Err(Error::InvalidModel("input dimension does not match kind and hash_dim"));
        }
        if !weights.iter().chain(&biases).all(|v| v.is_finite()) {
            return Err(Error::InvalidModel("non-finite parameter"));
        }
        Ok(Model {
            kind: tag.kind,
            num_classes,
            hash_dim: tag.hash_dim,
            dim,
            weights,
            biases,
            label_space_fingerprint: tag.label_space_fingerprint,
            featurizer_fingerprint: tag.featurizer_fingerprint,
            train_meta,
        })
    }

    pub fn kind(&self) -> ModelKind {
        self.kind
    }
    pub fn num_classes(&self) -> usize {
        self.num_classes
    }
    pub fn hash_dim(&self) -> usize {
        self.hash_dim
    }
    /// Input dimension D′.
    pub fn dim(&self) -> usize {
        self.dim
    }
    pub fn weights(&self) -> &[f64] {
        &self.weights
    }
    pub fn biases(&self) -> &[f64] {
        &self.biases
    }
    pub fn row(&self, class: usize) -> &[f64] {
        &self.weights[class * self.dim..(class + 1) * self.dim]
    }
    pub fn label_space_fingerprint(&self) -> u64 {
        self.label_space_fingerprint
    }
    pub fn featurizer_fingerprint(&self) -> u64 {
        self.featurizer_fingerprint
    }
    pub fn train_meta(&self) -> &TrainMeta {
        &self.train_meta
    }
    pub fn tag(&self) -> ModelTag {
        ModelTag {
            kind: self.kind,
            hash_dim: self.hash_dim,
            label_space_fingerprint: self.label_space_fingerprint,
            featurizer_fingerprint: self.featurizer_fingerprint,
        }
    }

    pub fn logits(&self, x: &SparseVector) -> Result<Vec<f64>> {
        if x.dim() != self.dim {
            return Err(Error::DimensionMismatch { expected: self.dim, actual: x.dim() });
        }
        Ok((0..self.num_classes).map(|c| self.biases[c] + x.dot(self.row(c))).collect())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub probs: Vec<f64>,
    pub label: usize,
    /// `probs[top1] - probs[top2]`.
    pub margin: f64,
}

impl Prediction {
    pub fn from_logits(logits: &[f64]) -> Prediction {
        Prediction::from_probs(softmax(logits))
    }

    pub fn from_probs(probs: Vec<f64>) -> Prediction {
        let label = argmax(&probs);
        let top1 = probs[label];
        let top2 = probs
            .iter()
            .enumerate()
            .filter(|&(i, _)| i != label)
            .map(|(_, &p)| p)
            .fold(f64::NEG_INFINITY, f64::max);
        let margin = (top1 - top2).clamp(0.0, 1.0);
        Prediction { probs, label, margin }
    }

    pub fn prob(&self) -> f64 {
        self.probs[self.label]
    }
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Softmax with max-subtraction.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = logits.iter().map(|&z| libm::exp(z - m)).collect();
    let total: f64 = out.iter().sum();
    for p in &mut out {
        *p /= total;
    }
    out
}

pub fn predict_proba(model: &Model, features: &SparseVector) -> Result<Prediction> {
    Ok(Prediction::from_logits(&model.logits(features)?))
}

/// Fraction of items whose predicted label equals the given one.
pub fn evaluate(model: &Model, items: &[(SparseVector, usize)]) -> Result<f64> {
    if items.is_empty() {
        return Err(Error::EmptyEvaluation);
    }
    let mut correct = 0usize;
    for (x, y) in items {
        if argmax(&model.logits(x)?) == *y {
            correct += 1;
        }
    }
    Ok(correct as f64 / items.len() as f64)
}

/// Adds the cross-entropy gradient of one example, pre-scaled by `scale`,
/// into `grad_w`/`grad_b`, and returns its unscaled loss.
fn accumulate_example(
    weights: &[f64],
    biases: &[f64],
    dim: usize,
    x: &SparseVector,
    y: usize,
    scale: f64,
    grad_w: &mut [f64],
    grad_b: &mut [f64],
    scratch: &mut Vec<f64>,
) -> f64 {
    let k = biases.len();
    scratch.clear();
    scratch.extend((0..k).map(|c| biases[c] + x.dot(&weights[c * dim..(c + 1) * dim])));
    let m = scratch.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for z in scratch.iter_mut() {
        *z = libm::exp(*z - m);
        total += *z;
    }
    let z_y = biases[y] + x.dot(&weights[y * dim..(y + 1) * dim]);
    let loss = m + libm::log(total) - z_y;
    for c in 0..k {
        let p = scratch[c] / total;
        let coef = (p - if c == y { 1.0 } else { 0.0 }) * scale;
        grad_b[c] += coef;
        let row = &mut grad_w[c * dim..(c + 1) * dim];
        for &(j, v) in x.entries() {
            row[j as usize] += coef * v;
        }
    }
    loss
}

/// Loss and dense gradient of the regularized objective on one batch.
///
/// Returns `(loss, grad_weights, grad_biases)`.
pub fn loss_and_gradient(
    weights: &[f64],
    biases: &[f64],
    batch: &[(SparseVector, usize)],
    l2_penalty: f64,
) -> Result<(f64, Vec<f64>, Vec<f64>)> {
    let k = biases.len();
    if k == 0 || weights.len() % k != 0 {
        return Err(Error::InvalidModel("parameter shapes disagree with class count"));
    }
    if batch.is_empty() {
        return Err(Error::TooFewExamples { needed: 1, got: 0 });
    }
    let dim = weights.len() / k;
    let mut gw = vec![0.0; weights.len()];
    let mut gb = vec![0.0; k];
    let mut scratch = Vec::with_capacity(k);
    let scale = 1.0 / batch.len() as f64;
    let mut ce = 0.0;
    for (x, y) in batch {
        if x.dim() != dim {
            return Err(Error::DimensionMismatch { expected: dim, actual: x.dim() });
        }
        if *y >= k {
            return Err(Error::ClassOutOfRange { index: *y, num_classes: k });
        }
        ce += accumulate_example(weights, biases, dim, x, *y, scale, &mut gw, &mut gb, &mut scratch);
    }
    let mut sq = 0.0;
    for (g, &w) in gw.iter_mut().zip(weights) {
        sq += w * w;
        *g += l2_penalty * w;
    }
    Ok((ce * scale + 0.5 * l2_penalty * sq, gw, gb))
}

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    step: i32,
}

impl Adam {
    fn new(n: usize) -> Self {
        Adam { m: vec![0.0; n], v: vec![0.0; n], step: 0 }
    }
}

fn apply_dropout(x: &SparseVector, rate: f64, seed: u64, epoch: usize, batch: usize, example: usize) -> SparseVector {
    let mut rng = rng_stream(seed, mix_indices(&[STREAM_DROPOUT, epoch as u64, batch as u64, example as u64]));
    let keep = 1.0 / (1.0 - rate);
    let entries = x.entries().iter().filter(|_| rng.random::<f64>() >= rate).map(|&(i, v)| (i, v * keep)).collect();
    SparseVector::new(x.dim(), entries).expect("subset of a valid vector")
}

fn accuracy_on(weights: &[f64], biases: &[f64], dim: usize, items: &[&(SparseVector, usize)]) -> f64 {
    let k = biases.len();
    let correct = items
        .iter()
        .filter(|(x, y)| {
            let logits: Vec<f64> = (0..k).map(|c| biases[c] + x.dot(&weights[c * dim..(c + 1) * dim])).collect();
            argmax(&logits) == *y
        })
        .count();
    correct as f64 / items.len() as f64
}

/// Trains a plain-kind model with unset fingerprints; see [`Model::retag`].
///
/// A seeded `early_stop_fraction` share of the examples is held out. After
/// each epoch the holdout accuracy is measured; training stops once it has
/// failed to improve for `early_stop_patience` epochs in a row (a patience of
/// zero stops at the first non-improving epoch), and the parameters of the
/// best epoch are returned.
pub fn train(examples: &[(SparseVector, usize)], num_classes: usize, config: &TrainConfig) -> Result<Model> {
    config.validate()?;
    if examples.len() < 2 {
        return Err(Error::TooFewExamples { needed: 2, got: examples.len() });
    }
    if num_classes < 2 {
        return Err(Error::InvalidConfig(format!("need at least 2 classes, got {num_classes}")));
    }
    let dim = examples[0].0.dim();
    for (x, y) in examples {
        if x.dim() != dim {
            return Err(Error::DimensionMismatch { expected: dim, actual: x.dim() });
        }
        if *y >= num_classes {
            return Err(Error::ClassOutOfRange { index: *y, num_classes });
        }
    }

    let n = examples.len();
    let mut order: Vec<usize> = (0..n).collect();
    let n_val = if config.early_stop_fraction > 0.0 {
        order.shuffle(&mut rng_stream(config.seed, STREAM_HOLDOUT));
        (libm::round(n as f64 * config.early_stop_fraction) as usize).clamp(1, n - 1)
    } else {
        0
    };
    let val: Vec<&(SparseVector, usize)> = order[..n_val].iter().map(|&i| &examples[i]).collect();
    let mut train_idx: Vec<usize> = order[n_val..].to_vec();
    train_idx.sort_unstable();

    let k = num_classes;
    let mut w = vec![0.0; k * dim];
    let mut b = vec![0.0; k];
    let mut gw = vec![0.0; k * dim];
    let mut gb = vec![0.0; k];
    let mut adam_w = Adam::new(k * dim);
    let mut adam_b = Adam::new(k);
    let mut scratch = Vec::with_capacity(k);

    let mut best: Option<(f64, Vec<f64>, Vec<f64>)> = None;
    let mut stale = 0usize;
    let mut epochs_run = 0usize;

    for epoch in 0..config.max_epochs {
        epochs_run = epoch + 1;
        let mut epoch_order = train_idx.clone();
        epoch_order.shuffle(&mut rng_stream(config.seed, 1 + epoch as u64));

        for (batch_no, batch) in epoch_order.chunks(config.batch_size).enumerate() {
            gw.fill(0.0);
            gb.fill(0.0);
            let scale = 1.0 / batch.len() as f64;
            let mut ce = 0.0;
            for &i in batch {
                let (x, y) = &examples[i];
                ce += if config.input_dropout > 0.0 {
                    let dropped = apply_dropout(x, config.input_dropout, config.seed, epoch, batch_no, i);
                    accumulate_example(&w, &b, dim, &dropped, *y, scale, &mut gw, &mut gb, &mut scratch)
                } else {
                    accumulate_example(&w, &b, dim, x, *y, scale, &mut gw, &mut gb, &mut scratch)
                };
            }
            let sq = adam_update(&mut w, &gw, &mut adam_w, config, config.l2_penalty);
            adam_update(&mut b, &gb, &mut adam_b, config, 0.0);
            let loss = ce * scale + 0.5 * config.l2_penalty * sq;
            if !loss.is_finite() {
                return Err(Error::NonFiniteLoss { epoch, batch: batch_no });
            }
        }

        if val.is_empty() {
            continue;
        }
        let acc = accuracy_on(&w, &b, dim, &val);
        match &best {
            Some((best_acc, _, _)) if acc <= *best_acc => {
                stale += 1;
                if stale >= config.early_stop_patience.max(1) {
                    break;
                }
            }
            _ => {
                best = Some((acc, w.clone(), b.clone()));
                stale = 0;
            }
        }
    }

    let (final_validation_accuracy, w, b) = match best {
        Some((acc, w, b)) => (Some(acc), w, b),
        None => (None, w, b),
    };
    let tag = ModelTag { kind: ModelKind::Plain, hash_dim: dim, label_space_fingerprint: 0, featurizer_fingerprint: 0 };
    Model::from_parts(tag, k, w, b, TrainMeta { epochs_run, final_validation_accuracy, seed: config.seed })
}

/// One Adam step over `params`; `l2` adds `l2 * param` to each gradient.
/// Returns the squared norm of the parameters before the step.
fn adam_update(params: &mut [f64], grad: &[f64], state: &mut Adam, config: &TrainConfig, l2: f64) -> f64 {
    state.step += 1;
    let (b1, b2) = (config.adam_beta1, config.adam_beta2);
    let c1 = 1.0 - libm::pow(b1, f64::from(state.step));
    let c2 = 1.0 - libm::pow(b2, f64::from(state.step));
    let lr = config.learning_rate;
    let eps = config.adam_epsilon;
    let mut sq = 0.0;
    for (((p, &g), m), v) in params.iter_mut().zip(grad).zip(state.m.iter_mut()).zip(state.v.iter_mut()) {
        sq += *p * *p;
        let g = g + l2 * *p;
        *m = b1 * *m + (1.0 - b1) * g;
        *v = b2 * *v + (1.0 - b2) * g * g;
        let m_hat = *m / c1;
        let v_hat = *v / c2;
        *p -= lr * m_hat / (libm::sqrt(v_hat) + eps);
    }
    sq
}

impl Model {
    /// Re-labels a freshly trained model with its kind and provenance.
    pub fn retag(self, tag: ModelTag) -> Result<Model> {
        Model::from_parts(tag, self.num_classes, self.weights, self.biases, self.train_meta)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckConfig {
    pub num_classes: usize,
    pub dim: usize,
    pub batch: usize,
    pub l2_penalty: f64,
    pub seed: u64,
}

pub const GRAD_CHECK_STEP: f64 = 1e-5;

/// `|a - n| / max(1e-8, |a| + |n|)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    libm::fabs(analytic - numeric) / f64::max(1e-8, libm::fabs(analytic) + libm::fabs(numeric))
}

/// Random small problem for [`gradient_check`]: `(weights, biases, batch)`.
pub fn random_problem(cfg: &GradCheckConfig) -> (Vec<f64>, Vec<f64>, Vec<(SparseVector, usize)>) {
    let mut rng = rng_stream(cfg.seed, 0x9c);
    let weights = (0..cfg.num_classes * cfg.dim).map(|_| rng.random_range(-0.5..0.5)).collect();
    let biases = (0..cfg.num_classes).map(|_| rng.random_range(-0.5..0.5)).collect();
    let batch = (0..cfg.batch)
        .map(|_| {
            let entries = (0..cfg.dim as u32)
                .filter_map(|j| {
                    let v: f64 = rng.random_range(-1.0..1.0);
                    (rng.random::<f64>() < 0.5 && v != 0.0).then_some((j, v))
                })
                .collect();
            let x = SparseVector::new(cfg.dim, entries).expect("valid by construction");
            (x, rng.random_range(0..cfg.num_classes))
        })
        .collect();
    (weights, biases, batch)
}

/// Max relative error between the analytic gradient and central finite
/// differences (step [`GRAD_CHECK_STEP`]) over every weight and bias.
pub fn gradient_check(cfg: &GradCheckConfig) -> Result<f64> {
    if cfg.num_classes < 2 || cfg.dim == 0 || cfg.batch == 0 {
        return Err(Error::InvalidConfig("gradient check needs K >= 2, D >= 1, batch >= 1".into()));
    }
    let (mut w, mut b, batch) = random_problem(cfg);
    let (_, gw, gb) = loss_and_gradient(&w, &b, &batch, cfg.l2_penalty)?;
    let h = GRAD_CHECK_STEP;
    let mut worst: f64 = 0.0;
    for i in 0..w.len() {
        let orig = w[i];
        w[i] = orig + h;
        let up = loss_and_gradient(&w, &b, &batch, cfg.l2_penalty)?.0;
        w[i] = orig - h;
        let down = loss_and_gradient(&w, &b, &batch, cfg.l2_penalty)?.0;
        w[i] = orig;
        worst = worst.max(relative_error(gw[i], (up - down) / (2.0 * h)));
    }
    for i in 0..b.len() {
        let orig = b[i];
        b[i] = orig + h;
        let up = loss_and_gradient(&w, &b, &batch, cfg.l2_penalty)?.0;
        b[i] = orig - h;
        let down = loss_and_gradient(&w, &b, &batch, cfg.l2_penalty)?.0;
        b[i] = orig;
        worst = worst.max(relative_error(gb[i], (up - down) / (2.0 * h)));
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn plain(dim: usize, w: Vec<f64>, b: Vec<f64>) -> Model {
        let tag = ModelTag { kind: ModelKind::Plain, hash_dim: dim, label_space_fingerprint: 1, featurizer_fingerprint: 2 };
        Model::from_parts(tag, b.len(), w, b, TrainMeta { epochs_run: 0, final_validation_accuracy: None, seed: 0 }).unwrap()
    }

    fn onehot(dim: usize, j: u32) -> SparseVector {
        SparseVector::new(dim, vec![(j, 1.0)]).unwrap()
    }

    #[test]
    fn zero_model_is_uniform() {
        let m = plain(3, vec![0.0; 12], vec![0.0; 4]);
        let p = predict_proba(&m, &onehot(3, 1)).unwrap();
        assert!(p.probs.iter().all(|&q| (q - 0.25).abs() < 1e-15));
        assert_eq!(p.label, 0);
        assert_eq!(p.margin, 0.0);
    }

    #[test]
    fn closed_form_two_class() {
        let p = Prediction::from_logits(&[libm::log(2.0), 0.0]);
        assert!((p.probs[0] - 2.0 / 3.0).abs() < 1e-15);
        assert!((p.probs[1] - 1.0 / 3.0).abs() < 1e-15);
        assert!((p.margin - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(p.label, 0);
    }

    #[test]
    fn extreme_logits_stay_normalized() {
        for logits in [[1e4, -1e4, 0.0], [-1e4, -1e4, -1e4], [1e4, 1e4, -3.0]] {
            let p = softmax(&logits);
            assert!(p.iter().all(|q| q.is_finite() && (0.0..=1.0).contains(q)));
            assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn ties_pick_lowest_index() {
        assert_eq!(argmax(&[0.5, 2.0, 2.0, 1.0]), 1);
        assert_eq!(Prediction::from_logits(&[3.0, 3.0]).label, 0);
    }

    #[test]
    fn evaluate_counts() {
        // Always predicts class 0.
        let m = plain(2, vec![0.0; 4], vec![1.0, 0.0]);
        let zeros: Vec<_> = (0..5).map(|_| (onehot(2, 0), 0)).collect();
        let ones: Vec<_> = (0..5).map(|_| (onehot(2, 0), 1)).collect();
        assert_eq!(evaluate(&m, &zeros).unwrap(), 1.0);
        assert_eq!(evaluate(&m, &ones).unwrap(), 0.0);
        let mut mixed: Vec<_> = (0..7).map(|_| (onehot(2, 1), 0)).collect();
        mixed.extend((0..3).map(|_| (onehot(2, 1), 1)));
        assert_eq!(evaluate(&m, &mixed).unwrap(), 0.7);
        assert_eq!(evaluate(&m, &[]).unwrap_err(), Error::EmptyEvaluation);
    }

    #[test]
    fn dimension_mismatch_is_reported() {
        let m = plain(2, vec![0.0; 4], vec![0.0; 2]);
        assert_eq!(predict_proba(&m, &onehot(3, 0)).unwrap_err(), Error::DimensionMismatch { expected: 2, actual: 3 });
    }

    #[test]
    fn from_parts_checks_kind_dimensions() {
        let meta = TrainMeta { epochs_run: 0, final_validation_accuracy: None, seed: 0 };
        let tag = ModelTag { kind: ModelKind::Injected, hash_dim: 4, label_space_fingerprint: 0, featurizer_fingerprint: 0 };
        assert!(Model::from_parts(tag, 2, vec![0.0; 8], vec![0.0; 2], meta.clone()).is_err());
        assert!(Model::from_parts(tag, 2, vec![0.0; 12], vec![0.0; 2], meta.clone()).is_ok());
        assert!(Model::from_parts(tag, 2, vec![f64::NAN; 12], vec![0.0; 2], meta).is_err());
    }

    fn separable() -> Vec<(SparseVector, usize)> {
        // Class 0 uses features 0..5, class 1 uses 5..10; no overlap.
        (0..20)
            .map(|i| {
                let y = i % 2;
                let base = (y * 5) as u32;
                let x = SparseVector::new(10, vec![(base + (i as u32 % 5), 1.0)]).unwrap();
                (x, y)
            })
            .collect()
    }

    #[test]
    fn separable_data_is_fit() {
        let cfg = TrainConfig { learning_rate: 0.1, early_stop_fraction: 0.0, max_epochs: 20, batch_size: 4, ..Default::default() };
        let data = separable();
        let m = train(&data, 2, &cfg).unwrap();
        assert_eq!(evaluate(&m, &data).unwrap(), 1.0);
        assert_eq!(m.train_meta().epochs_run, 20);
        assert_eq!(m.train_meta().final_validation_accuracy, None);
    }

    #[test]
    fn single_epoch_with_zero_patience() {
        let cfg = TrainConfig { max_epochs: 1, early_stop_patience: 0, ..Default::default() };
        let m = train(&separable(), 2, &cfg).unwrap();
        assert_eq!(m.train_meta().epochs_run, 1);
        assert!(TrainConfig { max_epochs: 0, ..Default::default() }.validate().is_err());
    }

    #[test]
    fn training_is_bitwise_deterministic() {
        let cfg = TrainConfig { learning_rate: 0.05, input_dropout: 0.3, seed: 11, ..Default::default() };
        let a = train(&separable(), 2, &cfg).unwrap();
        let b = train(&separable(), 2, &cfg).unwrap();
        let bits = |m: &Model| m.weights().iter().chain(m.biases()).map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&a), bits(&b));
    }

    #[test]
    fn train_rejects_bad_inputs() {
        let cfg = TrainConfig::default();
        let mut data = separable();
        data.push((onehot(11, 0), 0));
        assert!(matches!(train(&data, 2, &cfg), Err(Error::DimensionMismatch { .. })));
        assert!(matches!(train(&separable()[..1], 2, &cfg), Err(Error::TooFewExamples { .. })));
        assert!(matches!(train(&separable(), 1, &cfg), Err(Error::InvalidConfig(_))));
    }

    #[test]
    fn diverging_training_names_the_batch() {
        let cfg = TrainConfig { learning_rate: 1e308, early_stop_fraction: 0.0, max_epochs: 3, ..Default::default() };
        let big: Vec<_> = (0..8).map(|i| (SparseVector::new(2, vec![(0, 1e300)]).unwrap(), usize::from(i < 6))).collect();
        assert!(matches!(train(&big, 2, &cfg), Err(Error::NonFiniteLoss { .. })));
    }

    #[test]
    fn bias_gradient_at_origin_is_mean_softmax_minus_onehot() {
        let batch = vec![(onehot(3, 0), 0), (onehot(3, 1), 1), (onehot(3, 2), 1), (onehot(3, 2), 0)];
        let (loss, _, gb) = loss_and_gradient(&[0.0; 6], &[0.0; 2], &batch, 0.0).unwrap();
        assert!((loss - libm::log(2.0)).abs() < 1e-15);
        // Two examples of each label: (0.5 - 1) * 2/4 + 0.5 * 2/4 = 0.
        assert!(gb.iter().all(|g| g.abs() < 1e-15));
        let (_, _, gb) = loss_and_gradient(&[0.0; 6], &[0.0; 2], &batch[..1], 0.0).unwrap();
        assert_eq!(gb, vec![-0.5, 0.5]);
    }

    #[test]
    fn l2_adds_exactly_lambda_w() {
        let cfg = GradCheckConfig { num_classes: 3, dim: 6, batch: 4, l2_penalty: 0.0, seed: 5 };
        let (w, b, batch) = random_problem(&cfg);
        let (_, g0, b0) = loss_and_gradient(&w, &b, &batch, 0.0).unwrap();
        let (_, g1, b1) = loss_and_gradient(&w, &b, &batch, 0.3).unwrap();
        for i in 0..w.len() {
            assert!(((g1[i] - g0[i]) - 0.3 * w[i]).abs() < 1e-15);
        }
        assert_eq!(b0, b1);
    }

    #[test]
    fn gradient_check_small() {
        let err = gradient_check(&GradCheckConfig { num_classes: 2, dim: 10, batch: 4, l2_penalty: 0.0, seed: 1 }).unwrap();
        assert!(err < 1e-4, "{err}");
    }
}
