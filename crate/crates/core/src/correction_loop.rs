//! The correction loop: train Model-A on the labels as given, flag the items it
//! disagrees with, queue them for relabeling, then train Model-B on the
//! corrected labels and Model-C on the corrected labels with Model-A's
//! predicted class appended to its input.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::classifier::{self, argmax, Model, ModelKind, ModelTag, Prediction, TrainConfig};
use crate::dataset::{Dataset, LabelSpace};
use crate::featurizer::{featurize, inject_prediction_scaled, FeaturizerConfig, SparseVector};
use crate::hash::rng_stream;
use crate::{Error, Result};

const STREAM_FOLDS: u64 = 0xf0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FlagReason {
    Disagreement,
    LowMargin,
}

/// One suspected-noisy item. Serializes as one line of `flags.jsonl`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlagRecord {
    #[serde(rename = "id")]
    pub example_id: String,
    #[serde(rename = "prev")]
    pub previous_label: String,
    #[serde(rename = "pred")]
    pub predicted_label: String,
    #[serde(rename = "prob")]
    pub predicted_prob: f64,
    pub margin: f64,
    pub reason: FlagReason,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum QueueStatus {
    Pending,
    Done,
    Skipped,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueueItem {
    pub id: String,
    pub text: String,
    pub ref_prev_label: String,
    pub ref_pred_label: String,
    pub ref_pred_prob: f64,
    pub reason: FlagReason,
    pub status: QueueStatus,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RelabelQueue {
    pub items: Vec<QueueItem>,
}

impl RelabelQueue {
    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FlagScope {
    TrainOnly,
    TrainAndTest,
}

/// Where Model-C's training-time one-hot comes from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum InjectionMode {
    /// Model-A itself, predicting on its own training data.
    InSample,
    /// Out-of-fold Model-A variants, each trained on the other `folds - 1` folds.
    CrossFit { folds: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoopConfig {
    #[serde(default)]
    pub featurizer: FeaturizerConfig,
    #[serde(default)]
    pub train_a: TrainConfig,
    #[serde(default)]
    pub train_b: TrainConfig,
    #[serde(default)]
    pub train_c: TrainConfig,
    #[serde(default = "default_scope")]
    pub flag_scope: FlagScope,
    #[serde(default)]
    pub margin_threshold: Option<f64>,
    #[serde(default = "default_injection")]
    pub injection_mode: InjectionMode,
}

fn default_scope() -> FlagScope {
    FlagScope::TrainAndTest
}
fn default_injection() -> InjectionMode {
    InjectionMode::InSample
}

impl Default for LoopConfig {
    fn default() -> Self {
        LoopConfig {
            featurizer: FeaturizerConfig::default(),
            train_a: TrainConfig::default(),
            train_b: TrainConfig::default(),
            train_c: TrainConfig::default(),
            flag_scope: default_scope(),
            margin_threshold: None,
            injection_mode: default_injection(),
        }
    }
}

impl LoopConfig {
    pub fn validate(&self) -> Result<()> {
        self.featurizer.validate()?;
        self.train_a.validate()?;
        self.train_b.validate()?;
        self.train_c.validate()?;
        if self.train_a.early_stop_fraction <= 0.0 {
            return Err(Error::ModelAMayOverfit);
        }
        if let Some(t) = self.margin_threshold {
            check_threshold(t)?;
        }
        if let InjectionMode::CrossFit { folds } = self.injection_mode {
            if folds < 2 {
                return Err(Error::InvalidConfig(alloc::format!("cross_fit needs folds >= 2, got {folds}")));
            }
        }
        Ok(())
    }
}

fn check_threshold(t: f64) -> Result<()> {
    if t > 0.0 && t < 1.0 {
        Ok(())
    } else {
        Err(Error::InvalidConfig(alloc::format!("margin threshold {t} outside (0, 1)")))
    }
}

/// Featurizes every example and pairs it with its current label index.
pub fn featurize_dataset(data: &Dataset, featurizer: &FeaturizerConfig) -> Result<Vec<(SparseVector, usize)>> {
    featurizer.validate_for(data.label_space())?;
    data.examples()
        .iter()
        .map(|e| Ok((featurize(&e.text, featurizer)?, data.label_index(e))))
        .collect()
}

fn tag_for(kind: ModelKind, label_space: &LabelSpace, featurizer: &FeaturizerConfig) -> ModelTag {
    ModelTag {
        kind,
        hash_dim: featurizer.hash_dim,
        label_space_fingerprint: label_space.fingerprint(),
        featurizer_fingerprint: featurizer.fingerprint(),
    }
}

/// Errors unless `model` has the expected kind and was trained for this label
/// space and featurizer.
pub fn check_model(model: &Model, kind: ModelKind, label_space: &LabelSpace, featurizer: &FeaturizerConfig) -> Result<()> {
    if model.kind() != kind {
        return Err(Error::KindMismatch { expected: kind.as_str(), actual: model.kind().as_str() });
    }
    let ls = label_space.fingerprint();
    if model.label_space_fingerprint() != ls {
        return Err(Error::FingerprintMismatch { what: "label space", model: model.label_space_fingerprint(), input: ls });
    }
    let fp = featurizer.fingerprint();
    if model.featurizer_fingerprint() != fp {
        return Err(Error::FingerprintMismatch { what: "featurizer", model: model.featurizer_fingerprint(), input: fp });
    }
    Ok(())
}

fn train_plain(data: &Dataset, featurizer: &FeaturizerConfig, config: &TrainConfig) -> Result<Model> {
    let items = featurize_dataset(data, featurizer)?;
    classifier::train(&items, data.label_space().len(), config)?.retag(tag_for(ModelKind::Plain, data.label_space(), featurizer))
}

/// Model-A: plain model on the labels as given, with early stopping required.
pub fn train_model_a(train: &Dataset, config: &LoopConfig) -> Result<Model> {
    if config.train_a.early_stop_fraction <= 0.0 {
        return Err(Error::ModelAMayOverfit);
    }
    if train.is_empty() {
        return Err(Error::TooFewExamples { needed: 2, got: 0 });
    }
    train_plain(train, &config.featurizer, &config.train_a)
}

/// Model-B: trained exactly like Model-A but on the corrected training split.
pub fn train_model_b(merged_train: &Dataset, config: &LoopConfig) -> Result<Model> {
    train_plain(merged_train, &config.featurizer, &config.train_b)
}

fn predictions(model: &Model, items: &[(SparseVector, usize)]) -> Result<Vec<Prediction>> {
    items.iter().map(|(x, _)| classifier::predict_proba(model, x)).collect()
}

/// One flag per example whose predicted label differs from its current
/// label, in dataset order.
pub fn flag_disagreements(model: &Model, data: &Dataset, featurizer: &FeaturizerConfig) -> Result<Vec<FlagRecord>> {
    check_model(model, ModelKind::Plain, data.label_space(), featurizer)?;
    let items = featurize_dataset(data, featurizer)?;
    let preds = predictions(model, &items)?;
    Ok(data
        .examples()
        .iter()
        .zip(items.iter().zip(preds))
        .filter(|(_, ((_, y), p))| p.label != *y)
        .map(|(e, (_, p))| flag(data.label_space(), &e.id, &e.label, &p, FlagReason::Disagreement))
        .collect())
}

/// One flag per example whose top-1/top-2 probability gap is below
/// `threshold`, whether or not the model agrees with the label.
pub fn flag_low_margin(model: &Model, data: &Dataset, featurizer: &FeaturizerConfig, threshold: f64) -> Result<Vec<FlagRecord>> {
    check_threshold(threshold)?;
    check_model(model, ModelKind::Plain, data.label_space(), featurizer)?;
    let items = featurize_dataset(data, featurizer)?;
    let preds = predictions(model, &items)?;
    Ok(data
        .examples()
        .iter()
        .zip(preds)
        .filter(|(_, p)| p.margin < threshold)
        .map(|(e, p)| flag(data.label_space(), &e.id, &e.label, &p, FlagReason::LowMargin))
        .collect())
}

fn flag(ls: &LabelSpace, id: &str, label: &str, p: &Prediction, reason: FlagReason) -> FlagRecord {
    FlagRecord {
        example_id: id.into(),
        previous_label: label.into(),
        predicted_label: ls.class(p.label).expect("prediction within label space").into(),
        predicted_prob: p.prob(),
        margin: p.margin,
        reason,
    }
}

/// Queue in flag order. Repeated ids collapse onto the first occurrence; a
/// disagreement flag overrides a low-margin one for the same id.
pub fn build_relabel_queue(flags: &[FlagRecord], data: &Dataset) -> Result<RelabelQueue> {
    let index = data.id_index();
    let mut slot: BTreeMap<&str, usize> = BTreeMap::new();
    let mut items: Vec<QueueItem> = Vec::new();
    for f in flags {
        let &pos = index.get(f.example_id.as_str()).ok_or_else(|| Error::UnknownId(f.example_id.clone()))?;
        let e = &data.examples()[pos];
        let item = QueueItem {
            id: e.id.clone(),
            text: e.text.clone(),
            ref_prev_label: e.label.clone(),
            ref_pred_label: f.predicted_label.clone(),
            ref_pred_prob: f.predicted_prob,
            reason: f.reason,
            status: QueueStatus::Pending,
        };
        match slot.get(f.example_id.as_str()) {
            Some(&i) => {
                if items[i].reason == FlagReason::LowMargin && f.reason == FlagReason::Disagreement {
                    items[i] = item;
                }
            }
            None => {
                slot.insert(f.example_id.as_str(), items.len());
                items.push(item);
            }
        }
    }
    Ok(RelabelQueue { items })
}

/// Model-A's predicted class for each training example, per `injection_mode`.
///
/// Cross-fit variants train on the `initial` labels (what Model-A saw) of the
/// other folds, with `train_a`.
pub fn training_injections(merged_train: &Dataset, model_a: &Model, config: &LoopConfig) -> Result<Vec<usize>> {
    let items = featurize_dataset(merged_train, &config.featurizer)?;
    match config.injection_mode {
        InjectionMode::InSample => items.iter().map(|(x, _)| Ok(argmax(&model_a.logits(x)?))).collect(),
        InjectionMode::CrossFit { folds } => {
            if folds < 2 || folds > items.len() {
                return Err(Error::InvalidConfig(alloc::format!("cannot cross-fit {} examples into {folds} folds", items.len())));
            }
            let ls = merged_train.label_space();
            let initial: Vec<usize> = merged_train.examples().iter().map(|e| ls.index_of(e.initial_label()).expect("validated")).collect();
            let mut order: Vec<usize> = (0..items.len()).collect();
            order.shuffle(&mut rng_stream(config.train_c.seed, STREAM_FOLDS));
            let mut fold_of = alloc::vec![0usize; items.len()];
            for (rank, &i) in order.iter().enumerate() {
                fold_of[i] = rank % folds;
            }
            let mut out = alloc::vec![0usize; items.len()];
            for f in 0..folds {
                let train_part: Vec<(SparseVector, usize)> = (0..items.len())
                    .filter(|&i| fold_of[i] != f)
                    .map(|i| (items[i].0.clone(), initial[i]))
                    .collect();
                let variant = classifier::train(&train_part, ls.len(), &config.train_a)?;
                for i in (0..items.len()).filter(|&i| fold_of[i] == f) {
                    out[i] = argmax(&variant.logits(&items[i].0)?);
                }
            }
            Ok(out)
        }
    }
}

/// Model-C: injected-kind model on the corrected labels, whose input carries
/// Model-A's predicted class as a one-hot block after the text features.
pub fn train_model_c(merged_train: &Dataset, model_a: &Model, config: &LoopConfig) -> Result<Model> {
    let ls = merged_train.label_space();
    check_model(model_a, ModelKind::Plain, ls, &config.featurizer)?;
    let injected = training_injections(merged_train, model_a, config)?;
    let items = featurize_dataset(merged_train, &config.featurizer)?
        .into_iter()
        .zip(injected)
        .map(|((x, y), c)| Ok((inject_prediction_scaled(&x, c, ls.len(), config.featurizer.injection_scale)?, y)))
        .collect::<Result<Vec<_>>>()?;
    classifier::train(&items, ls.len(), &config.train_c)?.retag(tag_for(ModelKind::Injected, ls, &config.featurizer))
}

/// Two-stage inference: Model-A labels the text, Model-C predicts from the
/// text plus that label. No gold label is involved.
pub fn infer(model_a: &Model, model_c: &Model, text: &str, featurizer: &FeaturizerConfig) -> Result<Prediction> {
    if model_a.kind() != ModelKind::Plain {
        return Err(Error::KindMismatch { expected: "plain", actual: model_a.kind().as_str() });
    }
    if model_c.kind() != ModelKind::Injected {
        return Err(Error::KindMismatch { expected: "injected", actual: model_c.kind().as_str() });
    }
    let fp = featurizer.fingerprint();
    for m in [model_a, model_c] {
        if m.featurizer_fingerprint() != fp {
            return Err(Error::FingerprintMismatch { what: "featurizer", model: m.featurizer_fingerprint(), input: fp });
        }
    }
    if model_a.label_space_fingerprint() != model_c.label_space_fingerprint() {
        return Err(Error::FingerprintMismatch {
            what: "label space",
            model: model_c.label_space_fingerprint(),
            input: model_a.label_space_fingerprint(),
        });
    }
    let x = featurize(text, featurizer)?;
    let stage1 = argmax(&model_a.logits(&x)?);
    let xc = inject_prediction_scaled(&x, stage1, model_c.num_classes(), featurizer.injection_scale)?;
    classifier::predict_proba(model_c, &xc)
}

/// Accuracy of [`infer`] against the labels of `data`.
pub fn evaluate_two_stage(model_a: &Model, model_c: &Model, data: &Dataset, featurizer: &FeaturizerConfig) -> Result<f64> {
    evaluate_two_stage_against(model_a, model_c, data, featurizer, |e| data.label_index(e))
}

pub(crate) fn evaluate_two_stage_against(
    model_a: &Model,
    model_c: &Model,
    data: &Dataset,
    featurizer: &FeaturizerConfig,
    gold: impl Fn(&crate::dataset::Example) -> usize,
) -> Result<f64> {
    check_model(model_c, ModelKind::Injected, data.label_space(), featurizer)?;
    if data.is_empty() {
        return Err(Error::EmptyEvaluation);
    }
    let mut correct = 0usize;
    for e in data.examples() {
        if infer(model_a, model_c, &e.text, featurizer)?.label == gold(e) {
            correct += 1;
        }
    }
    Ok(correct as f64 / data.len() as f64)
}

/// Accuracy of a plain model against the labels of `data`.
pub fn evaluate_plain(model: &Model, data: &Dataset, featurizer: &FeaturizerConfig) -> Result<f64> {
    check_model(model, ModelKind::Plain, data.label_space(), featurizer)?;
    classifier::evaluate(model, &featurize_dataset(data, featurizer)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::classifier::TrainMeta;
    use crate::dataset::Example;
    use alloc::format;
    use alloc::vec;

    fn feat() -> FeaturizerConfig {
        FeaturizerConfig { hash_dim: 1 << 8, ngram_orders: vec![1], l2_normalize: false, ..Default::default() }
    }

    fn ls2() -> LabelSpace {
        LabelSpace::new(["neg", "pos"]).unwrap()
    }

    fn model_with(kind: ModelKind, ls: &LabelSpace, f: &FeaturizerConfig, w: Vec<f64>, b: Vec<f64>) -> Model {
        let meta = TrainMeta { epochs_run: 0, final_validation_accuracy: None, seed: 0 };
        Model::from_parts(tag_for(kind, ls, f), ls.len(), w, b, meta).unwrap()
    }

    fn bucket(tok: &str, f: &FeaturizerConfig) -> usize {
        featurize(tok, f).unwrap().entries()[0].0 as usize
    }

    /// Class-1 logit = weight of the single token in the text.
    fn token_model(f: &FeaturizerConfig, weights: &[(&str, f64)]) -> Model {
        let d = f.hash_dim;
        let mut w = vec![0.0; 2 * d];
        for (tok, v) in weights {
            w[d + bucket(tok, f)] = *v;
        }
        model_with(ModelKind::Plain, &ls2(), f, w, vec![0.0, 0.0])
    }

    fn data(rows: &[(&str, &str)]) -> Dataset {
        let ex = rows.iter().enumerate().map(|(i, (t, l))| Example::new(format!("i{i}"), *t, *l)).collect();
        Dataset::new(ls2(), ex, "t").unwrap()
    }

    #[test]
    fn model_a_requires_early_stopping() {
        let cfg = LoopConfig { train_a: TrainConfig { early_stop_fraction: 0.0, ..Default::default() }, ..Default::default() };
        let d = data(&[("a", "neg"), ("b", "pos")]);
        assert_eq!(train_model_a(&d, &cfg).unwrap_err(), Error::ModelAMayOverfit);
        assert_eq!(cfg.validate().unwrap_err(), Error::ModelAMayOverfit);
    }

    #[test]
    fn hand_computed_disagreements() {
        let f = feat();
        // logits: good -> +2 (pos), bad -> -2 (neg)
        let m = token_model(&f, &[("good", 2.0), ("bad", -2.0)]);
        let d = data(&[("good", "pos"), ("good", "neg"), ("bad", "neg"), ("bad", "pos"), ("good", "pos")]);
        let flags = flag_disagreements(&m, &d, &f).unwrap();
        let ids: Vec<&str> = flags.iter().map(|x| x.example_id.as_str()).collect();
        assert_eq!(ids, ["i1", "i3"]);
        assert_eq!((flags[0].previous_label.as_str(), flags[0].predicted_label.as_str()), ("neg", "pos"));
        assert_eq!((flags[1].previous_label.as_str(), flags[1].predicted_label.as_str()), ("pos", "neg"));
        let p = 1.0 / (1.0 + libm::exp(-2.0));
        assert!((flags[0].predicted_prob - p).abs() < 1e-12);
        assert!(flags.iter().all(|x| x.reason == FlagReason::Disagreement));
    }

    #[test]
    fn agreeing_model_flags_nothing() {
        let f = feat();
        let m = token_model(&f, &[("good", 2.0), ("bad", -2.0)]);
        let d = data(&[("good", "pos"), ("bad", "neg")]);
        assert!(flag_disagreements(&m, &d, &f).unwrap().is_empty());
    }

    #[test]
    fn low_margin_hand_computed() {
        let f = feat();
        // For K=2, margin = |2σ(z) - 1| = tanh(|z|/2): pick z with margins 0.5, 0.1, 0.3.
        let z = |m: f64| 2.0 * libm::atanh(m);
        let m = token_model(&f, &[("a", z(0.5)), ("b", z(0.1)), ("c", -z(0.3))]);
        let d = data(&[("a", "pos"), ("b", "pos"), ("c", "neg")]);
        let flags = flag_low_margin(&m, &d, &f, 0.2).unwrap();
        assert_eq!(flags.len(), 1);
        assert_eq!(flags[0].example_id, "i1");
        assert!((flags[0].margin - 0.1).abs() < 1e-12);
        assert!(flag_low_margin(&m, &d, &f, 1e-9).unwrap().is_empty());
        assert_eq!(flag_low_margin(&m, &d, &f, 1.0 - 1e-12).unwrap().len(), 3);
        assert!(flag_low_margin(&m, &d, &f, 1.0).is_err());
        assert!(flag_low_margin(&m, &d, &f, 0.0).is_err());
    }

    #[test]
    fn fingerprint_and_kind_checked() {
        let f = feat();
        let m = token_model(&f, &[]);
        let d = data(&[("a", "neg")]);
        let other = FeaturizerConfig { hash_seed: 99, ..feat() };
        assert!(matches!(flag_disagreements(&m, &d, &other), Err(Error::FingerprintMismatch { what: "featurizer", .. })));
        let ls3 = LabelSpace::new(["neg", "pos", "meh"]).unwrap();
        let d3 = Dataset::new(ls3, vec![Example::new("x", "a", "neg")], "t").unwrap();
        assert!(matches!(flag_disagreements(&m, &d3, &f), Err(Error::FingerprintMismatch { what: "label space", .. })));
    }

    fn fr(id: &str, reason: FlagReason, pred: &str) -> FlagRecord {
        FlagRecord {
            example_id: id.into(),
            previous_label: "neg".into(),
            predicted_label: pred.into(),
            predicted_prob: 0.9,
            margin: 0.8,
            reason,
        }
    }

    #[test]
    fn queue_carries_references_and_dedups() {
        let d = data(&[("a", "neg"), ("b", "neg"), ("c", "neg")]);
        let q = build_relabel_queue(&[fr("i0", FlagReason::Disagreement, "pos"), fr("i2", FlagReason::Disagreement, "pos")], &d).unwrap();
        assert_eq!(q.len(), 2);
        assert!(q.items.iter().all(|i| i.status == QueueStatus::Pending && i.ref_prev_label == "neg" && i.ref_pred_label == "pos"));

        let q = build_relabel_queue(&[fr("i1", FlagReason::LowMargin, "neg"), fr("i1", FlagReason::Disagreement, "pos")], &d).unwrap();
        assert_eq!(q.len(), 1);
        assert_eq!(q.items[0].reason, FlagReason::Disagreement);
        assert_eq!(q.items[0].ref_pred_label, "pos");

        assert!(build_relabel_queue(&[], &d).unwrap().is_empty());
        assert_eq!(build_relabel_queue(&[fr("zz", FlagReason::Disagreement, "pos")], &d).unwrap_err(), Error::UnknownId("zz".into()));
    }

    #[test]
    fn constant_model_a_leaves_other_injection_columns_at_zero() {
        let f = feat();
        let a = token_model(&f, &[]);
        let d = data(&[("good x", "pos"), ("bad y", "neg"), ("good z", "pos"), ("bad w", "neg"), ("good q", "pos"), ("bad r", "neg")]);
        let cfg = LoopConfig { featurizer: f.clone(), ..Default::default() };
        assert_eq!(training_injections(&d, &a, &cfg).unwrap(), vec![0; 6]);
        let c = train_model_c(&d, &a, &cfg).unwrap();
        assert_eq!(c.kind(), ModelKind::Injected);
        assert_eq!(c.dim(), f.hash_dim + 2);
        for class in 0..2 {
            assert_eq!(c.row(class)[f.hash_dim + 1], 0.0);
        }
    }

    #[test]
    fn infer_rejects_wrong_kinds() {
        let f = feat();
        let a = token_model(&f, &[]);
        assert!(matches!(infer(&a, &a, "x", &f), Err(Error::KindMismatch { expected: "injected", .. })));
    }

    #[test]
    fn infer_with_zero_injection_block_ignores_stage_one() {
        let f = feat();
        let d = f.hash_dim;
        let mut w = vec![0.0; 2 * (d + 2)];
        w[(d + 2) + bucket("good", &f)] = 1.5;
        let c = model_with(ModelKind::Injected, &ls2(), &f, w, vec![0.1, 0.0]);
        let a_pos = token_model(&f, &[("good", 5.0)]);
        let a_neg = token_model(&f, &[("good", -5.0)]);
        let p1 = infer(&a_pos, &c, "good", &f).unwrap();
        let p2 = infer(&a_neg, &c, "good", &f).unwrap();
        assert_eq!(p1, p2);
        assert_eq!(p1.label, 1);
    }
}
