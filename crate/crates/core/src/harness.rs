//! Experiment plumbing: the synthetic corpus, flag metrics, experiment config,
//! the staged end-to-end loop and its report.

use alloc::boxed::Box;
use alloc::collections::BTreeSet;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::classifier::{Model, TrainMeta};
use crate::correction_loop::{
    self, build_relabel_queue, flag_disagreements, flag_low_margin, FlagReason, FlagRecord, FlagScope, LoopConfig,
    RelabelQueue,
};
use crate::dataset::{self, CorrectionRecord, Dataset, Example, LabelSpace, NoiseSpec};
use crate::hash::{mix_indices, rng_stream};
use crate::oracle::{self, OracleConfig};
use crate::{Error, Result};

pub const CONFIG_VERSION: u32 = 1;
pub const REPORT_FORMAT_VERSION: u32 = 1;

/// Logical clock: initial labels carry ts 0, corrections made by the loop ts 1.
pub const CORRECTION_TS: i64 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticCorpusSpec {
    #[serde(default = "d_classes")]
    pub num_classes: usize,
    pub num_examples: usize,
    #[serde(default = "d_vocab")]
    pub vocab_per_class: usize,
    #[serde(default = "d_shared")]
    pub shared_vocab: usize,
    #[serde(default = "d_tokens")]
    pub tokens_per_text: usize,
    #[serde(default = "d_ctp")]
    pub class_token_probability: f64,
    #[serde(default)]
    pub seed: u64,
}

fn d_classes() -> usize {
    10
}
fn d_vocab() -> usize {
    50
}
fn d_shared() -> usize {
    200
}
fn d_tokens() -> usize {
    20
}
fn d_ctp() -> f64 {
    0.5
}

impl SyntheticCorpusSpec {
    pub fn new(num_examples: usize, seed: u64) -> Self {
        SyntheticCorpusSpec {
            num_classes: d_classes(),
            num_examples,
            vocab_per_class: d_vocab(),
            shared_vocab: d_shared(),
            tokens_per_text: d_tokens(),
            class_token_probability: d_ctp(),
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_classes < 2 {
            return Err(Error::TooFewClasses(self.num_classes));
        }
        if self.num_examples == 0 || self.vocab_per_class == 0 || self.shared_vocab == 0 || self.tokens_per_text == 0 {
            return Err(Error::InvalidConfig("corpus sizes must be positive".into()));
        }
        if !(self.class_token_probability > 0.0 && self.class_token_probability < 1.0) {
            return Err(Error::InvalidConfig("class_token_probability must be in (0, 1)".into()));
        }
        Ok(())
    }
}

pub fn class_name(k: usize) -> String {
    format!("c{k}")
}

/// Draw order per example: the class, then for each token a Bernoulli draw
/// (class vocabulary vs shared) followed by the word index.
pub fn generate_corpus(spec: &SyntheticCorpusSpec) -> Result<Dataset> {
    spec.validate()?;
    let ls = LabelSpace::new((0..spec.num_classes).map(class_name))?;
    let mut rng = rng_stream(spec.seed, 0);
    let mut examples = Vec::with_capacity(spec.num_examples);
    for i in 0..spec.num_examples {
        let class = rng.random_range(0..spec.num_classes);
        let mut text = String::new();
        for t in 0..spec.tokens_per_text {
            if t > 0 {
                text.push(' ');
            }
            if rng.random::<f64>() < spec.class_token_probability {
                text.push_str(&format!("c{class}w{}", rng.random_range(0..spec.vocab_per_class)));
            } else {
                text.push_str(&format!("s{}", rng.random_range(0..spec.shared_vocab)));
            }
        }
        let mut e = Example::new(format!("ex{i:06}"), text, class_name(class));
        e.oracle_label = Some(class_name(class));
        examples.push(e);
    }
    Dataset::new(
        ls,
        examples,
        format!(
            "synthetic K={} N={} p={} seed={}",
            spec.num_classes, spec.num_examples, spec.class_token_probability, spec.seed
        ),
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FlagMetrics {
    pub precision: f64,
    pub recall: f64,
}

/// Precision and recall of `flags` against the noisy set
/// `{e : label != oracle_label}` of `data`. Empty flags give precision 1,
/// an empty noisy set gives recall 1.
pub fn flag_metrics(flags: &[FlagRecord], data: &Dataset) -> Result<FlagMetrics> {
    let mut noisy: BTreeSet<&str> = BTreeSet::new();
    for e in data.examples() {
        match e.is_noisy() {
            Some(true) => {
                noisy.insert(e.id.as_str());
            }
            Some(false) => {}
            None => return Err(Error::MissingOracleLabel(e.id.clone())),
        }
    }
    let index = data.id_index();
    let mut flagged: BTreeSet<&str> = BTreeSet::new();
    for f in flags {
        if !index.contains_key(f.example_id.as_str()) {
            return Err(Error::UnknownId(f.example_id.clone()));
        }
        flagged.insert(f.example_id.as_str());
    }
    let hits = flagged.intersection(&noisy).count() as f64;
    Ok(FlagMetrics {
        precision: if flagged.is_empty() { 1.0 } else { hits / flagged.len() as f64 },
        recall: if noisy.is_empty() { 1.0 } else { hits / noisy.len() as f64 },
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AnnotatorConfig {
    Oracle(OracleConfig),
    /// Corrections come from the annotation service's log.
    Human,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub version: u32,
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub notes: String,
    pub corpus: SyntheticCorpusSpec,
    pub noise: NoiseSpec,
    pub test_fraction: f64,
    #[serde(default)]
    pub split_seed: u64,
    #[serde(rename = "loop", default)]
    pub loop_config: LoopConfig,
    pub annotator: AnnotatorConfig,
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.version != CONFIG_VERSION {
            return Err(Error::InvalidConfig(format!("unsupported config version {}", self.version)));
        }
        self.corpus.validate()?;
        if !(0.0..=1.0).contains(&self.noise.rate) {
            return Err(Error::InvalidConfig("noise rate outside [0, 1]".into()));
        }
        if !(self.test_fraction > 0.0 && self.test_fraction < 1.0) {
            return Err(Error::InvalidConfig("test_fraction must be in (0, 1)".into()));
        }
        if let AnnotatorConfig::Oracle(o) = &self.annotator {
            o.validate()?;
        }
        self.loop_config.validate()
    }

    /// Derives every seed in the config from `seed`.
    pub fn reseeded(&self, seed: u64) -> ExperimentConfig {
        let derive = |tag: u64| mix_indices(&[seed, tag]);
        let mut c = self.clone();
        c.corpus.seed = derive(1);
        c.noise.seed = derive(2);
        c.split_seed = derive(3);
        // One training seed for all three models, so B and C differ from A
        // only by their labels and inputs.
        let train_seed = derive(4);
        c.loop_config.train_a.seed = train_seed;
        c.loop_config.train_b.seed = train_seed;
        c.loop_config.train_c.seed = train_seed;
        if let AnnotatorConfig::Oracle(o) = &mut c.annotator {
            o.seed = derive(7);
        }
        c
    }

    pub fn with_annotator(&self, annotator: AnnotatorConfig) -> ExperimentConfig {
        ExperimentConfig { annotator, ..self.clone() }
    }
}

/// Generates the synthetic corpus and injects label noise.
pub fn prepare_pool(config: &ExperimentConfig) -> Result<Dataset> {
    dataset::inject_noise(&generate_corpus(&config.corpus)?, &config.noise)
}

/// Source of corrections for the relabel queue.
pub trait Annotator {
    fn annotate(&mut self, queue: &RelabelQueue, pool: &Dataset) -> Result<Vec<CorrectionRecord>>;
}

/// Simulated annotator driven by the pool's oracle labels.
pub struct OracleAnnotator(pub OracleConfig);

impl Annotator for OracleAnnotator {
    fn annotate(&mut self, queue: &RelabelQueue, pool: &Dataset) -> Result<Vec<CorrectionRecord>> {
        oracle::relabel_queue(queue, pool, &self.0, CORRECTION_TS)
    }
}

/// Corrections collected elsewhere, e.g. read from a human correction log.
pub struct RecordedAnnotator(pub Vec<CorrectionRecord>);

impl Annotator for RecordedAnnotator {
    fn annotate(&mut self, _queue: &RelabelQueue, _pool: &Dataset) -> Result<Vec<CorrectionRecord>> {
        Ok(self.0.clone())
    }
}

pub fn annotator_for(config: &AnnotatorConfig, human_log: Vec<CorrectionRecord>) -> Box<dyn Annotator> {
    match config {
        AnnotatorConfig::Oracle(o) => Box::new(OracleAnnotator(o.clone())),
        AnnotatorConfig::Human => Box::new(RecordedAnnotator(human_log)),
    }
}

/// Flags that feed the relabel queue: disagreements (and low-margin items
/// when a threshold is set) on the training split, then on the test split
/// when the scope includes it.
pub fn queue_flags(model_a: &Model, train: &Dataset, test: &Dataset, config: &LoopConfig) -> Result<Vec<FlagRecord>> {
    let mut scopes = alloc::vec![train];
    if config.flag_scope == FlagScope::TrainAndTest {
        scopes.push(test);
    }
    let mut flags = Vec::new();
    for data in &scopes {
        flags.extend(flag_disagreements(model_a, data, &config.featurizer)?);
    }
    if let Some(t) = config.margin_threshold {
        for data in &scopes {
            flags.extend(flag_low_margin(model_a, data, &config.featurizer, t)?);
        }
    }
    Ok(flags)
}

/// The post-merge pool plus its train/test views (same ids and order as the split).
pub struct Merged {
    pub pool: Dataset,
    pub train: Dataset,
    pub test: Dataset,
}

pub fn merge_stage(pool: &Dataset, train: &Dataset, test: &Dataset, corrections: &[CorrectionRecord]) -> Result<Merged> {
    let merged = dataset::merge_corrections(pool, corrections)?;
    let ids = |d: &Dataset| d.examples().iter().map(|e| e.id.clone()).collect::<Vec<_>>();
    let (train_ids, test_ids) = (ids(train), ids(test));
    Ok(Merged {
        train: merged.select(train_ids.iter().map(String::as_str), format!("{} | merged train", train.provenance))?,
        test: merged.select(test_ids.iter().map(String::as_str), format!("{} | merged test", test.provenance))?,
        pool: merged,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitCounts {
    pub train: usize,
    pub test: usize,
    pub total: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetStats {
    pub n_pool: usize,
    pub n_train: usize,
    pub n_test: usize,
    pub num_classes: usize,
    /// Items whose label differs from the oracle label before relabeling.
    pub injected_noise: Option<SplitCounts>,
    /// Model-A disagreement flags per split; `total` is computed on the whole
    /// pool independently of the two splits.
    pub flags: SplitCounts,
    pub low_margin_flags: usize,
    pub queue_len: usize,
    pub corrections: usize,
    /// Corrections whose new label differs from the label they replaced.
    pub labels_changed: usize,
    pub merged_size: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelScores {
    /// Accuracy against the corrected test labels.
    pub corrected_test: f64,
    /// Accuracy against the oracle labels, when the pool has them.
    pub clean_test: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AccuracyLadder {
    pub model_a: ModelScores,
    pub model_b: ModelScores,
    pub model_c: ModelScores,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingSummary {
    pub model_a: TrainMeta,
    pub model_b: TrainMeta,
    pub model_c: TrainMeta,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub format_version: u32,
    pub config: ExperimentConfig,
    pub dataset: DatasetStats,
    /// Disagreement flags in scope against the injected-noise mask.
    pub flag_metrics: Option<FlagMetrics>,
    pub accuracy: AccuracyLadder,
    pub training: TrainingSummary,
}

impl ExperimentReport {
    /// Flag counts add up across splits and the merge kept every pool item.
    pub fn conservation_holds(&self) -> bool {
        self.dataset.flags.train + self.dataset.flags.test == self.dataset.flags.total
            && self.dataset.merged_size == self.dataset.n_pool
    }
}

/// Everything `build_report` reads.
pub struct ReportInputs<'a> {
    pub config: &'a ExperimentConfig,
    pub pool: &'a Dataset,
    pub train: &'a Dataset,
    pub test: &'a Dataset,
    pub model_a: &'a Model,
    pub flags: &'a [FlagRecord],
    pub queue: &'a RelabelQueue,
    pub corrections: &'a [CorrectionRecord],
    pub merged: &'a Merged,
    pub model_b: &'a Model,
    pub model_c: &'a Model,
}

fn has_oracle(d: &Dataset) -> bool {
    d.examples().iter().all(|e| e.oracle_label.is_some())
}

/// The same examples labeled with their oracle labels; `None` unless every
/// example has one.
pub fn clean_view(d: &Dataset) -> Result<Option<Dataset>> {
    if !has_oracle(d) {
        return Ok(None);
    }
    let examples = d
        .examples()
        .iter()
        .map(|e| {
            let clean = e.oracle_label.clone().expect("checked");
            Example { oracle_label: Some(clean.clone()), ..Example::new(e.id.clone(), e.text.clone(), clean) }
        })
        .collect();
    Dataset::new(d.label_space().clone(), examples, format!("{} | clean", d.provenance)).map(Some)
}

pub fn build_report(inp: &ReportInputs<'_>) -> Result<ExperimentReport> {
    let lc = &inp.config.loop_config;
    let f = &lc.featurizer;
    let count = |d: &Dataset| flag_disagreements(inp.model_a, d, f).map(|v| v.len());
    let flags = SplitCounts { train: count(inp.train)?, test: count(inp.test)?, total: count(inp.pool)? };
    let noise_count = |d: &Dataset| d.examples().iter().filter(|e| e.is_noisy() == Some(true)).count();
    let injected_noise = has_oracle(inp.pool).then(|| SplitCounts {
        train: noise_count(inp.train),
        test: noise_count(inp.test),
        total: noise_count(inp.pool),
    });

    let flag_metrics = if has_oracle(inp.pool) {
        let scope = match lc.flag_scope {
            FlagScope::TrainOnly => inp.train.clone(),
            FlagScope::TrainAndTest => {
                let mut ids: Vec<&str> = inp.train.examples().iter().map(|e| e.id.as_str()).collect();
                ids.extend(inp.test.examples().iter().map(|e| e.id.as_str()));
                inp.pool.select(ids, "flag scope")?
            }
        };
        let disagreements: Vec<FlagRecord> =
            inp.flags.iter().filter(|f| f.reason == FlagReason::Disagreement).cloned().collect();
        Some(flag_metrics(&disagreements, &scope)?)
    } else {
        None
    };

    let index = inp.pool.id_index();
    let labels_changed = inp
        .corrections
        .iter()
        .filter(|c| index.get(c.id.as_str()).is_some_and(|&p| inp.pool.examples()[p].label != c.new_label))
        .count();

    let test = &inp.merged.test;
    let clean = clean_view(test)?;
    let plain_scores = |m: &Model| -> Result<ModelScores> {
        Ok(ModelScores {
            corrected_test: correction_loop::evaluate_plain(m, test, f)?,
            clean_test: clean.as_ref().map(|c| correction_loop::evaluate_plain(m, c, f)).transpose()?,
        })
    };
    let model_c = ModelScores {
        corrected_test: correction_loop::evaluate_two_stage(inp.model_a, inp.model_c, test, f)?,
        clean_test: clean
            .as_ref()
            .map(|c| correction_loop::evaluate_two_stage(inp.model_a, inp.model_c, c, f))
            .transpose()?,
    };

    Ok(ExperimentReport {
        format_version: REPORT_FORMAT_VERSION,
        config: inp.config.clone(),
        dataset: DatasetStats {
            n_pool: inp.pool.len(),
            n_train: inp.train.len(),
            n_test: inp.test.len(),
            num_classes: inp.pool.label_space().len(),
            injected_noise,
            flags,
            low_margin_flags: inp.flags.iter().filter(|f| f.reason == FlagReason::LowMargin).count(),
            queue_len: inp.queue.len(),
            corrections: inp.corrections.len(),
            labels_changed,
            merged_size: inp.merged.pool.len(),
        },
        flag_metrics,
        accuracy: AccuracyLadder { model_a: plain_scores(inp.model_a)?, model_b: plain_scores(inp.model_b)?, model_c },
        training: TrainingSummary {
            model_a: inp.model_a.train_meta().clone(),
            model_b: inp.model_b.train_meta().clone(),
            model_c: inp.model_c.train_meta().clone(),
        },
    })
}

/// Every artifact of one pass through the loop.
pub struct LoopOutcome {
    pub train: Dataset,
    pub test: Dataset,
    pub model_a: Model,
    pub flags: Vec<FlagRecord>,
    pub queue: RelabelQueue,
    pub corrections: Vec<CorrectionRecord>,
    pub merged: Merged,
    pub model_b: Model,
    pub model_c: Model,
    pub report: ExperimentReport,
}

/// Split, train Model-A, flag, queue, annotate, merge, train Model-B and
/// Model-C, evaluate.
pub fn run_full_loop(pool: &Dataset, annotator: &mut dyn Annotator, config: &ExperimentConfig) -> Result<LoopOutcome> {
    config.validate()?;
    let lc = &config.loop_config;
    let (train, test) = dataset::split(pool, config.test_fraction, config.split_seed)?;
    let model_a = correction_loop::train_model_a(&train, lc)?;
    let flags = queue_flags(&model_a, &train, &test, lc)?;
    let queue = build_relabel_queue(&flags, pool)?;
    let corrections = annotator.annotate(&queue, pool)?;
    let merged = merge_stage(pool, &train, &test, &corrections)?;
    let model_b = correction_loop::train_model_b(&merged.train, lc)?;
    let model_c = correction_loop::train_model_c(&merged.train, &model_a, lc)?;
    let report = build_report(&ReportInputs {
        config,
        pool,
        train: &train,
        test: &test,
        model_a: &model_a,
        flags: &flags,
        queue: &queue,
        corrections: &corrections,
        merged: &merged,
        model_b: &model_b,
        model_c: &model_c,
    })?;
    Ok(LoopOutcome { train, test, model_a, flags, queue, corrections, merged, model_b, model_c, report })
}
