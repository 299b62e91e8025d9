//! Labeled examples, their label history, splitting, synthetic noise and
//! correction merging.
//!
//! Datasets are values: every operation returns a new [`Dataset`] and leaves
//! its input untouched.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::hash::{hash_bytes, rng_stream};
use crate::{Error, Result};

/// Ordered set of class names. Index `i` is the `i`-th class.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "LabelSpaceRepr", into = "LabelSpaceRepr")]
pub struct LabelSpace {
    classes: Vec<String>,
    index: BTreeMap<String, usize>,
}

#[derive(Serialize, Deserialize)]
struct LabelSpaceRepr {
    classes: Vec<String>,
}

impl TryFrom<LabelSpaceRepr> for LabelSpace {
    type Error = Error;
    fn try_from(r: LabelSpaceRepr) -> Result<Self> {
        LabelSpace::new(r.classes)
    }
}

impl From<LabelSpace> for LabelSpaceRepr {
    fn from(ls: LabelSpace) -> Self {
        LabelSpaceRepr { classes: ls.classes }
    }
}

impl LabelSpace {
    pub fn new<I, S>(classes: I) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let classes: Vec<String> = classes.into_iter().map(Into::into).collect();
        let mut index = BTreeMap::new();
        for (i, c) in classes.iter().enumerate() {
            if c.is_empty() || index.insert(c.clone(), i).is_some() {
                return Err(Error::InvalidClassName(c.clone()));
            }
        }
        if classes.len() < 2 {
            return Err(Error::TooFewClasses(classes.len()));
        }
        Ok(LabelSpace { classes, index })
    }

    pub fn len(&self) -> usize {
        self.classes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.classes.is_empty()
    }

    pub fn classes(&self) -> &[String] {
        &self.classes
    }

    pub fn index_of(&self, class: &str) -> Option<usize> {
        self.index.get(class).copied()
    }

    pub fn class(&self, index: usize) -> Option<&str> {
        self.classes.get(index).map(String::as_str)
    }

    pub fn require(&self, class: &str) -> Result<usize> {
        self.index_of(class).ok_or_else(|| Error::UnknownLabel(class.into()))
    }

    /// Stable hash of the canonical JSON form `{"classes":[...]}`.
    pub fn fingerprint(&self) -> u64 {
        let json = serde_json::to_string(self).expect("label space serializes");
        hash_bytes(0, json.as_bytes())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LabelSource {
    Initial,
    Oracle,
    Human,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HistoryEntry {
    pub label: String,
    pub source: LabelSource,
    pub ts: i64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Example {
    pub id: String,
    pub text: String,
    pub label: String,
    pub label_history: Vec<HistoryEntry>,
    /// Hidden ground truth, only present in synthetic runs.
    pub oracle_label: Option<String>,
}

impl Example {
    pub fn new(id: impl Into<String>, text: impl Into<String>, label: impl Into<String>) -> Self {
        let label = label.into();
        Example {
            id: id.into(),
            text: text.into(),
            label_history: alloc::vec![HistoryEntry {
                label: label.clone(),
                source: LabelSource::Initial,
                ts: 0,
            }],
            label,
            oracle_label: None,
        }
    }

    /// The label the item carried before any correction.
    pub fn initial_label(&self) -> &str {
        &self.label_history[0].label
    }

    pub fn is_noisy(&self) -> Option<bool> {
        self.oracle_label.as_ref().map(|o| *o != self.label)
    }
}

/// One line of the dataset JSONL format.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExampleRecord {
    pub id: String,
    pub text: String,
    pub label: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub oracle_label: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub history: Option<Vec<HistoryEntry>>,
}

impl From<&Example> for ExampleRecord {
    fn from(e: &Example) -> Self {
        ExampleRecord {
            id: e.id.clone(),
            text: e.text.clone(),
            label: e.label.clone(),
            oracle_label: e.oracle_label.clone(),
            history: Some(e.label_history.clone()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    label_space: LabelSpace,
    examples: Vec<Example>,
    pub provenance: String,
}

impl Dataset {
    /// Builds a dataset from already validated parts.
    pub fn new(label_space: LabelSpace, examples: Vec<Example>, provenance: impl Into<String>) -> Result<Self> {
        let mut b = DatasetBuilder::new(Some(label_space));
        for (i, e) in examples.into_iter().enumerate() {
            b.push_example(i + 1, e)?;
        }
        b.finish(provenance)
    }

    pub fn label_space(&self) -> &LabelSpace {
        &self.label_space
    }

    pub fn examples(&self) -> &[Example] {
        &self.examples
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    pub fn position_of(&self, id: &str) -> Option<usize> {
        self.examples.iter().position(|e| e.id == id)
    }

    /// id → position map, for bulk lookups.
    pub fn id_index(&self) -> BTreeMap<&str, usize> {
        self.examples.iter().enumerate().map(|(i, e)| (e.id.as_str(), i)).collect()
    }

    pub fn label_index(&self, example: &Example) -> usize {
        self.label_space.index_of(&example.label).expect("labels are validated on construction")
    }

    /// Examples with the given ids, in the order of `ids`.
    pub fn select<'a, I>(&self, ids: I, provenance: impl Into<String>) -> Result<Dataset>
    where
        I: IntoIterator<Item = &'a str>,
    {
        let index = self.id_index();
        let mut examples = Vec::new();
        for id in ids {
            let &pos = index.get(id).ok_or_else(|| Error::UnknownId(id.into()))?;
            examples.push(self.examples[pos].clone());
        }
        Dataset::new(self.label_space.clone(), examples, provenance)
    }

    /// Same examples with every label replaced by `class` (single-entry history).
    pub fn relabel_all(&self, class: &str) -> Result<Dataset> {
        self.label_space.require(class)?;
        let examples = self
            .examples
            .iter()
            .map(|e| Example { oracle_label: e.oracle_label.clone(), ..Example::new(e.id.clone(), e.text.clone(), class) })
            .collect();
        Dataset::new(self.label_space.clone(), examples, self.provenance.clone())
    }

    pub fn records(&self) -> impl Iterator<Item = ExampleRecord> + '_ {
        self.examples.iter().map(ExampleRecord::from)
    }
}

/// Incremental, validating dataset construction (one JSONL line at a time).
#[derive(Debug)]
pub struct DatasetBuilder {
    fixed_space: Option<LabelSpace>,
    discovered: Vec<String>,
    ids: BTreeSet<String>,
    examples: Vec<Example>,
}

impl DatasetBuilder {
    /// With `None`, the label space is the distinct labels in order of first
    /// appearance (labels inside histories and oracle labels included).
    pub fn new(label_space: Option<LabelSpace>) -> Self {
        DatasetBuilder { fixed_space: label_space, discovered: Vec::new(), ids: BTreeSet::new(), examples: Vec::new() }
    }

    fn check_label(&mut self, label: &str, line: usize) -> Result<()> {
        match &self.fixed_space {
            Some(ls) => {
                if ls.index_of(label).is_none() {
                    return Err(Error::UnknownLabelAt { label: label.into(), line });
                }
            }
            None => {
                if label.is_empty() {
                    return Err(Error::UnknownLabelAt { label: label.into(), line });
                }
                if !self.discovered.iter().any(|c| c == label) {
                    self.discovered.push(label.into());
                }
            }
        }
        Ok(())
    }

    pub fn push_record(&mut self, line: usize, record: ExampleRecord) -> Result<()> {
        let history = match record.history {
            Some(h) => h,
            None => alloc::vec![HistoryEntry { label: record.label.clone(), source: LabelSource::Initial, ts: 0 }],
        };
        self.push_example(
            line,
            Example {
                id: record.id,
                text: record.text,
                label: record.label,
                label_history: history,
                oracle_label: record.oracle_label,
            },
        )
    }

    pub fn push_example(&mut self, line: usize, example: Example) -> Result<()> {
        if example.text.trim().is_empty() {
            return Err(Error::EmptyTextAt { line });
        }
        if self.ids.contains(&example.id) {
            return Err(Error::DuplicateId { id: example.id, line });
        }
        let first = example.label_history.first().ok_or(Error::BadHistory { line, reason: "history is empty" })?;
        if first.source != LabelSource::Initial {
            return Err(Error::BadHistory { line, reason: "first history entry must have source `initial`" });
        }
        if example.label_history.last().map(|h| h.label.as_str()) != Some(example.label.as_str()) {
            return Err(Error::BadHistory { line, reason: "label differs from the last history entry" });
        }
        self.check_label(&example.label, line)?;
        for h in &example.label_history {
            self.check_label(&h.label, line)?;
        }
        if let Some(o) = &example.oracle_label {
            self.check_label(o, line)?;
        }
        self.ids.insert(example.id.clone());
        self.examples.push(example);
        Ok(())
    }

    pub fn finish(self, provenance: impl Into<String>) -> Result<Dataset> {
        let label_space = match self.fixed_space {
            Some(ls) => ls,
            None => LabelSpace::new(self.discovered)?,
        };
        Ok(Dataset { label_space, examples: self.examples, provenance: provenance.into() })
    }
}

/// Partitions `dataset` into (train, test).
///
/// Examples are sorted by id, shuffled with `seed`, and the first
/// `round(n * test_fraction)` go to test. Each side keeps the shuffled order.
pub fn split(dataset: &Dataset, test_fraction: f64, seed: u64) -> Result<(Dataset, Dataset)> {
    let n = dataset.len();
    if n < 2 {
        return Err(Error::TooFewExamples { needed: 2, got: n });
    }
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(Error::DegenerateSplit { n, fraction: test_fraction });
    }
    let n_test = libm::round(n as f64 * test_fraction) as usize;
    if n_test == 0 || n_test >= n {
        return Err(Error::DegenerateSplit { n, fraction: test_fraction });
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| dataset.examples[a].id.cmp(&dataset.examples[b].id));
    order.shuffle(&mut rng_stream(seed, 0));
    let pick = |idx: &[usize]| idx.iter().map(|&i| dataset.examples[i].clone()).collect::<Vec<_>>();
    let test = Dataset {
        label_space: dataset.label_space.clone(),
        examples: pick(&order[..n_test]),
        provenance: format!("{} | split seed={seed} test", dataset.provenance),
    };
    let train = Dataset {
        label_space: dataset.label_space.clone(),
        examples: pick(&order[n_test..]),
        provenance: format!("{} | split seed={seed} train", dataset.provenance),
    };
    Ok((train, test))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseKind {
    /// Flip to a uniformly random different class.
    Uniform,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    pub rate: f64,
    #[serde(default = "default_noise_kind")]
    pub kind: NoiseKind,
    pub seed: u64,
}

fn default_noise_kind() -> NoiseKind {
    NoiseKind::Uniform
}

impl NoiseSpec {
    pub fn uniform(rate: f64, seed: u64) -> Self {
        NoiseSpec { rate, kind: NoiseKind::Uniform, seed }
    }
}

/// Flips each label with probability `spec.rate`.
///
/// Every output example records its pre-noise label in `oracle_label`. A
/// flipped example's history is replaced by a single `initial` entry holding
/// the noisy label, so nothing downstream can see the clean one.
pub fn inject_noise(dataset: &Dataset, spec: &NoiseSpec) -> Result<Dataset> {
    if !(0.0..=1.0).contains(&spec.rate) {
        return Err(Error::InvalidConfig(format!("noise rate {} outside [0, 1]", spec.rate)));
    }
    let k = dataset.label_space.len();
    let mut rng = rng_stream(spec.seed, 0);
    let mut examples = Vec::with_capacity(dataset.len());
    for e in &dataset.examples {
        let original = dataset.label_index(e);
        let flip = rng.random::<f64>() < spec.rate;
        let mut out = e.clone();
        out.oracle_label = Some(e.label.clone());
        if flip {
            let r = rng.random_range(0..k - 1);
            let noisy = if r < original { r } else { r + 1 };
            let noisy = dataset.label_space.classes[noisy].clone();
            out.label_history =
                alloc::vec![HistoryEntry { label: noisy.clone(), source: LabelSource::Initial, ts: e.label_history[0].ts }];
            out.label = noisy;
        }
        examples.push(out);
    }
    Ok(Dataset {
        label_space: dataset.label_space.clone(),
        examples,
        provenance: format!("{} | noise rate={} seed={}", dataset.provenance, spec.rate, spec.seed),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CorrectionSource {
    Oracle,
    Human,
}

impl From<CorrectionSource> for LabelSource {
    fn from(s: CorrectionSource) -> Self {
        match s {
            CorrectionSource::Oracle => LabelSource::Oracle,
            CorrectionSource::Human => LabelSource::Human,
        }
    }
}

/// One annotator decision together with the two references it was shown.
/// This is also one line of the correction log.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorrectionRecord {
    pub id: String,
    pub new_label: String,
    pub source: CorrectionSource,
    pub ref_prev_label: String,
    pub ref_pred_label: String,
    pub ts: i64,
}

/// Applies corrections in order, appending one history entry per record.
pub fn merge_corrections(dataset: &Dataset, corrections: &[CorrectionRecord]) -> Result<Dataset> {
    let index = dataset.id_index();
    let mut targets = Vec::with_capacity(corrections.len());
    for c in corrections {
        let &pos = index.get(c.id.as_str()).ok_or_else(|| Error::UnknownId(c.id.clone()))?;
        dataset.label_space.require(&c.new_label)?;
        targets.push(pos);
    }
    let mut examples = dataset.examples.clone();
    for (c, pos) in corrections.iter().zip(targets) {
        let e = &mut examples[pos];
        e.label_history.push(HistoryEntry { label: c.new_label.clone(), source: c.source.into(), ts: c.ts });
        e.label = c.new_label.clone();
    }
    Ok(Dataset { label_space: dataset.label_space.clone(), examples, provenance: dataset.provenance.clone() })
}
