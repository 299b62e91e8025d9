//! Run directory: one file per stage artifact plus a manifest for resuming.
//!
//! Every stage reads its inputs from the directory and writes its outputs
//! back, so a resumed run and a fresh one go through identical code. The
//! manifest records, per completed stage, the SHA-256 of each output file and
//! a key derived from the config. A stage is reused only when its key matches,
//! its files are intact, and every earlier stage was reused too.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use relabel_core::correction_loop::{self, build_relabel_queue};
use relabel_core::dataset::{self, Dataset};
use relabel_core::harness::{
    self, annotator_for, build_report, generate_corpus, queue_flags, AnnotatorConfig, ExperimentConfig,
    ExperimentReport, Merged, ModelScores, ReportInputs,
};
use relabel_core::{LabelSpace, Model};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::io;
use crate::model_file::{load_model, save_model};

pub const CONFIG: &str = "config.json";
pub const LABELS: &str = "labels.json";
pub const CORPUS: &str = "corpus.jsonl";
pub const POOL: &str = "pool.jsonl";
pub const TRAIN: &str = "train.jsonl";
pub const TEST: &str = "test.jsonl";
pub const MODEL_A: &str = "model_a.bin";
pub const FLAGS: &str = "flags.jsonl";
pub const QUEUE: &str = "queue.jsonl";
pub const CORRECTIONS: &str = "corrections.jsonl";
pub const MERGED: &str = "merged.jsonl";
pub const MODEL_B: &str = "model_b.bin";
pub const MODEL_C: &str = "model_c.bin";
pub const REPORT: &str = "report.json";
pub const TIMINGS: &str = "timings.json";
pub const MANIFEST: &str = "manifest.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Generate,
    Noise,
    Split,
    TrainA,
    Flag,
    Annotate,
    Merge,
    TrainB,
    TrainC,
    Report,
}

impl Stage {
    pub const ALL: [Stage; 10] = [
        Stage::Generate,
        Stage::Noise,
        Stage::Split,
        Stage::TrainA,
        Stage::Flag,
        Stage::Annotate,
        Stage::Merge,
        Stage::TrainB,
        Stage::TrainC,
        Stage::Report,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Generate => "generate",
            Stage::Noise => "noise",
            Stage::Split => "split",
            Stage::TrainA => "train_a",
            Stage::Flag => "flag",
            Stage::Annotate => "annotate",
            Stage::Merge => "merge",
            Stage::TrainB => "train_b",
            Stage::TrainC => "train_c",
            Stage::Report => "report",
        }
    }

    pub fn outputs(self) -> &'static [&'static str] {
        match self {
            Stage::Generate => &[CORPUS, LABELS],
            Stage::Noise => &[POOL],
            Stage::Split => &[TRAIN, TEST],
            Stage::TrainA => &[MODEL_A],
            Stage::Flag => &[FLAGS, QUEUE],
            Stage::Annotate => &[CORRECTIONS],
            Stage::Merge => &[MERGED],
            Stage::TrainB => &[MODEL_B],
            Stage::TrainC => &[MODEL_C],
            Stage::Report => &[REPORT],
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub key: String,
    pub stages: Vec<StageRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub stage: Stage,
    /// File name → hex SHA-256.
    pub files: BTreeMap<String, String>,
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

#[derive(Debug, Clone, PartialEq)]
pub enum StageStatus {
    Done,
    /// Human annotation mode: the queue is written but no correction log exists yet.
    AwaitingCorrections,
}

#[derive(Debug)]
pub enum RunOutcome {
    Complete(Box<ExperimentReport>),
    AwaitingCorrections { queue: PathBuf, log: PathBuf },
}

/// Accuracy of whichever models exist on the (merged, when present) test split.
#[derive(Debug, Clone, Serialize)]
pub struct EvalSummary {
    pub split: String,
    pub n: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub model_a: Option<ModelScores>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub model_b: Option<ModelScores>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub model_c: Option<ModelScores>,
}

pub struct RunDir {
    root: PathBuf,
}

impl RunDir {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        RunDir { root: root.into() }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }

    pub fn label_space(&self) -> Result<LabelSpace> {
        io::load_label_space(&self.path(LABELS))
    }

    pub fn load_dataset(&self, name: &str) -> Result<Dataset> {
        let ls = self.label_space()?;
        io::load_dataset(&self.path(name), Some(&ls))
    }

    pub fn load_model(&self, name: &str) -> Result<Model> {
        load_model(&self.path(name))
    }

    pub fn manifest(&self) -> Manifest {
        io::read_json(&self.path(MANIFEST)).unwrap_or_default()
    }

    fn write_manifest(&self, m: &Manifest) -> Result<()> {
        io::write_json(&self.path(MANIFEST), m)
    }

    /// Post-merge pool with train/test views in split order.
    pub fn merged(&self) -> Result<Merged> {
        let pool = self.load_dataset(MERGED)?;
        let view = |name: &str| -> Result<Dataset> {
            let ids: Vec<String> = self.load_dataset(name)?.examples().iter().map(|e| e.id.clone()).collect();
            Ok(pool.select(ids.iter().map(String::as_str), format!("merged {name}"))?)
        };
        Ok(Merged { train: view(TRAIN)?, test: view(TEST)?, pool })
    }
}

/// Stage runner bound to one run directory and one config.
pub struct Pipeline {
    dir: RunDir,
    config: ExperimentConfig,
    input: Option<PathBuf>,
    key: String,
    timings: BTreeMap<String, f64>,
}

impl Pipeline {
    /// `input`, when given, replaces the synthetic corpus with a dataset file.
    pub fn new(dir: RunDir, config: ExperimentConfig, input: Option<PathBuf>) -> Result<Self> {
        config.validate()?;
        let key = hex::encode(Sha256::digest(serde_json::to_vec(&config).expect("config serializes")));
        fs::create_dir_all(dir.root()).map_err(|e| Error::io(dir.root(), e))?;
        io::write_json(&dir.path(CONFIG), &config)?;
        Ok(Pipeline { dir, config, input, key, timings: BTreeMap::new() })
    }

    pub fn dir(&self) -> &RunDir {
        &self.dir
    }

    pub fn config(&self) -> &ExperimentConfig {
        &self.config
    }

    /// Wall-clock seconds of the stages executed by this runner.
    pub fn timings(&self) -> &BTreeMap<String, f64> {
        &self.timings
    }

    fn stage_is_current(&self, manifest: &Manifest, stage: Stage) -> Result<bool> {
        if manifest.key != self.key {
            return Ok(false);
        }
        let Some(rec) = manifest.stages.iter().find(|r| r.stage == stage) else {
            return Ok(false);
        };
        for name in stage.outputs() {
            let path = self.dir.path(name);
            if !path.exists() || rec.files.get(*name) != Some(&sha256_file(&path)?) {
                return Ok(false);
            }
        }
        Ok(true)
    }

    fn record(&self, stage: Stage) -> Result<()> {
        let mut manifest = self.dir.manifest();
        if manifest.key != self.key {
            manifest = Manifest { key: self.key.clone(), stages: Vec::new() };
        }
        manifest.stages.retain(|r| r.stage < stage);
        let mut files = BTreeMap::new();
        for name in stage.outputs() {
            files.insert(name.to_string(), sha256_file(&self.dir.path(name))?);
        }
        manifest.stages.push(StageRecord { stage, files });
        self.dir.write_manifest(&manifest)
    }

    /// Executes one stage unconditionally and records it in the manifest
    /// (dropping the records of later stages).
    pub fn run_stage(&mut self, stage: Stage) -> Result<StageStatus> {
        let start = Instant::now();
        let status = self.execute(stage)?;
        if status == StageStatus::Done {
            self.timings.insert(stage.name().into(), start.elapsed().as_secs_f64());
            self.record(stage)?;
        }
        Ok(status)
    }

    /// Runs every stage, reusing the leading stages whose artifacts are intact.
    pub fn run(&mut self) -> Result<RunOutcome> {
        let manifest = self.dir.manifest();
        let mut reusing = true;
        for stage in Stage::ALL {
            if reusing && stage == Stage::Generate && self.input.is_some() {
                // An imported corpus is re-read every time; later stages stay
                // valid as long as the import is byte-identical.
                let start = Instant::now();
                self.execute(stage)?;
                if self.stage_is_current(&manifest, stage)? {
                    continue;
                }
                self.timings.insert(stage.name().into(), start.elapsed().as_secs_f64());
                self.record(stage)?;
                reusing = false;
                continue;
            }
            if reusing && self.stage_is_current(&manifest, stage)? {
                continue;
            }
            reusing = false;
            if self.run_stage(stage)? == StageStatus::AwaitingCorrections {
                return Ok(RunOutcome::AwaitingCorrections {
                    queue: self.dir.path(QUEUE),
                    log: self.dir.path(CORRECTIONS),
                });
            }
        }
        let mut timings: BTreeMap<String, f64> = io::read_json(&self.dir.path(TIMINGS)).unwrap_or_default();
        timings.extend(self.timings.iter().map(|(k, v)| (k.clone(), *v)));
        io::write_json(&self.dir.path(TIMINGS), &timings)?;
        Ok(RunOutcome::Complete(Box::new(io::read_json(&self.dir.path(REPORT))?)))
    }

    fn execute(&self, stage: Stage) -> Result<StageStatus> {
        let d = &self.dir;
        let cfg = &self.config;
        let lc = &cfg.loop_config;
        match stage {
            Stage::Generate => {
                let corpus = match &self.input {
                    Some(p) => io::load_dataset(p, None)?,
                    None => generate_corpus(&cfg.corpus)?,
                };
                io::save_label_space(&d.path(LABELS), corpus.label_space())?;
                io::save_dataset(&d.path(CORPUS), &corpus)?;
            }
            Stage::Noise => {
                let corpus = d.load_dataset(CORPUS)?;
                // Rate 0 leaves the corpus untouched, so imported data without
                // clean labels does not acquire any.
                let pool = if cfg.noise.rate > 0.0 { dataset::inject_noise(&corpus, &cfg.noise)? } else { corpus };
                io::save_dataset(&d.path(POOL), &pool)?;
            }
            Stage::Split => {
                let pool = d.load_dataset(POOL)?;
                let (train, test) = dataset::split(&pool, cfg.test_fraction, cfg.split_seed)?;
                io::save_dataset(&d.path(TRAIN), &train)?;
                io::save_dataset(&d.path(TEST), &test)?;
            }
            Stage::TrainA => {
                let model = correction_loop::train_model_a(&d.load_dataset(TRAIN)?, lc)?;
                save_model(&d.path(MODEL_A), &model)?;
            }
            Stage::Flag => {
                let model_a = d.load_model(MODEL_A)?;
                let (train, test) = (d.load_dataset(TRAIN)?, d.load_dataset(TEST)?);
                let flags = queue_flags(&model_a, &train, &test, lc)?;
                let queue = build_relabel_queue(&flags, &d.load_dataset(POOL)?)?;
                io::save_flags(&d.path(FLAGS), &flags)?;
                io::save_queue(&d.path(QUEUE), &queue)?;
            }
            Stage::Annotate => match &cfg.annotator {
                AnnotatorConfig::Oracle(_) => {
                    let queue = io::load_queue(&d.path(QUEUE))?;
                    let pool = d.load_dataset(POOL)?;
                    let corrections = annotator_for(&cfg.annotator, Vec::new()).annotate(&queue, &pool)?;
                    io::save_corrections(&d.path(CORRECTIONS), &corrections)?;
                }
                AnnotatorConfig::Human => {
                    let log = d.path(CORRECTIONS);
                    if !log.exists() {
                        return Ok(StageStatus::AwaitingCorrections);
                    }
                    io::load_corrections(&log)?;
                }
            },
            Stage::Merge => {
                let corrections = io::load_corrections(&d.path(CORRECTIONS))?;
                let merged = dataset::merge_corrections(&d.load_dataset(POOL)?, &corrections)?;
                io::save_dataset(&d.path(MERGED), &merged)?;
            }
            Stage::TrainB => {
                let model = correction_loop::train_model_b(&d.merged()?.train, lc)?;
                save_model(&d.path(MODEL_B), &model)?;
            }
            Stage::TrainC => {
                let model_a = d.load_model(MODEL_A)?;
                let model = correction_loop::train_model_c(&d.merged()?.train, &model_a, lc)?;
                save_model(&d.path(MODEL_C), &model)?;
            }
            Stage::Report => {
                let report = self.build_report()?;
                io::write_json(&d.path(REPORT), &report)?;
            }
        }
        Ok(StageStatus::Done)
    }

    fn build_report(&self) -> Result<ExperimentReport> {
        let d = &self.dir;
        let merged = d.merged()?;
        let pool = d.load_dataset(POOL)?;
        let (train, test) = (d.load_dataset(TRAIN)?, d.load_dataset(TEST)?);
        let (model_a, model_b, model_c) = (d.load_model(MODEL_A)?, d.load_model(MODEL_B)?, d.load_model(MODEL_C)?);
        let flags = io::load_flags(&d.path(FLAGS))?;
        let queue = io::load_queue(&d.path(QUEUE))?;
        let corrections = io::load_corrections(&d.path(CORRECTIONS))?;
        Ok(build_report(&ReportInputs {
            config: &self.config,
            pool: &pool,
            train: &train,
            test: &test,
            model_a: &model_a,
            flags: &flags,
            queue: &queue,
            corrections: &corrections,
            merged: &merged,
            model_b: &model_b,
            model_c: &model_c,
        })?)
    }

    /// Scores the models present in the directory.
    pub fn evaluate(&self) -> Result<EvalSummary> {
        let d = &self.dir;
        let f = &self.config.loop_config.featurizer;
        let (split, test) = if d.path(MERGED).exists() {
            ("merged test", d.merged()?.test)
        } else {
            ("test", d.load_dataset(TEST)?)
        };
        let clean = harness::clean_view(&test)?;
        let model_a = if d.path(MODEL_A).exists() { Some(d.load_model(MODEL_A)?) } else { None };
        let plain = |name: &str| -> Result<Option<ModelScores>> {
            if !d.path(name).exists() {
                return Ok(None);
            }
            let m = d.load_model(name)?;
            Ok(Some(ModelScores {
                corrected_test: correction_loop::evaluate_plain(&m, &test, f)?,
                clean_test: clean.as_ref().map(|c| correction_loop::evaluate_plain(&m, c, f)).transpose()?,
            }))
        };
        let model_c = match (&model_a, d.path(MODEL_C).exists()) {
            (Some(a), true) => {
                let c = d.load_model(MODEL_C)?;
                Some(ModelScores {
                    corrected_test: correction_loop::evaluate_two_stage(a, &c, &test, f)?,
                    clean_test: clean
                        .as_ref()
                        .map(|t| correction_loop::evaluate_two_stage(a, &c, t, f))
                        .transpose()?,
                })
            }
            _ => None,
        };
        if model_a.is_none() && model_c.is_none() && !d.path(MODEL_B).exists() {
            return Err(Error::Missing(d.path(MODEL_A)));
        }
        Ok(EvalSummary { split: split.into(), n: test.len(), model_a: plain(MODEL_A)?, model_b: plain(MODEL_B)?, model_c })
    }
}
