//! Core of the relabel pipeline.
//!
//! Everything here is a pure function over in-memory values: the hashed
//! n-gram featurizer, the softmax classifier and its Adam trainer, label-noise
//! injection and flagging, relabel queues, the simulated annotator and the
//! experiment report. File formats, the run directory, the annotation service
//! and the command line live in the `relabel` crate.
//!
//! The crate is `no_std` and only needs `alloc`.
#![no_std]
#![forbid(unsafe_code)]

extern crate alloc;

#[cfg(test)]
extern crate std;

pub mod classifier;
pub mod correction_loop;
pub mod dataset;
mod error;
pub mod featurizer;
pub mod harness;
pub mod hash;
pub mod oracle;

pub use classifier::{Model, ModelKind, Prediction, TrainConfig, TrainMeta};
pub use correction_loop::{
    FlagReason, FlagRecord, FlagScope, InjectionMode, LoopConfig, QueueItem, QueueStatus,
    RelabelQueue,
};
pub use dataset::{
    CorrectionRecord, CorrectionSource, Dataset, Example, HistoryEntry, LabelSource, LabelSpace,
    NoiseSpec,
};
pub use error::{Error, Result};
pub use featurizer::{FeaturizerConfig, SparseVector};
pub use harness::{ExperimentConfig, ExperimentReport, SyntheticCorpusSpec};
pub use oracle::{OracleConfig, OracleErrorMode};
