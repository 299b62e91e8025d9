//! Simulated annotator that answers relabel requests from hidden clean labels.

use alloc::vec::Vec;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::correction_loop::{QueueItem, QueueStatus, RelabelQueue};
use crate::dataset::{CorrectionRecord, CorrectionSource, Dataset, LabelSpace};
use crate::hash::rng_stream;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OracleErrorMode {
    /// On error, confirm the label the item already had.
    KeepPrevious,
    /// On error, pick a uniformly random label other than the clean one.
    UniformWrong,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleConfig {
    #[serde(default)]
    pub error_rate: f64,
    #[serde(default = "default_mode")]
    pub error_mode: OracleErrorMode,
    #[serde(default)]
    pub seed: u64,
}

fn default_mode() -> OracleErrorMode {
    OracleErrorMode::KeepPrevious
}

impl OracleConfig {
    pub fn perfect(seed: u64) -> Self {
        OracleConfig { error_rate: 0.0, error_mode: OracleErrorMode::KeepPrevious, seed }
    }

    /// Always hands back the previous label.
    pub fn worst_case(seed: u64) -> Self {
        OracleConfig { error_rate: 1.0, error_mode: OracleErrorMode::KeepPrevious, seed }
    }

    pub fn validate(&self) -> Result<()> {
        if (0.0..=1.0).contains(&self.error_rate) {
            Ok(())
        } else {
            Err(Error::InvalidConfig(alloc::format!("oracle error_rate {} outside [0, 1]", self.error_rate)))
        }
    }
}

/// One oracle decision. The randomness comes from `(seed, draw_index)` only,
/// so the outcome does not depend on the order items are processed in.
pub fn relabel(
    item: &QueueItem,
    clean_label: &str,
    label_space: &LabelSpace,
    config: &OracleConfig,
    draw_index: u64,
    ts: i64,
) -> Result<CorrectionRecord> {
    config.validate()?;
    let clean = label_space.require(clean_label)?;
    let mut rng = rng_stream(config.seed, draw_index);
    let new_label = if rng.random::<f64>() >= config.error_rate {
        clean_label.into()
    } else {
        match config.error_mode {
            OracleErrorMode::KeepPrevious => item.ref_prev_label.clone(),
            OracleErrorMode::UniformWrong => {
                let r = rng.random_range(0..label_space.len() - 1);
                let wrong = if r < clean { r } else { r + 1 };
                label_space.classes()[wrong].clone()
            }
        }
    };
    Ok(CorrectionRecord {
        id: item.id.clone(),
        new_label,
        source: CorrectionSource::Oracle,
        ref_prev_label: item.ref_prev_label.clone(),
        ref_pred_label: item.ref_pred_label.clone(),
        ts,
    })
}

/// Answers every pending item of `queue`. `pool` supplies the clean labels
/// and the draw index (an item's position in `pool`).
pub fn relabel_queue(queue: &RelabelQueue, pool: &Dataset, config: &OracleConfig, ts: i64) -> Result<Vec<CorrectionRecord>> {
    let index = pool.id_index();
    queue
        .items
        .iter()
        .filter(|i| i.status == QueueStatus::Pending)
        .map(|item| {
            let &pos = index.get(item.id.as_str()).ok_or_else(|| Error::UnknownId(item.id.clone()))?;
            let clean = pool.examples()[pos].oracle_label.as_deref().ok_or_else(|| Error::MissingOracleLabel(item.id.clone()))?;
            relabel(item, clean, pool.label_space(), config, pos as u64, ts)
        })
        .collect()
}
