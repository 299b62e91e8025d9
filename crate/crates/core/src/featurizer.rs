//! Hashed n-gram text features and the prediction one-hot block.
//!
//! A text becomes a [`SparseVector`] of dimension `hash_dim`: whitespace
//! tokens (optionally lowercased) are combined into n-grams, each n-gram is
//! hashed with [`crate::hash::SeededHasher`] (tokens joined by a single space)
//! and masked into `[0, hash_dim)`, and the value of a bucket is the number of
//! n-grams that landed in it. Counts are optionally L2-normalized.
//!
//! [`inject_prediction`] appends a dedicated `K`-wide block after the hashed
//! block, so the injected class never collides with a text feature.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::dataset::LabelSpace;
use crate::hash::{hash_bytes, SeededHasher};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeaturizerConfig {
    #[serde(default = "default_hash_dim")]
    pub hash_dim: usize,
    #[serde(default = "default_ngram_orders")]
    pub ngram_orders: Vec<usize>,
    #[serde(default = "default_true")]
    pub lowercase: bool,
    #[serde(default = "default_true")]
    pub l2_normalize: bool,
    #[serde(default)]
    pub hash_seed: u64,
    /// Value of the injected one-hot entry.
    #[serde(default = "default_injection_scale")]
    pub injection_scale: f64,
}

fn default_hash_dim() -> usize {
    1 << 18
}
fn default_ngram_orders() -> Vec<usize> {
    alloc::vec![1, 2]
}
fn default_true() -> bool {
    true
}
fn default_injection_scale() -> f64 {
    1.0
}

impl Default for FeaturizerConfig {
    fn default() -> Self {
        FeaturizerConfig {
            hash_dim: default_hash_dim(),
            ngram_orders: default_ngram_orders(),
            lowercase: true,
            l2_normalize: true,
            hash_seed: 0,
            injection_scale: default_injection_scale(),
        }
    }
}

impl FeaturizerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hash_dim < 2 || !self.hash_dim.is_power_of_two() || self.hash_dim > u32::MAX as usize {
            return Err(Error::InvalidConfig(format!("hash_dim {} must be a power of two >= 2", self.hash_dim)));
        }
        if self.ngram_orders.is_empty() || self.ngram_orders.contains(&0) {
            return Err(Error::InvalidConfig("ngram_orders must be non-empty and each >= 1".into()));
        }
        if !(self.injection_scale.is_finite() && self.injection_scale > 0.0) {
            return Err(Error::InvalidConfig(format!("injection_scale {} must be finite and > 0", self.injection_scale)));
        }
        Ok(())
    }

    /// Checks `hash_dim >= K + 1` for the label space the features will be paired with.
    pub fn validate_for(&self, label_space: &LabelSpace) -> Result<()> {
        self.validate()?;
        if self.hash_dim < label_space.len() + 1 {
            return Err(Error::InvalidConfig(format!(
                "hash_dim {} is smaller than K + 1 = {}",
                self.hash_dim,
                label_space.len() + 1
            )));
        }
        Ok(())
    }

    fn canonical(&self) -> FeaturizerConfig {
        let mut c = self.clone();
        c.ngram_orders.sort_unstable();
        c.ngram_orders.dedup();
        c
    }

    /// Stable hash of the canonical JSON form (n-gram orders sorted, deduplicated).
    pub fn fingerprint(&self) -> u64 {
        let json = serde_json::to_string(&self.canonical()).expect("config serializes");
        hash_bytes(0, json.as_bytes())
    }
}

/// Sparse vector with strictly increasing indices and no explicit zeros.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SparseVector {
    dim: usize,
    entries: Vec<(u32, f64)>,
}

impl SparseVector {
    pub fn new(dim: usize, entries: Vec<(u32, f64)>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidVector("dimension must be positive"));
        }
        for w in entries.windows(2) {
            if w[0].0 >= w[1].0 {
                return Err(Error::InvalidVector("indices must be strictly increasing"));
            }
        }
        for &(i, v) in &entries {
            if i as usize >= dim {
                return Err(Error::InvalidVector("index out of range"));
            }
            if v == 0.0 || !v.is_finite() {
                return Err(Error::InvalidVector("values must be finite and non-zero"));
            }
        }
        Ok(SparseVector { dim, entries })
    }

    pub fn empty(dim: usize) -> Result<Self> {
        SparseVector::new(dim, Vec::new())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn entries(&self) -> &[(u32, f64)] {
        &self.entries
    }

    pub fn nnz(&self) -> usize {
        self.entries.len()
    }

    pub fn squared_norm(&self) -> f64 {
        self.entries.iter().map(|&(_, v)| v * v).sum()
    }

    /// `row · self`, accumulated in index order.
    #[inline]
    pub fn dot(&self, row: &[f64]) -> f64 {
        debug_assert_eq!(row.len(), self.dim);
        let mut acc = 0.0;
        for &(i, v) in &self.entries {
            acc += row[i as usize] * v;
        }
        acc
    }

    /// Drops entries at or above `dim` and shrinks the dimension.
    pub fn truncate(&self, dim: usize) -> Result<SparseVector> {
        SparseVector::new(dim, self.entries.iter().copied().filter(|&(i, _)| (i as usize) < dim).collect())
    }
}

/// Lowercased (if configured) whitespace tokens.
pub fn tokenize(text: &str, lowercase: bool) -> Vec<String> {
    text.split_whitespace()
        .map(|t| if lowercase { t.to_lowercase() } else { String::from(t) })
        .collect()
}

pub fn featurize(text: &str, config: &FeaturizerConfig) -> Result<SparseVector> {
    config.validate()?;
    let tokens = tokenize(text, config.lowercase);
    if tokens.is_empty() {
        return Err(Error::EmptyText);
    }
    let mask = (config.hash_dim - 1) as u64;
    let mut orders = config.ngram_orders.clone();
    orders.sort_unstable();
    orders.dedup();

    let mut buckets: Vec<u32> = Vec::new();
    for &n in &orders {
        for gram in tokens.windows(n) {
            let mut h = SeededHasher::new(config.hash_seed);
            for (j, tok) in gram.iter().enumerate() {
                if j > 0 {
                    h.write(b" ");
                }
                h.write(tok.as_bytes());
            }
            buckets.push((h.finish() & mask) as u32);
        }
    }
    buckets.sort_unstable();

    let mut entries: Vec<(u32, f64)> = Vec::new();
    for b in buckets {
        match entries.last_mut() {
            Some((last, count)) if *last == b => *count += 1.0,
            _ => entries.push((b, 1.0)),
        }
    }
    if config.l2_normalize && !entries.is_empty() {
        let norm = libm::sqrt(entries.iter().map(|&(_, v)| v * v).sum::<f64>());
        for e in &mut entries {
            e.1 /= norm;
        }
    }
    Ok(SparseVector { dim: config.hash_dim, entries })
}

/// Appends the one-hot block for `predicted_class` with value 1.0.
pub fn inject_prediction(features: &SparseVector, predicted_class: usize, label_space: &LabelSpace) -> Result<SparseVector> {
    inject_prediction_scaled(features, predicted_class, label_space.len(), 1.0)
}

/// Output has dimension `features.dim() + num_classes` and exactly one extra
/// entry, `(features.dim() + predicted_class, scale)`.
pub fn inject_prediction_scaled(
    features: &SparseVector,
    predicted_class: usize,
    num_classes: usize,
    scale: f64,
) -> Result<SparseVector> {
    if predicted_class >= num_classes {
        return Err(Error::ClassOutOfRange { index: predicted_class, num_classes });
    }
    if !(scale.is_finite() && scale != 0.0) {
        return Err(Error::InvalidVector("injection scale must be finite and non-zero"));
    }
    let dim = features.dim + num_classes;
    if dim > u32::MAX as usize {
        return Err(Error::InvalidVector("dimension exceeds u32 index space"));
    }
    let mut entries = features.entries.clone();
    entries.push(((features.dim + predicted_class) as u32, scale));
    Ok(SparseVector { dim, entries })
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn cfg(dim: usize, orders: &[usize], norm: bool) -> FeaturizerConfig {
        FeaturizerConfig {
            hash_dim: dim,
            ngram_orders: orders.to_vec(),
            lowercase: true,
            l2_normalize: norm,
            hash_seed: 17,
            injection_scale: 1.0,
        }
    }

    fn bucket(tok: &str, c: &FeaturizerConfig) -> u32 {
        (hash_bytes(c.hash_seed, tok.as_bytes()) & (c.hash_dim as u64 - 1)) as u32
    }

    #[test]
    fn counts_unigrams() {
        let c = cfg(1 << 10, &[1], false);
        let v = featurize("a a b", &c).unwrap();
        let (ba, bb) = (bucket("a", &c), bucket("b", &c));
        if ba == bb {
            assert_eq!(v.entries(), &[(ba, 3.0)]);
        } else {
            let mut want = vec![(ba, 2.0), (bb, 1.0)];
            want.sort_by_key(|e| e.0);
            assert_eq!(v.entries(), &want[..]);
        }
    }

    #[test]
    fn bigrams_hash_space_joined_tokens() {
        let c = cfg(1 << 12, &[2], false);
        let v = featurize("Foo   BAR", &c).unwrap();
        assert_eq!(v.entries(), &[(bucket("foo bar", &c), 1.0)]);
    }

    #[test]
    fn deterministic_and_whitespace_insensitive() {
        let c = FeaturizerConfig::default();
        let a = featurize("the quick  brown\tfox", &c).unwrap();
        assert_eq!(a, featurize("the quick  brown\tfox", &c).unwrap());
        assert_eq!(a, featurize("the quick brown fox", &c).unwrap());
    }

    #[test]
    fn empty_text_is_an_error() {
        assert_eq!(featurize("   \n", &FeaturizerConfig::default()).unwrap_err(), Error::EmptyText);
    }

    #[test]
    fn rejects_bad_configs() {
        assert!(cfg(1000, &[1], true).validate().is_err());
        assert!(cfg(1024, &[], true).validate().is_err());
        assert!(cfg(1024, &[0, 1], true).validate().is_err());
        let ls = LabelSpace::new(["a", "b", "c"]).unwrap();
        assert!(cfg(2, &[1], true).validate_for(&ls).is_err());
        assert!(cfg(4, &[1], true).validate_for(&ls).is_ok());
    }

    #[test]
    fn fingerprint_is_order_insensitive_for_ngram_orders() {
        let a = cfg(1 << 10, &[1, 2], true);
        let b = cfg(1 << 10, &[2, 1], true);
        assert_eq!(a.fingerprint(), b.fingerprint());
        assert_ne!(a.fingerprint(), cfg(1 << 11, &[1, 2], true).fingerprint());
    }

    #[test]
    fn inject_on_empty_vector() {
        let ls = LabelSpace::new(["a", "b", "c"]).unwrap();
        let out = inject_prediction(&SparseVector::empty(8).unwrap(), 1, &ls).unwrap();
        assert_eq!(out.dim(), 11);
        assert_eq!(out.entries(), &[(9, 1.0)]);
        assert_eq!(
            inject_prediction(&SparseVector::empty(8).unwrap(), 3, &ls).unwrap_err(),
            Error::ClassOutOfRange { index: 3, num_classes: 3 }
        );
    }

    #[test]
    fn sparse_vector_validation() {
        assert!(SparseVector::new(4, vec![(1, 1.0), (1, 2.0)]).is_err());
        assert!(SparseVector::new(4, vec![(2, 1.0), (1, 2.0)]).is_err());
        assert!(SparseVector::new(4, vec![(4, 1.0)]).is_err());
        assert!(SparseVector::new(4, vec![(0, 0.0)]).is_err());
        assert!(SparseVector::new(0, vec![]).is_err());
    }
}
