use std::collections::BTreeSet;

use proptest::prelude::*;
use relabel_core::classifier::{argmax, predict_proba, softmax, ModelTag};
use relabel_core::dataset::{inject_noise, merge_corrections, split};
use relabel_core::featurizer::{featurize, inject_prediction_scaled};
use relabel_core::{
    CorrectionRecord, CorrectionSource, Dataset, Example, FeaturizerConfig, LabelSpace, Model, ModelKind, NoiseSpec,
    SparseVector, TrainMeta,
};

fn labels(k: usize) -> LabelSpace {
    LabelSpace::new((0..k).map(|i| format!("l{i}"))).unwrap()
}

fn dataset(n: usize, k: usize, salt: u64) -> Dataset {
    let examples = (0..n)
        .map(|i| Example::new(format!("id{:05}", (i as u64 * 7919 + salt) % 100_000), format!("w{i} x"), format!("l{}", i % k)))
        .collect::<Vec<_>>();
    let mut seen = BTreeSet::new();
    let examples = examples.into_iter().filter(|e| seen.insert(e.id.clone())).collect();
    Dataset::new(labels(k), examples, "prop").unwrap()
}

fn ids(d: &Dataset) -> Vec<String> {
    d.examples().iter().map(|e| e.id.clone()).collect()
}

fn featurizer(dim: usize) -> FeaturizerConfig {
    FeaturizerConfig { hash_dim: dim, ngram_orders: vec![1, 2], ..FeaturizerConfig::default() }
}

proptest! {
    #[test]
    fn split_partitions_the_pool(n in 2usize..400, frac in 0.05f64..0.95, seed in any::<u64>(), salt in any::<u32>()) {
        let d = dataset(n, 3, salt as u64);
        let n = d.len();
        let n_test = (n as f64 * frac).round() as usize;
        prop_assume!(n_test > 0 && n_test < n);
        let (train, test) = split(&d, frac, seed).unwrap();
        prop_assert_eq!(test.len(), n_test);
        prop_assert_eq!(train.len() + test.len(), n);
        let tr: BTreeSet<_> = ids(&train).into_iter().collect();
        let te: BTreeSet<_> = ids(&test).into_iter().collect();
        prop_assert!(tr.is_disjoint(&te));
        let all: BTreeSet<_> = ids(&d).into_iter().collect();
        prop_assert_eq!(tr.union(&te).cloned().collect::<BTreeSet<_>>(), all);
    }

    #[test]
    fn merge_keeps_cardinality_and_touches_only_corrected_ids(
        n in 1usize..200,
        picks in prop::collection::vec((any::<prop::sample::Index>(), 0usize..4), 0..60),
    ) {
        let d = dataset(n, 4, 0);
        let corrections: Vec<CorrectionRecord> = picks
            .iter()
            .enumerate()
            .map(|(t, (i, l))| {
                let e = &d.examples()[i.index(d.len())];
                CorrectionRecord {
                    id: e.id.clone(),
                    new_label: format!("l{l}"),
                    source: CorrectionSource::Oracle,
                    ref_prev_label: e.label.clone(),
                    ref_pred_label: "l0".into(),
                    ts: t as i64 + 1,
                }
            })
            .collect();
        let merged = merge_corrections(&d, &corrections).unwrap();
        prop_assert_eq!(merged.len(), d.len());
        prop_assert_eq!(ids(&merged), ids(&d));
        let corrected: BTreeSet<&str> = corrections.iter().map(|c| c.id.as_str()).collect();
        for (before, after) in d.examples().iter().zip(merged.examples()) {
            let mine: Vec<_> = corrections.iter().filter(|c| c.id == before.id).collect();
            prop_assert_eq!(after.label_history.len(), before.label_history.len() + mine.len());
            match mine.last() {
                Some(last) => prop_assert_eq!(&after.label, &last.new_label),
                None => {
                    prop_assert!(!corrected.contains(before.id.as_str()));
                    prop_assert_eq!(after, before);
                }
            }
        }
    }

    #[test]
    fn injection_projects_back_and_separates_classes(
        entries in prop::collection::btree_map(0u32..64, -5.0f64..5.0, 0..20),
        k in 2usize..12,
        scale in 0.001f64..10.0,
    ) {
        let x = SparseVector::new(64, entries.into_iter().collect()).unwrap();
        let mut seen = BTreeSet::new();
        for class in 0..k {
            let y = inject_prediction_scaled(&x, class, k, scale).unwrap();
            prop_assert_eq!(y.dim(), 64 + k);
            prop_assert_eq!(y.truncate(64).unwrap(), x.clone());
            let extra: Vec<(u32, f64)> = y.entries().iter().copied().filter(|(i, _)| *i >= 64).collect();
            prop_assert_eq!(extra, vec![((64 + class) as u32, scale)]);
            let key = format!("{:?}", y.entries());
            prop_assert!(seen.insert(key));
        }
        prop_assert!(inject_prediction_scaled(&x, k, k, scale).is_err());
    }

    #[test]
    fn softmax_is_a_distribution(logits in prop::collection::vec(-1e4f64..1e4, 1..30)) {
        let p = softmax(&logits);
        let sum: f64 = p.iter().sum();
        prop_assert!((sum - 1.0).abs() <= 1e-9, "sum {}", sum);
        prop_assert!(p.iter().all(|v| v.is_finite() && *v >= 0.0));
        prop_assert_eq!(argmax(&p), argmax(&logits));
    }

    #[test]
    fn features_ignore_whitespace_layout(
        words in prop::collection::vec("[a-zA-Z0-9]{1,8}", 1..15),
        seps in prop::collection::vec(prop::sample::select(vec![" ", "  ", "\t", "\n", " \t "]), 15),
    ) {
        let cfg = featurizer(1 << 12);
        let plain = featurize(&words.join(" "), &cfg).unwrap();
        let mut messy = String::from("  ");
        for (w, s) in words.iter().zip(&seps) {
            messy.push_str(w);
            messy.push_str(s);
        }
        prop_assert_eq!(featurize(&messy, &cfg).unwrap(), plain.clone());
        prop_assert_eq!(featurize(&words.join(" ").to_uppercase(), &cfg).unwrap(), plain);
    }

    #[test]
    fn noise_only_changes_labels(rate in 0.0f64..=1.0, seed in any::<u64>()) {
        let d = dataset(150, 5, 3);
        let noisy = inject_noise(&d, &NoiseSpec::uniform(rate, seed)).unwrap();
        prop_assert_eq!(ids(&noisy), ids(&d));
        for (a, b) in d.examples().iter().zip(noisy.examples()) {
            prop_assert_eq!(&a.text, &b.text);
            prop_assert_eq!(b.oracle_label.as_deref(), Some(a.label.as_str()));
            prop_assert_eq!(b.label_history.len(), 1);
            prop_assert_eq!(&b.label_history[0].label, &b.label);
        }
    }
}

#[test]
fn normalized_features_have_unit_norm() {
    let cfg = featurizer(1 << 10);
    let mut state = 0x2545_f491_4f6c_dd1du64;
    for i in 0..100 {
        let len = 1 + i % 37;
        let text: Vec<String> = (0..len)
            .map(|_| {
                state ^= state << 13;
                state ^= state >> 7;
                state ^= state << 17;
                format!("t{}", state % 50)
            })
            .collect();
        let v = featurize(&text.join(" "), &cfg).unwrap();
        assert!((v.squared_norm().sqrt() - 1.0).abs() < 1e-12, "text {i}");
    }
}

#[test]
fn predicted_class_matches_brute_force_scores() {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
    for trial in 0..100 {
        let k = rng.random_range(2..8);
        let dim = 1 << rng.random_range(2..7);
        let w: Vec<f64> = (0..k * dim).map(|_| rng.random_range(-3.0..3.0)).collect();
        let b: Vec<f64> = (0..k).map(|_| rng.random_range(-1.0..1.0)).collect();
        let tag = ModelTag { kind: ModelKind::Plain, hash_dim: dim, label_space_fingerprint: 0, featurizer_fingerprint: 0 };
        let model = Model::from_parts(tag, k, w.clone(), b.clone(), TrainMeta { epochs_run: 0, final_validation_accuracy: None, seed: 0 }).unwrap();
        let mut idx: Vec<u32> = (0..dim as u32).filter(|_| rng.random_bool(0.4)).collect();
        idx.dedup();
        let x = SparseVector::new(dim, idx.iter().map(|&i| (i, rng.random_range(-2.0..2.0))).collect()).unwrap();

        let mut best = (0usize, f64::NEG_INFINITY);
        for c in 0..k {
            let mut s = b[c];
            for &(i, v) in x.entries() {
                s += w[c * dim + i as usize] * v;
            }
            if s > best.1 {
                best = (c, s);
            }
        }
        let p = predict_proba(&model, &x).unwrap();
        assert_eq!(p.label, best.0, "trial {trial}");
    }
}
