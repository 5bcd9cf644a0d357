mod common;

use std::collections::HashSet;

use proptest::prelude::*;

use hofdetect::classifier::{BackboneSpec, TrainConfig, decide, train_model};
use hofdetect::corpus::{
    Dedup, Label, Language, LabeledCorpus, SplitSpec, TextSample, UnlabeledPool, merge_corpora,
    normalize_label, read_jsonl, split_corpus, write_jsonl,
};
use hofdetect::eval::{confusion, macro_f1};
use hofdetect::selftrain::{ThresholdPolicy, partition_scores};
use hofdetect::synthetic::SyntheticGenerator;

use common::oracle_macro_f1;

fn label() -> impl Strategy<Value = Label> {
    prop_oneof![Just(Label::Hof), Just(Label::Not)]
}

fn corpus(max: usize) -> impl Strategy<Value = LabeledCorpus> {
    prop::collection::vec(("[a-z ]{1,12}", label()), 2..max).prop_map(|rows| {
        let samples = rows
            .into_iter()
            .enumerate()
            .map(|(i, (text, label))| {
                TextSample::original(format!("r{i}"), format!("{text}{i}"), Some(label), Language::Bodo, "p")
            })
            .collect();
        LabeledCorpus::new(samples).unwrap()
    })
}

fn ids(c: &LabeledCorpus) -> HashSet<String> {
    c.samples().iter().map(|s| s.id.clone()).collect()
}

proptest! {
    #[test]
    fn split_partitions_the_corpus(c in corpus(60), seed in any::<u64>(), f in 0.05f64..0.95, stratified in any::<bool>()) {
        let spec = SplitSpec { train_fraction: f, seed, stratified, validation_fraction: None };
        let (train, heldout) = split_corpus(&c, &spec).unwrap();
        let (a, b) = (ids(&train), ids(&heldout));
        prop_assert!(a.is_disjoint(&b));
        prop_assert_eq!(a.union(&b).cloned().collect::<HashSet<_>>(), ids(&c));
        let expected = ((f * c.len() as f64).round() as usize).clamp(1, c.len() - 1);
        prop_assert_eq!(train.len(), expected);
        let again = split_corpus(&c, &spec).unwrap();
        prop_assert_eq!(&again.0, &train);
        prop_assert_eq!(&again.1, &heldout);
    }

    #[test]
    fn label_normalization_is_idempotent(raw in prop_oneof![
        Just("HOF".to_string()), Just("not".to_string()), Just(" None ".to_string()), "[a-zA-Z]{0,5}"
    ]) {
        if let Ok(l) = normalize_label(&raw) {
            prop_assert_eq!(normalize_label(l.as_str()).unwrap(), l);
        }
    }

    #[test]
    fn jsonl_round_trip_keeps_fingerprint(c in corpus(30)) {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.jsonl");
        write_jsonl(&path, &c).unwrap();
        let back = read_jsonl(&path).unwrap();
        prop_assert_eq!(back.fingerprint(), c.fingerprint());
        prop_assert_eq!(back, c);
    }

    #[test]
    fn merge_by_text_is_idempotent(a in corpus(20), b in corpus(20)) {
        let b = LabeledCorpus::new(
            b.samples().iter().map(|s| TextSample { id: format!("b-{}", s.id), ..s.clone() }).collect()
        ).unwrap();
        let once = merge_corpora(&a, &b, Dedup::ByText).unwrap();
        let twice = merge_corpora(&once, &b, Dedup::ByText).unwrap();
        prop_assert_eq!(once, twice);
    }

    #[test]
    fn decision_consistency(s in 0.0f64..=1.0, t in 0.001f64..0.999) {
        prop_assert_eq!(decide(s, t).unwrap() == Label::Hof, s >= t);
    }

    #[test]
    fn metrics_match_oracle_and_are_class_symmetric(
        pairs in prop::collection::vec((label(), label()), 1..50)
    ) {
        let (pred, gold): (Vec<_>, Vec<_>) = pairs.into_iter().unzip();
        let m = confusion(&pred, &gold).unwrap();
        let f1 = macro_f1(&m).unwrap();
        prop_assert!((0.0..=1.0).contains(&f1));
        prop_assert!((f1 - oracle_macro_f1(&pred, &gold)).abs() <= 1e-12);
        prop_assert_eq!(m.tp + m.fn_, gold.iter().filter(|l| **l == Label::Hof).count());
        prop_assert_eq!(m.tn + m.fp, gold.iter().filter(|l| **l == Label::Not).count());
        let flip = |v: &[Label]| v.iter().map(|l| l.flipped()).collect::<Vec<_>>();
        let swapped = macro_f1(&confusion(&flip(&pred), &flip(&gold)).unwrap()).unwrap();
        prop_assert!((f1 - swapped).abs() <= 1e-12);
    }

    #[test]
    fn pseudo_label_invariants(
        scores in prop::collection::vec(0.0f64..=1.0, 1..100),
        lower in 0.0f64..0.5,
        upper in 0.5f64..=1.0,
        tighten in (0.0f64..=1.0, 0.0f64..=1.0),
    ) {
        let pool = UnlabeledPool::new(
            (0..scores.len())
                .map(|i| TextSample::original(format!("u{i}"), format!("t{i}"), None, Language::Bengali, "p"))
                .collect(),
            "p",
        ).unwrap();
        let loose = ThresholdPolicy::new(0.5, upper, lower).unwrap();
        let tight = ThresholdPolicy::new(
            0.5,
            upper + (1.0 - upper) * tighten.0,
            lower * tighten.1,
        ).unwrap();
        let a = partition_scores(&pool, &scores, &loose, "m");
        let b = partition_scores(&pool, &scores, &tight, "m");
        prop_assert_eq!(a.kept.len() + a.abstained.len(), scores.len());
        for s in &a.kept {
            let score = s.score.unwrap();
            let ok = match s.label.unwrap() {
                Label::Hof => score >= upper,
                Label::Not => score <= lower,
            };
            prop_assert!(ok);
        }
        let kept_a: HashSet<_> = a.kept.iter().map(|s| &s.id).collect();
        prop_assert!(b.kept.iter().all(|s| kept_a.contains(&s.id)));
        // Scores do not depend on the policy.
        for s in &b.kept {
            let same = a.kept.iter().find(|t| t.id == s.id).unwrap();
            prop_assert_eq!(s.score, same.score);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn tiny_scores_in_range_and_per_text(seed in any::<u64>(), texts in prop::collection::vec(".{0,40}", 1..12)) {
        let c = SyntheticGenerator::new(seed).labeled(40, 0.5, "c");
        let model = train_model(&c, &TrainConfig::for_backbone(BackboneSpec::tiny_test(), seed)).unwrap();
        let refs: Vec<&str> = texts.iter().map(String::as_str).collect();
        let scores = model.predict_scores(&refs).unwrap();
        prop_assert_eq!(scores.len(), refs.len());
        for (i, s) in scores.as_slice().iter().enumerate() {
            prop_assert!((0.0..=1.0).contains(s));
            let alone = model.predict_scores(&refs[i..=i]).unwrap();
            prop_assert_eq!(alone.as_slice()[0].to_bits(), s.to_bits());
        }
    }

    #[test]
    fn label_flip_symmetry(seed in any::<u64>()) {
        let mut g = SyntheticGenerator::new(seed);
        let c = g.labeled(60, 0.4, "c");
        let probe = g.labeled(30, 0.5, "q");
        let flipped = LabeledCorpus::new(
            c.samples().iter().map(|s| TextSample { label: s.label.map(Label::flipped), ..s.clone() }).collect()
        ).unwrap();
        let config = TrainConfig::for_backbone(BackboneSpec::tiny_test(), seed);
        let a = train_model(&c, &config).unwrap().predict_scores(&probe.texts()).unwrap();
        let b = train_model(&flipped, &config).unwrap().predict_scores(&probe.texts()).unwrap();
        for (x, y) in a.as_slice().iter().zip(b.as_slice()) {
            prop_assert!((x + y - 1.0).abs() < 1e-9, "{} vs {}", x, y);
            if (x - 0.5).abs() > 1e-9 {
                prop_assert_ne!(decide(*x, 0.5).unwrap(), decide(*y, 0.5).unwrap());
            }
        }
    }
}
