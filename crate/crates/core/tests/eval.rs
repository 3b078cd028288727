mod common;

use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::Rng;
use ulmv_core::arch::{Model, ModelConfig};
use ulmv_core::data::{make_synthetic_dataset, InputSpec, Normalization, Split, SynthConfig, NORMALIZATION_FILE};
use ulmv_core::eval::{confusion, evaluate_split, metrics, write_predictions, write_report, ConfusionCounts, MetricsReport};
use ulmv_core::Error;

fn counts(tp: usize, fp: usize, tn: usize, fn_: usize) -> ConfusionCounts {
    ConfusionCounts { tp, fp, tn, fn_ }
}

#[test]
fn confusion_examples() {
    assert_eq!(confusion(&[0.9, 0.1], &[1, 0], 0.5).unwrap(), counts(1, 0, 1, 0));
    assert_eq!(confusion(&[0.5], &[1], 0.5).unwrap(), counts(1, 0, 0, 0));
    let flipped = confusion(&[0.0, 1.0, 1.0, 0.0], &[1, 0, 0, 1], 0.5).unwrap();
    assert_eq!((flipped.tp, flipped.tn), (0, 0));
    assert!(confusion(&[], &[], 0.5).is_err());
    assert!(confusion(&[0.2], &[1, 0], 0.5).is_err());
    assert!(confusion(&[0.2], &[1], 1.0).is_err());
    assert!(confusion(&[0.2], &[2], 0.5).is_err());
}

#[test]
fn confusion_matches_counting_loop() {
    let mut g = common::rng(12);
    let probs: Vec<f64> = (0..1000).map(|_| g.random::<f64>()).collect();
    let labels: Vec<u8> = (0..1000).map(|_| g.random_range(0..2)).collect();
    let (mut tp, mut fp, mut tn, mut fn_) = (0, 0, 0, 0);
    for i in 0..1000 {
        match (probs[i] >= 0.37, labels[i]) {
            (true, 1) => tp += 1,
            (true, _) => fp += 1,
            (false, 0) => tn += 1,
            (false, _) => fn_ += 1,
        }
    }
    assert_eq!(confusion(&probs, &labels, 0.37).unwrap(), counts(tp, fp, tn, fn_));
}

#[test]
fn metric_examples() {
    let m = metrics(&counts(5, 0, 5, 0));
    assert_eq!([m.accuracy, m.precision, m.recall, m.f1], [1.0; 4]);
    assert!(m.degenerate_flags.is_empty());
    let m = metrics(&counts(2, 1, 6, 1));
    assert!((m.precision - 2.0 / 3.0).abs() < 1e-15);
    assert!((m.recall - 2.0 / 3.0).abs() < 1e-15);
    assert!((m.f1 - 2.0 / 3.0).abs() < 1e-15);
    assert_eq!(m.accuracy, 0.8);
    let m = metrics(&counts(0, 0, 3, 2));
    assert_eq!(m.precision, 0.0);
    assert!(m.degenerate_flags.iter().any(|f| f == "precision"));
    assert!(m.degenerate_flags.iter().any(|f| f == "f1"));
    assert!([m.accuracy, m.precision, m.recall, m.f1].iter().all(|v| v.is_finite()));
}

#[test]
fn threshold_nudge_without_crossings_is_invisible() {
    let probs = [0.1, 0.49, 0.51, 0.9, 0.5 - 1e-9, 0.5 + 1e-9];
    let labels = [0, 1, 1, 1, 0, 0];
    let a = MetricsReport::new("test", 0.5, confusion(&probs, &labels, 0.5).unwrap());
    let b = MetricsReport::new("test", 0.5, confusion(&probs, &labels, 0.5 + 1e-12).unwrap());
    assert_eq!(a, b);
}

#[test]
fn report_has_documented_fields() {
    let r = MetricsReport::new("val", 0.5, counts(3, 1, 4, 2));
    let v: serde_json::Value = serde_json::from_str(&r.to_json()).unwrap();
    let mut keys: Vec<&str> = v.as_object().unwrap().keys().map(String::as_str).collect();
    keys.sort_unstable();
    let mut want = ["split", "n", "threshold", "tp", "fp", "tn", "fn", "accuracy", "precision", "recall", "f1", "degenerate_flags"];
    want.sort_unstable();
    assert_eq!(keys, want);
    assert_eq!(v["n"], 10);
    assert_eq!(v["fn"], 2);
}

fn setup(dir: &std::path::Path) -> (Model, Vec<ulmv_core::data::TileRecord>, InputSpec) {
    let m = make_synthetic_dataset(dir, &SynthConfig { n_per_class: 6, seed: 2, ..SynthConfig::default() }).unwrap();
    let spec = InputSpec { norm: Normalization::load(&dir.join(NORMALIZATION_FILE)).unwrap(), size: [64, 64] };
    let model = Model::new(ModelConfig { input_size: [64, 64], ..ModelConfig::default() }, 1).unwrap();
    (model, m.records, spec)
}

#[test]
fn evaluation_ignores_manifest_order() {
    let dir = tempfile::tempdir().unwrap();
    let (model, mut records, spec) = setup(dir.path());
    let (report, preds) = evaluate_split(&model, dir.path(), &records, Split::Train, &spec, 0.5, 3).unwrap();
    assert_eq!(report.n, preds.len());
    assert_eq!(report.split, "train");
    assert!(preds.windows(2).all(|w| w[0].path < w[1].path));
    records.shuffle(&mut common::rng(8));
    let (again, preds2) = evaluate_split(&model, dir.path(), &records, Split::Train, &spec, 0.5, 5).unwrap();
    assert_eq!(report, again);
    assert_eq!(preds, preds2);

    write_report(&dir.path().join("r.json"), &report).unwrap();
    write_predictions(&dir.path().join("p.csv"), &preds).unwrap();
    let csv = std::fs::read_to_string(dir.path().join("p.csv")).unwrap();
    assert_eq!(csv.lines().next().unwrap(), "path,label,prob,pred");
    assert_eq!(csv.lines().count(), preds.len() + 1);
}

#[test]
fn missing_tiles_are_all_listed() {
    let dir = tempfile::tempdir().unwrap();
    let (model, records, spec) = setup(dir.path());
    let test: Vec<_> = records.iter().filter(|r| r.split == Split::Test).collect();
    assert!(test.len() >= 2);
    for r in &test[..2] {
        std::fs::remove_file(dir.path().join(&r.path)).unwrap();
    }
    let err = evaluate_split(&model, dir.path(), &records, Split::Test, &spec, 0.5, 4).unwrap_err();
    match &err {
        Error::MissingFiles(paths) => assert_eq!(paths.len(), 2),
        e => panic!("unexpected {e}"),
    }
    assert!(err.is_user_error());
    let none: Vec<_> = records.into_iter().filter(|r| r.split != Split::Val).collect();
    assert!(evaluate_split(&model, dir.path(), &none, Split::Val, &spec, 0.5, 4).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]
    #[test]
    fn metrics_are_order_free(pairs in prop::collection::vec((0.0f64..1.0, 0u8..2), 1..300), seed in any::<u64>()) {
        let (p, l): (Vec<f64>, Vec<u8>) = pairs.iter().copied().unzip();
        let base = confusion(&p, &l, 0.5).unwrap();
        let mut shuffled = pairs.clone();
        shuffled.shuffle(&mut common::rng(seed));
        let (p2, l2): (Vec<f64>, Vec<u8>) = shuffled.into_iter().unzip();
        prop_assert_eq!(metrics(&base), metrics(&confusion(&p2, &l2, 0.5).unwrap()));
    }

    #[test]
    fn metric_identities(tp in 0usize..500, fp in 0usize..500, tn in 0usize..500, fn_ in 0usize..500) {
        let c = counts(tp, fp, tn, fn_);
        prop_assume!(c.total() > 0);
        let m = metrics(&c);
        let correct = m.accuracy * c.total() as f64;
        prop_assert_eq!(correct.round(), (tp + tn) as f64);
        prop_assert!((correct - (tp + tn) as f64).abs() < 1e-9);
        if m.precision + m.recall > 0.0 {
            let harmonic = 1.0 / ((1.0 / m.precision + 1.0 / m.recall) / 2.0);
            prop_assert!((m.f1 - harmonic).abs() < 1e-15);
        }
    }
}
