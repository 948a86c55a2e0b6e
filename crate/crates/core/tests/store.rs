use std::collections::HashSet;
use std::fs;

use grasp_nas::metrics::kendall_tau;
use grasp_nas::predictor::RankTarget;
use grasp_nas::search_space::{sample_unique, Adjacency, ArchJson, ArchSpec, LayerType};
use grasp_nas::store::{
    accuracies_at, holdout, label_pairs, synthetic_accuracy, synthetic_log, BenchRecord,
    BenchmarkStore, DatasetProfile, OracleCurve, PairMode, StoreError, HOLDOUT_FRACTION,
};
use proptest::prelude::*;
use tempfile::TempDir;

fn cifar() -> DatasetProfile {
    DatasetProfile::builtin("cifar10").unwrap()
}

fn record(spec: &ArchSpec, profiles: &[DatasetProfile]) -> BenchRecord {
    profiles.iter().fold(BenchRecord::new(spec.clone()), |r, p| {
        r.with_log(synthetic_log(spec, p, 120).unwrap())
    })
}

fn two_node() -> ArchSpec {
    let mut adj = Adjacency::zeros(2);
    adj.set(0, 1, true);
    ArchSpec::new(adj, vec![LayerType::Input, LayerType::Output]).unwrap()
}

fn external(spec: &ArchSpec, dataset: &str, epochs: &[(u32, f64)]) -> serde_json::Value {
    serde_json::json!({
        "arch": ArchJson::from(spec.clone()),
        "dataset": dataset,
        "input_shape": [3, 32, 32],
        "num_classes": 10,
        "epochs": epochs.iter().map(|&(epoch, val_acc)| serde_json::json!({"epoch": epoch, "val_acc": val_acc})).collect::<Vec<_>>(),
    })
}

fn write(dir: &std::path::Path, name: &str, v: &serde_json::Value) -> std::path::PathBuf {
    let p = dir.join(name);
    fs::write(&p, serde_json::to_vec(v).unwrap()).unwrap();
    p
}

#[test]
fn save_load_round_trip() {
    let dir = TempDir::new().unwrap();
    let store = BenchmarkStore::init(dir.path()).unwrap();
    let specs = sample_unique(20, 1, 0.5).unwrap();
    for s in &specs {
        store.save(&record(s, &DatasetProfile::all_builtin())).unwrap();
    }
    for s in &specs {
        let loaded = store.load(&s.hash()).unwrap();
        assert_eq!(loaded, record(s, &DatasetProfile::all_builtin()));
        let dir = store.root().join(s.hash().as_str());
        assert!(dir.join("arch.json").is_file());
        assert!(dir.join("log_cifar10.json").is_file());
    }
    let reopened = BenchmarkStore::open(dir.path()).unwrap();
    let mut expected: Vec<_> = specs.iter().map(|s| s.hash()).collect();
    expected.sort();
    assert_eq!(reopened.hashes().unwrap(), expected);
    let stats = reopened.stats().unwrap();
    assert_eq!(stats.records, 20);
    assert_eq!(stats.datasets["tiny"].max_epochs, 120);
}

#[test]
fn load_unknown_is_not_found() {
    let dir = TempDir::new().unwrap();
    let store = BenchmarkStore::init(dir.path()).unwrap();
    let h = two_node().hash();
    assert!(matches!(store.load(&h), Err(StoreError::NotFound(x)) if x == h));
    assert!(BenchmarkStore::open(dir.path().join("missing")).is_err());
}

#[test]
fn save_over_different_spec_is_integrity_error() {
    let dir = TempDir::new().unwrap();
    let store = BenchmarkStore::init(dir.path()).unwrap();
    let specs = sample_unique(2, 2, 0.5).unwrap();
    store.save(&BenchRecord::new(specs[0].clone())).unwrap();
    let path = store.root().join(specs[0].hash().as_str()).join("arch.json");
    fs::write(&path, serde_json::to_vec(&ArchJson::from(specs[1].clone())).unwrap()).unwrap();
    assert!(matches!(store.save(&BenchRecord::new(specs[0].clone())), Err(StoreError::Integrity(_))));
}

#[test]
fn invalid_accuracy_is_rejected() {
    let spec = two_node();
    let mut log = synthetic_log(&spec, &cifar(), 5).unwrap();
    log.epochs[2].val_acc = 1.5;
    let dir = TempDir::new().unwrap();
    let store = BenchmarkStore::init(dir.path()).unwrap();
    assert!(store.save(&BenchRecord::new(spec).with_log(log)).is_err());
}

#[test]
fn ingest_cases() {
    let dir = TempDir::new().unwrap();
    let store = BenchmarkStore::init(dir.path().join("store")).unwrap();
    let logs = dir.path().join("logs");
    fs::create_dir(&logs).unwrap();
    assert_eq!(store.ingest_external(&logs, None).unwrap().merged, 0);

    let spec = sample_unique(1, 3, 0.5).unwrap().remove(0);
    write(&logs, "a.json", &external(&spec, "real", &[(1, 0.3), (2, 0.4)]));
    let report = store.ingest_external(&logs, None).unwrap();
    assert_eq!((report.merged, report.errors.len()), (1, 0));
    let loaded = store.load(&spec.hash()).unwrap();
    assert_eq!(loaded.accuracy("real", 2), Some(0.4));

    let extra = TempDir::new().unwrap();
    let more = write(extra.path(), "b.json", &external(&spec, "real", &[(2, 0.4), (3, 0.5)]));
    assert_eq!(store.ingest_external(&more, None).unwrap().merged, 1);
    assert_eq!(store.load(&spec.hash()).unwrap().log("real").unwrap().epochs.len(), 3);

    let conflict = write(extra.path(), "c.json", &external(&spec, "real", &[(3, 0.6)]));
    let report = store.ingest_external(&conflict, None).unwrap();
    assert_eq!(report.merged, 0);
    let msg = report.errors[0].1.to_string();
    assert!(matches!(report.errors[0].1, StoreError::Integrity(_)));
    assert!(msg.contains(spec.hash().as_str()) && msg.contains("real") && msg.contains(", 3)"), "{msg}");

    let bad = extra.path().join("bad");
    fs::create_dir(&bad).unwrap();
    write(&bad, "range.json", &external(&spec, "other", &[(1, 1.2)]));
    fs::write(bad.join("garbage.json"), b"{ not json").unwrap();
    write(&bad, "ok.json", &external(&spec, "other", &[(1, 0.2)]));
    let report = store.ingest_external(&bad, None).unwrap();
    assert_eq!((report.merged, report.errors.len()), (1, 2));
    assert_eq!(store.load(&spec.hash()).unwrap().accuracy("other", 1), Some(0.2));
}

#[test]
fn ingest_dataset_override() {
    let dir = TempDir::new().unwrap();
    let store = BenchmarkStore::init(dir.path().join("s")).unwrap();
    let spec = two_node();
    let f = write(dir.path(), "x.json", &external(&spec, "a", &[(1, 0.2)]));
    store.ingest_external(&f, Some("b")).unwrap();
    let r = store.load(&spec.hash()).unwrap();
    assert!(r.log("a").is_none() && r.log("b").is_some());
}

#[test]
fn oracle_is_deterministic_and_in_range() {
    let specs = sample_unique(100, 4, 0.5).unwrap();
    for p in DatasetProfile::all_builtin() {
        for s in &specs {
            let a = OracleCurve::new(s, &p, 120).unwrap().series();
            let b = OracleCurve::new(s, &p, 120).unwrap().series();
            assert_eq!(a, b);
            assert!(a.iter().all(|&x| x >= p.chance() && x <= 0.999));
            assert!(a[119] >= a[39] - 0.0025, "epoch 120 below epoch 40");
        }
    }
    assert!(synthetic_accuracy(&specs[0], &cifar(), 0, 120).is_err());
    assert!(synthetic_accuracy(&specs[0], &cifar(), 121, 120).is_err());
}

#[test]
fn degenerate_spec_scores_near_chance() {
    for p in DatasetProfile::all_builtin() {
        let curve = OracleCurve::new(&two_node(), &p, 120).unwrap();
        assert_eq!(curve.capacity(), 0.0);
        for acc in curve.series() {
            assert!(acc <= 2.0 * p.chance(), "{}: {acc}", p.name);
        }
    }
}

#[test]
fn early_and_final_rankings_agree() {
    let specs = sample_unique(500, 6, 0.5).unwrap();
    for p in DatasetProfile::all_builtin() {
        let e40: Vec<f64> = specs.iter().map(|s| synthetic_accuracy(s, &p, 40, 120).unwrap()).collect();
        let e120: Vec<f64> = specs.iter().map(|s| synthetic_accuracy(s, &p, 120, 120).unwrap()).collect();
        let tau = kendall_tau(&e40, &e120).unwrap();
        assert!(tau >= 0.7, "{}: tau {tau}", p.name);
    }
}

#[test]
fn profiles_induce_correlated_but_distinct_rankings() {
    let specs = sample_unique(500, 7, 0.5).unwrap();
    let finals: Vec<Vec<f64>> = DatasetProfile::all_builtin()
        .iter()
        .map(|p| specs.iter().map(|s| synthetic_accuracy(s, p, 120, 120).unwrap()).collect())
        .collect();
    for i in 0..finals.len() {
        for j in (i + 1)..finals.len() {
            let tau = kendall_tau(&finals[i], &finals[j]).unwrap();
            assert!(tau > 0.0 && tau < 1.0, "profiles {i},{j}: tau {tau}");
        }
    }
}

#[test]
fn pair_counts_and_consistency() {
    let specs = sample_unique(50, 8, 0.5).unwrap();
    let records: Vec<BenchRecord> = specs.iter().map(|s| record(s, &[cifar()])).collect();
    let accs = accuracies_at(&records, "cifar10", 40).unwrap();
    let ties: usize = (0..50)
        .flat_map(|i| (0..50).map(move |j| (i, j)))
        .filter(|&(i, j)| i != j && accs[i] == accs[j])
        .count();
    let ordered = label_pairs(&accs, PairMode::Ordered, 0);
    assert_eq!(ordered.len(), 2450 - ties);
    assert_eq!(label_pairs(&accs, PairMode::Unordered, 0).len(), (2450 - ties) / 2);
    for p in &ordered {
        let expected = if accs[p.first] > accs[p.second] {
            RankTarget::FirstBetter
        } else {
            RankTarget::SecondBetter
        };
        assert_eq!(p.target, expected);
    }
    let sub = label_pairs(&accs, PairMode::Subsample(300), 9);
    assert_eq!(sub, label_pairs(&accs, PairMode::Subsample(300), 9));
    let distinct: HashSet<_> = sub.iter().map(|p| (p.first, p.second)).collect();
    assert_eq!(distinct.len(), sub.len());
    assert!(sub.len() <= 300 && sub.iter().all(|p| ordered.contains(p)));
}

#[test]
fn ties_and_two_records() {
    assert!(label_pairs(&[0.5, 0.5], PairMode::Ordered, 0).is_empty());
    assert_eq!(label_pairs(&[0.4, 0.5], PairMode::Ordered, 0).len(), 2);
    assert_eq!(label_pairs(&[0.4, 0.5], PairMode::Unordered, 0).len(), 1);
}

#[test]
fn missing_epoch_lists_hashes() {
    let spec = two_node();
    let log = synthetic_log(&spec, &cifar(), 10).unwrap();
    let records = vec![BenchRecord::new(spec.clone()).with_log(log)];
    match accuracies_at(&records, "cifar10", 40) {
        Err(StoreError::MissingEpoch { hashes, .. }) => assert_eq!(hashes, vec![spec.hash().to_string()]),
        other => panic!("unexpected {other:?}"),
    }
}

#[test]
fn holdout_share_is_close_to_target() {
    let specs = sample_unique(2000, 9, 0.5).unwrap();
    let held = specs.iter().filter(|s| holdout(&s.hash(), 3)).count() as f64 / 2000.0;
    assert!((held - HOLDOUT_FRACTION).abs() < 0.03, "{held}");
}

proptest! {
    #[test]
    fn labels_agree_with_direct_comparison(accs in proptest::collection::vec(0.0f64..1.0, 2..40), seed in any::<u64>()) {
        for p in label_pairs(&accs, PairMode::Subsample(100), seed) {
            prop_assert_ne!(p.first, p.second);
            prop_assert_eq!(p.target == RankTarget::FirstBetter, accs[p.first] > accs[p.second]);
        }
    }
}
