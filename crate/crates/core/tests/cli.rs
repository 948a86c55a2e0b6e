use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use tempfile::TempDir;

fn grasp(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_grasp"))
        .args(args)
        .env_remove("GRASP_STORE")
        .output()
        .expect("spawn grasp")
}

fn ok(args: &[&str]) -> String {
    let out = grasp(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn contents(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let p = e.unwrap().path();
            (p.file_name().unwrap().to_string_lossy().into_owned(), fs::read(&p).unwrap())
        })
        .collect()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn help_and_usage_errors() {
    let out = grasp(&["--help"]);
    assert_eq!(out.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&out.stdout).contains("search"));
    assert_eq!(grasp(&["frobnicate"]).status.code(), Some(2));
    assert_eq!(grasp(&["sample", "--count", "x", "--out", "d"]).status.code(), Some(2));
}

#[test]
fn sample_is_deterministic() {
    let dir = TempDir::new().unwrap();
    let (a, b, c) = (dir.path().join("a"), dir.path().join("b"), dir.path().join("c"));
    ok(&["sample", "--count", "10", "--seed", "7", "--out", s(&a)]);
    ok(&["sample", "--count", "10", "--seed", "7", "--out", s(&b)]);
    ok(&["sample", "--count", "10", "--seed", "8", "--out", s(&c)]);
    assert_eq!(contents(&a).len(), 10);
    assert_eq!(contents(&a), contents(&b));
    assert_ne!(contents(&a), contents(&c));
}

#[test]
fn shapes_command_reports_domain_errors() {
    let dir = TempDir::new().unwrap();
    ok(&["sample", "--count", "1", "--out", s(dir.path())]);
    let arch = fs::read_dir(dir.path()).unwrap().next().unwrap().unwrap().path();
    let json: serde_json::Value = serde_json::from_str(&ok(&["shapes", "--arch", s(&arch), "--input", "3x32x32"])).unwrap();
    assert_eq!(json["shapes"][0], serde_json::json!([3, 32, 32]));
    let out = grasp(&["shapes", "--arch", s(&arch), "--input", "3x32x32", "--max", "1x1x1"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn flags_override_config_file() {
    let dir = TempDir::new().unwrap();
    let cfg = dir.path().join("run.toml");
    fs::write(&cfg, "seed = 7\n\n[sample]\ncount = 5\n").unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    ok(&["--config", s(&cfg), "sample", "--out", s(&a)]);
    assert_eq!(contents(&a).len(), 5);
    ok(&["--config", s(&cfg), "sample", "--count", "3", "--out", s(&b)]);
    assert_eq!(contents(&b).len(), 3);
    let direct = dir.path().join("c");
    ok(&["sample", "--count", "5", "--seed", "7", "--out", s(&direct)]);
    assert_eq!(contents(&a), contents(&direct));
}

#[test]
fn end_to_end_recipe() {
    let dir = TempDir::new().unwrap();
    let p = |name: &str| dir.path().join(name);
    let (archs, store) = (p("archs"), p("store"));
    ok(&["sample", "--count", "1000", "--seed", "3", "--out", s(&archs)]);
    ok(&["store", "init", "--store", s(&store)]);
    ok(&["store", "add", "--store", s(&store), "--arch", s(&archs), "--synthetic", "cifar10,tiny"]);
    let stats: serde_json::Value = serde_json::from_str(&ok(&["store", "stats", "--store", s(&store)])).unwrap();
    assert_eq!(stats["records"], 1000);
    assert_eq!(stats["datasets"]["tiny"]["max_epochs"], 120);

    let fit = ["--units", "16", "--epochs", "4", "--max-pairs", "3000"];
    let model = p("model.grgc");
    let mut train = vec!["train", "--store", s(&store), "--dataset", "cifar10", "--label-epoch", "40", "--out", s(&model)];
    train.extend(fit);
    ok(&train);
    assert_eq!(&fs::read(&model).unwrap()[..4], b"GRGC");

    let metrics = p("eval.json");
    ok(&["eval", "--model", s(&model), "--store", s(&store), "--dataset", "tiny", "--metrics", s(&metrics)]);
    let report: serde_json::Value = serde_json::from_slice(&fs::read(&metrics).unwrap()).unwrap();
    assert!(report["architectures"].as_u64().unwrap() > 100);
    assert!(report["pairwise_accuracy"].as_f64().unwrap() > 0.6, "{report}");

    let curves = p("curves.csv");
    let changes = p("changes.csv");
    ok(&["analyze", "--store", s(&store), "--dataset", "cifar10", "--out", s(&curves), "--changes", s(&changes)]);
    let text = fs::read_to_string(&curves).unwrap();
    assert!(text.starts_with("epoch,one_minus_ndcg_at_k,one_minus_ndcg_full\n"));
    assert_eq!(text.lines().count(), 121);
    assert!(text.lines().last().unwrap().ends_with(",0,0"));
    let cross: serde_json::Value = serde_json::from_str(&ok(&["analyze", "--cross", s(&store)])).unwrap();
    assert_eq!(cross["rows"].as_array().unwrap().len(), 2);

    let trace = p("trace.csv");
    let best = p("best.json");
    let mut search = vec![
        "search", "--pool", "200", "--iters", "3", "--per-iter", "10", "--profile", "cifar10",
        "--label-epoch", "40", "--seed", "5", "--trace", s(&trace), "--out", s(&best),
    ];
    search.extend(fit);
    ok(&search);
    let rows: Vec<String> = fs::read_to_string(&trace).unwrap().lines().map(String::from).collect();
    assert_eq!(rows[0], "iteration,evaluated_count,best_acc,precision_at_10");
    assert_eq!(rows.len(), 4);
    let summary: serde_json::Value = serde_json::from_slice(&fs::read(&best).unwrap()).unwrap();
    assert_eq!(summary["evaluated"], 30);

    let before = fs::read_dir(dir.path()).unwrap().count();
    ok(&search);
    assert_eq!(fs::read_to_string(&trace).unwrap().lines().collect::<Vec<_>>(), rows);
    assert_eq!(fs::read_dir(dir.path()).unwrap().count(), before);
}

#[test]
fn store_env_variable_and_ingest() {
    let dir = TempDir::new().unwrap();
    let store = dir.path().join("store");
    ok(&["store", "init", "--store", s(&store)]);
    let log = dir.path().join("log.json");
    fs::write(&log, "{\"arch\":{\"n\":2,\"adjacency\":[\"01\",\"00\"],\"layer_types\":[\"input\",\"output\"]},\"dataset\":\"real\",\"input_shape\":[3,32,32],\"num_classes\":10,\"epochs\":[{\"epoch\":1,\"val_acc\":0.1}]}").unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_grasp"))
        .args(["store", "ingest", "--path", s(&log)])
        .env("GRASP_STORE", &store)
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let report: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(report["merged"], 1);
}
