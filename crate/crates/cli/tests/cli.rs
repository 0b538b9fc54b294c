mod common;

use std::path::Path;

use common::{ltood, ok, read, small_data};
use serde_json::Value;

fn json(path: &Path) -> Value {
    serde_json::from_slice(&read(path)).unwrap()
}

fn csv_rows(path: &Path) -> Vec<Vec<String>> {
    let mut rdr = csv::Reader::from_path(path).unwrap();
    rdr.records().map(|r| r.unwrap().iter().map(str::to_string).collect()).collect()
}

#[test]
fn synth_writes_the_requested_profile() {
    let tmp = tempfile::tempdir().unwrap();
    ok(
        tmp.path(),
        &["synth", "--out", "d", "--n-max", "5000", "--rho", "100", "--test-per-class", "2", "--aux-per-kind", "3", "--ood-test-size", "3"],
    );
    let counts: Vec<usize> = csv_rows(&tmp.path().join("d/counts.csv")).iter().map(|r| r[1].parse().unwrap()).collect();
    assert_eq!(counts, [5000, 2997, 1796, 1077, 645, 387, 232, 139, 83, 50]);
    let groups: Vec<String> = csv_rows(&tmp.path().join("d/counts.csv")).iter().map(|r| r[3].clone()).collect();
    assert_eq!(groups.iter().filter(|g| *g == "head").count(), 4);
    assert_eq!(csv_rows(&tmp.path().join("d/train.csv")).len(), counts.iter().sum::<usize>());
}

#[test]
fn synth_rejects_bad_profiles_without_writing() {
    let tmp = tempfile::tempdir().unwrap();
    for args in [
        &["synth", "--out", "d", "--rho", "0"][..],
        &["synth", "--out", "d", "--k", "1.5"],
        &["synth", "--out", "d", "--C", "0"],
    ] {
        assert_eq!(ltood(tmp.path(), args).status.code(), Some(1), "{args:?}");
    }
    assert!(!tmp.path().join("d").exists());
}

#[test]
fn synth_is_deterministic_per_seed() {
    let tmp = tempfile::tempdir().unwrap();
    small_data(tmp.path(), "a", "5");
    small_data(tmp.path(), "b", "5");
    small_data(tmp.path(), "c", "6");
    for f in ["train.csv", "aux.csv", "test.csv", "counts.csv"] {
        assert_eq!(read(&tmp.path().join("a").join(f)), read(&tmp.path().join("b").join(f)), "{f}");
    }
    assert_ne!(read(&tmp.path().join("a/train.csv")), read(&tmp.path().join("c/train.csv")));
}

#[test]
fn seed_comes_from_the_environment() {
    let tmp = tempfile::tempdir().unwrap();
    small_data(tmp.path(), "a", "8");
    let out = std::process::Command::new(env!("CARGO_BIN_EXE_ltood"))
        .args(["synth", "--out", "b", "--C", "6", "--n-max", "60", "--rho", "10", "--test-per-class", "20"])
        .args(["--aux-per-kind", "120", "--ood-test-size", "90"])
        .env("LTOOD_SEED", "8")
        .current_dir(tmp.path())
        .output()
        .unwrap();
    assert!(out.status.success());
    assert_eq!(read(&tmp.path().join("a/train.csv")), read(&tmp.path().join("b/train.csv")));
}

#[test]
fn train_writes_checkpoint_log_and_label() {
    let tmp = tempfile::tempdir().unwrap();
    let cwd = tmp.path();
    small_data(cwd, "d", "1");
    ok(cwd, &["train", "--out", "m", "--data", "d", "--epochs", "2", "--batch", "12"]);
    for f in ["model.json", "model.bin", "train_log.jsonl", "temperatures.csv", "config.json", "manifest.json"] {
        assert!(cwd.join("m").join(f).is_file(), "{f}");
    }
    let log = String::from_utf8(read(&cwd.join("m/train_log.jsonl"))).unwrap();
    let records: Vec<Value> = log.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert!(!records.is_empty());
    assert!(records.iter().all(|r| r["total"].as_f64().unwrap().is_finite()));
    assert_eq!(json(&cwd.join("m/manifest.json"))["label"], "rscl");

    ok(cwd, &["train", "--out", "b", "--data", "d", "--epochs", "1", "--batch", "12", "--beta", "0", "--gamma", "0"]);
    assert_eq!(json(&cwd.join("b/manifest.json"))["label"], "ocl-baseline");
}

#[test]
fn train_config_errors_are_usage_errors() {
    let tmp = tempfile::tempdir().unwrap();
    let cwd = tmp.path();
    small_data(cwd, "d", "1");
    std::fs::write(cwd.join("typo.json"), r#"{"epochz": 3}"#).unwrap();
    let bad: [&[&str]; 4] = [
        &["train", "--out", "m", "--data", "d", "--config", "typo.json"],
        &["train", "--out", "m", "--data", "d", "--batch", "10"],
        &["train", "--out", "m", "--data", "d", "--stage-split", "1.5"],
        &["train", "--out", "m", "--data", "missing"],
    ];
    for args in bad {
        assert_eq!(ltood(cwd, args).status.code(), Some(1), "{args:?}");
    }
}

#[test]
fn divergence_dumps_a_diagnostic() {
    let tmp = tempfile::tempdir().unwrap();
    let cwd = tmp.path();
    small_data(cwd, "d", "1");
    let out = ltood(cwd, &["train", "--out", "m", "--data", "d", "--epochs", "3", "--batch", "12", "--lr", "1e250"]);
    assert_eq!(out.status.code(), Some(2));
    let diag = json(&cwd.join("m/diagnostic.json"));
    assert!(!diag["id_indices"].as_array().unwrap().is_empty());
}

#[test]
fn resume_continues_from_the_checkpoint_epoch() {
    let tmp = tempfile::tempdir().unwrap();
    let cwd = tmp.path();
    small_data(cwd, "d", "2");
    let train = |extra: &[&str]| {
        let mut args = vec!["train", "--data", "d", "--batch", "12", "--seed", "3"];
        args.extend(extra);
        ok(cwd, &args);
    };
    train(&["--out", "half", "--epochs", "2"]);
    train(&["--out", "rest", "--epochs", "4", "--resume", "half/model.json"]);
    train(&["--out", "again", "--epochs", "4", "--resume", "half/model.json"]);
    let log = String::from_utf8(read(&cwd.join("rest/train_log.jsonl"))).unwrap();
    let epochs: Vec<u64> = log.lines().map(|l| serde_json::from_str::<Value>(l).unwrap()["epoch"].as_u64().unwrap()).collect();
    assert_eq!(epochs.first(), Some(&2));
    assert_eq!(epochs.last(), Some(&3));
    assert!(read(&cwd.join("rest/model.bin")) == read(&cwd.join("again/model.bin")));
    assert!(read(&cwd.join("rest/model.bin")) != read(&cwd.join("half/model.bin")));
}

#[test]
fn mine_and_eval() {
    let tmp = tempfile::tempdir().unwrap();
    let cwd = tmp.path();
    small_data(cwd, "d", "3");
    ok(cwd, &["train", "--out", "m", "--data", "d", "--epochs", "2", "--batch", "12"]);

    ok(cwd, &["mine", "--out", "mined", "--checkpoint", "m/model.json", "--pool", "d/aux.csv", "--batch", "10"]);
    let mined = json(&cwd.join("mined/mined.json"));
    let part = &mined["partition"];
    let mut all: Vec<u64> = Vec::new();
    for key in ["tail_like", "neutral", "head_like"] {
        let ids = part[key].as_array().unwrap();
        assert_eq!(ids.len(), 10, "{key}");
        all.extend(ids.iter().map(|v| v.as_u64().unwrap()));
    }
    all.sort_unstable();
    assert_eq!(all, (0..30).collect::<Vec<u64>>());

    ok(cwd, &["eval", "--out", "e", "--checkpoint", "m/model.json", "--data", "d"]);
    let report = json(&cwd.join("e/metrics.json"));
    let pools = report["pools"].as_array().unwrap();
    assert_eq!(pools.len(), 3);
    let mean = pools.iter().map(|p| p["auroc"].as_f64().unwrap()).sum::<f64>() / 3.0;
    assert!((report["average"]["auroc"].as_f64().unwrap() - mean).abs() < 1e-12);
    let table = String::from_utf8(read(&cwd.join("e/metrics.txt"))).unwrap();
    assert!(table.contains("Average"));

    let single = ["eval", "--out", "e1", "--checkpoint", "m/model.json", "--test", "d/test.csv", "--ood", "d/ood_ambient.csv"];
    ok(cwd, &single);
    assert_eq!(json(&cwd.join("e1/metrics.json"))["pools"].as_array().unwrap().len(), 1);
}

#[test]
fn ablate_over_variant_and_k() {
    let tmp = tempfile::tempdir().unwrap();
    let cwd = tmp.path();
    small_data(cwd, "d", "4");
    let base = ["--data", "d", "--epochs", "1", "--batch", "12"];
    let run = |out: &str, param: &str, values: &str| {
        let mut args = vec!["ablate", "--out", out, "--param", param, "--values", values];
        args.extend(base);
        ok(cwd, &args);
        csv_rows(&cwd.join(out).join("comparison.csv"))
    };
    let rows = run("v", "variant", "sqrt,linear");
    assert_eq!(rows.len(), 2);
    assert!(rows.iter().all(|r| r[3] == "ok"));
    assert_eq!(run("k", "k", "0.2,0.4,0.6").len(), 3);
    let s = run("s", "stage_split", "0,0.75,1");
    assert_eq!(s.len(), 3);

    // one bad run is reported, not fatal
    let rows = run("bad", "k", "0.4,2");
    assert_eq!(rows[0][3], "ok");
    assert!(rows[1][3].starts_with("failed"));
}

#[test]
fn plot_writes_well_formed_svg_and_rejects_empty_input() {
    let tmp = tempfile::tempdir().unwrap();
    let cwd = tmp.path();
    ok(cwd, &["schedule", "--out", "s", "--epochs", "30"]);
    ok(cwd, &["plot", "--out", "p", "--input", "s/temperatures.csv", "--y", "class_1,class_10", "--title", "a < b"]);
    let svg = String::from_utf8(read(&cwd.join("p/temperatures.svg"))).unwrap();
    let doc = roxmltree::Document::parse(&svg).unwrap();
    assert_eq!(doc.root_element().tag_name().name(), "svg");
    assert_eq!(doc.descendants().filter(|n| n.has_tag_name("polyline")).count(), 2);
    assert_eq!(csv_rows(&cwd.join("p/temperatures.csv")).len(), 31);

    std::fs::write(cwd.join("empty.csv"), "").unwrap();
    std::fs::write(cwd.join("header.csv"), "a,b\n").unwrap();
    for input in ["empty.csv", "header.csv", "missing.csv"] {
        assert_eq!(ltood(cwd, &["plot", "--out", "q", "--input", input]).status.code(), Some(1), "{input}");
    }
    assert_eq!(ltood(cwd, &["plot", "--out", "q", "--input", "s/temperatures.csv", "--y", "nope"]).status.code(), Some(1));
}

#[test]
fn schedule_head_class_cools_to_about_a_hundredth() {
    let tmp = tempfile::tempdir().unwrap();
    ok(tmp.path(), &["schedule", "--out", "s"]);
    let rows = csv_rows(&tmp.path().join("s/temperatures.csv"));
    assert_eq!(rows.len(), 201);
    let first: f64 = rows[0][1].parse().unwrap();
    let last: f64 = rows[200][1].parse().unwrap();
    assert_eq!(first, 0.1);
    assert!((last - 0.010530).abs() < 1e-5, "{last}");
    let tail_last: f64 = rows[200][10].parse().unwrap();
    assert!(tail_last > last);

    ok(tmp.path(), &["schedule", "--out", "c", "--counts", "100,10", "--variant", "linear", "--epochs", "4"]);
    assert_eq!(csv_rows(&tmp.path().join("c/temperatures.csv")).len(), 5);
    assert_eq!(ltood(tmp.path(), &["schedule", "--out", "x", "--counts", "10,100"]).status.code(), Some(1));
}

#[test]
fn replay_refuses_changed_inputs() {
    let tmp = tempfile::tempdir().unwrap();
    let cwd = tmp.path();
    ok(cwd, &["schedule", "--out", "s", "--epochs", "5"]);
    ok(cwd, &["plot", "--out", "p", "--input", "s/temperatures.csv"]);
    ok(cwd, &["replay", "p"]);
    assert!(cwd.join("p-replay/temperatures.svg").is_file());
    std::fs::write(cwd.join("s/temperatures.csv"), "epoch,x\n0,1\n").unwrap();
    assert_eq!(ltood(cwd, &["replay", "p/manifest.json", "--out", "p2"]).status.code(), Some(2));
    assert_eq!(ltood(cwd, &["replay", "nowhere"]).status.code(), Some(1));
}

#[test]
fn manifest_records_inputs_and_outputs() {
    let tmp = tempfile::tempdir().unwrap();
    let cwd = tmp.path();
    small_data(cwd, "d", "7");
    let m = json(&cwd.join("d/manifest.json"));
    assert_eq!(m["command"], "synth");
    assert_eq!(m["format"], ltood_cli::manifest::MANIFEST_FORMAT);
    for o in m["outputs"].as_array().unwrap() {
        let path = cwd.join("d").join(o["path"].as_str().unwrap());
        assert_eq!(ltood_cli::manifest::sha256_file(&path).unwrap(), o["sha256"].as_str().unwrap());
    }
}
