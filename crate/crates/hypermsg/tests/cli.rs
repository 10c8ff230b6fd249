use std::path::Path;
use std::process::{Command, Output};

fn hypermsg(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hypermsg"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8(o.stderr.clone()).unwrap()
}

fn json(o: &Output) -> serde_json::Value {
    assert!(o.status.success(), "stderr: {}", stderr(o));
    serde_json::from_str(&stdout(o)).unwrap()
}

#[test]
fn synth_is_byte_identical_across_runs() {
    let dir = tempfile::tempdir().unwrap();
    for name in ["a.json", "b.json"] {
        let o = hypermsg(
            dir.path(),
            &["synth", "--kind", "planted2", "--nodes", "200", "--seed", "7", "--out", name],
        );
        assert!(o.status.success(), "{}", stderr(&o));
    }
    let a = std::fs::read(dir.path().join("a.json")).unwrap();
    assert_eq!(a, std::fs::read(dir.path().join("b.json")).unwrap());
    let other = hypermsg(dir.path(), &["synth", "--kind", "planted2", "--seed", "8"]);
    assert_ne!(other.stdout, a);
}

#[test]
fn expand_of_the_fano_plane_has_21_edges() {
    let dir = tempfile::tempdir().unwrap();
    for kind in ["fano1", "fano2"] {
        let file = format!("{kind}.json");
        assert!(hypermsg(dir.path(), &["synth", "--kind", kind, "--out", &file]).status.success());
        let o = hypermsg(dir.path(), &["expand", "--data", &file]);
        assert!(o.status.success());
        assert_eq!(stdout(&o).lines().count(), 21);
    }
    let a = hypermsg(dir.path(), &["expand", "--data", "fano1.json"]).stdout;
    let b = hypermsg(dir.path(), &["expand", "--data", "fano2.json"]).stdout;
    assert_eq!(a, b);
}

#[test]
fn stats_of_a_pure_graph_are_all_one() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(
        dir.path().join("g.json"),
        r#"{"num_nodes": 5, "hyperedges": [[0, 1], [1, 2], [2, 3], [3, 0], [0, 2]]}"#,
    )
    .unwrap();
    let v = json(&hypermsg(dir.path(), &["stats", "--data", "g.json"]));
    let ratios = v["ratios"].as_array().unwrap();
    assert_eq!(ratios.len(), 5);
    for r in &ratios[..4] {
        assert_eq!(r.as_f64(), Some(1.0));
    }
    assert!(ratios[4].is_null(), "isolated node has no ratio");
}

#[test]
fn missing_dataset_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let o = hypermsg(dir.path(), &["train", "--data", "nope.json"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("dataset not found"));
    assert!(!dir.path().join("out").exists(), "no partial outputs");
}

#[test]
fn zero_power_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    assert!(hypermsg(dir.path(), &["synth", "--kind", "planted2", "--out", "d.json"])
        .status
        .success());
    let o = hypermsg(dir.path(), &["train", "--data", "d.json", "--p", "0"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("p must be nonzero; use --geometric"));
    let o = hypermsg(dir.path(), &["train", "--data", "d.json", "--p", "1", "--geometric"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn train_then_eval_reproduces_the_test_metric() {
    let dir = tempfile::tempdir().unwrap();
    assert!(
        hypermsg(dir.path(), &["synth", "--kind", "planted2", "--seed", "3", "--out", "d.json"])
            .status
            .success()
    );
    let args = [
        "train",
        "--data",
        "d.json",
        "--epochs",
        "15",
        "--seed",
        "0..2",
        "--alpha",
        "4",
        "--adaptive",
        "--p",
        "2",
    ];
    let report = json(&hypermsg(dir.path(), &[&args[..], &["--jobs", "2", "--out", "run"]].concat()));
    assert_eq!(report["seeds"], serde_json::json!([0, 1, 2]));
    assert_eq!(report["metric_name"], "accuracy");
    let values = report["values"].as_array().unwrap().clone();
    for (i, seed) in [0, 1, 2].iter().enumerate() {
        let ckpt = format!("run/checkpoint-seed{seed}.json");
        let v = json(&hypermsg(dir.path(), &["eval", "--checkpoint", &ckpt, "--data", "d.json"]));
        assert_eq!(v["value"], values[i], "seed {seed}");
    }
    let written: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join("run/metrics.json")).unwrap()).unwrap();
    assert_eq!(written["values"], serde_json::Value::Array(values.clone()));
    let cfg: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join("run/config.json")).unwrap()).unwrap();
    assert_eq!(cfg["train"]["epochs"], 15);
    assert_eq!(cfg["train"]["aggregation"]["alpha"], 4);
    assert_eq!(cfg["train"]["aggregation"]["adaptive"], true);
    assert_eq!(cfg["jobs"], 2);

    // the same seeds on one thread give identical values
    let serial = json(&hypermsg(dir.path(), &[&args[..], &["--jobs", "1", "--out", "run2"]].concat()));
    assert_eq!(serial["values"], serde_json::Value::Array(values));
}

#[test]
fn config_file_is_overridden_by_flags() {
    let dir = tempfile::tempdir().unwrap();
    assert!(
        hypermsg(dir.path(), &["synth", "--kind", "planted2", "--seed", "1", "--out", "d.json"])
            .status
            .success()
    );
    std::fs::write(
        dir.path().join("exp.toml"),
        "data = \"d.json\"\nout = \"fromfile\"\n[train]\nepochs = 3\nhidden = [8]\nseeds = [4]\n[train.aggregation]\nmean = \"geometric\"\n",
    )
    .unwrap();
    let report = json(&hypermsg(dir.path(), &["train", "--config", "exp.toml", "--epochs", "4"]));
    assert_eq!(report["seeds"], serde_json::json!([4]));
    assert_eq!(report["loss_curves"][0].as_array().unwrap().len(), 4);
    let cfg: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join("fromfile/config.json")).unwrap()).unwrap();
    assert_eq!(cfg["train"]["aggregation"]["mean"], "geometric");
    assert_eq!(cfg["train"]["hidden"], serde_json::json!([8]));
}

#[test]
fn eval_with_mismatched_dimensions_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    assert!(hypermsg(dir.path(), &["synth", "--kind", "planted2", "--out", "d.json"])
        .status
        .success());
    assert!(
        hypermsg(dir.path(), &["train", "--data", "d.json", "--epochs", "1", "--out", "run"])
            .status
            .success()
    );
    let uniform = [
        "synth",
        "--kind",
        "uniform",
        "--nodes",
        "32",
        "--features",
        "500",
        "--out",
        "u.json",
    ];
    assert!(hypermsg(dir.path(), &uniform).status.success());
    let o = hypermsg(
        dir.path(),
        &["eval", "--checkpoint", "run/checkpoint-seed0.json", "--data", "u.json"],
    );
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("DimMismatch"));
}

#[test]
fn inductive_train_and_unseen_eval() {
    let dir = tempfile::tempdir().unwrap();
    assert!(
        hypermsg(dir.path(), &["synth", "--kind", "planted2", "--seed", "2", "--out", "d.json"])
            .status
            .success()
    );
    let report = json(&hypermsg(
        dir.path(),
        &["train", "--data", "d.json", "--inductive", "--epochs", "30", "--out", "ind"],
    ));
    assert_eq!(report["exposure_count"], 0);
    let seen = report["seen"]["mean"].as_f64().unwrap();
    let unseen = report["unseen"]["mean"].as_f64().unwrap();
    assert_eq!(report["gap"].as_f64().unwrap(), seen - unseen);
    let v = json(&hypermsg(
        dir.path(),
        &["eval", "--checkpoint", "ind/checkpoint-seed0.json", "--data", "d.json", "--unseen"],
    ));
    assert_eq!(v["seen"]["accuracy"].as_f64().unwrap(), seen);
    assert_eq!(v["unseen"]["accuracy"].as_f64().unwrap(), unseen);
    assert_eq!(v["exposure_count"], 0);
}

#[test]
fn verify_prints_json_lines() {
    let dir = tempfile::tempdir().unwrap();
    for oracle in ["equivariance", "fano", "sampler", "graph-reduction"] {
        let o = hypermsg(dir.path(), &["verify", oracle, "--trials", "5"]);
        assert!(o.status.success(), "{oracle}: {}", stderr(&o));
        let r: serde_json::Value = serde_json::from_str(stdout(&o).trim()).unwrap();
        assert_eq!(r["passed"], true);
    }
    let o = hypermsg(
        dir.path(),
        &["verify", "equivariance", "--adaptive", "--trials", "5", "--seed", "9"],
    );
    assert!(o.status.success());
    let o = hypermsg(dir.path(), &["verify", "sampler", "--p", "0"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn usage_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    for args in [
        &["train", "--alpha", "0"][..],
        &["frobnicate"],
        &["synth", "--kind", "planted3"],
        &["train", "--seed", "5..1"],
    ] {
        assert_eq!(hypermsg(dir.path(), args).status.code(), Some(2), "{args:?}");
    }
}
