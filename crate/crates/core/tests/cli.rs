use std::path::Path;
use std::process::{Command, Output};

use llc::diagnostics::enumerate_architectures;
use llc::graph::{generate_sbm, load_dataset, SbmParams};
use llc::layers::GnnKind;
use llc::supernet::{Architecture, FusionKind, SupernetSpec};
use serde_json::Value;
use tempfile::TempDir;

/// Small-model flags, with `overrides` replacing same-named defaults.
fn tiny(overrides: &[(&str, &str)]) -> Vec<String> {
    let mut flags = vec![("--hidden", "4"), ("--blocks", "2"), ("--epochs", "3"), ("--retrain-epochs", "5")];
    for &(k, v) in overrides {
        match flags.iter_mut().find(|(f, _)| *f == k) {
            Some(slot) => slot.1 = v,
            None => flags.push((k, v)),
        }
    }
    flags.into_iter().flat_map(|(k, v)| [k.to_string(), v.to_string()]).collect()
}

fn with<'a>(mut args: Vec<&'a str>, flags: &'a [String]) -> Vec<&'a str> {
    args.extend(flags.iter().map(String::as_str));
    args
}

fn llc(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_llc")).args(args).output().unwrap()
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn sbm() -> SbmParams {
    SbmParams {
        communities: 2,
        nodes_per_community: 15,
        p_in: 0.3,
        p_out: 0.05,
        feature_dim: 4,
        feature_noise: 0.5,
        seed: 3,
    }
}

fn dataset() -> TempDir {
    let dir = tempfile::tempdir().unwrap();
    let p = sbm();
    let out = llc(&[
        "gen-data",
        "--communities", "2",
        "--nodes-per-community", "15",
        "--p-in", "0.3",
        "--p-out", "0.05",
        "--feature-dim", "4",
        "--feature-noise", "0.5",
        "--seed", &p.seed.to_string(),
        "--with-splits",
        "--out", path(dir.path()),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    dir
}

fn run_ok(args: &[&str]) -> String {
    let out = llc(args);
    assert!(out.status.success(), "{:?}: {}", args, String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn json(p: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(p).unwrap()).unwrap()
}

#[test]
fn gen_data_round_trips() {
    let data = dataset();
    let (g, split) = load_dataset(data.path()).unwrap();
    let expected = generate_sbm(&sbm()).unwrap();
    assert_eq!(g.edges(), expected.edges());
    assert_eq!(g.features(), expected.features());
    assert_eq!(g.labels(), expected.labels());
    assert!(split.is_some());
}

#[test]
fn zero_epoch_search_writes_the_fallback() {
    let data = dataset();
    let out = tempfile::tempdir().unwrap();
    let flags = tiny(&[("--epochs", "0")]);
    run_ok(&with(vec!["search", "--data", path(data.path()), "--out", path(out.path())], &flags));
    let arch = Architecture::from_json(&std::fs::read_to_string(out.path().join("architecture_0.json")).unwrap()).unwrap();
    assert!(arch.fallback_used);
    assert_eq!(arch.blocks.len(), 1);
    assert_eq!(arch.output().predecessors, vec![0]);
    assert_eq!(arch.pruned, vec![1, 2]);
    assert!(out.path().join("manifest.json").exists());
}

#[test]
fn exit_codes_follow_the_error_kind() {
    let data = dataset();
    let out = tempfile::tempdir().unwrap();
    let missing = out.path().join("nope");
    let code = |args: &[&str]| llc(args).status.code().unwrap();
    assert_eq!(code(&["search", "--data", path(&missing), "--out", path(out.path())]), 2);
    assert_eq!(code(&["search", "--data", path(data.path()), "--out", path(out.path()), "--gnn", "gcn"]), 1);
    assert_eq!(code(&["search", "--data", path(data.path()), "--out", path(out.path()), "--blocks", "0"]), 1);
    assert_eq!(code(&["search", "--no-such-flag"]), 1);
    assert_eq!(code(&["train", "--data", path(data.path()), "--out", path(out.path())]), 1);
    assert_eq!(code(&["--help"]), 0);
}

#[test]
fn malformed_architecture_names_the_field() {
    let data = dataset();
    let out = tempfile::tempdir().unwrap();
    let arch = out.path().join("arch.json");
    std::fs::write(
        &arch,
        r#"{"gnn_kind":"sage","hidden_dim":4,"n_gnn_blocks":2,
            "blocks":[{"id":1,"predecessors":[0],"fusion":"NOPE"},{"id":3,"predecessors":[1],"fusion":"SUM"}],
            "pruned":[2],"fallback_used":false}"#,
    )
    .unwrap();
    let o = llc(&["train", "--data", path(data.path()), "--out", path(out.path()), "--arch", path(&arch)]);
    assert_eq!(o.status.code(), Some(1));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("blocks[0].fusion"), "{err}");
}

#[test]
fn oracle_reports_the_enumeration_size() {
    let data = dataset();
    let out = tempfile::tempdir().unwrap();
    let flags = tiny(&[("--blocks", "1"), ("--fusion-subset", "SUM,MAX")]);
    let stdout = run_ok(&with(vec!["oracle", "--data", path(data.path()), "--out", path(out.path())], &flags));
    let (g, _) = load_dataset(data.path()).unwrap();
    let spec = SupernetSpec::new(1, 4, GnnKind::Sage, g.feature_dim(), g.n_classes())
        .with_fusions(&[FusionKind::Sum, FusionKind::Max]);
    let n = enumerate_architectures(&spec, 1000).unwrap().len();
    assert!(stdout.contains(&format!("enumerated {n} architectures")), "{stdout}");
    let result = json(&out.path().join("oracle.json"));
    assert_eq!(result["total"].as_u64(), Some(n as u64));
    assert_eq!(result["ranking"].as_array().unwrap().len(), n);
}

#[test]
fn mad_csv_has_one_row_per_depth() {
    let data = dataset();
    let out = tempfile::tempdir().unwrap();
    let flags = tiny(&[]);
    run_ok(&with(vec!["mad", "--data", path(data.path()), "--out", path(out.path()), "--depths", "2,3"], &flags));
    let csv = std::fs::read_to_string(out.path().join("mad_0.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "depth,accuracy,mad");
    assert_eq!(lines.len(), 3);
    assert!(lines[1].starts_with("2,") && lines[2].starts_with("3,"));
}

#[test]
fn train_aggregate_matches_per_seed_metrics() {
    let data = dataset();
    let out = tempfile::tempdir().unwrap();
    let flags = tiny(&[("--seeds", "3")]);
    run_ok(&with(vec!["train", "--data", path(data.path()), "--out", path(out.path()), "--baseline", "stack2"], &flags));
    let agg = json(&out.path().join("aggregate.json"));
    let accs: Vec<f64> = (0..3)
        .map(|s| json(&out.path().join(format!("metrics_{s}.json")))["test_acc"].as_f64().unwrap())
        .collect();
    let mean = accs.iter().sum::<f64>() / 3.0;
    assert!((agg["mean_test_acc"].as_f64().unwrap() - mean).abs() < 1e-12);
    let recorded: Vec<f64> = agg["test_accs"].as_array().unwrap().iter().map(|v| v.as_f64().unwrap()).collect();
    assert_eq!(recorded, accs);
}

#[test]
fn replay_refuses_a_changed_dataset() {
    let data = dataset();
    let out = tempfile::tempdir().unwrap();
    let flags = tiny(&[("--epochs", "0")]);
    run_ok(&with(vec!["search", "--data", path(data.path()), "--out", path(out.path())], &flags));
    let labels = data.path().join("labels.csv");
    let mut text = std::fs::read_to_string(&labels).unwrap();
    text = text.replacen('0', "1", 1);
    std::fs::write(&labels, text).unwrap();
    let manifest = out.path().join("manifest.json");
    let o = llc(&["replay", "--manifest", path(&manifest), "--out", path(&out.path().join("again"))]);
    assert_eq!(o.status.code(), Some(2));
}
