//! End-to-end CLI runs against a small generated bundle.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn heco(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_heco"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = heco(args);
    assert!(
        out.status.success(),
        "heco {:?} failed:\n{}",
        args,
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn gen_small_bundle(dir: &Path) {
    ok(&[
        "gen-corpus",
        "--out",
        dir.to_str().unwrap(),
        "--seed",
        "3",
        "--targets-per-class",
        "20",
        "--p-in",
        "0.2",
        "--p-out",
        "0.02",
        "--split-rates",
        "5",
    ]);
}

fn train_args<'a>(bundle: &'a str, out: &'a str, extra: &[&'a str]) -> Vec<&'a str> {
    let mut args = vec![
        "train", "--data", bundle, "--seed", "5", "--out", out, "--epochs", "12", "--lr",
        "0.005", "--dim", "16", "--t-pos", "4", "--sample", "author=4,subject=2",
    ];
    args.extend_from_slice(extra);
    args
}

#[test]
fn pipeline_produces_all_artifacts() {
    let tmp = tempfile::tempdir().unwrap();
    let bundle = tmp.path().join("bundle");
    gen_small_bundle(&bundle);
    let run = tmp.path().join("run");
    ok(&train_args(bundle.to_str().unwrap(), run.to_str().unwrap(), &[]));
    assert!(run.join("checkpoint.json").exists());
    assert!(run.join("loss.csv").exists());
    assert!(run.join("attention.csv").exists());

    let emb = run.join("embeddings.tsv");
    ok(&[
        "embed",
        "--checkpoint",
        run.join("checkpoint.json").to_str().unwrap(),
        "--data",
        bundle.to_str().unwrap(),
        "--out",
        emb.to_str().unwrap(),
    ]);
    let text = fs::read_to_string(&emb).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next().unwrap(), "# variant=heco seed=5 d=16");
    assert_eq!(lines.count(), 60, "one row per target node");

    let report = run.join("report.csv");
    let pca = run.join("pca.tsv");
    let stdout = ok(&[
        "evaluate",
        "--embeddings",
        emb.to_str().unwrap(),
        "--data",
        bundle.to_str().unwrap(),
        "--out",
        report.to_str().unwrap(),
        "--seed",
        "2",
        "--runs",
        "3",
        "--kmeans-restarts",
        "2",
        "--probe-steps",
        "60",
        "--pca",
        pca.to_str().unwrap(),
    ]);
    assert!(stdout.contains("macro_f1"));
    let report_text = fs::read_to_string(&report).unwrap();
    assert!(report_text.starts_with("metric,split,mean,std\n"));
    for metric in ["macro_f1", "micro_f1", "auc"] {
        assert!(report_text.contains(&format!("{metric},5,")), "{metric} row missing");
    }
    assert!(report_text.contains("nmi,-,"));
    assert!(report_text.contains("ari,-,"));
    let pca_text = fs::read_to_string(&pca).unwrap();
    assert!(pca_text.lines().next().unwrap().contains("d=2"));
    assert_eq!(pca_text.lines().count(), 61);
}

#[test]
fn identical_runs_are_byte_identical() {
    let tmp = tempfile::tempdir().unwrap();
    let bundle = tmp.path().join("bundle");
    gen_small_bundle(&bundle);
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    ok(&train_args(bundle.to_str().unwrap(), a.to_str().unwrap(), &[]));
    ok(&train_args(bundle.to_str().unwrap(), b.to_str().unwrap(), &[]));
    for file in ["checkpoint.json", "loss.csv", "attention.csv"] {
        assert_eq!(
            fs::read(a.join(file)).unwrap(),
            fs::read(b.join(file)).unwrap(),
            "{file} differs between identical runs"
        );
    }
}

#[test]
fn hecopp_with_zero_weights_reproduces_heco_loss_curve() {
    let tmp = tempfile::tempdir().unwrap();
    let bundle = tmp.path().join("bundle");
    gen_small_bundle(&bundle);
    let (a, b) = (tmp.path().join("heco"), tmp.path().join("pp"));
    ok(&train_args(bundle.to_str().unwrap(), a.to_str().unwrap(), &[]));
    ok(&train_args(
        bundle.to_str().unwrap(),
        b.to_str().unwrap(),
        &["--variant", "hecopp", "--lambda1", "0", "--lambda2", "0"],
    ));
    assert_eq!(
        fs::read_to_string(a.join("loss.csv")).unwrap(),
        fs::read_to_string(b.join("loss.csv")).unwrap()
    );
}

#[test]
fn gen_corpus_is_deterministic_per_seed() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b, c) = (
        tmp.path().join("a"),
        tmp.path().join("b"),
        tmp.path().join("c"),
    );
    gen_small_bundle(&a);
    gen_small_bundle(&b);
    for entry in fs::read_dir(&a).unwrap() {
        let p = entry.unwrap().path();
        let name = p.file_name().unwrap();
        assert_eq!(
            fs::read(&p).unwrap(),
            fs::read(b.join(name)).unwrap(),
            "{p:?} differs"
        );
    }
    ok(&[
        "gen-corpus", "--out", c.to_str().unwrap(), "--seed", "4",
        "--targets-per-class", "20", "--p-in", "0.2", "--p-out", "0.02",
        "--split-rates", "5",
    ]);
    assert_ne!(
        fs::read(a.join("edges_paper_author.tsv")).unwrap(),
        fs::read(c.join("edges_paper_author.tsv")).unwrap(),
        "different seeds should differ"
    );
}

#[test]
fn unknown_flags_and_bad_paths_fail() {
    let out = heco(&["train", "--data", "/nonexistent", "--seed", "1", "--frobnicate"]);
    assert!(!out.status.success());
    let out = heco(&["train", "--data", "/nonexistent/bundle", "--seed", "1"]);
    assert!(!out.status.success());
    let msg = String::from_utf8_lossy(&out.stderr);
    assert!(msg.contains("error"), "stderr: {msg}");
    // --seed is mandatory for train.
    let out = heco(&["train", "--data", "/nonexistent/bundle"]);
    assert!(!out.status.success());
}

#[test]
fn sweep_aggregates_combos() {
    let tmp = tempfile::tempdir().unwrap();
    let bundle = tmp.path().join("bundle");
    gen_small_bundle(&bundle);
    let sweep_path = tmp.path().join("sweep.toml");
    fs::write(
        &sweep_path,
        r#"
[base]
epochs = 6
dim = 16
lr = 0.005
t_pos = 4
variant = "hecopp"

[grid]
lambda1 = [0.0, 0.5]
tau = [0.6, 0.8]
"#,
    )
    .unwrap();
    let out_dir = tmp.path().join("sweep_out");
    ok(&[
        "sweep",
        "--data",
        bundle.to_str().unwrap(),
        "--sweep",
        sweep_path.to_str().unwrap(),
        "--seed",
        "6",
        "--out",
        out_dir.to_str().unwrap(),
        "--eval-runs",
        "2",
    ]);
    let report = fs::read_to_string(out_dir.join("sweep_report.csv")).unwrap();
    let lines: Vec<&str> = report.lines().collect();
    assert_eq!(lines.len(), 5, "header + 4 combos: {report}");
    assert!(lines[1].contains("lambda1=0") && lines[1].contains("tau=0.6"));
    assert!(out_dir.join("combo3").join("checkpoint.json").exists());
}
