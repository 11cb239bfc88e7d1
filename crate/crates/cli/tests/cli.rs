use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn cane(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cane"))
        .current_dir(dir)
        .env("RUST_LOG", "warn")
        .args(args)
        .output()
        .unwrap()
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let o = cane(dir, args);
    assert!(o.status.success(), "{args:?}: {}", String::from_utf8_lossy(&o.stderr));
    String::from_utf8(o.stdout).unwrap()
}

fn synth(dir: &Path) {
    ok(
        dir,
        &[
            "--seed",
            "3",
            "synth",
            "--dir",
            "data",
            "--communities",
            "4",
            "--users-per-community",
            "15",
            "--bridge-users",
            "16",
            "--narratives",
            "10",
            "--posts-per-user",
            "12",
        ],
    );
}

#[test]
fn stage_by_stage_then_run_is_cached() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    synth(d);
    fs::write(
        d.join("cane.conf"),
        "posts = data/posts.jsonl\nembeddings = data/embeddings.bin\nlabels = data/labels.tsv\nk = 10\nn_perm = 100\n",
    )
    .unwrap();
    for s in ["ingest", "cluster", "affiliate", "graph", "tgraph", "communities", "migrate", "eval"] {
        ok(d, &["--config", "cane.conf", "--out", "run", s]);
    }
    let o = cane(d, &["--config", "cane.conf", "--out", "run", "run"]);
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(o.status.success());
    assert!(!err.contains(": done"), "{err}");
    assert_eq!(err.matches(": cached").count(), 8);

    let te = ok(d, &["--out", "run", "--set", "n_perm=50", "te", "--narrative", "0", "--src", "x", "--dst", "truthsocial"]);
    let v: serde_json::Value = serde_json::from_str(te.trim()).unwrap();
    assert!(v["p"].as_f64().unwrap() > 0.0);

    let b = ok(d, &["--out", "run", "bridges", "--entropy-min", "0.5"]);
    assert!(b.contains("bridge users"));
    ok(d, &["--out", "run", "walks"]);
    assert!(d.join("run/walks.txt").exists());
    ok(d, &["--out", "run", "export-engagement", "--cutoff", "1704100000", "--horizon", "3"]);
    let header = fs::read_to_string(d.join("run/engagement/features.tsv")).unwrap();
    assert!(header.starts_with("user_id\t0\t1"));
}

#[test]
fn missing_upstream_and_bad_config_fail_cleanly() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    let o = cane(d, &["--out", "run", "cluster"]);
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("ingest"));

    let o = cane(d, &["--set", "no_such_key=1", "run"]);
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("no_such_key"));
}

#[test]
fn dedup_reports_and_filters() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    let rows = [
        ("1", "JohnDoe", "x"),
        ("2", "johndoe1", "truthsocial"),
        ("3", "johndoe1", "truthsocial"),
        ("4", "alice", "x"),
    ];
    let jsonl: String = rows
        .iter()
        .enumerate()
        .map(|(i, (id, u, p))| {
            format!("{{\"id\":\"{id}\",\"user\":\"{u}\",\"platform\":\"{p}\",\"ts\":{i},\"text\":\"hi\"}}\n")
        })
        .collect();
    fs::write(d.join("posts.jsonl"), jsonl).unwrap();
    let out = ok(
        d,
        &["dedup", "--posts", "posts.jsonl", "--threshold", "0.9", "--policy", "drop-fewer", "--output", "kept.jsonl"],
    );
    assert_eq!(out.lines().count(), 1);
    assert!(out.starts_with("JohnDoe\tjohndoe1"));
    let kept = fs::read_to_string(d.join("kept.jsonl")).unwrap();
    assert!(!kept.contains("JohnDoe"));
    assert_eq!(kept.lines().count(), 3);
}

#[test]
fn sweep_writes_report() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    synth(d);
    ok(d, &["--out", "run", "ingest", "--posts", "data/posts.jsonl", "--embeddings", "data/embeddings.bin"]);
    let out = ok(d, &["--out", "run", "--set", "k=10", "sweep", "--labels", "data/labels.tsv", "--step", "50"]);
    assert!(out.contains("100%"));
    let r: serde_json::Value = serde_json::from_str(&fs::read_to_string(d.join("run/sweep.json")).unwrap()).unwrap();
    assert_eq!(r["levels"].as_array().unwrap().len(), 2);
}
