use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use avkm_core::encoders::Encoder;
use serde_json::Value;

fn avkm(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_avkm"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> Output {
    let out = avkm(args);
    assert!(
        out.status.success(),
        "avkm {args:?} failed:\n{}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn read_json(p: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(p).unwrap()).unwrap()
}

fn synth_dim(dir: &Path, n: usize, k: usize, dim: usize) -> (PathBuf, PathBuf) {
    let d = dir.join("data");
    ok(&[
        "synth", "--out", s(&d), "--n", &n.to_string(), "--K", &k.to_string(), "--embedding-dim", &dim.to_string(),
        "--seed", "3",
    ]);
    (d.join("corpus.jsonl"), d.join("embeddings.txt"))
}

/// Small planted corpus with 10-d word vectors.
fn synth(dir: &Path, n: usize, k: usize) -> (PathBuf, PathBuf) {
    synth_dim(dir, n, k, 10)
}

#[test]
fn end_to_end_cluster_is_reproducible_and_accurate() {
    let dir = tempfile::tempdir().unwrap();
    let (corpus, emb) = synth_dim(dir.path(), 300, 4, 20);
    let run = |name: &str| {
        let out = dir.path().join(name);
        ok(&[
            "cluster", "--corpus", s(&corpus), "--embeddings", s(&emb), "--hidden", "20", "--T", "5", "--out", s(&out),
        ]);
        out
    };
    let a = run("a");
    let b = run("b");
    for f in ["assignment.csv", "metrics.json", "content_assignment.csv", "losses.jsonl"] {
        assert_eq!(
            std::fs::read_to_string(a.join(f)).unwrap(),
            std::fs::read_to_string(b.join(f)).unwrap(),
            "{f} differs"
        );
    }
    let without_out = |dir: &Path| {
        let mut m = read_json(&dir.join("manifest.json"));
        m["config"].as_object_mut().unwrap().remove("out");
        m
    };
    assert_eq!(without_out(&a), without_out(&b));
    for f in ["diagnostics.jsonl", "query_encoder.json", "content_encoder.json"] {
        assert!(a.join(f).exists(), "{f} missing");
    }
    let manifest = read_json(&a.join("manifest.json"));
    assert_eq!(manifest["config"]["T"], 5);
    assert_eq!(manifest["result"]["semi_iterations"], 10);
    assert_eq!(manifest["result"]["K"], 4);

    // Scoring the written assignment reproduces the metrics written by cluster.
    let m = dir.path().join("metrics.json");
    ok(&["evaluate", "--corpus", s(&corpus), "--assignment", s(&a.join("assignment.csv")), "--out", s(&m)]);
    assert_eq!(std::fs::read(&m).unwrap(), std::fs::read(a.join("metrics.json")).unwrap());
    let acc = read_json(&m)["acc"].as_f64().unwrap();
    assert!(acc >= 0.9, "end-to-end ACC {acc}");
}

#[test]
fn zero_iterations_equal_single_view_kmeans() {
    let dir = tempfile::tempdir().unwrap();
    let (corpus, emb) = synth(dir.path(), 120, 3);
    let avkm_out = dir.path().join("avkm");
    let km_out = dir.path().join("km");
    ok(&["cluster", "--corpus", s(&corpus), "--embeddings", s(&emb), "--hidden", "10", "--T", "0", "--out", s(&avkm_out)]);
    ok(&[
        "cluster", "--corpus", s(&corpus), "--embeddings", s(&emb), "--hidden", "10", "--algorithm", "kmeans", "--out",
        s(&km_out),
    ]);
    assert_eq!(
        std::fs::read(avkm_out.join("assignment.csv")).unwrap(),
        std::fs::read(km_out.join("assignment.csv")).unwrap()
    );
    assert_eq!(read_json(&avkm_out.join("manifest.json"))["result"]["semi_iterations"], 0);
    ok(&[
        "cluster", "--corpus", s(&corpus), "--embeddings", s(&emb), "--hidden", "10", "--algorithm", "kmeans", "--view",
        "content", "--out", s(&dir.path().join("km2")),
    ]);
}

#[test]
fn pretraining_guards() {
    let dir = tempfile::tempdir().unwrap();
    let (corpus, emb) = synth(dir.path(), 40, 2);
    let out = avkm(&["pretrain", "--corpus", s(&corpus), "--embeddings", s(&emb), "--out", s(dir.path())]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("nothing to pretrain"), "{}", stderr(&out));

    let out = avkm(&["pretrain", "--corpus", s(&corpus), "--method", "bert", "--out", s(dir.path())]);
    assert_eq!(out.status.code(), Some(1));

    let out = avkm(&[
        "cluster", "--corpus", s(&corpus), "--embeddings", s(&emb), "--method", "quickthoughts", "--out",
        s(&dir.path().join("c")),
    ]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("--checkpoint"), "{}", stderr(&out));
}

#[test]
fn quickthoughts_checkpoint_round_trips_and_initializes_clustering() {
    let dir = tempfile::tempdir().unwrap();
    let (corpus, emb) = synth(dir.path(), 80, 3);
    let pre = |name: &str| {
        let out = dir.path().join(name);
        ok(&[
            "pretrain", "--corpus", s(&corpus), "--embeddings", s(&emb), "--method", "quickthoughts", "--hidden", "8",
            "--set", "epochs=3", "--out", s(&out),
        ]);
        out
    };
    let a = pre("pa");
    let b = pre("pb");
    let ckpt = a.join("pretrained_encoder.json");
    let bytes = std::fs::read(&ckpt).unwrap();
    let again = dir.path().join("resaved.json");
    Encoder::load(&ckpt).unwrap().save(&again).unwrap();
    assert_eq!(std::fs::read(&again).unwrap(), bytes);
    let (ma, mb) = (read_json(&a.join("pretrain_manifest.json")), read_json(&b.join("pretrain_manifest.json")));
    assert_eq!(ma["result"]["best_dev_loss"], mb["result"]["best_dev_loss"]);
    let log = std::fs::read_to_string(a.join("pretrain_log.jsonl")).unwrap();
    assert_eq!(log.lines().count(), ma["result"]["epochs_run"].as_u64().unwrap() as usize);

    let out = dir.path().join("c");
    ok(&[
        "cluster", "--corpus", s(&corpus), "--method", "quickthoughts", "--checkpoint", s(&ckpt), "--hidden", "8",
        "--T", "1", "--set", "n_episodes=5", "--out", s(&out),
    ]);
    assert!(out.join("assignment.csv").exists());

    let out = avkm(&[
        "cluster", "--corpus", s(&corpus), "--method", "quickthoughts", "--checkpoint", s(&ckpt), "--hidden", "8",
        "--arch", "sequence", "--T", "0", "--out", s(&dir.path().join("d")),
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("cannot initialize a sequence encoder"), "{}", stderr(&out));
}

#[test]
fn autoencoder_pretraining_writes_a_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let (corpus, emb) = synth(dir.path(), 30, 2);
    let out = dir.path().join("ae");
    ok(&[
        "pretrain", "--corpus", s(&corpus), "--embeddings", s(&emb), "--method", "autoencoder", "--arch",
        "hierarchical", "--hidden", "4", "--set", "epochs=2", "--out", s(&out),
    ]);
    let enc = Encoder::load(out.join("pretrained_encoder.json")).unwrap();
    assert_eq!(enc.architecture().to_string(), "sequence");
}

fn write_labeled_corpus(path: &Path) {
    let gold = ["a", "a", "b", "b", "c", "c"];
    let lines: Vec<String> = gold
        .iter()
        .enumerate()
        .map(|(i, g)| format!(r#"{{"id": "i{i}", "view1": "word {i}", "view2": ["reply"], "label": "{g}"}}"#))
        .chain([r#"{"id": "u0", "view1": "no label here", "view2": []}"#.to_string()])
        .collect();
    std::fs::write(path, lines.join("\n") + "\n").unwrap();
}

fn write_assignment(path: &Path, rows: &[(&str, usize)]) {
    let mut text = String::from("instance_id,cluster\n");
    for (id, z) in rows {
        text += &format!("{id},{z}\n");
    }
    std::fs::write(path, text).unwrap();
}

#[test]
fn evaluate_scores_and_guards() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = dir.path().join("c.jsonl");
    write_labeled_corpus(&corpus);
    let asg = dir.path().join("a.csv");
    let metrics = dir.path().join("m.json");
    let eval = |rows: &[(&str, usize)]| {
        write_assignment(&asg, rows);
        avkm(&["evaluate", "--corpus", s(&corpus), "--assignment", s(&asg), "--out", s(&metrics)])
    };

    let out = eval(&[("i0", 5), ("i1", 5), ("i2", 9), ("i3", 9), ("i4", 1), ("i5", 1)]);
    assert!(out.status.success(), "{}", stderr(&out));
    let m = read_json(&metrics);
    for key in ["precision", "recall", "f1", "acc"] {
        assert_eq!(m[key], 1.0, "{key}");
    }

    let out = eval(&[("i0", 0), ("i1", 1), ("i2", 1), ("i3", 2), ("i4", 2), ("i5", 2), ("u0", 0)]);
    assert!(out.status.success(), "{}", stderr(&out));
    let m = read_json(&metrics);
    assert_eq!(m["acc"].as_f64().unwrap(), 4.0 / 6.0);
    assert_eq!(m["n_labeled"], 6);

    let out = eval(&[("i0", 0), ("i1", 0), ("i2", 1), ("i3", 1), ("i4", 2), ("i5", 2), ("ghost", 0)]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("ghost"));

    let out = eval(&[("i0", 0), ("i2", 1), ("i4", 2)]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("i1, i3, i5"), "{}", stderr(&out));
}

#[test]
fn prep_askubuntu_builds_question_clusters() {
    let dir = tempfile::tempdir().unwrap();
    let pairs = dir.path().join("pairs.csv");
    std::fs::write(&pairs, "qid1,qid2\n1,2\n2,3\n4,5\n6,7\n7,8\n8,9\n").unwrap();
    let questions = dir.path().join("q.jsonl");
    let q: String = (1..=10)
        .map(|i| {
            let answers = if i == 3 { "[]".to_string() } else { format!(r#"["answer {i}"]"#) };
            format!(r#"{{"id": {i}, "title": "question {i}", "answer_utterances": {answers}}}"#) + "\n"
        })
        .collect();
    std::fs::write(&questions, q).unwrap();
    let out = dir.path().join("prep");
    ok(&["prep-askubuntu", "--pairs", s(&pairs), "--questions", s(&questions), "--top-k", "2", "--out", s(&out)]);
    let stats = read_json(&out.join("prep_stats.json"));
    assert_eq!(stats["components"], 3);
    assert_eq!(stats["selected_sizes"], serde_json::json!([4, 3]));
    assert_eq!(stats["kept_questions"], 6);
    let text = std::fs::read_to_string(out.join("corpus.jsonl")).unwrap();
    assert_eq!(text.lines().count(), 6);

    let out = avkm(&["prep-askubuntu", "--pairs", s(&pairs), "--questions", s(&questions), "--top-k", "9", "--out", s(&dir.path().join("x"))]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn config_files_are_overridden_by_flags() {
    let dir = tempfile::tempdir().unwrap();
    let (corpus, emb) = synth(dir.path(), 60, 2);
    let conf = dir.path().join("run.conf");
    std::fs::write(&conf, format!("corpus = {}\nT = 0\nM = 3\nhidden = 6\n", s(&corpus))).unwrap();
    let out = dir.path().join("o");
    ok(&["cluster", "--config", s(&conf), "--embeddings", s(&emb), "--M", "4", "--out", s(&out)]);
    let m = read_json(&out.join("manifest.json"));
    assert_eq!((m["config"]["T"].as_u64(), m["config"]["M"].as_u64()), (Some(0), Some(4)));
    assert_eq!(m["config"]["hidden"], 6);

    std::fs::write(&conf, "colour = blue\n").unwrap();
    let out = avkm(&["cluster", "--config", s(&conf), "--out", s(dir.path())]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn usage_errors_exit_with_one() {
    assert_eq!(avkm(&["cluster", "--bogus"]).status.code(), Some(1));
    assert_eq!(avkm(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(avkm(&["cluster", "--out", "/tmp/x"]).status.code(), Some(1));
    assert_eq!(avkm(&["--help"]).status.code(), Some(0));
}

#[test]
fn missing_files_are_data_errors() {
    let dir = tempfile::tempdir().unwrap();
    let out = avkm(&["cluster", "--corpus", s(&dir.path().join("nope.jsonl")), "--K", "2", "--out", s(dir.path())]);
    assert_eq!(out.status.code(), Some(2));
}
