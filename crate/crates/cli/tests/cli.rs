use std::path::Path;
use std::process::{Command, Output};

use rankgraph::graph::HeteroGraph;
use rankgraph::model::{checkpoint_bytes, init_params};
use rankgraph::rng::stream;
use rankgraph::serving::EmbeddingTable;
use rankgraph::training::TrainConfig;
use rankgraph::Tensor;
use serde_json::Value;
use sha2::{Digest, Sha256};
use tempfile::TempDir;

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_rankgraph"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("spawn rankgraph")
}

fn ok(args: &[&str]) -> Output {
    let out = run(args);
    assert!(
        out.status.success(),
        "`rankgraph {}` exited {:?}: {}",
        args.join(" "),
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

const SMALL: &str = r#"{"users": 24, "items": 24, "communities": 2, "log_hours": 48}"#;

/// generate → ingest on a small dataset; returns the temp dir.
fn small_graph() -> TempDir {
    let dir = TempDir::new().unwrap();
    let cfg = dir.path().join("gen.json");
    std::fs::write(&cfg, SMALL).unwrap();
    let data = dir.path().join("data");
    ok(&["generate", "--config", s(&cfg), "--out", s(&data)]);
    ok(&[
        "ingest",
        "--schema",
        s(&data.join("schema.json")),
        "--edges",
        s(&data.join("edges.tsv")),
        "--nodes",
        s(&data.join("nodes.tsv")),
        "--out",
        s(&dir.path().join("graph")),
    ]);
    dir
}

fn sha256_hex(path: &Path) -> String {
    hex::encode(Sha256::digest(std::fs::read(path).unwrap()))
}

#[test]
fn help_exits_zero() {
    let out = run(&["--help"]);
    assert_eq!(out.status.code(), Some(0));
    let text = String::from_utf8_lossy(&out.stdout);
    for sub in ["ingest", "train", "embed", "retrieve", "cluster", "eval-edge-recall", "grad-check"] {
        assert!(text.contains(sub), "help lacks {sub}");
    }
}

#[test]
fn usage_errors_exit_one() {
    for args in [&["no-such-command"][..], &["grad-check", "--bogus"], &["retrieve"]] {
        let out = run(args);
        assert_eq!(out.status.code(), Some(1), "{args:?}");
        assert!(String::from_utf8_lossy(&out.stderr).contains("Usage"), "{args:?}");
    }
}

#[test]
fn unknown_config_field_exits_one() {
    let dir = TempDir::new().unwrap();
    let cfg = dir.path().join("bad.json");
    std::fs::write(&cfg, r#"{"epsilon": 1e-5, "colour": 3}"#).unwrap();
    let out = run(&["grad-check", "--config", s(&cfg)]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("colour"));
}

#[test]
fn zero_threads_exits_one() {
    assert_eq!(run(&["grad-check", "--threads", "0"]).status.code(), Some(1));
}

#[test]
fn missing_input_exits_two() {
    let dir = TempDir::new().unwrap();
    let out = run(&[
        "retrieve",
        "--table",
        s(&dir.path().join("absent.rge")),
        "--ids",
        "a",
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("absent.rge"));
}

#[test]
fn grad_check_passes_and_reports() {
    let dir = TempDir::new().unwrap();
    let out = ok(&["grad-check", "--seed", "7", "--out", s(dir.path())]);
    let text = String::from_utf8_lossy(&out.stdout);
    let err: f64 = text
        .lines()
        .find_map(|l| l.strip_prefix("max_rel_error\t"))
        .expect("max_rel_error line")
        .parse()
        .unwrap();
    assert!(err <= 1e-4);
    assert!(text.contains("PASS"));
    let report: Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join("grad_check.json")).unwrap()).unwrap();
    assert_eq!(report["max_rel_error"].as_f64(), Some(err));
}

#[test]
fn retrieve_on_two_nodes_prints_one_neighbor() {
    let dir = TempDir::new().unwrap();
    let m = Tensor::from_rows(&[vec![1.0, 0.0], vec![0.6, 0.8]]).unwrap();
    let t = EmbeddingTable::new("item", 0, [0; 32], m, vec!["a".into(), "b".into()]).unwrap();
    let path = dir.path().join("item.h0.rge");
    t.save(&path).unwrap();
    let out = ok(&["retrieve", "--table", s(&path), "--ids", "a", "--k", "3"]);
    let text = String::from_utf8_lossy(&out.stdout);
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 1, "{text}");
    let cols: Vec<&str> = lines[0].split('\t').collect();
    assert_eq!(&cols[..2], &["a", "b"]);
    assert!((cols[2].parse::<f64>().unwrap() - 0.6).abs() < 1e-12);

    let out = run(&["retrieve", "--table", s(&path), "--ids", "zzz"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn generate_is_deterministic_and_seed_sensitive() {
    let dir = TempDir::new().unwrap();
    let cfg = dir.path().join("gen.json");
    std::fs::write(&cfg, SMALL).unwrap();
    let gen = |name: &str, seed: &str| {
        let out = dir.path().join(name);
        ok(&["generate", "--config", s(&cfg), "--seed", seed, "--out", s(&out)]);
        std::fs::read(out.join("edges.tsv")).unwrap()
    };
    let (a, b, c) = (gen("a", "5"), gen("b", "5"), gen("c", "6"));
    assert_eq!(a, b);
    assert_ne!(a, c);
}

#[test]
fn zero_step_training_writes_the_initial_parameters() {
    let dir = small_graph();
    let graph_path = dir.path().join("graph/graph.rgg");
    let model = dir.path().join("model");
    ok(&[
        "train",
        "--graph",
        s(&graph_path),
        "--features",
        s(&dir.path().join("data/features.tsv")),
        "--steps",
        "0",
        "--seed",
        "13",
        "--out",
        s(&model),
    ]);
    let g = HeteroGraph::load(&graph_path).unwrap();
    let expected = init_params(g.schema(), &TrainConfig::default().model, &mut stream(13, "init")).unwrap();
    assert_eq!(std::fs::read(model.join("checkpoint.rgc")).unwrap(), checkpoint_bytes(&expected));
}

#[test]
fn manifest_records_input_digests_and_outputs() {
    let dir = small_graph();
    let graph_path = dir.path().join("graph/graph.rgg");
    let features = dir.path().join("data/features.tsv");
    let model = dir.path().join("model");
    ok(&[
        "train",
        "--graph",
        s(&graph_path),
        "--features",
        s(&features),
        "--steps",
        "3",
        "--seed",
        "2",
        "--out",
        s(&model),
    ]);
    let m: Value = serde_json::from_str(&std::fs::read_to_string(model.join("train.manifest.json")).unwrap()).unwrap();
    assert_eq!(m["subcommand"], "train");
    assert_eq!(m["seed"], 2);
    assert_eq!(m["config"]["steps"], 3);
    let inputs = m["inputs"].as_array().unwrap();
    assert_eq!(inputs.len(), 2);
    for (entry, path) in inputs.iter().zip([&graph_path, &features]) {
        assert_eq!(entry["sha256"].as_str().unwrap(), sha256_hex(path));
    }
    let outputs: Vec<&str> = m["outputs"].as_array().unwrap().iter().map(|v| v.as_str().unwrap()).collect();
    assert!(outputs.iter().any(|o| o.ends_with("checkpoint.rgc")));
    assert!(outputs.iter().any(|o| o.ends_with("loss.tsv")));
    let log = std::fs::read_to_string(model.join("loss.tsv")).unwrap();
    assert_eq!(log.lines().count(), 4);
}

#[test]
fn refuses_to_overwrite_an_input() {
    let dir = small_graph();
    let graph_dir = dir.path().join("graph");
    let graph_path = graph_dir.join("graph.rgg");
    let before = std::fs::read(&graph_path).unwrap();
    let out = run(&[
        "semantic-edges",
        "--graph",
        s(&graph_path),
        "--via",
        "click",
        "--name",
        "co_click",
        "--out",
        s(&graph_dir),
    ]);
    assert_eq!(out.status.code(), Some(1), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(std::fs::read(&graph_path).unwrap(), before);
}
