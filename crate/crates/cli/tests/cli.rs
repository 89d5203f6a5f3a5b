use std::path::Path;
use std::process::{Command, Output};

use dcmm::io::{save_adjacency, AdjacencyFormat};
use dcmm::model::{sample_adjacency, synthetic_config_with_pure, Setting};

fn dcmm(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dcmm")).args(args).output().expect("binary runs")
}

fn ok(args: &[&str]) -> Output {
    let out = dcmm(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    out
}

fn json(path: &Path) -> serde_json::Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn network(dir: &Path) -> String {
    let params = synthetic_config_with_pure(Setting::ThetaConst09, 160, 40, 3).unwrap();
    let adj = sample_adjacency(&params, 4).unwrap();
    let path = dir.join("net.csv");
    save_adjacency(&path, &adj, AdjacencyFormat::EdgeListCsv).unwrap();
    path.to_str().unwrap().to_string()
}

#[test]
fn simulate_is_worker_count_invariant() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.json");
    let cfg = cfg.to_str().unwrap();
    ok(&["gen-config", "--setting", "const09", "--n", "120", "--seed", "2", "--pure-per-community", "30", "--out", cfg]);
    let params = json(Path::new(cfg));
    assert_eq!(params["n"], 120);
    let mut csvs = Vec::new();
    for workers in ["1", "2"] {
        let out = dir.path().join(format!("run{workers}"));
        ok(&[
            "simulate", "--config", cfg, "--experiment", "normality", "--replicates", "4", "--seed", "11",
            "--workers", workers, "--out", out.to_str().unwrap(),
        ]);
        let summary = json(&out.join("summary.json"));
        assert_eq!(summary["replicates"], 4);
        csvs.push(std::fs::read(out.join("stats.csv")).unwrap());
    }
    assert_eq!(csvs[0], csvs[1]);
    assert!(String::from_utf8_lossy(&csvs[0]).starts_with("replicate,status,pi_hat,pi_true,statistic\n"));
}

#[test]
fn estimate_writes_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let net = network(dir.path());
    let out = dir.path().join("est");
    ok(&["estimate", "--adjacency", &net, "--format", "edgelist", "--k", "2", "--phi", "auto", "--out", out.to_str().unwrap()]);
    let pi = std::fs::read_to_string(out.join("pi.csv")).unwrap();
    assert!(pi.starts_with("node_id,pi_1,pi_2\n"));
    assert_eq!(pi.lines().count(), 161);
    let emb = std::fs::read_to_string(out.join("embedding.csv")).unwrap();
    assert!(emb.starts_with("node_id,r_1\n"));
    let v = json(&out.join("vertices.json"));
    assert_eq!(v["anchors"].as_array().unwrap().len(), 2);
    assert_eq!(v["vertices"].as_array().unwrap().len(), 2);
}

#[test]
fn inference_reports() {
    let dir = tempfile::tempdir().unwrap();
    let net = network(dir.path());
    let report = dir.path().join("rank.json");
    ok(&[
        "rank-ci", "--adjacency", &net, "--k", "2", "--node", "100", "--community", "0", "--alpha", "0.1",
        "--bootstrap", "60", "--seed", "5", "--out", report.to_str().unwrap(),
    ]);
    let v = json(&report);
    let (lo, hi) = (v["lower"].as_u64().unwrap(), v["upper"].as_u64().unwrap());
    assert!(1 <= lo && lo <= hi && hi <= 160);
    assert_eq!(v["b_draws"], 60);

    let closest = dir.path().join("closest.json");
    ok(&["test-closest", "--adjacency", &net, "--k", "2", "--node", "100", "--alpha", "0.05", "--out", closest.to_str().unwrap()]);
    let v = json(&closest);
    assert_eq!(v["kind"], "closest_community");
    assert!(v["rejected"].is_null() || v["rejected"].is_u64());

    let pair = dir.path().join("pair.json");
    ok(&["test-pair", "--adjacency", &net, "--k", "2", "--nodes", "100,101", "--alpha", "0.05", "--out", pair.to_str().unwrap()]);
    let v = json(&pair);
    assert_eq!(v["kind"], "two_node");
    let p = v["p_value"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&p));
    assert!(v["rejected"].is_boolean());
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let asym = dir.path().join("asym.csv");
    std::fs::write(&asym, "0,1,0\n0,0,1\n0,1,0\n").unwrap();
    let out = dcmm(&["estimate", "--adjacency", asym.to_str().unwrap(), "--format", "dense", "--k", "2", "--out", dir.path().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("asymmetric"));

    let missing = dcmm(&["estimate", "--adjacency", "/nonexistent/net.csv", "--k", "2", "--out", dir.path().to_str().unwrap()]);
    assert_eq!(missing.status.code(), Some(2));

    let empty = dir.path().join("empty.csv");
    std::fs::write(&empty, "0,0,0,0\n0,0,0,0\n0,0,0,0\n0,0,0,0\n").unwrap();
    let out = dcmm(&["estimate", "--adjacency", empty.to_str().unwrap(), "--format", "dense", "--k", "2", "--out", dir.path().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));

    assert_eq!(dcmm(&["simulate", "--out", dir.path().to_str().unwrap()]).status.code(), Some(2));
}
