use std::collections::BTreeMap;
use std::collections::BTreeSet;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tofg::geometry::Point2;
use tofg::scene::{scenario_to_json, AgentState, AgentTrack, LaneSpec, Pose2D, Scenario};

fn tofg(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_tofg")).args(args).output().expect("binary runs")
}

fn ok(args: &[&str]) -> Output {
    let out = tofg(args);
    assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    out
}

fn code(args: &[&str]) -> i32 {
    tofg(args).status.code().expect("exit code")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn json(path: &Path) -> serde_json::Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

/// Small model on a cropped graph so training finishes in seconds.
fn small_config(dir: &Path, epochs: usize, stride: usize) -> PathBuf {
    let path = dir.join("config.json");
    let cfg = serde_json::json!({
        "graph": {"roi_radius": 20.0, "roi_ahead": 10.0},
        "model": {"embed_dim": 16, "mlp_hidden": 32, "n_gat_layers": 2},
        "train": {"epochs": epochs, "lr": 1e-3, "batch": 3, "sample_stride": stride}
    });
    std::fs::write(&path, cfg.to_string()).unwrap();
    path
}

/// One straight lane `len` meters long with an ego parked on it for `frames` frames.
fn single_lane(dir: &Path, len: f64, frames: i64) -> PathBuf {
    let st = |frame| AgentState { frame, x: len / 2.0, y: 0.0, theta: 0.0, vx: 0.0, vy: 0.0, yaw_rate: 0.0 };
    let sc = Scenario {
        id: "single-lane".into(),
        lanes: vec![LaneSpec {
            id: "A".into(),
            centerline: vec![Point2::new(0.0, 0.0), Point2::new(len, 0.0)],
            width: 3.5,
            successor_ids: vec![],
            predecessor_ids: vec![],
        }],
        agents: vec![AgentTrack { id: "ego".into(), length: 0.2, width: 0.2, states: (0..frames).map(st).collect() }],
        ego_id: "ego".into(),
        route_lane_ids: BTreeSet::from(["A".to_string()]),
        goal: Pose2D { x: len, y: 0.0, theta: 0.0 },
        traffic_lights: BTreeMap::new(),
        frame_interval: 0.5,
    };
    let path = dir.join(format!("lane-{len}-{frames}.json"));
    std::fs::write(&path, scenario_to_json(&sc)).unwrap();
    path
}

fn dir_bytes(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.file_name().unwrap() != "manifest.json")
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), std::fs::read(&p).unwrap()))
        .collect()
}

#[test]
fn gen_scenarios_is_reproducible() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    ok(&["--seed", "1", "--out", s(&a), "gen-scenarios", "--kind", "overtake", "--count", "5"]);
    ok(&["--seed", "1", "--out", s(&b), "gen-scenarios", "--kind", "overtake", "--count", "5"]);
    let files = dir_bytes(&a);
    assert_eq!(files.len(), 5);
    assert!(files.contains_key("overtake-1.json") && files.contains_key("overtake-5.json"));
    assert_eq!(files, dir_bytes(&b));
    let m = json(&a.join("manifest.json"));
    assert_eq!(m["outputs"].as_array().unwrap().len(), 5);
    assert_eq!(m["seed"], 1);
}

#[test]
fn gen_zero_scenarios() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path().join("empty");
    ok(&["--out", s(&dir), "gen-scenarios", "--kind", "straight", "--count", "0"]);
    assert!(dir_bytes(&dir).is_empty());
    assert!(dir.join("manifest.json").exists());
}

#[test]
fn usage_errors_exit_2() {
    let tmp = tempfile::tempdir().unwrap();
    let out = s(tmp.path());
    assert_eq!(code(&["--out", out, "gen-scenarios", "--kind", "roundabout", "--count", "1"]), 2);
    assert_eq!(code(&["--out", out, "simulate", out]), 2);
    assert_eq!(code(&["gen-scenarios", "--kind", "straight", "--count", "1"]), 2);
    assert_eq!(code(&["--jobs", "0", "config"]), 2);
}

#[test]
fn build_graph_three_meter_lane() {
    let tmp = tempfile::tempdir().unwrap();
    let sc = single_lane(tmp.path(), 3.0, 1);
    let out = tmp.path().join("graph.json");
    ok(&["--out", s(&out), "build-graph", s(&sc)]);
    let g = json(&out);
    let frames = g["frames"].as_array().unwrap();
    assert_eq!(frames.len(), 1);
    assert_eq!(frames[0]["nodes"].as_array().unwrap().len(), 10);
    assert_eq!(frames[0]["edges"]["geometric"].as_array().unwrap().len(), 9);
    assert!(g["temporal_edges"].as_array().unwrap().is_empty());
    let m = json(&tmp.path().join("graph.manifest.json"));
    assert_eq!(m["details"]["node_count"], 10);
    assert_eq!(m["details"]["edge_counts"]["temporal"], 0);
    assert_eq!(m["inputs"][0]["hash"].as_str().unwrap().len(), 64);
}

#[test]
fn build_graph_missing_input() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("g.json");
    let res = tofg(&["--out", s(&out), "build-graph", s(&tmp.path().join("nope.json"))]);
    assert_eq!(res.status.code(), Some(4));
    assert!(String::from_utf8_lossy(&res.stderr).contains("nope.json"));
    assert!(!out.exists());
}

#[test]
fn invalid_config_exits_3() {
    let tmp = tempfile::tempdir().unwrap();
    let bad = tmp.path().join("bad.json");
    std::fs::write(&bad, r#"{"model": {"embed_dim": 10, "n_head": 4}}"#).unwrap();
    assert_eq!(code(&["--config", s(&bad), "config"]), 3);
    std::fs::write(&bad, r#"{"graph": {"target_length": 0.3}}"#).unwrap();
    assert_eq!(code(&["--config", s(&bad), "config"]), 3);
    let sc = tmp.path().join("broken.json");
    std::fs::write(&sc, "{").unwrap();
    assert_eq!(code(&["--out", s(&tmp.path().join("g.json")), "build-graph", s(&sc)]), 3);
}

#[test]
fn default_config_snapshot() {
    let out = ok(&["config"]);
    let cfg: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(cfg["graph"]["target_len"], 0.3);
    assert_eq!(cfg["graph"]["n_scale"], 4);
    assert_eq!(cfg["graph"]["interaction_threshold"], 100.0);
    assert_eq!(cfg["model"]["n_head"], 4);
    assert_eq!(cfg["model"]["horizon"], 12);
    assert_eq!(cfg["model"]["history"], 5);
    assert_eq!(cfg["metrics"]["w_theta"], 2.5);
    assert_eq!(cfg["train"]["epochs"], 60);
    assert_eq!(cfg["train"]["batch"], 3);
    assert_eq!(cfg["train"]["lr"], 1e-5);
    assert_eq!(cfg["sim"]["duration"], 20.0);
}

#[test]
fn train_overfits_one_scenario() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    ok(&["--seed", "3", "--out", s(&data), "gen-scenarios", "--kind", "lane_change", "--count", "1"]);
    let cfg = small_config(tmp.path(), 200, 20);
    let run = tmp.path().join("run");
    ok(&["--config", s(&cfg), "--out", s(&run), "train", s(&data)]);
    let csv = std::fs::read_to_string(run.join("loss.csv")).unwrap();
    let losses: Vec<f64> = csv.lines().skip(1).map(|l| l.split(',').nth(1).unwrap().parse().unwrap()).collect();
    assert_eq!(losses.len(), 200);
    assert!(losses[199] < 0.05 * losses[0], "{} -> {}", losses[0], losses[199]);
}

#[test]
fn predict_and_attention_from_fresh_checkpoint() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    ok(&["--out", s(&data), "gen-scenarios", "--kind", "overtake", "--count", "2"]);
    let cfg = small_config(tmp.path(), 0, 40);
    let run = tmp.path().join("run");
    ok(&["--config", s(&cfg), "--out", s(&run), "train", s(&data)]);
    let ck = run.join("model.json");
    let sc = data.join("overtake-1.json");

    let pred = tmp.path().join("pred.json");
    ok(&["--config", s(&cfg), "--out", s(&pred), "predict", "--checkpoint", s(&ck), s(&sc), "--frame", "20"]);
    let p = json(&pred);
    assert_eq!(p["waypoints"].as_array().unwrap().len(), 12);
    assert_eq!(p["frame"], 20);
    assert!(p["metrics"]["ade"].as_f64().unwrap() >= 0.0);

    for frame in ["4", "20", "40"] {
        let att = tmp.path().join(format!("att-{frame}.csv"));
        ok(&["--config", s(&cfg), "--out", s(&att), "export-attention", "--checkpoint", s(&ck), s(&sc), "--frame", frame]);
        let text = std::fs::read_to_string(&att).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), "node_id,frame,x,y,head0,head1,head2,head3,mean");
        let mut sums = [0.0; 4];
        for line in lines {
            let cols: Vec<f64> = line.split(',').map(|c| c.parse().unwrap()).collect();
            for h in 0..4 {
                sums[h] += cols[4 + h];
            }
        }
        for sum in sums {
            assert!((sum - 1.0).abs() <= 1e-6, "frame {frame}: {sum}");
        }
    }
}

#[test]
fn single_node_attention() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    ok(&["--out", s(&data), "gen-scenarios", "--kind", "straight", "--count", "1"]);
    let cfg = small_config(tmp.path(), 0, 40);
    let run = tmp.path().join("run");
    ok(&["--config", s(&cfg), "--out", s(&run), "train", s(&data)]);
    let sc = single_lane(tmp.path(), 0.3, 6);
    let att = tmp.path().join("att.csv");
    ok(&["--config", s(&cfg), "--out", s(&att), "export-attention", "--checkpoint", s(&run.join("model.json")), s(&sc)]);
    let text = std::fs::read_to_string(&att).unwrap();
    let rows: Vec<&str> = text.lines().skip(1).collect();
    assert_eq!(rows.len(), 1);
    let cols: Vec<f64> = rows[0].split(',').map(|c| c.parse().unwrap()).collect();
    assert_eq!(&cols[4..], &[1.0, 1.0, 1.0, 1.0, 1.0]);
}

#[test]
fn simulate_oracle_report() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    ok(&["--out", s(&data), "gen-scenarios", "--kind", "lane_change", "--count", "3"]);
    let out = tmp.path().join("sim");
    ok(&["--out", s(&out), "simulate", s(&data), "--planner", "oracle", "--traces"]);
    let report = json(&out.join("report.json"));
    assert!(report["mean"]["l2"]["mean"].as_f64().unwrap() <= 1e-3);
    assert_eq!(report["rows"].as_array().unwrap().len(), 3);
    let csv = std::fs::read_to_string(out.join("plan_metrics.csv")).unwrap();
    assert_eq!(csv.lines().count(), 5);
    assert!(csv.lines().last().unwrap().starts_with("mean,"));
    assert_eq!(std::fs::read_dir(out.join("traces")).unwrap().count(), 3);
}

#[test]
fn simulate_checkpoint_and_constant_speed() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    ok(&["--out", s(&data), "gen-scenarios", "--kind", "overtake", "--count", "1"]);
    let cfg = small_config(tmp.path(), 0, 40);
    let run = tmp.path().join("run");
    ok(&["--config", s(&cfg), "--out", s(&run), "train", s(&data)]);
    let out = tmp.path().join("sim");
    ok(&["--config", s(&cfg), "--out", s(&out), "simulate", s(&data), "--checkpoint", s(&run.join("model.json"))]);
    assert!(out.join("plan_metrics.csv").exists());
    let cs = tmp.path().join("cs");
    ok(&["--out", s(&cs), "simulate", s(&data), "--planner", "constant-speed"]);
    let report = json(&cs.join("report.json"));
    assert_eq!(report["rows"][0]["auto_corrections"], 1);
}

#[test]
fn training_is_reproducible() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    ok(&["--out", s(&data), "gen-scenarios", "--kind", "straight", "--count", "1"]);
    let cfg = small_config(tmp.path(), 2, 20);
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    ok(&["--seed", "5", "--config", s(&cfg), "--out", s(&a), "train", s(&data)]);
    ok(&["--seed", "5", "--config", s(&cfg), "--out", s(&b), "train", s(&data)]);
    assert_eq!(dir_bytes(&a), dir_bytes(&b));
    let ma = json(&a.join("manifest.json"));
    let mb = json(&b.join("manifest.json"));
    assert_eq!(ma["inputs"], mb["inputs"]);
    assert_eq!(ma["config"], mb["config"]);
}
