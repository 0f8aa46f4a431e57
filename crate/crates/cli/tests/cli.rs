use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;

fn queryrec(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_queryrec")).args(args).output().unwrap()
}

fn ok(args: &[&str]) -> String {
    let out = queryrec(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn code(args: &[&str]) -> i32 {
    queryrec(args).status.code().unwrap()
}

fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

struct Workspace {
    dir: TempDir,
}

impl Workspace {
    /// Synthetic data with `users` users in a fresh directory.
    fn synthetic(users: usize) -> Self {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().to_str().unwrap().to_string();
        ok(&["synth", "--out", &out, "--users", &users.to_string()]);
        Self { dir }
    }

    fn path(&self, name: &str) -> String {
        self.dir.path().join(name).to_str().unwrap().to_string()
    }

    /// `--interactions .. --catalog .. --work-dir ..` followed by `rest`.
    fn run(&self, rest: &[&str]) -> Output {
        let (i, c, w) = (self.path("interactions.jsonl"), self.path("catalog.jsonl"), self.path("work"));
        let mut args = vec!["--interactions", &i, "--catalog", &c, "--work-dir", &w];
        args.extend_from_slice(rest);
        Command::new(env!("CARGO_BIN_EXE_queryrec")).args(&args).output().unwrap()
    }

    fn ok(&self, rest: &[&str]) -> String {
        let out = self.run(rest);
        assert!(
            out.status.success(),
            "{rest:?} failed: {}",
            String::from_utf8_lossy(&out.stderr)
        );
        String::from_utf8(out.stdout).unwrap()
    }

    fn read(&self, name: &str) -> String {
        std::fs::read_to_string(self.dir.path().join("work").join(name)).unwrap()
    }

    fn trained(users: usize) -> Self {
        let ws = Self::synthetic(users);
        for step in ["prepare", "train", "tune"] {
            ws.ok(&[step]);
        }
        ws
    }
}

#[test]
fn prepare_counts_match_the_beauty_fixture() {
    let data = fixture("beauty_sample");
    let work = tempfile::tempdir().unwrap();
    let args = [
        "--interactions",
        data.join("interactions.jsonl").to_str().unwrap(),
        "--catalog",
        data.join("catalog.jsonl").to_str().unwrap(),
        "--work-dir",
        work.path().to_str().unwrap(),
        "prepare",
    ]
    .map(str::to_string);
    let args: Vec<&str> = args.iter().map(String::as_str).collect();
    ok(&args);
    let manifest_path = work.path().join("manifest.json");
    let first = std::fs::read(&manifest_path).unwrap();
    ok(&args);
    assert_eq!(first, std::fs::read(&manifest_path).unwrap(), "manifest changed on rerun");

    let manifest: Value = serde_json::from_slice(&first).unwrap();
    let expected: Value = serde_json::from_str(&std::fs::read_to_string(data.join("expected_counts.json")).unwrap()).unwrap();
    for section in ["catalog", "interactions", "users"] {
        assert_eq!(manifest[section], expected[section], "{section}");
    }
    assert_eq!(manifest["seed"], 42);
}

#[test]
fn usage_errors_exit_2() {
    assert_eq!(code(&["prepare"]), 2);
    let ws = Workspace::synthetic(20);
    std::fs::remove_file(ws.path("catalog.jsonl")).unwrap();
    assert_eq!(ws.run(&["prepare"]).status.code(), Some(2));
    assert_eq!(ws.run(&["--generator", "neural", "train"]).status.code(), Some(2));
    assert_eq!(code(&["recommend"]), 2);

    let cfg = ws.path("bad.toml");
    std::fs::write(&cfg, "colour = 1\n[paths]\ninteractions = \"i\"\ncatalog = \"c\"\nwork_dir = \"w\"\n").unwrap();
    assert_eq!(code(&["--config", &cfg, "prepare"]), 2);
}

#[test]
fn data_errors_exit_3() {
    let ws = Workspace::synthetic(30);
    assert_eq!(ws.run(&["train"]).status.code(), Some(3), "train before prepare");
    ws.ok(&["prepare"]);
    ws.ok(&["train"]);
    ws.ok(&["tune"]);
    let out = ws.run(&["recommend", "--user", "no-such-user"]);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("no-such-user"));
}

#[test]
fn protocol_errors_exit_4() {
    let ws = Workspace::trained(40);
    let stub = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../core/tests/fixtures/stub_generator.py");
    for mode in ["short", "garbage"] {
        let gen = format!("external:python3 {} {mode}", stub.display());
        let out = ws.run(&["--generator", &gen, "eval"]);
        assert_eq!(out.status.code(), Some(4), "{mode}: {}", String::from_utf8_lossy(&out.stderr));
    }
    let gen = format!("external:python3 {} echo", stub.display());
    let line = ws.ok(&["--generator", &gen, "--m", "3", "recommend", "--user", "u00001", "--k", "5"]);
    let rec: Value = serde_json::from_str(line.trim()).unwrap();
    assert_eq!(rec["queries"].as_array().unwrap().len(), 3);
}

#[test]
fn tune_reports_the_full_grid() {
    let ws = Workspace::trained(60);
    let report = ws.read("grid_report.tsv");
    let mut lines = report.lines();
    assert_eq!(lines.next(), Some("k1\tb\trecall"));
    assert_eq!(lines.count(), 13 * 9);
    let params: Value = serde_json::from_str(&ws.read("params.json")).unwrap();
    assert!(params["k1"].is_number() && params["b"].is_number());
    let before = (ws.read("grid_report.tsv"), ws.read("params.json"));
    ws.ok(&["tune"]);
    assert_eq!(before, (ws.read("grid_report.tsv"), ws.read("params.json")));
}

#[test]
fn recommend_emits_m_queries_and_k_items() {
    let ws = Workspace::trained(60);
    let stdout = ws.ok(&["--m", "4", "--k", "8", "recommend", "--user", "u00002"]);
    let lines: Vec<&str> = stdout.lines().collect();
    assert_eq!(lines.len(), 1);
    let rec: Value = serde_json::from_str(lines[0]).unwrap();
    assert_eq!(rec["user_id"], "u00002");
    assert_eq!(rec["queries"].as_array().unwrap().len(), 4);
    let items = rec["items"].as_array().unwrap();
    assert_eq!(items.len(), 8);
    for item in items {
        assert!(item["source_query"].as_u64().unwrap() < 4);
        assert!(item["source_rank"].as_u64().unwrap() >= 1);
    }

    let out = ws.path("all.jsonl");
    ws.ok(&["--k", "5", "recommend", "--all", "--out", &out]);
    let all = std::fs::read_to_string(&out).unwrap();
    assert_eq!(all.lines().count(), 60);
}

#[test]
fn eval_sweep_writes_a_report_per_m() {
    let ws = Workspace::trained(80);
    let stdout = ws.ok(&["--m", "5,10", "--k", "5,40", "eval"]);
    assert_eq!(stdout.lines().count(), 4);
    for m in [5, 10] {
        let report: Value = serde_json::from_str(&ws.read(&format!("metrics_m{m}.json"))).unwrap();
        assert_eq!(report["num_queries"], m);
        assert_eq!(report["ks"], serde_json::json!([5, 40]));
        // Recall plus two attributes for each of diversity and coverage.
        assert_eq!(report["rows"].as_array().unwrap().len(), 2 * 5);
    }
    assert!(!Path::new(&ws.path("work/metrics_m20.json")).exists());
}

#[test]
fn config_file_drives_the_pipeline() {
    let ws = Workspace::synthetic(40);
    let cfg = ws.path("pipeline.toml");
    std::fs::write(
        &cfg,
        "seed = 7\n[paths]\ninteractions = \"interactions.jsonl\"\ncatalog = \"catalog.jsonl\"\nwork_dir = \"cfgwork\"\n\
         [generator]\nnum_queries = 3\n",
    )
    .unwrap();
    let manifest = ok(&["--config", &cfg, "prepare"]);
    let manifest: Value = serde_json::from_str(&manifest).unwrap();
    assert_eq!(manifest["seed"], 7);
    ok(&["--config", &cfg, "train"]);
    ok(&["--config", &cfg, "tune"]);
    let params: Value =
        serde_json::from_str(&std::fs::read_to_string(ws.dir.path().join("cfgwork/params.json")).unwrap()).unwrap();
    assert_eq!(params["num_queries"], 3);
}
