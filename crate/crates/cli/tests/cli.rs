use std::fs;
use std::path::Path;
use std::process::Command;

use embcomp::eval::grid::{render_text, CellStatus, RenderOptions};
use embcomp::Error;
use embcomp_cli::commands::{self, read_json_lines};
use embcomp_cli::RunConfig;

fn small_config(out: &Path) -> RunConfig {
    let text = format!(
        r#"
seed = 3
out = "{}"
methods = ["full"]
budgets = [1.0]

[data.synthetic]
cardinalities = [200, 100, 50]
samples = 3000
seed = 5

[train]
dim = 8
hidden = 8
max_epochs = 2
warmup_epochs = 1
prune_epochs = 1
batch_size = 64

[posttrain]
methods = ["identity", "svd", "int8_16"]
rows = 400
dim = 16
queries = 10
k = 5
latency_batch = 64
repeats = 3
"#,
        out.display()
    );
    RunConfig::from_toml(&text).unwrap()
}

#[test]
fn gen_data_writes_dataset_and_summary_deterministically() {
    let dir = tempfile::tempdir().unwrap();
    let a = small_config(&dir.path().join("a"));
    let b = small_config(&dir.path().join("b"));
    let out_a = commands::gen_data(&a).unwrap();
    let out_b = commands::gen_data(&b).unwrap();
    assert_eq!(fs::read(&out_a.dataset).unwrap(), fs::read(&out_b.dataset).unwrap());
    let summary: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(&out_a.summary_path).unwrap()).unwrap();
    for key in ["top10_share", "tail_share", "distinct_features", "positive_rate"] {
        assert!(summary["summary"][key].is_number(), "{key}");
    }
    assert_eq!(summary["config"]["seed"], 3);
    assert!(commands::inspect(&out_a.dataset).unwrap().contains("3000 samples, 3 fields, 350 features"));
}

#[test]
fn zero_samples_and_empty_methods_are_config_errors() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small_config(dir.path());
    cfg.data.synthetic.samples = 0;
    assert!(matches!(commands::gen_data(&cfg), Err(Error::Config(_))));
    let mut cfg = small_config(dir.path());
    cfg.methods.clear();
    assert!(matches!(commands::bench_train(&cfg), Err(Error::Config(_))));
    let mut cfg = small_config(dir.path());
    cfg.posttrain.methods.clear();
    assert!(matches!(commands::bench_posttrain(&cfg), Err(Error::Config(_))));
}

#[test]
fn full_baseline_reports_three_hundred_percent_training_memory() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    let cells = commands::bench_train(&cfg).unwrap();
    assert_eq!(cells.len(), 1);
    assert_eq!(cells[0].status, CellStatus::Ok);
    let text = render_text(&cells, RenderOptions { include_timing: false });
    let row = text.lines().find(|l| l.contains("TrainMem")).unwrap();
    assert!(row.ends_with("300.0%"), "{row}");
    assert!(dir.path().join("bench-train.jsonl").exists());
    assert!(dir.path().join("bench-train.txt").exists());
}

#[test]
fn int8_at_ten_percent_runs_at_the_nearest_size() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small_config(dir.path());
    cfg.methods = vec!["int8_16".into()];
    cfg.budgets = vec![0.1];
    let cells = commands::bench_train(&cfg).unwrap();
    assert_eq!(cells[0].status, CellStatus::Nearest);
    let text = render_text(&cells, RenderOptions { include_timing: false });
    assert!(text.contains("(25.0%)"), "{text}");
}

#[test]
fn training_reports_reproduce_from_their_embedded_config() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small_config(&dir.path().join("first"));
    cfg.methods = vec!["full".into(), "compo".into(), "deeplight".into(), "mgqe".into()];
    cfg.budgets = vec![0.5, 0.01];
    cfg.jobs = 3;
    let first = commands::bench_train(&cfg).unwrap();
    let mut again: RunConfig = serde_json::from_value(first[0].config.clone()).unwrap();
    assert_eq!(again, cfg);
    again.out = dir.path().join("second");
    again.jobs = 1;
    let second = commands::bench_train(&again).unwrap();
    assert_eq!(first.len(), second.len());
    for (a, b) in first.iter().zip(&second) {
        let (mut a, mut b) = (a.without_timing(), b.without_timing());
        a.config = serde_json::Value::Null;
        b.config = serde_json::Value::Null;
        assert_eq!(
            serde_json::to_string(&a).unwrap(),
            serde_json::to_string(&b).unwrap()
        );
    }
}

#[test]
fn posttrain_grid_marks_unreachable_budgets_and_identity_is_exact() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small_config(dir.path());
    cfg.budgets = vec![1.0, 0.5, 0.1];
    let cells = commands::bench_posttrain(&cfg).unwrap();
    for c in cells.iter().filter(|c| c.method == "identity") {
        assert_eq!(c.metrics["recall"], 1.0);
    }
    let again = commands::bench_posttrain(&cfg).unwrap();
    for (a, b) in cells.iter().zip(&again) {
        assert_eq!(a.metrics.get("recall"), b.metrics.get("recall"));
        assert_eq!(a.status, b.status);
    }
    let int10 = cells
        .iter()
        .find(|c| c.method == "int8_16" && c.budget == 0.1)
        .unwrap();
    assert_eq!(int10.status, CellStatus::Skipped);
    let text = render_text(&cells, RenderOptions { include_timing: false });
    let row = text.lines().find(|l| l.starts_with("int8_16")).unwrap();
    assert!(row.trim_end().ends_with('/'), "{row}");
}

#[test]
fn svd_cannot_reach_a_thousandth_of_a_wide_matrix() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small_config(dir.path());
    cfg.posttrain.methods = vec!["svd".into()];
    cfg.posttrain.rows = 1000;
    cfg.posttrain.dim = 768;
    cfg.posttrain.queries = 2;
    cfg.budgets = vec![0.001];
    let cells = commands::bench_posttrain(&cfg).unwrap();
    assert_eq!(cells[0].status, CellStatus::Skipped);
    let text = render_text(&cells, RenderOptions { include_timing: false });
    assert_eq!(text, "Method  Metric  0.1%\nsvd     Recall  /\n");
}

#[test]
fn rendering_matches_golden_files() {
    let fixtures = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures");
    let opts = RenderOptions { include_timing: false };
    let text = commands::render(&fixtures.join("grid.jsonl"), false, opts).unwrap();
    assert_eq!(text, fs::read_to_string(fixtures.join("grid.txt")).unwrap());
    let csv = commands::render(&fixtures.join("grid.jsonl"), true, opts).unwrap();
    assert_eq!(csv, fs::read_to_string(fixtures.join("grid.csv")).unwrap());
    let timed = commands::render(&fixtures.join("grid.jsonl"), false, RenderOptions::default()).unwrap();
    assert_eq!(timed, fs::read_to_string(fixtures.join("grid_timed.txt")).unwrap());
}

#[test]
fn json_lines_round_trip() {
    let fixtures = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures");
    let text = fs::read_to_string(fixtures.join("grid.jsonl")).unwrap();
    let cells = read_json_lines(&text).unwrap();
    let again = read_json_lines(&commands::to_json_lines(&cells)).unwrap();
    assert_eq!(cells, again);
    assert!(matches!(read_json_lines("{}\nnot json\n"), Err(Error::Parse { line: 1, .. })));
}

#[test]
fn binary_runs_subcommands_and_reports_config_errors() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    let cfg_path = dir.path().join("run.toml");
    fs::write(&cfg_path, cfg.to_toml()).unwrap();
    let bin = env!("CARGO_BIN_EXE_embcomp");

    let out = Command::new(bin)
        .args(["gen-data", "--config"])
        .arg(&cfg_path)
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let dataset = dir.path().join("dataset.emb");
    let out = Command::new(bin).arg("inspect").arg(&dataset).output().unwrap();
    assert!(String::from_utf8_lossy(&out.stdout).contains("dataset"));

    let out = Command::new(bin)
        .args(["gen-data", "--config"])
        .arg(&cfg_path)
        .env("EMBCOMP_DATA__SYNTHETIC__SAMPLES", "0")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));

    let out = Command::new(bin)
        .args(["bench-train", "--methods", "full", "--budgets", "100%", "--config"])
        .arg(&cfg_path)
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stdout).contains("300.0%"));

    let matrix = dir.path().join("m.emb");
    embcomp::checkpoint::matrix_to_checkpoint(&commands::gaussian_matrix(50, 8, 1, 1))
        .save(&matrix)
        .unwrap();
    let codec = dir.path().join("pq.emb");
    let out = Command::new(bin)
        .args(["compress", "--method", "pq", "--budget", "25%", "--matrix"])
        .arg(&matrix)
        .arg("--out")
        .arg(&codec)
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let out = Command::new(bin).arg("inspect").arg(&codec).output().unwrap();
    let line = String::from_utf8_lossy(&out.stdout).to_string();
    assert!(line.contains("codec/pq") && line.contains("shape=50x8"), "{line}");
}
