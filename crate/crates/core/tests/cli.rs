use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use tsa_core::features::Dataset;
use tsa_core::ml::load_model;
use tsa_core::pipeline;

fn tsa(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_tsa"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("spawn tsa")
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let o = tsa(dir, args);
    assert!(
        o.status.success(),
        "tsa {args:?} failed: {}",
        String::from_utf8_lossy(&o.stderr)
    );
    String::from_utf8(o.stdout).unwrap()
}

/// Small enough to run the whole chain in a few seconds.
const SMALL: &str = r#"
out = "run"
jobs = 1

[training]
n_scenarios = 24
coeff_min = 0.3
coeff_max = 1.7
sum_band = [0.9, 1.7]
seed = 5
strata = 4

[validation]
n_scenarios = 12
coeff_min = 0.25
coeff_max = 1.85
sum_band = [0.9, 1.7]
seed = 6
strata = 4

[sim]
dt = 0.002
t_end = 3.0
angle_threshold = 3.141592653589793

[ml.svm]
c_grid = [1.0, 10.0]
scale_grid = [1.0]
class_costs = {}
tol = 0.001
max_iter = 100000
k_folds = 3
"#;

#[test]
fn bundled_case_validates() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("nine.toml"), tsa_core::netcase::NetworkCase::wscc9().to_text()).unwrap();
    let out = ok(dir.path(), &["case", "validate", "nine.toml"]);
    assert!(out.contains("9 buses"), "{out}");
}

#[test]
fn malformed_case_exits_with_schema_code() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("bad.toml"), "[[bus]]\nid = \"one\"\n").unwrap();
    let o = tsa(dir.path(), &["case", "validate", "bad.toml"]);
    assert_eq!(o.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&o.stderr).contains("error"));
}

#[test]
fn bad_config_exits_with_config_code() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("c.toml"), "no_such_key = 1\n").unwrap();
    assert_eq!(tsa(dir.path(), &["--config", "c.toml", "reproduce"]).status.code(), Some(2));
    fs::write(dir.path().join("c.toml"), "bin_width = -0.1\n").unwrap();
    assert_eq!(tsa(dir.path(), &["--config", "c.toml", "reproduce"]).status.code(), Some(2));
    assert!(!dir.path().join("tsa-run").exists());
}

#[test]
fn failed_reproduce_leaves_no_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = format!("{SMALL}\n[scan]\nbranches = [\"5-99\"]\nend = \"higher_voltage\"\nt_clear = 0.1\ntrip_line = true\n");
    fs::write(dir.path().join("c.toml"), cfg).unwrap();
    let o = tsa(dir.path(), &["--config", "c.toml", "reproduce"]);
    assert!(!o.status.success());
    assert_eq!(o.status.code(), Some(3), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(!dir.path().join("run").exists());
    assert!(!dir.path().join("run.partial").exists());
}

#[test]
fn stage_chain_reingests_its_own_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    fs::write(d.join("c.toml"), SMALL).unwrap();
    let c = ["--config", "c.toml", "--out", "s"];
    let with = |extra: &[&str]| -> Vec<String> { c.iter().chain(extra).map(|s| s.to_string()).collect() };
    let run = |extra: &[&str]| {
        let args = with(extra);
        ok(d, &args.iter().map(String::as_str).collect::<Vec<_>>())
    };

    run(&["scenarios", "--set", "training"]);
    run(&["dispatch", "--scenarios", "s/scenarios.csv"]);
    run(&["simulate", "--operating-points", "s/operating_points.csv", "--dump-scenario", "0"]);
    assert!(d.join("s/trajectories/trajectory_0_5-7.csv").exists());
    run(&["rank", "--labels", "s/labels.csv"]);
    let ranking = fs::read_to_string(d.join("s/criticality_report.csv")).unwrap();
    assert_eq!(ranking.lines().count(), 1 + 9, "{ranking}");
    run(&["--line", "5-7", "dataset", "--operating-points", "s/operating_points.csv", "--labels", "s/labels.csv"]);
    run(&["--line", "5-7", "train", "--dataset", "s/dataset.csv"]);
    run(&["eval", "--model", "s/model.json", "--dataset", "s/dataset.csv"]);
    for f in ["report.md", "metrics.csv", "incidents.csv", "confusion.csv", "svm_grid.csv", "training_log.csv"] {
        assert!(d.join("s").join(f).exists(), "{f} missing");
    }
    assert!(fs::read_dir(d.join("s")).unwrap().all(|e| !e
        .unwrap()
        .file_name()
        .to_string_lossy()
        .ends_with(".partial")));

    // Predictions printed by the binary agree with the library on every row.
    let stdout = run(&["--tau", "0.5", "predict", "--model", "s/model.json", "--features", "s/dataset.csv"]);
    let model = load_model(&d.join("s/model.json")).unwrap();
    let data = Dataset::read_csv(fs::File::open(d.join("s/dataset.csv")).unwrap()).unwrap();
    let lines: Vec<&str> = stdout.lines().collect();
    assert_eq!(lines[0], "id,stable,confidence,time_class,safe");
    assert_eq!(lines.len(), data.rows.len() + 1);
    for (line, row) in lines[1..].iter().zip(&data.rows) {
        let p = pipeline::predict(&model, &row.features, Some(0.5)).unwrap();
        let cells: Vec<&str> = line.split(',').collect();
        assert_eq!(cells[0], row.scenario_id.to_string());
        assert_eq!(cells[1] == "1", p.stable);
        assert_eq!(cells[3], p.time_class.as_deref().unwrap_or(""));
        assert_eq!(cells[4] == "1", p.safe.unwrap());
    }

    // Operating points work as a prediction input too.
    let from_ops = run(&["predict", "--model", "s/model.json", "--operating-points", "s/operating_points.csv"]);
    assert!(from_ops.lines().count() > 1);
    assert!(from_ops.lines().skip(1).all(|l| l.ends_with(',')), "no tau means an empty safe column");
}
