//! Acceptance run: one PASS/FAIL line per criterion, with every tolerance
//! pinned below. Runs the full default pipeline twice, so it takes a few
//! minutes in an optimized test build.
//!
//! Criteria listed in `KNOWN_RED` are reported as FAIL but do not fail the
//! run; anything else that fails makes the process exit non-zero.

mod common;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{Duration, Instant};

use tsa_core::evalreport::mae;
use tsa_core::pipeline::{self, ReproduceOutputs, RunConfig};

use common::*;

const MAX_REPRODUCE: Duration = Duration::from_secs(15 * 60);
const WEAKEST_LINE: &str = "5-7";
const UNSTABLE_FRACTION_BAND: (f64, f64) = (0.10, 0.40);
const MIN_MEAN_CONTAINMENT: f64 = 0.9;
const MIN_TRAIN_ACCURACY: f64 = 0.99;
const MAX_VALIDATION_ERROR_PERCENT: f64 = 5.0;
const MAX_TRAIN_TIME: Duration = Duration::from_secs(60);
const MIN_SVM_CV_ACCURACY: f64 = 0.60;
const MAX_VALIDATION_MAE: f64 = 0.15;
const MAX_PF_MISMATCH: f64 = 1e-8;
const MAX_PF_BALANCE_MW: f64 = 1e-6;
const MAX_KRON_ERROR: f64 = 1e-10;
const KRON_TRIALS: usize = 100;
const MAX_CCT_GAP: f64 = 0.05;
const MAX_SWING_BALANCE: f64 = 1e-9;
const MAX_GRADIENT_ERROR: f64 = 1e-5;
const GRADIENT_SEEDS: u64 = 20;
const SMO_SEEDS: u64 = 20;
const ORACLE_SCENARIOS: usize = 20;
const ORACLE_SEED: u64 = 2024;
const MAX_ORACLE_GAP: f64 = 0.01;

/// Criteria that are known not to hold with the classical machine model;
/// they stay visible as FAIL lines.
const KNOWN_RED: &[&str] = &["3"];

struct Check {
    criterion: &'static str,
    what: String,
    pass: bool,
}

#[derive(Default)]
struct Ledger(Vec<Check>);

impl Ledger {
    fn check(&mut self, criterion: &'static str, pass: bool, what: String) {
        self.0.push(Check { criterion, what, pass });
    }

    fn criterion_lines(&self) -> Vec<(&'static str, bool, Vec<&Check>)> {
        let mut by: BTreeMap<&str, Vec<&Check>> = BTreeMap::new();
        for c in &self.0 {
            by.entry(c.criterion).or_default().push(c);
        }
        by.into_iter()
            .map(|(k, v)| (k, v.iter().all(|c| c.pass), v))
            .collect()
    }
}

fn run_in(dir: &Path, cfg: &RunConfig) -> (ReproduceOutputs, Duration) {
    std::env::set_current_dir(dir).unwrap();
    let t = Instant::now();
    let out = pipeline::reproduce(cfg, &mut |m| eprintln!("  [{:>6.1}s] {m}", t.elapsed().as_secs_f64()))
        .expect("reproduce failed");
    (out, t.elapsed())
}

fn tree(root: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    fn walk(root: &Path, dir: &Path, acc: &mut BTreeMap<PathBuf, Vec<u8>>) {
        for e in std::fs::read_dir(dir).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                walk(root, &p, acc);
            } else {
                acc.insert(p.strip_prefix(root).unwrap().to_path_buf(), std::fs::read(&p).unwrap());
            }
        }
    }
    let mut acc = BTreeMap::new();
    walk(root, root, &mut acc);
    acc
}

const ARTIFACTS: &[&str] = &[
    "case.toml",
    "config.toml",
    "model.json",
    "training_log.csv",
    "svm_grid.csv",
    "training/scenarios.csv",
    "training/operating_points.csv",
    "training/dispatch_skipped.csv",
    "training/labels.csv",
    "training/criticality_report.csv",
    "training/subclass_report.csv",
    "training/generator_groups.csv",
    "training/dataset.csv",
    "training/dataset_skipped.csv",
    "validation/scenarios.csv",
    "validation/operating_points.csv",
    "validation/labels.csv",
    "validation/criticality_report.csv",
    "validation/dataset.csv",
    "report/training/report.md",
    "report/training/metrics.csv",
    "report/validation/report.md",
    "report/validation/metrics.csv",
    "report/validation/incidents.csv",
    "report/validation/confusion.csv",
];

fn pipeline_criteria(l: &mut Ledger) {
    let cfg = RunConfig::default();
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    eprintln!("acceptance: reproduce (first run)");
    let (out, elapsed) = run_in(a.path(), &cfg);
    let root = a.path().join(&cfg.out);

    // 1: end to end.
    l.check("1", elapsed < MAX_REPRODUCE, format!("reproduce took {:.1} s (< {} s)", elapsed.as_secs_f64(), MAX_REPRODUCE.as_secs()));
    let missing: Vec<&str> = ARTIFACTS.iter().copied().filter(|f| !root.join(f).is_file()).collect();
    l.check("1", missing.is_empty(), format!("stage artifacts present (missing: {missing:?})"));
    for (name, set) in [("training", &out.training), ("validation", &out.validation)] {
        let r = &set.ranking.report;
        let w = r.weakest();
        let frac = w.unstable_count as f64 / r.n_scenarios as f64;
        l.check("1", w.branch_id == WEAKEST_LINE, format!("{name}: weakest line {} (want {WEAKEST_LINE})", w.branch_id));
        l.check(
            "1",
            (UNSTABLE_FRACTION_BAND.0..=UNSTABLE_FRACTION_BAND.1).contains(&frac),
            format!("{name}: weakest-line unstable fraction {:.1}% in [{}, {}]%", 100.0 * frac, 100.0 * UNSTABLE_FRACTION_BAND.0, 100.0 * UNSTABLE_FRACTION_BAND.1),
        );
        match &set.ranking.subclass {
            Ok(s) => {
                l.check("1", s.mean_containment() >= MIN_MEAN_CONTAINMENT, format!("{name}: mean containment {:.3} >= {MIN_MEAN_CONTAINMENT}", s.mean_containment()));
                l.check("1", s.stiff_lines_later(), format!("{name}: stiff-line medians no earlier than the weakest line"));
            }
            Err(e) => l.check("1", false, format!("{name}: subclass check unavailable: {e}")),
        }
    }

    // 2: binary classifier.
    let train_acc = 1.0 - out.training_report.binary_error_percent() / 100.0;
    l.check("2", train_acc >= MIN_TRAIN_ACCURACY, format!("training accuracy {:.2}% >= {}%", 100.0 * train_acc, 100.0 * MIN_TRAIN_ACCURACY));
    let verr = out.validation_report.binary_error_percent();
    l.check("2", verr <= MAX_VALIDATION_ERROR_PERCENT, format!("validation error {verr:.2}% <= {MAX_VALIDATION_ERROR_PERCENT}%"));
    let t = Instant::now();
    let again = pipeline::train(&out.training_data, &out.line, cfg.bin_width, &cfg.ml, cfg.knn_k).unwrap();
    let train_time = t.elapsed();
    l.check("2", train_time < MAX_TRAIN_TIME, format!("training took {:.1} s (< {} s)", train_time.as_secs_f64(), MAX_TRAIN_TIME.as_secs()));
    l.check("2", again.models == out.trained.models, "retraining reproduces the saved model".into());

    // 3: multiclass SVM.
    let cv = out.trained.models.training.as_ref().and_then(|f| f.svm_cv_accuracy);
    l.check("3", cv.is_some_and(|a| a >= MIN_SVM_CV_ACCURACY), format!("best {}-fold cv accuracy {:?} >= {MIN_SVM_CV_ACCURACY}", cfg.ml.svm.k_folds, cv));
    let m = out.validation_report.mae_seconds;
    l.check("3", m.is_some_and(|m| m <= MAX_VALIDATION_MAE), format!("validation mae {m:?} s <= {MAX_VALIDATION_MAE} s"));
    let cred = out.validation_report.credibility;
    l.check("3", cred == Some(1.0), format!("validation credibility {cred:?} == 1.0"));

    // 5: determinism.
    eprintln!("acceptance: reproduce (second run)");
    run_in(b.path(), &cfg);
    let (ta, tb) = (tree(&root), tree(&b.path().join(&cfg.out)));
    let differing: Vec<_> = ta
        .keys()
        .chain(tb.keys())
        .filter(|k| ta.get(*k) != tb.get(*k))
        .map(|k| k.display().to_string())
        .collect();
    l.check("5", differing.is_empty(), format!("{} files byte-identical across runs (differing: {differing:?})", ta.len()));
    std::env::set_current_dir("/").unwrap();
}

fn property_criteria(l: &mut Ledger) {
    let (mismatch, balance, converged) = powerflow_fixture_errors(20, 5);
    l.check("4", converged > 0 && mismatch < MAX_PF_MISMATCH, format!("power-flow mismatch {mismatch:.2e} pu < {MAX_PF_MISMATCH:e} ({converged} converged)"));
    l.check("4", balance < MAX_PF_BALANCE_MW, format!("global balance {balance:.2e} MW < {MAX_PF_BALANCE_MW:e}"));
    let kron = kron_trials(KRON_TRIALS, 11);
    l.check("4", kron < MAX_KRON_ERROR, format!("kron equivalence {kron:.2e} < {MAX_KRON_ERROR:e} over {KRON_TRIALS} trials"));
    let (cct, eac) = smib_cct();
    let gap = (cct - eac).abs() / eac;
    l.check("4", gap <= MAX_CCT_GAP, format!("smib cct {cct:.4} s vs equal-area {eac:.4} s, gap {:.2}%", 100.0 * gap));
    let swing = undamped_balance_worst();
    l.check("4", swing < MAX_SWING_BALANCE, format!("undamped balance residual {swing:.2e} < {MAX_SWING_BALANCE:e}"));
    let grad = (0..GRADIENT_SEEDS).map(mlp_gradient_error).fold(0.0, f64::max);
    l.check("4", grad < MAX_GRADIENT_ERROR, format!("mlp gradient error {grad:.2e} < {MAX_GRADIENT_ERROR:e} over {GRADIENT_SEEDS} seeds"));
    let smo_ok = (0..SMO_SEEDS).all(|s| {
        let (kkt, tol, monotone, converged) = smo_check(s);
        converged && kkt < tol && monotone
    });
    l.check("4", smo_ok, format!("smo kkt below tolerance and dual monotone over {SMO_SEEDS} seeds"));
    let hand = [
        (vec![1.0, 2.0], vec![1.0, 2.0], 0.0),
        (vec![1.5, 0.5], vec![1.0, 1.0], 0.5),
        (vec![2.0, 1.0, 3.0, 0.0], vec![1.0, 1.0, 1.0, 1.0], 1.0),
    ];
    let mae_ok = hand.iter().all(|(p, a, want)| mae(p, a).unwrap() == *want);
    l.check("4", mae_ok, "mae equals the mean absolute difference on hand vectors".into());
}

fn oracle_criterion(l: &mut Ledger) {
    let g = dispatch_oracle_gap(&fixture_scenarios(ORACLE_SCENARIOS, ORACLE_SEED));
    l.check("6", g.compared > 0 && g.missed_feasible == 0, format!("{} of {ORACLE_SCENARIOS} scenarios compared, {} left infeasible", g.compared, g.missed_feasible));
    l.check("6", g.worst <= MAX_ORACLE_GAP, format!("worst objective gap {:.4}% <= {}%", 100.0 * g.worst, 100.0 * MAX_ORACLE_GAP));
}

fn main() -> ExitCode {
    // `cargo test -- --list` and filtered runs should not trigger the long run.
    let args: Vec<String> = std::env::args().skip(1).collect();
    if args.iter().any(|a| a == "--list") {
        println!("acceptance: test");
        return ExitCode::SUCCESS;
    }
    if args.iter().any(|a| !a.starts_with('-') && !"acceptance".contains(a.as_str())) {
        return ExitCode::SUCCESS;
    }

    let mut l = Ledger::default();
    property_criteria(&mut l);
    oracle_criterion(&mut l);
    pipeline_criteria(&mut l);

    let mut unexpected = false;
    println!();
    for (criterion, pass, checks) in l.criterion_lines() {
        let known = KNOWN_RED.contains(&criterion);
        let tag = match (pass, known) {
            (true, _) => "PASS",
            (false, true) => "FAIL (known)",
            (false, false) => "FAIL",
        };
        println!("criterion {criterion}: {tag}");
        for c in checks {
            println!("    [{}] {}", if c.pass { "ok" } else { "x" }, c.what);
        }
        if !pass && !known {
            unexpected = true;
        }
        if pass && known {
            println!("    (listed as known red but passed)");
        }
    }
    if unexpected {
        ExitCode::FAILURE
    } else {
        ExitCode::SUCCESS
    }
}
