//! Stage orchestration shared by the command-line tool and the tests.
//!
//! Every stage is a pure function of its inputs; the `write_*` helpers and
//! [`reproduce`] add file handling. Files are staged under a temporary name
//! and renamed into place, so a failed stage leaves nothing behind.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::criticality::{self, GeneratorGrouping, LineCriticalityReport, SubclassReport};
use crate::csvio::fmt_f64;
use crate::dispatch::{solve_acopf, DispatchOptions};
use crate::error::{Error, Result};
use crate::evalreport::{self, EvalReport, TrainingFigures};
use crate::features::{self, label_seconds, Dataset, Skipped, Standardizer};
use crate::ml::{self, cv, GridResult, KnnModel, TrainConfig, TrainedModels};
use crate::netcase::NetworkCase;
use crate::operating::{self, OperatingPoint};
use crate::scenario::{self, apply_scenario, LoadScenario, ScenarioConfig};
use crate::tdsim::{self, assess, DynamicSystem, FaultScan, SimConfig, StabilityLabel};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// Case file; the bundled nine-bus case when absent.
    pub case: Option<PathBuf>,
    pub out: PathBuf,
    /// Worker threads for simulation and grid search; all cores when absent.
    pub jobs: Option<usize>,
    /// Monitored line; the weakest line of the training ranking when absent.
    pub line: Option<String>,
    pub training: ScenarioConfig,
    pub validation: ScenarioConfig,
    pub dispatch: DispatchOptions,
    pub sim: SimConfig,
    pub scan: FaultScan,
    pub ml: TrainConfig,
    pub bin_width: f64,
    pub weak_fraction: f64,
    pub group_threshold: f64,
    /// Neighbours of the nearest-neighbour baseline.
    pub knn_k: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            case: None,
            out: PathBuf::from("tsa-run"),
            jobs: None,
            line: None,
            training: ScenarioConfig::training(),
            validation: ScenarioConfig::validation(),
            dispatch: DispatchOptions::default(),
            sim: SimConfig::default(),
            scan: FaultScan::default(),
            ml: TrainConfig::default(),
            bin_width: features::DEFAULT_BIN_WIDTH,
            weak_fraction: criticality::DEFAULT_WEAK_FRACTION,
            group_threshold: criticality::DEFAULT_GROUP_THRESHOLD,
            knn_k: 5,
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }

    pub fn validate(&self) -> Result<()> {
        if self.jobs == Some(0) {
            return Err(Error::Config("jobs must be at least 1".into()));
        }
        if let Some(p) = &self.case {
            if !p.exists() {
                return Err(Error::Config(format!("case file {} does not exist", p.display())));
            }
        }
        if !(self.bin_width > 0.0) {
            return Err(Error::Config("bin_width must be positive".into()));
        }
        if !(self.weak_fraction > 0.0 && self.weak_fraction <= 1.0) {
            return Err(Error::Config("weak_fraction must lie in (0, 1]".into()));
        }
        if !(self.group_threshold > 0.0) {
            return Err(Error::Config("group_threshold must be positive".into()));
        }
        if self.knn_k == 0 {
            return Err(Error::Config("knn_k must be positive".into()));
        }
        self.training.validate()?;
        self.validation.validate()?;
        self.sim.validate()?;
        self.ml.validate()
    }

    pub fn load_case(&self) -> Result<NetworkCase> {
        match &self.case {
            Some(p) => NetworkCase::from_file(p),
            None => Ok(NetworkCase::wscc9()),
        }
    }

    /// Runs `f` on a pool sized by `jobs`.
    pub fn with_pool<T: Send>(&self, f: impl FnOnce() -> T + Send) -> Result<T> {
        let mut b = rayon::ThreadPoolBuilder::new();
        if let Some(n) = self.jobs {
            b = b.num_threads(n);
        }
        let pool = b.build().map_err(|e| Error::Config(format!("thread pool: {e}")))?;
        Ok(pool.install(f))
    }
}

// ---------------------------------------------------------------- stages

/// Dispatches every scenario. Scenarios whose power flow cannot be solved at
/// any trial setpoint are dropped and returned as skipped.
pub fn dispatch_scenarios(
    case: &NetworkCase,
    scenarios: &[LoadScenario],
    opts: &DispatchOptions,
) -> Result<(Vec<OperatingPoint>, Vec<Skipped>)> {
    let results: Vec<Result<Option<OperatingPoint>>> = scenarios
        .par_iter()
        .map(|s| {
            let loads = apply_scenario(case, s)?;
            match solve_acopf(case, &loads, opts) {
                Ok(r) => Ok(Some(OperatingPoint::from_dispatch(case, s.id, &loads, &r))),
                Err(Error::PfDiverged) => Ok(None),
                Err(e) => Err(e),
            }
        })
        .collect();
    let mut ops = Vec::new();
    let mut skipped = Vec::new();
    for (s, r) in scenarios.iter().zip(results) {
        match r? {
            Some(op) => ops.push(op),
            None => skipped.push(Skipped {
                scenario_id: s.id,
                reason: "power flow diverged at every trial dispatch".into(),
            }),
        }
    }
    Ok((ops, skipped))
}

/// Labels every feasible operating point against every fault of the scan.
/// Labels come back sorted by scenario, then branch id.
pub fn simulate_operating_points(
    case: &NetworkCase,
    ops: &[OperatingPoint],
    scan: &FaultScan,
    sim: &SimConfig,
) -> Result<Vec<StabilityLabel>> {
    sim.validate()?;
    let faults = scan.faults(case)?;
    let per_op: Vec<Result<Vec<StabilityLabel>>> = ops
        .par_iter()
        .filter(|op| op.feasible)
        .map(|op| {
            let sol = op.solution(case)?;
            let sys = DynamicSystem::new(case, &sol)?;
            faults.iter().map(|f| assess(&sys, op.scenario_id, f, sim)).collect()
        })
        .collect();
    let mut labels = Vec::new();
    for r in per_op {
        labels.extend(r?);
    }
    labels.sort_by(|a, b| {
        a.scenario_id
            .cmp(&b.scenario_id)
            .then_with(|| crate::netcase::branch_id_cmp(&a.branch_id, &b.branch_id))
    });
    Ok(labels)
}

#[derive(Debug, Clone)]
pub struct Ranking {
    pub report: LineCriticalityReport,
    /// `Err` when the subclass check is undefined (e.g. a tie for weakest).
    pub subclass: std::result::Result<SubclassReport, String>,
    pub grouping: GeneratorGrouping,
}

pub fn rank(case: &NetworkCase, labels: &[StabilityLabel], weak_fraction: f64, group_threshold: f64) -> Result<Ranking> {
    let report = criticality::rank_lines(labels, weak_fraction)?;
    let subclass = criticality::check_subclass_property(&report).map_err(|e| e.to_string());
    let grouping = criticality::group_generators(case, group_threshold)?;
    Ok(Ranking {
        report,
        subclass,
        grouping,
    })
}

/// Everything learned from one training dataset.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub models: TrainedModels,
    pub loss_history: Vec<f64>,
    pub grid: Option<GridResult>,
}

/// Fits the standardizer and the perceptron on every row, then grid-searches
/// and fits the SVM on the unstable rows' time classes.
pub fn train(data: &Dataset, line: &str, bin_width: f64, cfg: &TrainConfig, knn_k: usize) -> Result<TrainOutcome> {
    cfg.validate()?;
    let raw = data.features();
    let standardizer = Standardizer::fit(&raw)?;
    let x = standardizer.transform_all(&raw)?;
    let stable: Vec<bool> = data.rows.iter().map(|r| r.stable).collect();
    let (mlp, loss_history) = ml::mlp::train_mlp_traced(&x, &stable, &cfg.mlp, cfg.seed)?;
    let correct = x
        .iter()
        .zip(&stable)
        .filter(|(xi, &s)| (mlp.forward(xi) >= 0.5) == s)
        .count();
    let mut figures = TrainingFigures {
        mlp_train_accuracy: correct as f64 / x.len() as f64,
        mlp_epochs: mlp.epochs,
        mlp_final_loss: mlp.final_loss,
        ..TrainingFigures::default()
    };

    let (ux, ul): (Vec<Vec<f64>>, Vec<String>) = data
        .rows
        .iter()
        .zip(&x)
        .filter_map(|(r, xi)| r.class_label.clone().map(|l| (xi.clone(), l)))
        .unzip();
    let distinct = {
        let mut v = ul.clone();
        v.sort();
        v.dedup();
        v.len()
    };
    let mut svm = None;
    let mut grid = None;
    if distinct >= 2 {
        let mut svm_cfg = cfg.svm.clone();
        svm_cfg.k_folds = svm_cfg.k_folds.min(ux.len());
        let g = cv::grid_search(&ux, &ul, &svm_cfg, cfg.seed)?;
        let params = ml::svm::SvmParams {
            c: g.best.c,
            scale_multiplier: g.best.scale_multiplier,
            class_costs: &cfg.svm.class_costs,
            tol: cfg.svm.tol,
            max_iter: cfg.svm.max_iter,
        };
        let model = ml::train_svm_ovo(&ux, &ul, &params)?;
        let hits = ux
            .iter()
            .zip(&ul)
            .map(|(xi, l)| ml::predict_svm(&model, xi).map(|p| &p.0 == l))
            .collect::<Result<Vec<bool>>>()?;
        let knn = cv::cross_validate(&ux, &ul, svm_cfg.k_folds, cfg.seed, &|tx, tl, vx| {
            let m = KnnModel::fit(tx, tl, knn_k)?;
            vx.iter().map(|v| m.predict(v)).collect()
        })?;
        figures.svm_cv_accuracy = Some(g.best.cv_accuracy);
        figures.svm_c = Some(g.best.c);
        figures.svm_scale_multiplier = Some(g.best.scale_multiplier);
        figures.svm_train_accuracy = Some(hits.iter().filter(|&&h| h).count() as f64 / hits.len() as f64);
        figures.knn_cv_accuracy = Some(knn.mean_accuracy);
        svm = Some(model);
        grid = Some(g);
    }
    let models = TrainedModels {
        format_version: ml::FORMAT_VERSION,
        line: line.to_string(),
        feature_names: data.feature_names.clone(),
        bin_width,
        standardizer,
        mlp,
        svm,
        training: Some(figures),
    };
    Ok(TrainOutcome {
        models,
        loss_history,
        grid,
    })
}

/// One prediction for a raw feature row.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub stable: bool,
    /// Confidence of the stability flag, 2·|score − 0.5| in [0, 1].
    pub confidence: f64,
    /// Time-of-instability class; only for rows predicted unstable.
    pub time_class: Option<String>,
    /// Stable, or unstable later than τ; only when τ is given.
    pub safe: Option<bool>,
}

pub fn predict(models: &TrainedModels, raw: &[f64], tau: Option<f64>) -> Result<Prediction> {
    let p = ml::predict_mlp(&models.mlp, raw, &models.standardizer)?;
    let time_class = match (&models.svm, p.stable) {
        (Some(svm), false) => {
            let z = models.standardizer.transform(raw)?;
            Some(ml::predict_svm(svm, &z)?.0)
        }
        _ => None,
    };
    let safe = match tau {
        None => None,
        Some(_) if p.stable => Some(true),
        Some(tau) => match &time_class {
            Some(c) => Some(label_seconds(c)? > tau),
            // Unstable with no time model: assume the worst.
            None => Some(false),
        },
    };
    Ok(Prediction {
        stable: p.stable,
        confidence: p.confidence,
        time_class,
        safe,
    })
}

// ---------------------------------------------------------------- files

/// Writes `path` through a sibling temporary file renamed on success.
pub fn write_file(path: &Path, f: impl FnOnce(&mut dyn Write) -> Result<()>) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".partial");
    let tmp = PathBuf::from(tmp);
    let result = (|| {
        let file = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
        let mut w = BufWriter::new(file);
        f(&mut w)?;
        w.flush().map_err(|e| Error::io(&tmp, e))?;
        fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
    })();
    if result.is_err() {
        let _ = fs::remove_file(&tmp);
    }
    result
}

pub fn read_file(path: &Path) -> Result<fs::File> {
    fs::File::open(path).map_err(|e| Error::io(path, e))
}

pub fn write_skipped_csv<W: Write>(w: W, skipped: &[Skipped]) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    wr.write_record(["scenario_id", "reason"])?;
    for s in skipped {
        wr.write_record([s.scenario_id.to_string().as_str(), &s.reason])?;
    }
    wr.flush().map_err(|e| Error::Csv(e.to_string()))?;
    Ok(())
}

pub fn write_subclass_csv<W: Write>(w: W, subclass: &std::result::Result<SubclassReport, String>) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    wr.write_record(["branch_id", "unstable_count", "containment", "median_delay"])?;
    if let Ok(r) = subclass {
        let opt = |v: Option<f64>| v.map(fmt_f64).unwrap_or_default();
        for l in &r.lines {
            wr.write_record([
                l.branch_id.as_str(),
                &l.unstable_count.to_string(),
                &opt(l.containment),
                &opt(l.median_delay),
            ])?;
        }
    }
    wr.flush().map_err(|e| Error::Csv(e.to_string()))?;
    Ok(())
}

pub fn write_groups_csv<W: Write>(w: W, g: &GeneratorGrouping) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    wr.write_record(["group", "generator_bus"])?;
    for (k, group) in g.groups.iter().enumerate() {
        for bus in group {
            wr.write_record([k.to_string(), bus.to_string()])?;
        }
    }
    wr.flush().map_err(|e| Error::Csv(e.to_string()))?;
    Ok(())
}

pub fn write_grid_csv<W: Write>(w: W, g: &GridResult) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    wr.write_record(["c", "scale_multiplier", "cv_accuracy"])?;
    for p in &g.table {
        wr.write_record([fmt_f64(p.c), fmt_f64(p.scale_multiplier), fmt_f64(p.cv_accuracy)])?;
    }
    wr.flush().map_err(|e| Error::Csv(e.to_string()))?;
    Ok(())
}

pub fn write_loss_csv<W: Write>(w: W, history: &[f64]) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    wr.write_record(["iteration", "loss"])?;
    for (i, l) in history.iter().enumerate() {
        wr.write_record([i.to_string(), fmt_f64(*l)])?;
    }
    wr.flush().map_err(|e| Error::Csv(e.to_string()))?;
    Ok(())
}

pub fn write_ranking(dir: &Path, r: &Ranking) -> Result<()> {
    write_file(&dir.join("criticality_report.csv"), |w| r.report.write_csv(w))?;
    write_file(&dir.join("subclass_report.csv"), |w| write_subclass_csv(w, &r.subclass))?;
    write_file(&dir.join("generator_groups.csv"), |w| write_groups_csv(w, &r.grouping))
}

pub fn write_eval(dir: &Path, report: &EvalReport, title: &str) -> Result<()> {
    write_file(&dir.join("report.md"), |w| {
        w.write_all(report.markdown(title).as_bytes())
            .map_err(|e| Error::io(dir, e))
    })?;
    write_file(&dir.join("metrics.csv"), |w| report.write_metrics_csv(w))?;
    write_file(&dir.join("incidents.csv"), |w| report.write_incidents_csv(w))?;
    write_file(&dir.join("confusion.csv"), |w| report.write_confusion_csv(w))
}

// ---------------------------------------------------------------- reproduce

/// In-memory products of one scenario set.
#[derive(Debug, Clone)]
pub struct SetOutputs {
    pub scenarios: Vec<LoadScenario>,
    pub operating_points: Vec<OperatingPoint>,
    pub dispatch_skipped: Vec<Skipped>,
    pub labels: Vec<StabilityLabel>,
    pub ranking: Ranking,
}

/// Scenario → dispatch → simulate → rank for one set, writing into `dir`.
pub fn run_set(
    case: &NetworkCase,
    sc: &ScenarioConfig,
    cfg: &RunConfig,
    dir: &Path,
    progress: &mut (dyn FnMut(&str) + Send),
) -> Result<SetOutputs> {
    let scenarios = scenario::generate_scenarios(sc, case)?;
    write_file(&dir.join("scenarios.csv"), |w| scenario::write_scenarios_csv(w, case, &scenarios))?;
    progress(&format!("{} scenarios", scenarios.len()));

    let (ops, dispatch_skipped) = dispatch_scenarios(case, &scenarios, &cfg.dispatch)?;
    write_file(&dir.join("operating_points.csv"), |w| operating::write_operating_points_csv(w, case, &ops))?;
    write_file(&dir.join("dispatch_skipped.csv"), |w| write_skipped_csv(w, &dispatch_skipped))?;
    let feasible = ops.iter().filter(|o| o.feasible).count();
    if feasible == 0 {
        return Err(Error::Infeasible("no scenario has a feasible dispatch".into()));
    }
    progress(&format!("dispatch: {feasible} feasible of {}", scenarios.len()));

    let labels = simulate_operating_points(case, &ops, &cfg.scan, &cfg.sim)?;
    write_file(&dir.join("labels.csv"), |w| tdsim::write_labels_csv(w, &labels))?;
    progress(&format!("simulation: {} labels", labels.len()));

    let ranking = rank(case, &labels, cfg.weak_fraction, cfg.group_threshold)?;
    write_ranking(dir, &ranking)?;
    let w = ranking.report.weakest();
    progress(&format!(
        "weakest line {} ({} unstable of {})",
        w.branch_id, w.unstable_count, ranking.report.n_scenarios
    ));
    Ok(SetOutputs {
        scenarios,
        operating_points: ops,
        dispatch_skipped,
        labels,
        ranking,
    })
}

#[derive(Debug, Clone)]
pub struct ReproduceOutputs {
    pub line: String,
    pub training: SetOutputs,
    pub validation: SetOutputs,
    pub training_data: Dataset,
    pub validation_data: Dataset,
    pub trained: TrainOutcome,
    pub training_report: EvalReport,
    pub validation_report: EvalReport,
}

/// Full pipeline into `cfg.out`. Work happens in a sibling staging directory
/// that replaces `cfg.out` only on success.
pub fn reproduce(cfg: &RunConfig, progress: &mut (dyn FnMut(&str) + Send)) -> Result<ReproduceOutputs> {
    cfg.validate()?;
    let case = cfg.load_case()?;
    let mut staging = cfg.out.as_os_str().to_owned();
    staging.push(".partial");
    let staging = PathBuf::from(staging);
    if staging.exists() {
        fs::remove_dir_all(&staging).map_err(|e| Error::io(&staging, e))?;
    }
    let result = cfg.with_pool(|| reproduce_into(&case, cfg, &staging, progress))?;
    match result {
        Ok(out) => {
            if cfg.out.exists() {
                fs::remove_dir_all(&cfg.out).map_err(|e| Error::io(&cfg.out, e))?;
            }
            fs::rename(&staging, &cfg.out).map_err(|e| Error::io(&cfg.out, e))?;
            Ok(out)
        }
        Err(e) => {
            let _ = fs::remove_dir_all(&staging);
            Err(e)
        }
    }
}

fn reproduce_into(
    case: &NetworkCase,
    cfg: &RunConfig,
    root: &Path,
    progress: &mut (dyn FnMut(&str) + Send),
) -> Result<ReproduceOutputs> {
    fs::create_dir_all(root).map_err(|e| Error::io(root, e))?;
    write_file(&root.join("case.toml"), |w| {
        w.write_all(case.to_text().as_bytes()).map_err(|e| Error::io(root, e))
    })?;
    write_file(&root.join("config.toml"), |w| {
        let text = toml::to_string(cfg).map_err(|e| Error::Config(e.to_string()))?;
        w.write_all(text.as_bytes()).map_err(|e| Error::io(root, e))
    })?;

    progress("training set");
    let training = run_set(case, &cfg.training, cfg, &root.join("training"), progress)?;
    progress("validation set");
    let validation = run_set(case, &cfg.validation, cfg, &root.join("validation"), progress)?;

    let line = cfg
        .line
        .clone()
        .unwrap_or_else(|| training.ranking.report.weakest().branch_id.clone());
    let dataset = |set: &SetOutputs, dir: &Path| -> Result<Dataset> {
        let (d, skipped) = features::build_dataset(case, &set.operating_points, &set.labels, &line, cfg.bin_width)?;
        write_file(&dir.join("dataset.csv"), |w| d.write_csv(w))?;
        write_file(&dir.join("dataset_skipped.csv"), |w| write_skipped_csv(w, &skipped))?;
        Ok(d)
    };
    let training_data = dataset(&training, &root.join("training"))?;
    let validation_data = dataset(&validation, &root.join("validation"))?;
    progress(&format!(
        "datasets for line {line}: {} training rows ({} unstable), {} validation rows ({} unstable)",
        training_data.rows.len(),
        training_data.unstable_rows().len(),
        validation_data.rows.len(),
        validation_data.unstable_rows().len()
    ));

    let trained = train(&training_data, &line, cfg.bin_width, &cfg.ml, cfg.knn_k)?;
    ml::save_model(&trained.models, &root.join("model.json"))?;
    write_file(&root.join("training_log.csv"), |w| write_loss_csv(w, &trained.loss_history))?;
    if let Some(g) = &trained.grid {
        write_file(&root.join("svm_grid.csv"), |w| write_grid_csv(w, g))?;
    }
    progress("models trained");

    let figures = trained.models.training.clone();
    let training_report = evalreport::summarize(&trained.models, &training_data, figures.clone())?;
    let validation_report = evalreport::summarize(&trained.models, &validation_data, figures)?;
    write_eval(&root.join("report").join("training"), &training_report, "Training set evaluation")?;
    write_eval(&root.join("report").join("validation"), &validation_report, "Validation set evaluation")?;
    progress(&format!(
        "validation: binary error {:.3}%, time-class MAE {}",
        validation_report.binary_error_percent(),
        validation_report
            .mae_seconds
            .map(|m| format!("{m:.4} s"))
            .unwrap_or_else(|| "n/a".into())
    ));
    Ok(ReproduceOutputs {
        line,
        training,
        validation,
        training_data,
        validation_data,
        trained,
        training_report,
        validation_report,
    })
}
