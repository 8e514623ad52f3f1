//! `tsa` — batch transient-stability assessment pipeline.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use tsa_core::csvio::fmt_f64;
use tsa_core::features::{build_dataset, extract_features, Dataset};
use tsa_core::ml::{load_model, save_model, TrainedModels};
use tsa_core::netcase::NetworkCase;
use tsa_core::operating::{read_operating_points_csv, write_operating_points_csv};
use tsa_core::pipeline::{self, read_file, write_file, RunConfig};
use tsa_core::scenario::{generate_scenarios, read_scenarios_csv, write_scenarios_csv};
use tsa_core::tdsim::{read_labels_csv, simulate_system, write_labels_csv, DynamicSystem};
use tsa_core::{evalreport, Error, Result};

#[derive(Parser)]
#[command(name = "tsa", version, about = "Data-driven transient stability assessment")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Global {
    /// Run configuration (TOML); defaults apply to absent keys.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Case file; overrides the configuration.
    #[arg(long, global = true)]
    case: Option<PathBuf>,
    /// Output directory; overrides the configuration.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Seed of the learners, and of the scenario draw for `scenarios`.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads for simulation and grid search.
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// Monitored line for dataset construction.
    #[arg(long, global = true)]
    line: Option<String>,
    /// Response delay of fast corrective action, seconds.
    #[arg(long, global = true)]
    tau: Option<f64>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Set {
    Training,
    Validation,
}

#[derive(Subcommand)]
enum Command {
    /// Case file operations.
    Case {
        #[command(subcommand)]
        action: CaseAction,
    },
    /// Draw load scenarios → scenarios.csv.
    Scenarios {
        #[arg(long, value_enum, default_value = "training")]
        set: Set,
    },
    /// Cost-optimal dispatch per scenario → operating_points.csv.
    Dispatch {
        #[arg(long)]
        scenarios: PathBuf,
    },
    /// Fault scan over feasible operating points → labels.csv.
    Simulate {
        #[arg(long)]
        operating_points: PathBuf,
        /// Also write every fault trajectory of this scenario.
        #[arg(long)]
        dump_scenario: Option<usize>,
    },
    /// Line criticality ranking → criticality_report.csv and companions.
    Rank {
        #[arg(long)]
        labels: PathBuf,
    },
    /// Join operating points and labels of one line → dataset.csv.
    Dataset {
        #[arg(long)]
        operating_points: PathBuf,
        #[arg(long)]
        labels: PathBuf,
    },
    /// Train the classifiers → model.json, training_log.csv, svm_grid.csv.
    Train {
        #[arg(long)]
        dataset: PathBuf,
    },
    /// Evaluate a model on a dataset → report.md, metrics.csv, incidents.csv, confusion.csv.
    Eval {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        dataset: PathBuf,
    },
    /// Predict stability, time class and safety; CSV on stdout.
    Predict {
        #[arg(long)]
        model: PathBuf,
        /// CSV whose header contains every model feature name (e.g. dataset.csv).
        #[arg(long, conflicts_with = "operating_points", required_unless_present = "operating_points")]
        features: Option<PathBuf>,
        #[arg(long)]
        operating_points: Option<PathBuf>,
    },
    /// The whole pipeline into one output directory.
    Reproduce,
}

#[derive(Subcommand)]
enum CaseAction {
    /// Parse a case and check its invariants.
    Validate { path: Option<PathBuf> },
}

fn config(g: &Global) -> Result<RunConfig> {
    let mut cfg = match &g.config {
        Some(p) => RunConfig::from_file(p)?,
        None => RunConfig::default(),
    };
    if let Some(c) = &g.case {
        cfg.case = Some(c.clone());
    }
    if let Some(o) = &g.out {
        cfg.out = o.clone();
    }
    if let Some(s) = g.seed {
        cfg.ml.seed = s;
    }
    if let Some(j) = g.jobs {
        cfg.jobs = Some(j);
    }
    if let Some(l) = &g.line {
        cfg.line = Some(l.clone());
    }
    if g.tau.is_some() {
        cfg.sim.tau_response = g.tau;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn log(msg: &str) {
    eprintln!("tsa: {msg}");
}

fn run(cli: Cli) -> Result<()> {
    let g = &cli.global;
    if let Command::Case {
        action: CaseAction::Validate { path },
    } = &cli.command
    {
        let path = path.as_ref().or(g.case.as_ref()).ok_or_else(|| Error::Config("no case path given".into()))?;
        let case = NetworkCase::from_file(path)?;
        println!(
            "{}: ok ({} buses, {} branches, {} generators, {} loads)",
            path.display(),
            case.buses.len(),
            case.branches.len(),
            case.generators.len(),
            case.loads.len()
        );
        return Ok(());
    }
    let cfg = config(g)?;
    let case = cfg.load_case()?;
    let out = cfg.out.clone();
    cfg.with_pool(|| match cli.command {
        Command::Case { .. } => unreachable!("handled above"),
        Command::Scenarios { set } => {
            let mut sc = match set {
                Set::Training => cfg.training.clone(),
                Set::Validation => cfg.validation.clone(),
            };
            if let Some(s) = g.seed {
                sc.seed = s;
            }
            let s = generate_scenarios(&sc, &case)?;
            write_file(&out.join("scenarios.csv"), |w| write_scenarios_csv(w, &case, &s))?;
            log(&format!("{} scenarios", s.len()));
            Ok(())
        }
        Command::Dispatch { scenarios } => {
            let s = read_scenarios_csv(read_file(&scenarios)?, &case)?;
            let (ops, skipped) = pipeline::dispatch_scenarios(&case, &s, &cfg.dispatch)?;
            if ops.iter().all(|o| !o.feasible) {
                return Err(Error::Infeasible("no scenario has a feasible dispatch".into()));
            }
            write_file(&out.join("operating_points.csv"), |w| write_operating_points_csv(w, &case, &ops))?;
            write_file(&out.join("dispatch_skipped.csv"), |w| pipeline::write_skipped_csv(w, &skipped))?;
            log(&format!(
                "{} feasible, {} infeasible, {} skipped",
                ops.iter().filter(|o| o.feasible).count(),
                ops.iter().filter(|o| !o.feasible).count(),
                skipped.len()
            ));
            Ok(())
        }
        Command::Simulate {
            operating_points,
            dump_scenario,
        } => {
            let ops = read_operating_points_csv(read_file(&operating_points)?, &case)?;
            let labels = pipeline::simulate_operating_points(&case, &ops, &cfg.scan, &cfg.sim)?;
            if labels.is_empty() {
                return Err(Error::Infeasible("no feasible operating point to simulate".into()));
            }
            if let Some(id) = dump_scenario {
                dump_trajectories(&case, &cfg, &ops, id, &out)?;
            }
            write_file(&out.join("labels.csv"), |w| write_labels_csv(w, &labels))?;
            log(&format!("{} labels", labels.len()));
            Ok(())
        }
        Command::Rank { labels } => {
            let labels = read_labels_csv(read_file(&labels)?)?;
            let r = pipeline::rank(&case, &labels, cfg.weak_fraction, cfg.group_threshold)?;
            pipeline::write_ranking(&out, &r)?;
            log(&format!("weakest line {}", r.report.weakest().branch_id));
            Ok(())
        }
        Command::Dataset {
            operating_points,
            labels,
        } => {
            let ops = read_operating_points_csv(read_file(&operating_points)?, &case)?;
            let labels = read_labels_csv(read_file(&labels)?)?;
            let line = match &cfg.line {
                Some(l) => l.clone(),
                None => tsa_core::criticality::rank_lines(&labels, cfg.weak_fraction)?
                    .weakest()
                    .branch_id
                    .clone(),
            };
            let (d, skipped) = build_dataset(&case, &ops, &labels, &line, cfg.bin_width)?;
            write_file(&out.join("dataset.csv"), |w| d.write_csv(w))?;
            write_file(&out.join("dataset_skipped.csv"), |w| pipeline::write_skipped_csv(w, &skipped))?;
            log(&format!("line {line}: {} rows, {} skipped", d.rows.len(), skipped.len()));
            Ok(())
        }
        Command::Train { dataset } => {
            let d = Dataset::read_csv(read_file(&dataset)?)?;
            let line = cfg
                .line
                .clone()
                .ok_or_else(|| Error::Config("train needs --line (the dataset's monitored line)".into()))?;
            let t = pipeline::train(&d, &line, cfg.bin_width, &cfg.ml, cfg.knn_k)?;
            save_model(&t.models, &out.join("model.json"))?;
            write_file(&out.join("training_log.csv"), |w| pipeline::write_loss_csv(w, &t.loss_history))?;
            if let Some(grid) = &t.grid {
                write_file(&out.join("svm_grid.csv"), |w| pipeline::write_grid_csv(w, grid))?;
            }
            if let Some(f) = &t.models.training {
                log(&format!(
                    "perceptron training accuracy {:.4}; svm cv accuracy {}",
                    f.mlp_train_accuracy,
                    f.svm_cv_accuracy.map(|a| format!("{a:.4}")).unwrap_or_else(|| "n/a".into())
                ));
            }
            Ok(())
        }
        Command::Eval { model, dataset } => {
            let m = load_model(&model)?;
            let d = Dataset::read_csv(read_file(&dataset)?)?;
            let r = evalreport::summarize(&m, &d, m.training.clone())?;
            pipeline::write_eval(&out, &r, "Evaluation")?;
            log(&format!("binary error {:.4}%", r.binary_error_percent()));
            Ok(())
        }
        Command::Predict {
            model,
            features,
            operating_points,
        } => {
            let m = load_model(&model)?;
            let rows = match (features, operating_points) {
                (Some(f), _) => feature_rows(&m, &f)?,
                (None, Some(p)) => {
                    let ops = read_operating_points_csv(read_file(&p)?, &case)?;
                    ops.iter()
                        .map(|op| Ok((op.scenario_id.to_string(), extract_features(&case, op, &m.line)?)))
                        .collect::<Result<_>>()?
                }
                (None, None) => unreachable!("clap requires one input"),
            };
            print_predictions(&m, &rows, cfg.sim.tau_response)
        }
        Command::Reproduce => {
            pipeline::reproduce(&cfg, &mut |m| log(m))?;
            log(&format!("wrote {}", out.display()));
            Ok(())
        }
    })?
}

fn dump_trajectories(
    case: &NetworkCase,
    cfg: &RunConfig,
    ops: &[tsa_core::operating::OperatingPoint],
    id: usize,
    out: &Path,
) -> Result<()> {
    let op = ops
        .iter()
        .find(|o| o.scenario_id == id)
        .ok_or_else(|| Error::Config(format!("scenario {id} is not in the operating points")))?;
    let sol = op.solution(case)?;
    let sys = DynamicSystem::new(case, &sol)?;
    for f in cfg.scan.faults(case)? {
        let traj = simulate_system(&sys, &f, &cfg.sim)?;
        let name = format!("trajectory_{id}_{}.csv", f.branch_id);
        write_file(&out.join("trajectories").join(name), |w| traj.write_csv(w))?;
    }
    Ok(())
}

/// Rows of a CSV keyed by `scenario_id` when present, else by row number.
fn feature_rows(m: &TrainedModels, path: &Path) -> Result<Vec<(String, Vec<f64>)>> {
    let mut rd = csv::Reader::from_reader(read_file(path)?);
    let header: Vec<String> = rd.headers()?.iter().map(str::to_string).collect();
    let cols: Vec<usize> = m
        .feature_names
        .iter()
        .map(|n| {
            header
                .iter()
                .position(|h| h == n)
                .ok_or_else(|| Error::Csv(format!("missing feature column {n:?}")))
        })
        .collect::<Result<_>>()?;
    let id_col = header.iter().position(|h| h == "scenario_id");
    let mut rows = Vec::new();
    for (i, rec) in rd.records().enumerate() {
        let rec = rec?;
        let x = cols
            .iter()
            .map(|&c| tsa_core::csvio::parse_f64(&rec[c]))
            .collect::<Result<Vec<f64>>>()?;
        let key = id_col.map_or_else(|| i.to_string(), |c| rec[c].to_string());
        rows.push((key, x));
    }
    Ok(rows)
}

fn print_predictions(m: &TrainedModels, rows: &[(String, Vec<f64>)], tau: Option<f64>) -> Result<()> {
    let stdout = std::io::stdout();
    let mut wr = csv::Writer::from_writer(stdout.lock());
    wr.write_record(["id", "stable", "confidence", "time_class", "safe"])?;
    for (id, x) in rows {
        let p = pipeline::predict(m, x, tau)?;
        wr.write_record([
            id.as_str(),
            tsa_core::csvio::fmt_bool(p.stable),
            &fmt_f64(p.confidence),
            p.time_class.as_deref().unwrap_or(""),
            p.safe.map(tsa_core::csvio::fmt_bool).unwrap_or(""),
        ])?;
    }
    wr.flush().map_err(|e| Error::Csv(e.to_string()))?;
    std::io::stdout().flush().ok();
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("tsa: error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
