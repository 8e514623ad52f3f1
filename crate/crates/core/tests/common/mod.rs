#![allow(dead_code)]

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use tsa_core::dispatch::{solve_acopf, violations, DispatchOptions};
use tsa_core::ml::svm::{kernel, smo};
use tsa_core::ml::MlpModel;
use tsa_core::netcase::NetworkCase;
use tsa_core::powerflow::{solve_powerflow, solve_with_ybus, PowerFlowSolution, Schedule};
use tsa_core::scenario::{apply_scenario, generate_scenarios, BusLoads, LoadScenario, ScenarioConfig};
use tsa_core::tdsim::{
    kron_reduce, label_stability, power_balance_residuals, simulate_system, DynamicSystem, FaultEnd, FaultSpec,
    SimConfig,
};

/// Exhaustive 1 MW grid over the two non-slack machines of a three-machine
/// case; the slack absorbs the remainder. Each grid point is solved with the
/// Newton power flow and screened against every limit. Returns the cheapest
/// limit-respecting objective and its (pg2, pg3), or None.
pub fn brute_force_dispatch(case: &NetworkCase, loads: &BusLoads) -> Option<(f64, f64, f64)> {
    assert_eq!(case.generators.len(), 3);
    let opts = DispatchOptions::default();
    let ybus = case.build_ybus(None).unwrap();
    let mut base = Schedule::from_case(case);
    base.load_p = loads.p.clone();
    base.load_q = loads.q.clone();
    let g2 = &case.generators[1];
    let g3 = &case.generators[2];
    let p2: Vec<f64> = (g2.pmin.ceil() as i64..=g2.pmax.floor() as i64).map(|v| v as f64).collect();
    let p3: Vec<f64> = (g3.pmin.ceil() as i64..=g3.pmax.floor() as i64).map(|v| v as f64).collect();
    p2.par_iter()
        .filter_map(|&a| {
            let mut best: Option<(f64, f64, f64)> = None;
            for &b in &p3 {
                let mut s = base.clone();
                s.gen_p = vec![0.0, a, b];
                let Ok(sol) = solve_with_ybus(case, &ybus, &s, opts.pf_tol, opts.pf_max_iter) else {
                    continue;
                };
                if !sol.converged || !violations(case, &sol, opts.limit_tol).is_empty() {
                    continue;
                }
                let cost: f64 = case.generators.iter().zip(&sol.pg).map(|(g, &p)| g.cost_a + g.cost_b * p + g.cost_c * p * p).sum();
                if best.map_or(true, |(c, _, _)| cost < c) {
                    best = Some((cost, a, b));
                }
            }
            best
        })
        .min_by(|x, y| x.0.total_cmp(&y.0).then(x.1.total_cmp(&y.1)).then(x.2.total_cmp(&y.2)))
}

/// The seeded fixture scenarios shared by the dispatch checks.
pub fn fixture_scenarios(n: usize, seed: u64) -> Vec<LoadScenario> {
    let case = NetworkCase::wscc9();
    let mut cfg = ScenarioConfig::training();
    cfg.n_scenarios = n;
    cfg.seed = seed;
    cfg.strata = n.min(10);
    generate_scenarios(&cfg, &case).unwrap()
}

/// Worst relative gap (acopf - oracle) / oracle over scenarios whose oracle
/// has a feasible point, plus how many were compared and how many the
/// dispatch left infeasible despite a feasible oracle.
pub struct OracleGap {
    pub worst: f64,
    pub compared: usize,
    pub missed_feasible: usize,
}

pub fn dispatch_oracle_gap(scenarios: &[LoadScenario]) -> OracleGap {
    let case = NetworkCase::wscc9();
    let mut out = OracleGap {
        worst: 0.0,
        compared: 0,
        missed_feasible: 0,
    };
    for s in scenarios {
        let loads = apply_scenario(&case, s).unwrap();
        let r = solve_acopf(&case, &loads, &DispatchOptions::default()).unwrap();
        if let Some((o, _, _)) = brute_force_dispatch(&case, &loads) {
            out.compared += 1;
            if !r.feasible {
                out.missed_feasible += 1;
            }
            out.worst = out.worst.max((r.objective - o) / o);
        }
    }
    out
}

/// Largest converged mismatch (pu) and largest global active-power balance
/// error (MW) over the benchmark and `n` seeded load scenarios.
pub fn powerflow_fixture_errors(n: usize, seed: u64) -> (f64, f64, usize) {
    let case = NetworkCase::wscc9();
    let mut scheds = vec![Schedule::from_case(&case)];
    for s in fixture_scenarios(n, seed) {
        let loads = apply_scenario(&case, &s).unwrap();
        let mut sc = Schedule::from_case(&case);
        sc.load_p = loads.p;
        sc.load_q = loads.q;
        scheds.push(sc);
    }
    let mut worst_mismatch = 0.0f64;
    let mut worst_balance = 0.0f64;
    let mut converged = 0;
    for sc in &scheds {
        let sol = solve_powerflow(&case, sc, 1e-10, 30).unwrap();
        if !sol.converged {
            continue;
        }
        converged += 1;
        worst_mismatch = worst_mismatch.max(sol.mismatch);
        worst_balance = worst_balance.max(balance_error(&case, sc, &sol));
    }
    (worst_mismatch, worst_balance, converged)
}

/// |Σ pg − Σ load − losses| in MW, with losses summed from branch flows and
/// shunt conductances.
pub fn balance_error(case: &NetworkCase, sc: &Schedule, sol: &PowerFlowSolution) -> f64 {
    let gen: f64 = sol.pg.iter().sum();
    let load: f64 = sc.load_p.iter().sum();
    let branch_loss: f64 = sol.flows.iter().map(|f| f.loss_mw()).sum();
    let shunt_loss: f64 = case.buses.iter().zip(&sol.vm).map(|(b, v)| b.shunt_g * v * v).sum();
    (gen - load - branch_loss - shunt_loss).abs()
}

// ---------------------------------------------------------------- dynamics

pub const SMIB_H: f64 = 4.0;
pub const SMIB_P_MW: f64 = 90.0;
pub const SMIB_X_LINE: f64 = 0.3;
pub const SMIB_XDP: f64 = 0.25;

/// One machine feeding an (approximate) infinite bus: a machine with huge
/// inertia and negligible reactance at the slack bus.
pub fn smib_case() -> NetworkCase {
    let text = format!(
        r#"
name = "smib"
base_mva = 100.0
[[buses]]
id = 1
kind = "pv"
base_kv = 20.0
vmin = 0.9
vmax = 1.1
[[buses]]
id = 2
kind = "slack"
base_kv = 20.0
vmin = 0.9
vmax = 1.1
[[branches]]
id = "1-2"
from_bus = 1
to_bus = 2
r = 0.0
x = {SMIB_X_LINE}
rating = 500.0
[[generators]]
bus = 1
pmin = {SMIB_P_MW}
pmax = {SMIB_P_MW}
qmin = -300.0
qmax = 300.0
vset = 1.0
cost_a = 0.0
cost_b = 1.0
cost_c = 0.0
inertia_h = {SMIB_H}
xdp = {SMIB_XDP}
mbase = 100.0
[[generators]]
bus = 2
pmin = -1000.0
pmax = 1000.0
qmin = -1000.0
qmax = 1000.0
vset = 1.0
cost_a = 0.0
cost_b = 1.0
cost_c = 0.0
inertia_h = 1.0e7
xdp = 1.0e-6
mbase = 100.0
"#
    );
    NetworkCase::parse(&text).unwrap()
}

pub fn smib_solution(case: &NetworkCase) -> PowerFlowSolution {
    let sol = solve_powerflow(case, &Schedule::from_case(case), 1e-10, 30).unwrap();
    sol.ensure_converged().unwrap();
    sol
}

/// Bolted fault at the machine terminal, cleared without tripping.
pub fn smib_terminal_fault(t_clear: f64) -> FaultSpec {
    FaultSpec {
        branch_id: "1-2".into(),
        faulted_end: FaultEnd::From,
        t_clear,
        trip_line: false,
    }
}

/// (simulated critical clearing time by bisection, equal-area closed form).
pub fn smib_cct() -> (f64, f64) {
    let case = smib_case();
    let sol = smib_solution(&case);
    let sys = DynamicSystem::new(&case, &sol).unwrap();
    let st = sys.initial_state();
    let pmax = st[0].emf * st[1].emf / (SMIB_XDP + SMIB_X_LINE + 1e-6);
    let pm = SMIB_P_MW / 100.0;
    let d0 = (pm / pmax).asin();
    let dcr = ((PI - 2.0 * d0) * d0.sin() - d0.cos()).acos();
    let omega_s = 2.0 * PI * 60.0;
    let t_cr = (4.0 * SMIB_H * (dcr - d0) / (omega_s * pm)).sqrt();

    let cfg = SimConfig {
        dt: 5e-4,
        t_end: 10.0,
        ..SimConfig::default()
    };
    let stable = |tc: f64| {
        let traj = simulate_system(&sys, &smib_terminal_fault(tc), &cfg).unwrap();
        label_stability(&traj, &cfg).0
    };
    let (mut lo, mut hi) = (0.01, 1.0);
    assert!(stable(lo) && !stable(hi));
    for _ in 0..30 {
        let mid = 0.5 * (lo + hi);
        if stable(mid) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    (0.5 * (lo + hi), t_cr)
}

pub fn nine_bus_system_point() -> (NetworkCase, PowerFlowSolution) {
    let case = NetworkCase::wscc9();
    let loads = apply_scenario(&case, &LoadScenario { id: 0, coeffs: vec![1.2, 0.9, 1.1] }).unwrap();
    let sol = solve_acopf(&case, &loads, &DispatchOptions::default()).unwrap().solution;
    (case, sol)
}

pub const BALANCE_FAULTS: [(&str, FaultEnd); 10] = [
    ("5-7", FaultEnd::To),
    ("5-7", FaultEnd::From),
    ("6-9", FaultEnd::To),
    ("6-9", FaultEnd::From),
    ("8-9", FaultEnd::To),
    ("7-8", FaultEnd::From),
    ("4-5", FaultEnd::From),
    ("4-6", FaultEnd::To),
    ("1-4", FaultEnd::To),
    ("2-7", FaultEnd::To),
];

/// Largest |aggregate power balance residual| at any step of the ten
/// undamped fixture trajectories.
pub fn undamped_balance_worst() -> f64 {
    let (case, sol) = nine_bus_system_point();
    assert!(case.generators.iter().all(|g| g.damping_d == 0.0), "fixture must be undamped");
    let sys = DynamicSystem::new(&case, &sol).unwrap();
    let mut worst = 0.0f64;
    for (branch, end) in BALANCE_FAULTS {
        let fault = FaultSpec {
            branch_id: branch.into(),
            faulted_end: end,
            t_clear: 0.0833,
            trip_line: true,
        };
        let traj = simulate_system(&sys, &fault, &SimConfig::default()).unwrap();
        let res = power_balance_residuals(&sys, &fault, &traj).unwrap();
        worst = res.iter().fold(worst, |a, r| a.max(r.abs()));
    }
    worst
}

/// Complete graph on 6 nodes with positive-conductance branches plus shunts.
pub fn random_network(vals: &[(f64, f64)], shunts: &[(f64, f64)]) -> DMatrix<Complex64> {
    let n = 6;
    let mut y = DMatrix::from_element(n, n, Complex64::new(0.0, 0.0));
    let mut k = 0;
    for i in 0..n {
        for j in (i + 1)..n {
            let (g, b) = vals[k];
            k += 1;
            let yb = Complex64::new(g, -b);
            y[(i, i)] += yb;
            y[(j, j)] += yb;
            y[(i, j)] -= yb;
            y[(j, i)] -= yb;
        }
        let (g, b) = shunts[i];
        y[(i, i)] += Complex64::new(g, b);
    }
    y
}

/// Relative voltage error at the retained nodes between the full and the
/// reduced network for one injection pattern.
pub fn kron_error(y: &DMatrix<Complex64>, retained: &[usize], currents: &[Complex64]) -> f64 {
    let n = y.nrows();
    let mut full_i = DVector::from_element(n, Complex64::new(0.0, 0.0));
    for (k, &r) in retained.iter().enumerate() {
        full_i[r] = currents[k];
    }
    let v_full = y.clone().lu().solve(&full_i).unwrap();
    let red = kron_reduce(y, retained).unwrap();
    let i_red = DVector::from_fn(retained.len(), |k, _| full_i[retained[k]]);
    let v_red = red.y_red.clone().lu().solve(&i_red).unwrap();
    retained
        .iter()
        .enumerate()
        .map(|(k, &r)| (v_red[k] - v_full[r]).norm() / v_full[r].norm().max(1.0))
        .fold(0.0, f64::max)
}

/// Worst Kron error over `trials` seeded random 6-node networks.
pub fn kron_trials(trials: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for _ in 0..trials {
        let vals: Vec<(f64, f64)> = (0..15).map(|_| (rng.gen_range(0.01..2.0), rng.gen_range(0.5..20.0))).collect();
        let shunts: Vec<(f64, f64)> = (0..6).map(|_| (rng.gen_range(0.05..1.0), rng.gen_range(-0.5..0.5))).collect();
        let currents: Vec<Complex64> = (0..3)
            .map(|_| Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)))
            .collect();
        worst = worst.max(kron_error(&random_network(&vals, &shunts), &[0, 2, 5], &currents));
    }
    worst
}

// ---------------------------------------------------------------- learners

/// Largest relative error between the analytic gradient and central finite
/// differences (step 1e-5) for a random small network and data set.
pub fn mlp_gradient_error(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9);
    let n_in = rng.gen_range(2..6);
    let hidden = rng.gen_range(2..8);
    let rows = rng.gen_range(5..15);
    let x: Vec<Vec<f64>> = (0..rows).map(|_| (0..n_in).map(|_| rng.gen_range(-2.0..2.0)).collect()).collect();
    let y: Vec<f64> = (0..rows).map(|i| (i % 2) as f64).collect();
    let mut m = MlpModel::init(n_in, hidden, seed);
    let p0 = m.params();
    let (_, g) = m.loss_and_grad(&x, &y);
    let h = 1e-5;
    let mut num = vec![0.0; p0.len()];
    for k in 0..p0.len() {
        let mut p = p0.clone();
        p[k] += h;
        m.set_params(&p);
        let lp = m.loss_and_grad(&x, &y).0;
        p[k] -= 2.0 * h;
        m.set_params(&p);
        let lm = m.loss_and_grad(&x, &y).0;
        num[k] = (lp - lm) / (2.0 * h);
    }
    let diff: f64 = g.iter().zip(&num).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
    let scale: f64 = g.iter().map(|a| a * a).sum::<f64>().sqrt().max(num.iter().map(|a| a * a).sum::<f64>().sqrt());
    diff / scale.max(1e-12)
}

/// SMO on a random two-class problem: (final KKT violation, tolerance,
/// dual objective non-decreasing, converged).
pub fn smo_check(seed: u64) -> (f64, f64, bool, bool) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.gen_range(10..40);
    let d = 3;
    let x: Vec<Vec<f64>> = (0..n).map(|_| (0..d).map(|_| rng.gen_range(-1.5..1.5)).collect()).collect();
    let y: Vec<f64> = x.iter().map(|r| if r[0] + 0.3 * r[1] + rng.gen_range(-0.4..0.4) > 0.0 { 1.0 } else { -1.0 }).collect();
    let gram: Vec<Vec<f64>> = x.iter().map(|a| x.iter().map(|b| kernel(a, b, 1.5)).collect()).collect();
    let c = [0.1, 1.0, 10.0][rng.gen_range(0..3)];
    let upper = vec![c; n];
    let tol = 1e-3;
    let t = smo(&gram, &y, &upper, tol, 1_000_000);
    let monotone = t.dual_objective.windows(2).all(|w| w[1] >= w[0] - 1e-12);
    (t.kkt_violation, tol, monotone, t.converged)
}
