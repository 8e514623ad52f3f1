//! Minimum-cost dispatch for one load scenario.
//!
//! The non-slack real power setpoints are searched by a projected pattern
//! search (coordinate moves plus pairwise transfer moves) wrapped around the
//! Newton power flow. Operating limits enter through a quadratic penalty whose
//! weight is swept upwards, warm-starting each stage from the previous one.
//! Voltage setpoints stay at the case values.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::netcase::{AdmittanceMatrix, NetworkCase};
use crate::powerflow::{self, PowerFlowSolution, Schedule};
use crate::scenario::BusLoads;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DispatchOptions {
    pub pf_tol: f64,
    pub pf_max_iter: usize,
    pub penalty_weights: Vec<f64>,
    /// First and last pattern step, MW.
    pub initial_step: f64,
    pub min_step: f64,
    /// Slack on limit checks (MW, MVAr, MVA; per-unit / 100 for voltage).
    pub limit_tol: f64,
}

impl Default for DispatchOptions {
    fn default() -> Self {
        DispatchOptions {
            pf_tol: powerflow::DEFAULT_TOL,
            pf_max_iter: powerflow::DEFAULT_MAX_ITER,
            penalty_weights: vec![1.0, 1e2, 1e4, 1e6],
            initial_step: 32.0,
            min_step: 1e-3,
            limit_tol: 1e-3,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LimitKind {
    PgUpper,
    PgLower,
    QgUpper,
    QgLower,
    VmUpper,
    VmLower,
    FlowRating,
}

impl fmt::Display for LimitKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            LimitKind::PgUpper => "pg_upper",
            LimitKind::PgLower => "pg_lower",
            LimitKind::QgUpper => "qg_upper",
            LimitKind::QgLower => "qg_lower",
            LimitKind::VmUpper => "vm_upper",
            LimitKind::VmLower => "vm_lower",
            LimitKind::FlowRating => "flow_rating",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Violation {
    pub kind: LimitKind,
    /// `gen_<bus>`, `bus_<id>` or the branch id.
    pub element: String,
    /// Amount beyond the limit in MW, MVAr, per-unit or MVA.
    pub magnitude: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DispatchResult {
    pub pg_set: Vec<f64>,
    pub vset: Vec<f64>,
    pub objective: f64,
    pub feasible: bool,
    pub violations: Vec<Violation>,
    pub solution: PowerFlowSolution,
}

impl DispatchResult {
    pub fn into_feasible(self) -> Result<Self> {
        if self.feasible {
            Ok(self)
        } else {
            let desc: Vec<String> = self
                .violations
                .iter()
                .map(|v| format!("{} {} by {:.4}", v.element, v.kind, v.magnitude))
                .collect();
            Err(Error::Infeasible(desc.join(", ")))
        }
    }
}

/// Total hourly cost at the converged generator outputs.
pub fn objective(case: &NetworkCase, solution: &PowerFlowSolution) -> f64 {
    case.generators
        .iter()
        .zip(&solution.pg)
        .map(|(g, &p)| g.cost(p))
        .sum()
}

/// Limit violations of a converged operating point, in a fixed order:
/// generators, then buses, then branches.
pub fn check_limits(result: &DispatchResult, case: &NetworkCase) -> Vec<Violation> {
    violations(case, &result.solution, DispatchOptions::default().limit_tol)
}

pub fn violations(case: &NetworkCase, sol: &PowerFlowSolution, tol: f64) -> Vec<Violation> {
    let mut out = Vec::new();
    let mut push = |kind, element: String, magnitude: f64, scale: f64| {
        if magnitude > tol / scale {
            out.push(Violation { kind, element, magnitude });
        }
    };
    for (k, g) in case.generators.iter().enumerate() {
        let name = format!("gen_{}", g.bus);
        push(LimitKind::PgUpper, name.clone(), sol.pg[k] - g.pmax, 1.0);
        push(LimitKind::PgLower, name.clone(), g.pmin - sol.pg[k], 1.0);
        push(LimitKind::QgUpper, name.clone(), sol.qg[k] - g.qmax, 1.0);
        push(LimitKind::QgLower, name, g.qmin - sol.qg[k], 1.0);
    }
    for (i, b) in case.buses.iter().enumerate() {
        let name = format!("bus_{}", b.id);
        push(LimitKind::VmUpper, name.clone(), sol.vm[i] - b.vmax, 100.0);
        push(LimitKind::VmLower, name, b.vmin - sol.vm[i], 100.0);
    }
    for (br, flow) in case.branches.iter().zip(&sol.flows) {
        push(LimitKind::FlowRating, br.id.clone(), flow.max_mva() - br.rating, 1.0);
    }
    out
}

fn penalty(case: &NetworkCase, sol: &PowerFlowSolution) -> f64 {
    violations(case, sol, 0.0)
        .iter()
        .map(|v| {
            let m = match v.kind {
                LimitKind::VmUpper | LimitKind::VmLower => v.magnitude * 100.0,
                _ => v.magnitude,
            };
            m * m
        })
        .sum()
}

const SLACK_REPAIR_ROUNDS: usize = 6;

struct Evaluator<'a> {
    case: &'a NetworkCase,
    ybus: AdmittanceMatrix,
    schedule: Schedule,
    slack_gen: usize,
    opts: &'a DispatchOptions,
}

struct Point {
    x: Vec<f64>,
    cost: f64,
    pen: f64,
    sol: PowerFlowSolution,
}

impl Evaluator<'_> {
    fn free_gens(&self) -> Vec<usize> {
        (0..self.case.generators.len()).filter(|&k| k != self.slack_gen).collect()
    }

    fn solve(&self, x: &[f64]) -> Option<PowerFlowSolution> {
        let mut sched = self.schedule.clone();
        for (&k, &p) in self.free_gens().iter().zip(x) {
            sched.gen_p[k] = p;
        }
        let sol = powerflow::solve_with_ybus(
            self.case,
            &self.ybus,
            &sched,
            self.opts.pf_tol,
            self.opts.pf_max_iter,
        )
        .ok()?;
        sol.converged.then_some(sol)
    }

    /// Solves at `x`, first projecting it so the slack machine stays within
    /// its real power limits: any excess is shared equally by the free
    /// machines that still have headroom.
    fn eval(&self, x: &[f64]) -> Option<Point> {
        let free = self.free_gens();
        let slack = &self.case.generators[self.slack_gen];
        let mut x = x.to_vec();
        let mut sol = self.solve(&x)?;
        for _ in 0..SLACK_REPAIR_ROUNDS {
            let p = sol.pg[self.slack_gen];
            let excess = p - p.clamp(slack.pmin, slack.pmax);
            if excess.abs() < 1e-9 {
                break;
            }
            let open: Vec<usize> = (0..free.len())
                .filter(|&i| {
                    let g = &self.case.generators[free[i]];
                    if excess > 0.0 {
                        x[i] < g.pmax
                    } else {
                        x[i] > g.pmin
                    }
                })
                .collect();
            if open.is_empty() {
                break;
            }
            let share = excess / open.len() as f64;
            for i in open {
                let g = &self.case.generators[free[i]];
                x[i] = (x[i] + share).clamp(g.pmin, g.pmax);
            }
            sol = self.solve(&x)?;
        }
        Some(Point {
            x,
            cost: objective(self.case, &sol),
            pen: penalty(self.case, &sol),
            sol,
        })
    }
}

/// Solves the dispatch for the given per-bus loads.
pub fn solve_acopf(case: &NetworkCase, loads: &BusLoads, opts: &DispatchOptions) -> Result<DispatchResult> {
    if loads.p.len() != case.n_bus() || loads.q.len() != case.n_bus() {
        return Err(Error::LengthMismatch {
            expected: case.n_bus(),
            got: loads.p.len().min(loads.q.len()),
        });
    }
    if loads.p.iter().any(|&p| p < 0.0) {
        return Err(Error::Config("scenario loads must be non-negative".into()));
    }
    let slack_bus = case.buses[case.slack_index()].id;
    let slack_gen = case
        .generators
        .iter()
        .position(|g| g.bus == slack_bus)
        .expect("slack bus carries a generator");
    let mut schedule = Schedule::from_case(case);
    schedule.load_p.clone_from(&loads.p);
    schedule.load_q.clone_from(&loads.q);
    let ev = Evaluator {
        case,
        ybus: case.build_ybus(None)?,
        schedule,
        slack_gen,
        opts,
    };
    let free = ev.free_gens();
    let bounds: Vec<(f64, f64)> = free
        .iter()
        .map(|&k| (case.generators[k].pmin, case.generators[k].pmax))
        .collect();

    let start = lossless_merit_order(case, loads.total_p());
    let mut x0: Vec<f64> = free.iter().map(|&k| start[k]).collect();
    let mut best = ev.eval(&x0);
    if best.is_none() {
        // Fall back to midpoints of the setpoint ranges.
        x0 = bounds.iter().map(|&(lo, hi)| 0.5 * (lo + hi)).collect();
        best = ev.eval(&x0);
    }
    let mut best = best.ok_or(Error::PfDiverged)?;

    let directions = search_directions(free.len());
    for &w in &opts.penalty_weights {
        let score = |p: &Point| p.cost + w * p.pen;
        let mut step = opts.initial_step;
        while step >= opts.min_step {
            let mut improved = true;
            while improved {
                improved = false;
                for d in &directions {
                    let trial: Vec<f64> = best
                        .x
                        .iter()
                        .zip(d)
                        .zip(&bounds)
                        .map(|((&xi, &di), &(lo, hi))| (xi + step * di).clamp(lo, hi))
                        .collect();
                    if trial == best.x {
                        continue;
                    }
                    if let Some(p) = ev.eval(&trial) {
                        if p.x != best.x && score(&p) < score(&best) - 1e-12 {
                            best = p;
                            improved = true;
                        }
                    }
                }
            }
            step *= 0.5;
        }
    }

    let violations = violations(case, &best.sol, opts.limit_tol);
    let mut pg_set: Vec<f64> = best.sol.pg.clone();
    for (&k, &p) in free.iter().zip(&best.x) {
        pg_set[k] = p;
    }
    Ok(DispatchResult {
        pg_set,
        vset: ev.schedule.gen_vset.clone(),
        objective: best.cost,
        feasible: violations.is_empty(),
        violations,
        solution: best.sol,
    })
}

/// Evaluates a fixed setpoint vector (non-slack machines take `pg`, the slack
/// balances) without optimizing.
pub fn evaluate_dispatch(
    case: &NetworkCase,
    loads: &BusLoads,
    pg: &[f64],
    opts: &DispatchOptions,
) -> Result<DispatchResult> {
    if pg.len() != case.generators.len() {
        return Err(Error::LengthMismatch {
            expected: case.generators.len(),
            got: pg.len(),
        });
    }
    let mut sched = Schedule::from_case(case);
    sched.load_p.clone_from(&loads.p);
    sched.load_q.clone_from(&loads.q);
    sched.gen_p = pg.to_vec();
    let sol = powerflow::solve_powerflow(case, &sched, opts.pf_tol, opts.pf_max_iter)?;
    if !sol.converged {
        return Err(Error::PfDiverged);
    }
    let violations = violations(case, &sol, opts.limit_tol);
    Ok(DispatchResult {
        pg_set: pg.to_vec(),
        vset: sched.gen_vset,
        objective: objective(case, &sol),
        feasible: violations.is_empty(),
        violations,
        solution: sol,
    })
}

/// Unit directions plus pairwise transfers `e_i - e_j`, both signs.
fn search_directions(n: usize) -> Vec<Vec<f64>> {
    let mut dirs = Vec::new();
    for i in 0..n {
        for s in [1.0, -1.0] {
            let mut d = vec![0.0; n];
            d[i] = s;
            dirs.push(d);
        }
    }
    for i in 0..n {
        for j in i + 1..n {
            for s in [1.0, -1.0] {
                let mut d = vec![0.0; n];
                d[i] = s;
                d[j] = -s;
                dirs.push(d);
            }
        }
    }
    dirs
}

/// Equal-incremental-cost split of `demand` ignoring losses, clamped to limits.
fn lossless_merit_order(case: &NetworkCase, demand: f64) -> Vec<f64> {
    let output = |lambda: f64| -> Vec<f64> {
        case.generators
            .iter()
            .map(|g| {
                let p = if g.cost_c > 0.0 {
                    (lambda - g.cost_b) / (2.0 * g.cost_c)
                } else if lambda >= g.cost_b {
                    g.pmax
                } else {
                    g.pmin
                };
                p.clamp(g.pmin, g.pmax)
            })
            .collect()
    };
    let (mut lo, mut hi) = (-1e4, 1e4);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if output(mid).iter().sum::<f64>() < demand {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    output(0.5 * (lo + hi))
}
