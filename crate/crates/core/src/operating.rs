//! Solved operating points and their CSV form, the hand-off between the
//! dispatch stage and the simulation / dataset stages.

use std::io::{Read, Write};

use num_complex::Complex64;

use crate::csvio::{fmt_bool, fmt_f64, parse_bool, parse_f64};
use crate::dispatch::DispatchResult;
use crate::error::{Error, Result};
use crate::netcase::NetworkCase;
use crate::powerflow::{branch_flows, injections, PowerFlowSolution};
use crate::scenario::BusLoads;

#[derive(Debug, Clone, PartialEq)]
pub struct OperatingPoint {
    pub scenario_id: usize,
    pub feasible: bool,
    pub n_violations: usize,
    /// $/h at the converged outputs.
    pub objective: f64,
    /// Demand per case load, MW / MVAr.
    pub load_p: Vec<f64>,
    pub load_q: Vec<f64>,
    /// Output per generator, MW / MVAr.
    pub pg: Vec<f64>,
    pub qg: Vec<f64>,
    /// Per bus, pu and rad.
    pub vm: Vec<f64>,
    pub va: Vec<f64>,
}

impl OperatingPoint {
    pub fn from_dispatch(case: &NetworkCase, scenario_id: usize, loads: &BusLoads, r: &DispatchResult) -> Self {
        let (load_p, load_q) = case
            .loads
            .iter()
            .map(|l| {
                let i = case.bus_index(l.bus).unwrap();
                (loads.p[i], loads.q[i])
            })
            .unzip();
        OperatingPoint {
            scenario_id,
            feasible: r.feasible,
            n_violations: r.violations.len(),
            objective: r.objective,
            load_p,
            load_q,
            pg: r.solution.pg.clone(),
            qg: r.solution.qg.clone(),
            vm: r.solution.vm.clone(),
            va: r.solution.va.clone(),
        }
    }

    /// Rebuilds the power-flow solution; flows and the residual mismatch are
    /// recomputed from the stored voltages.
    pub fn solution(&self, case: &NetworkCase) -> Result<PowerFlowSolution> {
        self.check_shape(case)?;
        let n = case.n_bus();
        let v: Vec<Complex64> = (0..n).map(|i| Complex64::from_polar(self.vm[i], self.va[i])).collect();
        let y = case.build_ybus(None)?;
        let s = injections(&y.0, &v);
        let mut net = vec![Complex64::new(0.0, 0.0); n];
        for (k, g) in case.generators.iter().enumerate() {
            net[case.bus_index(g.bus).unwrap()] += Complex64::new(self.pg[k], self.qg[k]);
        }
        for (k, l) in case.loads.iter().enumerate() {
            net[case.bus_index(l.bus).unwrap()] -= Complex64::new(self.load_p[k], self.load_q[k]);
        }
        let mismatch = (0..n)
            .map(|i| (s[i] - net[i] / case.base_mva).norm())
            .fold(0.0, f64::max);
        let flows = branch_flows(case, &v);
        Ok(PowerFlowSolution {
            vm: self.vm.clone(),
            va: self.va.clone(),
            pg: self.pg.clone(),
            qg: self.qg.clone(),
            p_loss: flows.iter().map(|f| f.loss_mw()).sum(),
            iterations: 0,
            converged: true,
            mismatch,
            flows,
            q_limited: vec![false; case.generators.len()],
        })
    }

    fn check_shape(&self, case: &NetworkCase) -> Result<()> {
        let check = |expected: usize, got: usize| {
            if expected == got {
                Ok(())
            } else {
                Err(Error::LengthMismatch { expected, got })
            }
        };
        check(case.loads.len(), self.load_p.len())?;
        check(case.loads.len(), self.load_q.len())?;
        check(case.generators.len(), self.pg.len())?;
        check(case.generators.len(), self.qg.len())?;
        check(case.n_bus(), self.vm.len())?;
        check(case.n_bus(), self.va.len())
    }
}

fn header(case: &NetworkCase) -> Vec<String> {
    let mut h: Vec<String> = ["scenario_id", "feasible", "n_violations", "objective"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    h.extend(case.loads.iter().map(|l| format!("p_load_{}", l.bus)));
    h.extend(case.loads.iter().map(|l| format!("q_load_{}", l.bus)));
    h.extend(case.generators.iter().map(|g| format!("pg_{}", g.bus)));
    h.extend(case.generators.iter().map(|g| format!("qg_{}", g.bus)));
    h.extend(case.buses.iter().map(|b| format!("vm_{}", b.id)));
    h.extend(case.buses.iter().map(|b| format!("va_{}", b.id)));
    h
}

pub fn write_operating_points_csv<W: Write>(w: W, case: &NetworkCase, ops: &[OperatingPoint]) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    wr.write_record(header(case))?;
    for op in ops {
        op.check_shape(case)?;
        let mut row = vec![
            op.scenario_id.to_string(),
            fmt_bool(op.feasible).to_string(),
            op.n_violations.to_string(),
            fmt_f64(op.objective),
        ];
        for v in [&op.load_p, &op.load_q, &op.pg, &op.qg, &op.vm, &op.va] {
            row.extend(v.iter().map(|&x| fmt_f64(x)));
        }
        wr.write_record(&row)?;
    }
    wr.flush().map_err(|e| Error::Csv(e.to_string()))?;
    Ok(())
}

pub fn read_operating_points_csv<R: Read>(r: R, case: &NetworkCase) -> Result<Vec<OperatingPoint>> {
    let mut rd = csv::Reader::from_reader(r);
    let expected = header(case);
    let got: Vec<String> = rd.headers()?.iter().map(str::to_string).collect();
    if got != expected {
        return Err(Error::Csv("operating point header does not match the case".into()));
    }
    let (nl, ng, nb) = (case.loads.len(), case.generators.len(), case.n_bus());
    let mut out = Vec::new();
    for rec in rd.records() {
        let rec = rec?;
        let int = |s: &str| s.parse::<usize>().map_err(|_| Error::Csv(format!("bad integer {s:?}")));
        let nums: Vec<f64> = rec.iter().skip(4).map(parse_f64).collect::<Result<_>>()?;
        let mut it = nums.into_iter();
        let mut take = |k: usize| it.by_ref().take(k).collect::<Vec<f64>>();
        out.push(OperatingPoint {
            scenario_id: int(&rec[0])?,
            feasible: parse_bool(&rec[1])?,
            n_violations: int(&rec[2])?,
            objective: parse_f64(&rec[3])?,
            load_p: take(nl),
            load_q: take(nl),
            pg: take(ng),
            qg: take(ng),
            vm: take(nb),
            va: take(nb),
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dispatch::{solve_acopf, DispatchOptions};
    use crate::scenario::{apply_scenario, LoadScenario};

    #[test]
    fn csv_round_trip_rebuilds_the_solution() {
        let case = NetworkCase::wscc9();
        let s = LoadScenario { id: 3, coeffs: vec![1.1, 0.8, 1.3] };
        let loads = apply_scenario(&case, &s).unwrap();
        let r = solve_acopf(&case, &loads, &DispatchOptions::default()).unwrap();
        let op = OperatingPoint::from_dispatch(&case, 3, &loads, &r);
        let mut buf = Vec::new();
        write_operating_points_csv(&mut buf, &case, std::slice::from_ref(&op)).unwrap();
        let back = read_operating_points_csv(buf.as_slice(), &case).unwrap();
        assert_eq!(back, vec![op.clone()]);
        let sol = back[0].solution(&case).unwrap();
        assert!(sol.mismatch < 1e-8, "{}", sol.mismatch);
        assert_eq!(sol.vm, r.solution.vm);
        assert!((sol.p_loss - r.solution.p_loss).abs() < 1e-9);
    }
}
