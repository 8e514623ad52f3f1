//! Newton-Raphson AC power flow in polar coordinates.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::netcase::{AdmittanceMatrix, BusKind, NetworkCase};

pub const DEFAULT_TOL: f64 = 1e-8;
pub const DEFAULT_MAX_ITER: usize = 30;

/// Scheduled quantities for one solve, in MW / MVAr / per-unit.
#[derive(Debug, Clone, PartialEq)]
pub struct Schedule {
    /// Load demand per bus position.
    pub load_p: Vec<f64>,
    pub load_q: Vec<f64>,
    /// Real power setpoint per generator (ignored for the slack machine).
    pub gen_p: Vec<f64>,
    /// Terminal voltage setpoint per generator.
    pub gen_vset: Vec<f64>,
}

impl Schedule {
    /// Benchmark loads with generators at `pmin` and their case voltage setpoints.
    pub fn from_case(case: &NetworkCase) -> Self {
        let mut load_p = vec![0.0; case.n_bus()];
        let mut load_q = vec![0.0; case.n_bus()];
        for l in &case.loads {
            let i = case.bus_index(l.bus).unwrap();
            load_p[i] = l.p_base;
            load_q[i] = l.q_base;
        }
        Schedule {
            load_p,
            load_q,
            gen_p: case.generators.iter().map(|g| g.pmin).collect(),
            gen_vset: case.generators.iter().map(|g| g.vset).collect(),
        }
    }
}

/// Complex power at both ends of a branch, in MVA.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BranchFlow {
    pub from: Complex64,
    pub to: Complex64,
}

impl BranchFlow {
    pub fn loss_mw(&self) -> f64 {
        self.from.re + self.to.re
    }

    /// Larger apparent power of the two ends.
    pub fn max_mva(&self) -> f64 {
        self.from.norm().max(self.to.norm())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PowerFlowSolution {
    pub vm: Vec<f64>,
    pub va: Vec<f64>,
    pub pg: Vec<f64>,
    pub qg: Vec<f64>,
    pub p_loss: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Final largest absolute mismatch in per-unit.
    pub mismatch: f64,
    /// Branch flows in `case.branches` order.
    pub flows: Vec<BranchFlow>,
    /// Generators switched from voltage control to fixed reactive output.
    pub q_limited: Vec<bool>,
}

impl PowerFlowSolution {
    pub fn ensure_converged(&self) -> Result<()> {
        if self.converged {
            Ok(())
        } else {
            Err(Error::Diverged {
                iterations: self.iterations,
                mismatch: self.mismatch,
            })
        }
    }

    pub fn voltage(&self, i: usize) -> Complex64 {
        Complex64::from_polar(self.vm[i], self.va[i])
    }
}

pub fn solve_powerflow(
    case: &NetworkCase,
    schedule: &Schedule,
    tol: f64,
    max_iter: usize,
) -> Result<PowerFlowSolution> {
    let ybus = case.build_ybus(None)?;
    solve_with_ybus(case, &ybus, schedule, tol, max_iter)
}

/// Same as [`solve_powerflow`] with a prebuilt admittance matrix.
pub fn solve_with_ybus(
    case: &NetworkCase,
    ybus: &AdmittanceMatrix,
    schedule: &Schedule,
    tol: f64,
    max_iter: usize,
) -> Result<PowerFlowSolution> {
    let n = case.n_bus();
    if !(tol > 0.0) {
        return Err(Error::Config(format!("tolerance must be positive, got {tol}")));
    }
    for (len, what) in [
        (schedule.load_p.len(), n),
        (schedule.load_q.len(), n),
        (schedule.gen_p.len(), case.generators.len()),
        (schedule.gen_vset.len(), case.generators.len()),
    ] {
        if len != what {
            return Err(Error::LengthMismatch {
                expected: what,
                got: len,
            });
        }
    }
    let base = case.base_mva;
    let y = &ybus.0;
    let slack = case.slack_index();

    let gen_pos: Vec<usize> = case
        .generators
        .iter()
        .map(|g| case.bus_index(g.bus).unwrap())
        .collect();

    // Specified injections in per-unit.
    let mut p_spec = vec![0.0; n];
    let mut q_spec = vec![0.0; n];
    for i in 0..n {
        p_spec[i] = -schedule.load_p[i] / base;
        q_spec[i] = -schedule.load_q[i] / base;
    }
    for (k, &i) in gen_pos.iter().enumerate() {
        p_spec[i] += schedule.gen_p[k] / base;
    }

    let mut vm = vec![1.0; n];
    let mut va = vec![0.0; n];
    let mut voltage_controlled = vec![false; n];
    for (k, &i) in gen_pos.iter().enumerate() {
        vm[i] = schedule.gen_vset[k];
        voltage_controlled[i] = case.buses[i].kind != BusKind::Pq;
    }
    let mut q_limited = vec![false; case.generators.len()];

    let mut iterations = 0;
    let mut converged = false;
    let mut mismatch;
    loop {
        let (pv, pq) = classify(case, slack, &voltage_controlled);
        let v: Vec<Complex64> = (0..n).map(|i| Complex64::from_polar(vm[i], va[i])).collect();
        let s = injections(y, &v);
        let f = mismatch_vector(&s, &p_spec, &q_spec, &pv, &pq);
        mismatch = f.iter().fold(0.0_f64, |m, x| m.max(x.abs()));
        if !mismatch.is_finite() {
            break;
        }
        if mismatch < tol {
            // Enforce reactive limits: switch violating generators to PQ.
            let mut switched = false;
            for (k, g) in case.generators.iter().enumerate() {
                let i = gen_pos[k];
                if i == slack || !voltage_controlled[i] {
                    continue;
                }
                let qg = s[i].im * base + schedule.load_q[i];
                let limit = if qg > g.qmax + 1e-9 {
                    Some(g.qmax)
                } else if qg < g.qmin - 1e-9 {
                    Some(g.qmin)
                } else {
                    None
                };
                if let Some(q) = limit {
                    voltage_controlled[i] = false;
                    q_limited[k] = true;
                    q_spec[i] = (q - schedule.load_q[i]) / base;
                    switched = true;
                }
            }
            if !switched {
                converged = true;
                break;
            }
            continue;
        }
        if iterations >= max_iter {
            break;
        }
        let jac = jacobian(y, &v, &pv, &pq);
        let lu = jac.lu();
        let dx = match lu.solve(&f) {
            Some(dx) if dx.iter().all(|x| x.is_finite()) => dx,
            _ => return Err(Error::SingularJacobian(iterations)),
        };
        iterations += 1;
        let npvpq = pv.len() + pq.len();
        for (k, &i) in pv.iter().chain(pq.iter()).enumerate() {
            va[i] -= dx[k];
        }
        for (k, &i) in pq.iter().enumerate() {
            vm[i] -= dx[npvpq + k];
        }
    }

    let v: Vec<Complex64> = (0..n).map(|i| Complex64::from_polar(vm[i], va[i])).collect();
    let s = injections(y, &v);
    let pg: Vec<f64> = gen_pos
        .iter()
        .map(|&i| s[i].re * base + schedule.load_p[i])
        .collect();
    let qg: Vec<f64> = gen_pos
        .iter()
        .map(|&i| s[i].im * base + schedule.load_q[i])
        .collect();
    let flows = branch_flows(case, &v);
    let shunt_loss: f64 = case
        .buses
        .iter()
        .enumerate()
        .map(|(i, b)| b.shunt_g * vm[i] * vm[i] * base)
        .sum();
    let p_loss = flows.iter().map(BranchFlow::loss_mw).sum::<f64>() + shunt_loss;

    Ok(PowerFlowSolution {
        vm,
        va,
        pg,
        qg,
        p_loss,
        iterations,
        converged,
        mismatch,
        flows,
        q_limited,
    })
}

fn classify(case: &NetworkCase, slack: usize, voltage_controlled: &[bool]) -> (Vec<usize>, Vec<usize>) {
    let mut pv = Vec::new();
    let mut pq = Vec::new();
    for i in 0..case.n_bus() {
        if i == slack {
            continue;
        }
        if voltage_controlled[i] {
            pv.push(i);
        } else {
            pq.push(i);
        }
    }
    (pv, pq)
}

/// Complex power injection `V ∘ conj(Y V)` per bus, per-unit.
pub fn injections(y: &DMatrix<Complex64>, v: &[Complex64]) -> Vec<Complex64> {
    let n = v.len();
    (0..n)
        .map(|i| {
            let current: Complex64 = (0..n).map(|j| y[(i, j)] * v[j]).sum();
            v[i] * current.conj()
        })
        .collect()
}

fn mismatch_vector(
    s: &[Complex64],
    p_spec: &[f64],
    q_spec: &[f64],
    pv: &[usize],
    pq: &[usize],
) -> DVector<f64> {
    let mut f = Vec::with_capacity(pv.len() + 2 * pq.len());
    for &i in pv.iter().chain(pq.iter()) {
        f.push(s[i].re - p_spec[i]);
    }
    for &i in pq {
        f.push(s[i].im - q_spec[i]);
    }
    DVector::from_vec(f)
}

fn jacobian(y: &DMatrix<Complex64>, v: &[Complex64], pv: &[usize], pq: &[usize]) -> DMatrix<f64> {
    let n = v.len();
    let j = Complex64::new(0.0, 1.0);
    let ibus: Vec<Complex64> = (0..n).map(|i| (0..n).map(|k| y[(i, k)] * v[k]).sum()).collect();
    let vnorm: Vec<Complex64> = v.iter().map(|x| x / x.norm()).collect();

    // dS/dVa and dS/dVm, dense.
    let mut ds_dva = DMatrix::from_element(n, n, Complex64::new(0.0, 0.0));
    let mut ds_dvm = DMatrix::from_element(n, n, Complex64::new(0.0, 0.0));
    for r in 0..n {
        for c in 0..n {
            let diag_i = if r == c { ibus[r] } else { Complex64::new(0.0, 0.0) };
            ds_dva[(r, c)] = j * v[r] * (diag_i - y[(r, c)] * v[c]).conj();
            let mut dm = v[r] * (y[(r, c)] * vnorm[c]).conj();
            if r == c {
                dm += ibus[r].conj() * vnorm[r];
            }
            ds_dvm[(r, c)] = dm;
        }
    }

    let ang: Vec<usize> = pv.iter().chain(pq.iter()).copied().collect();
    let na = ang.len();
    let nm = pq.len();
    let mut jac = DMatrix::zeros(na + nm, na + nm);
    for (ri, &r) in ang.iter().enumerate() {
        for (ci, &c) in ang.iter().enumerate() {
            jac[(ri, ci)] = ds_dva[(r, c)].re;
        }
        for (ci, &c) in pq.iter().enumerate() {
            jac[(ri, na + ci)] = ds_dvm[(r, c)].re;
        }
    }
    for (ri, &r) in pq.iter().enumerate() {
        for (ci, &c) in ang.iter().enumerate() {
            jac[(na + ri, ci)] = ds_dva[(r, c)].im;
        }
        for (ci, &c) in pq.iter().enumerate() {
            jac[(na + ri, na + ci)] = ds_dvm[(r, c)].im;
        }
    }
    jac
}

/// Branch end flows in MVA for the given bus voltages.
pub fn branch_flows(case: &NetworkCase, v: &[Complex64]) -> Vec<BranchFlow> {
    case.branches
        .iter()
        .map(|br| {
            let f = case.bus_index(br.from_bus).unwrap();
            let t = case.bus_index(br.to_bus).unwrap();
            let ys = Complex64::new(1.0, 0.0) / Complex64::new(br.r, br.x);
            let bc = Complex64::new(0.0, br.b_charging / 2.0);
            let tap = br.tap;
            let yff = (ys + bc) / (tap * tap);
            let yft = -ys / tap;
            let ytt = ys + bc;
            let i_f = yff * v[f] + yft * v[t];
            let i_t = yft * v[f] + ytt * v[t];
            BranchFlow {
                from: v[f] * i_f.conj() * case.base_mva,
                to: v[t] * i_t.conj() * case.base_mva,
            }
        })
        .collect()
}
