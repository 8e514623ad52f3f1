//! Classical multimachine fault simulation.
//!
//! Each machine is a constant EMF behind its transient reactance, loads are
//! constant admittances fixed at the pre-fault operating point, and the
//! network is Kron-reduced onto the machine internal nodes for each of the
//! pre-fault, fault-on and post-fault topologies. The swing equations are
//! integrated with fixed-step RK4.

use std::f64::consts::PI;
use std::fmt;
use std::io::{Read, Write};

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::csvio::{fmt_bool, fmt_f64, parse_bool, parse_f64};
use crate::error::{Error, Result};
use crate::netcase::{branch_id_cmp, BusId, NetworkCase};
use crate::powerflow::{injections, PowerFlowSolution};

/// Shunt admittance used to short the faulted bus, per-unit.
pub const FAULT_ADMITTANCE: f64 = 1e7;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimConfig {
    pub dt: f64,
    pub t_end: f64,
    /// Largest tolerated rotor angle separation from the centre of inertia, rad.
    pub angle_threshold: f64,
    /// Detection-plus-activation delay of a fast storage response, s.
    pub tau_response: Option<f64>,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            dt: 1e-3,
            t_end: 5.0,
            angle_threshold: PI,
            tau_response: None,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0 && self.dt <= 0.01) {
            return Err(Error::Config(format!("dt must be in (0, 0.01], got {}", self.dt)));
        }
        if !(self.t_end >= 1.0) {
            return Err(Error::Config(format!("t_end must be at least 1 s, got {}", self.t_end)));
        }
        if !(self.angle_threshold > 0.0) {
            return Err(Error::Config("angle_threshold must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FaultEnd {
    From,
    To,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FaultSpec {
    pub branch_id: String,
    pub faulted_end: FaultEnd,
    pub t_clear: f64,
    pub trip_line: bool,
}

impl FaultSpec {
    pub fn faulted_bus(&self, case: &NetworkCase) -> Result<BusId> {
        let br = case.branch(&self.branch_id)?;
        Ok(match self.faulted_end {
            FaultEnd::From => br.from_bus,
            FaultEnd::To => br.to_bus,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MachineState {
    pub delta: f64,
    pub omega: f64,
    pub emf: f64,
    pub pm: f64,
}

/// Admittance matrix over machine internal nodes.
#[derive(Debug, Clone, PartialEq)]
pub struct ReducedNetwork {
    pub y_red: DMatrix<Complex64>,
}

impl ReducedNetwork {
    pub fn dim(&self) -> usize {
        self.y_red.nrows()
    }

    /// Electrical power out of each internal node for the given EMFs.
    pub fn electrical_power(&self, emf: &[f64], delta: &[f64], out: &mut [f64]) {
        let n = self.dim();
        let e: Vec<Complex64> = (0..n).map(|i| Complex64::from_polar(emf[i], delta[i])).collect();
        for i in 0..n {
            let mut current = Complex64::new(0.0, 0.0);
            for (j, ej) in e.iter().enumerate() {
                current += self.y_red[(i, j)] * ej;
            }
            out[i] = (e[i] * current.conj()).re;
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub times: Vec<f64>,
    /// `deltas[k][i]`: angle of machine `i` at step `k`, rad.
    pub deltas: Vec<Vec<f64>>,
    /// Speed deviations in per-unit.
    pub omegas: Vec<Vec<f64>>,
    /// Inertia constants on the system base, for centre-of-inertia weighting.
    pub inertia: Vec<f64>,
    /// Time a machine was disconnected by the clearing action, if it was.
    pub tripped_at: Vec<Option<f64>>,
}

impl Trajectory {
    pub fn n_machines(&self) -> usize {
        self.inertia.len()
    }

    fn active(&self, i: usize, t: f64) -> bool {
        self.tripped_at[i].map_or(true, |tt| t < tt)
    }

    /// Largest |delta_i - delta_coi| over in-service machines at step `k`.
    pub fn max_coi_deviation(&self, k: usize) -> f64 {
        let t = self.times[k];
        let (mut num, mut den) = (0.0, 0.0);
        for i in 0..self.n_machines() {
            if self.active(i, t) {
                num += self.inertia[i] * self.deltas[k][i];
                den += self.inertia[i];
            }
        }
        if den == 0.0 {
            return 0.0;
        }
        let coi = num / den;
        (0..self.n_machines())
            .filter(|&i| self.active(i, t))
            .map(|i| (self.deltas[k][i] - coi).abs())
            .fold(0.0, f64::max)
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let m = self.n_machines();
        let mut wr = csv::Writer::from_writer(w);
        let mut header = vec!["t".to_string()];
        header.extend((1..=m).map(|i| format!("delta_{i}")));
        header.extend((1..=m).map(|i| format!("omega_{i}")));
        wr.write_record(&header)?;
        for k in 0..self.times.len() {
            let mut row = vec![fmt_f64(self.times[k])];
            row.extend(self.deltas[k].iter().map(|&x| fmt_f64(x)));
            row.extend(self.omegas[k].iter().map(|&x| fmt_f64(x)));
            wr.write_record(&row)?;
        }
        wr.flush().map_err(|e| Error::Csv(e.to_string()))?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StabilityLabel {
    pub scenario_id: usize,
    pub branch_id: String,
    pub stable: bool,
    /// Seconds after fault inception; -1 when stable.
    pub t_instab: f64,
}

impl StabilityLabel {
    pub const STABLE_SENTINEL: f64 = -1.0;
}

impl fmt::Display for StabilityLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.stable {
            write!(f, "{} {}: stable", self.scenario_id, self.branch_id)
        } else {
            write!(f, "{} {}: unstable at {:.3} s", self.scenario_id, self.branch_id, self.t_instab)
        }
    }
}

/// Y_red = Y_rr - Y_re Y_ee^-1 Y_er for the `retained` node set.
pub fn kron_reduce(y_aug: &DMatrix<Complex64>, retained: &[usize]) -> Result<ReducedNetwork> {
    let n = y_aug.nrows();
    let mut keep = vec![false; n];
    for &r in retained {
        if r >= n {
            return Err(Error::SingularBlock(format!("retained node {r} out of range")));
        }
        keep[r] = true;
    }
    let elim: Vec<usize> = (0..n).filter(|&i| !keep[i]).collect();
    let nr = retained.len();
    let ne = elim.len();
    let y_rr = DMatrix::from_fn(nr, nr, |i, j| y_aug[(retained[i], retained[j])]);
    if ne == 0 {
        return Ok(ReducedNetwork { y_red: y_rr });
    }
    let y_re = DMatrix::from_fn(nr, ne, |i, j| y_aug[(retained[i], elim[j])]);
    let y_er = DMatrix::from_fn(ne, nr, |i, j| y_aug[(elim[i], retained[j])]);
    let y_ee = DMatrix::from_fn(ne, ne, |i, j| y_aug[(elim[i], elim[j])]);

    let scale = y_ee.iter().map(|v| v.norm()).fold(0.0, f64::max);
    let lu = y_ee.lu();
    let u = lu.u();
    let min_pivot = (0..ne).map(|i| u[(i, i)].norm()).fold(f64::INFINITY, f64::min);
    if scale == 0.0 || min_pivot <= scale * 1e-13 {
        return Err(Error::SingularBlock(format!(
            "eliminated block is singular (pivot {min_pivot:e}, scale {scale:e})"
        )));
    }
    let x = lu
        .solve(&y_er)
        .ok_or_else(|| Error::SingularBlock("eliminated block is singular".into()))?;
    Ok(ReducedNetwork { y_red: y_rr - y_re * x })
}

#[derive(Debug, Clone)]
struct Machine {
    bus_pos: usize,
    y_internal: Complex64,
    h_sys: f64,
    d_sys: f64,
}

/// Network topology during one interval of the disturbance sequence.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Condition<'a> {
    PreFault,
    FaultOn { bus: BusId },
    PostFault { exclude: Option<&'a str> },
}

/// Machines and constant-admittance loads frozen at an operating point.
#[derive(Debug, Clone)]
pub struct DynamicSystem<'a> {
    case: &'a NetworkCase,
    machines: Vec<Machine>,
    load_admittance: Vec<Complex64>,
    initial: Vec<MachineState>,
    omega_s: f64,
}

impl<'a> DynamicSystem<'a> {
    pub fn new(case: &'a NetworkCase, solution: &PowerFlowSolution) -> Result<Self> {
        if !solution.converged {
            return Err(Error::NotConverged);
        }
        let base = case.base_mva;
        let n = case.n_bus();
        let ybus = case.build_ybus(None)?;
        let v: Vec<Complex64> = (0..n).map(|i| solution.voltage(i)).collect();
        let s_inj = injections(&ybus.0, &v);

        let mut gen_s = vec![Complex64::new(0.0, 0.0); n];
        let machines: Vec<Machine> = case
            .generators
            .iter()
            .enumerate()
            .map(|(k, g)| {
                let i = case.bus_index(g.bus).unwrap();
                gen_s[i] = Complex64::new(solution.pg[k], solution.qg[k]) / base;
                Machine {
                    bus_pos: i,
                    y_internal: Complex64::new(1.0, 0.0) / Complex64::new(0.0, g.xdp * base / g.mbase),
                    h_sys: g.inertia_h * g.mbase / base,
                    d_sys: g.damping_d * g.mbase / base,
                }
            })
            .collect();

        // Load = generation - net injection, held as a constant admittance.
        let load_admittance: Vec<Complex64> = (0..n)
            .map(|i| {
                let s_load = gen_s[i] - s_inj[i];
                s_load.conj() / (v[i].norm_sqr())
            })
            .collect();

        let mut sys = DynamicSystem {
            case,
            machines,
            load_admittance,
            initial: Vec::new(),
            omega_s: 2.0 * PI * case.freq_hz,
        };
        let mut states: Vec<MachineState> = sys
            .machines
            .iter()
            .map(|m| {
                let vt = v[m.bus_pos];
                let current = (gen_s[m.bus_pos] / vt).conj();
                let e = vt + current / m.y_internal;
                MachineState {
                    delta: e.arg(),
                    omega: 0.0,
                    emf: e.norm(),
                    pm: 0.0,
                }
            })
            .collect();
        let pre = sys.reduce(Condition::PreFault)?.0;
        let emf: Vec<f64> = states.iter().map(|s| s.emf).collect();
        let delta: Vec<f64> = states.iter().map(|s| s.delta).collect();
        let mut pe = vec![0.0; states.len()];
        pre.electrical_power(&emf, &delta, &mut pe);
        for (s, p) in states.iter_mut().zip(pe) {
            s.pm = p;
        }
        sys.initial = states;
        Ok(sys)
    }

    pub fn initial_state(&self) -> &[MachineState] {
        &self.initial
    }

    pub fn inertia(&self) -> Vec<f64> {
        self.machines.iter().map(|m| m.h_sys).collect()
    }

    pub fn omega_s(&self) -> f64 {
        self.omega_s
    }

    /// Augmented admittance matrix: machine internal nodes first, then buses.
    ///
    /// Returns it with the bus mask and machine mask of the energized island.
    pub fn augmented(&self, condition: Condition<'_>) -> Result<(DMatrix<Complex64>, Vec<bool>, Vec<bool>)> {
        let case = self.case;
        let n = case.n_bus();
        let m = self.machines.len();
        let exclude = match condition {
            Condition::PostFault { exclude } => exclude,
            _ => None,
        };
        let ybus = case.build_ybus(exclude)?;

        // Keep the island holding the most machines (ties: more load, then lower bus).
        let comp = case.components(exclude);
        let n_comp = comp.iter().copied().max().unwrap_or(0) + 1;
        let mut machines_in = vec![0usize; n_comp];
        let mut load_in = vec![0.0; n_comp];
        for mc in &self.machines {
            machines_in[comp[mc.bus_pos]] += 1;
        }
        for i in 0..n {
            load_in[comp[i]] += self.load_admittance[i].norm();
        }
        let main = (0..n_comp)
            .max_by(|&a, &b| {
                machines_in[a]
                    .cmp(&machines_in[b])
                    .then(load_in[a].total_cmp(&load_in[b]))
                    .then(b.cmp(&a))
            })
            .unwrap();
        let bus_on: Vec<bool> = comp.iter().map(|&c| c == main).collect();
        let machine_on: Vec<bool> = self.machines.iter().map(|mc| bus_on[mc.bus_pos]).collect();

        let mut y = DMatrix::from_element(m + n, m + n, Complex64::new(0.0, 0.0));
        for r in 0..n {
            for c in 0..n {
                if bus_on[r] && bus_on[c] {
                    y[(m + r, m + c)] = ybus.get(r, c);
                }
            }
            if bus_on[r] {
                y[(m + r, m + r)] += self.load_admittance[r];
            }
        }
        for (k, mc) in self.machines.iter().enumerate() {
            if !machine_on[k] {
                continue;
            }
            let b = m + mc.bus_pos;
            y[(k, k)] += mc.y_internal;
            y[(b, b)] += mc.y_internal;
            y[(k, b)] -= mc.y_internal;
            y[(b, k)] -= mc.y_internal;
        }
        if let Condition::FaultOn { bus } = condition {
            let i = case
                .bus_index(bus)
                .ok_or_else(|| Error::Config(format!("fault bus {bus} not in case")))?;
            y[(m + i, m + i)] += Complex64::new(FAULT_ADMITTANCE, 0.0);
        }
        Ok((y, bus_on, machine_on))
    }

    /// Reduced network for a condition, padded to all machines; disconnected
    /// machines get zero rows and columns. Also returns the in-service mask.
    pub fn reduce(&self, condition: Condition<'_>) -> Result<(ReducedNetwork, Vec<bool>)> {
        let m = self.machines.len();
        let (y, bus_on, machine_on) = self.augmented(condition)?;
        let nodes: Vec<usize> = (0..m)
            .filter(|&k| machine_on[k])
            .chain((0..self.case.n_bus()).filter(|&i| bus_on[i]).map(|i| m + i))
            .collect();
        let sub = DMatrix::from_fn(nodes.len(), nodes.len(), |i, j| y[(nodes[i], nodes[j])]);
        let n_active = machine_on.iter().filter(|&&b| b).count();
        if n_active == 0 {
            return Err(Error::SingularBlock("no machine remains connected".into()));
        }
        let reduced = kron_reduce(&sub, &(0..n_active).collect::<Vec<_>>())?;
        let active: Vec<usize> = (0..m).filter(|&k| machine_on[k]).collect();
        let mut full = DMatrix::from_element(m, m, Complex64::new(0.0, 0.0));
        for (a, &i) in active.iter().enumerate() {
            for (b, &j) in active.iter().enumerate() {
                full[(i, j)] = reduced.y_red[(a, b)];
            }
        }
        Ok((ReducedNetwork { y_red: full }, machine_on))
    }
}

/// Classical-model initial state per machine; `pm` equals the air-gap power
/// on the pre-fault reduced network.
pub fn init_equilibrium(solution: &PowerFlowSolution, case: &NetworkCase) -> Result<Vec<MachineState>> {
    Ok(DynamicSystem::new(case, solution)?.initial_state().to_vec())
}

struct Swing<'a> {
    net: &'a ReducedNetwork,
    active: &'a [bool],
    emf: Vec<f64>,
    pm: Vec<f64>,
    h: Vec<f64>,
    d: Vec<f64>,
    omega_s: f64,
}

impl Swing<'_> {
    /// Writes (d delta/dt, d omega/dt) for the stacked state [delta; omega].
    fn deriv(&self, x: &[f64], dx: &mut [f64], pe: &mut [f64]) {
        let m = self.emf.len();
        let (delta, omega) = x.split_at(m);
        self.net.electrical_power(&self.emf, delta, pe);
        for i in 0..m {
            if self.active[i] {
                dx[i] = self.omega_s * omega[i];
                dx[m + i] = (self.pm[i] - pe[i] - self.d[i] * omega[i]) / (2.0 * self.h[i]);
            } else {
                dx[i] = 0.0;
                dx[m + i] = 0.0;
            }
        }
    }

    fn rk4(&self, x: &mut [f64], h: f64) {
        let n = x.len();
        let m = self.emf.len();
        let mut pe = vec![0.0; m];
        let mut k1 = vec![0.0; n];
        let mut k2 = vec![0.0; n];
        let mut k3 = vec![0.0; n];
        let mut k4 = vec![0.0; n];
        let mut tmp = vec![0.0; n];
        self.deriv(x, &mut k1, &mut pe);
        for i in 0..n {
            tmp[i] = x[i] + 0.5 * h * k1[i];
        }
        self.deriv(&tmp, &mut k2, &mut pe);
        for i in 0..n {
            tmp[i] = x[i] + 0.5 * h * k2[i];
        }
        self.deriv(&tmp, &mut k3, &mut pe);
        for i in 0..n {
            tmp[i] = x[i] + h * k3[i];
        }
        self.deriv(&tmp, &mut k4, &mut pe);
        for i in 0..n {
            x[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
    }
}

/// Simulates a fault applied at t = 0 and cleared at `t_clear`.
pub fn simulate_fault(
    case: &NetworkCase,
    solution: &PowerFlowSolution,
    fault: &FaultSpec,
    config: &SimConfig,
) -> Result<Trajectory> {
    let sys = DynamicSystem::new(case, solution)?;
    simulate_system(&sys, fault, config)
}

/// As [`simulate_fault`], reusing an already initialized system.
pub fn simulate_system(sys: &DynamicSystem<'_>, fault: &FaultSpec, config: &SimConfig) -> Result<Trajectory> {
    config.validate()?;
    if !(fault.t_clear >= 0.0) {
        return Err(Error::Config(format!("t_clear must be non-negative, got {}", fault.t_clear)));
    }
    let case = sys.case;
    let bus = fault.faulted_bus(case)?;
    let m = sys.machines.len();
    let (during, on_during) = sys.reduce(Condition::FaultOn { bus })?;
    let exclude = fault.trip_line.then_some(fault.branch_id.as_str());
    let (after, on_after) = sys.reduce(Condition::PostFault { exclude })?;

    let init = sys.initial_state();
    let emf: Vec<f64> = init.iter().map(|s| s.emf).collect();
    let pm: Vec<f64> = init.iter().map(|s| s.pm).collect();
    let h = sys.inertia();
    let d: Vec<f64> = sys.machines.iter().map(|mc| mc.d_sys).collect();
    let make = |net, active| Swing {
        net,
        active,
        emf: emf.clone(),
        pm: pm.clone(),
        h: h.clone(),
        d: d.clone(),
        omega_s: sys.omega_s,
    };
    let fault_on = make(&during, &on_during);
    let post = make(&after, &on_after);

    let tripped_at: Vec<Option<f64>> = (0..m)
        .map(|k| (!on_after[k]).then_some(fault.t_clear))
        .collect();

    let n_steps = (config.t_end / config.dt).round() as usize;
    let mut x: Vec<f64> = init.iter().map(|s| s.delta).chain(init.iter().map(|s| s.omega)).collect();
    let mut traj = Trajectory {
        times: Vec::with_capacity(n_steps + 1),
        deltas: Vec::with_capacity(n_steps + 1),
        omegas: Vec::with_capacity(n_steps + 1),
        inertia: h.clone(),
        tripped_at,
    };
    let record = |traj: &mut Trajectory, t: f64, x: &[f64]| {
        traj.times.push(t);
        traj.deltas.push(x[..m].to_vec());
        traj.omegas.push(x[m..].to_vec());
    };
    record(&mut traj, 0.0, &x);
    for k in 0..n_steps {
        let t0 = k as f64 * config.dt;
        let t1 = (k + 1) as f64 * config.dt;
        if t1 <= fault.t_clear {
            fault_on.rk4(&mut x, config.dt);
        } else if t0 >= fault.t_clear {
            post.rk4(&mut x, config.dt);
        } else {
            // Clearing falls inside this step: split it.
            fault_on.rk4(&mut x, fault.t_clear - t0);
            post.rk4(&mut x, t1 - fault.t_clear);
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::Step { t: t1 });
        }
        record(&mut traj, t1, &x);
    }
    Ok(traj)
}

/// Accelerating-power residual `sum M dω/dt - (sum pm - sum pe)` at every
/// step of a trajectory, for undamped systems; a self-check of the integrator
/// bookkeeping.
pub fn power_balance_residuals(sys: &DynamicSystem<'_>, fault: &FaultSpec, traj: &Trajectory) -> Result<Vec<f64>> {
    let bus = fault.faulted_bus(sys.case)?;
    let (during, on_during) = sys.reduce(Condition::FaultOn { bus })?;
    let exclude = fault.trip_line.then_some(fault.branch_id.as_str());
    let (after, on_after) = sys.reduce(Condition::PostFault { exclude })?;
    let m = sys.machines.len();
    let init = sys.initial_state();
    let emf: Vec<f64> = init.iter().map(|s| s.emf).collect();
    let pm: Vec<f64> = init.iter().map(|s| s.pm).collect();
    let h = sys.inertia();
    let d: Vec<f64> = sys.machines.iter().map(|mc| mc.d_sys).collect();
    let mut out = Vec::with_capacity(traj.times.len());
    for (k, &t) in traj.times.iter().enumerate() {
        let (net, active) = if t < fault.t_clear {
            (&during, &on_during)
        } else {
            (&after, &on_after)
        };
        let sw = Swing {
            net,
            active,
            emf: emf.clone(),
            pm: pm.clone(),
            h: h.clone(),
            d: d.clone(),
            omega_s: sys.omega_s,
        };
        let x: Vec<f64> = traj.deltas[k].iter().chain(&traj.omegas[k]).copied().collect();
        let mut dx = vec![0.0; 2 * m];
        let mut pe = vec![0.0; m];
        sw.deriv(&x, &mut dx, &mut pe);
        let (mut lhs, mut rhs) = (0.0, 0.0);
        for i in 0..m {
            if active[i] {
                lhs += 2.0 * h[i] * dx[m + i];
                rhs += pm[i] - pe[i] - d[i] * traj.omegas[k][i];
            }
        }
        out.push(lhs - rhs);
    }
    Ok(out)
}

/// Labels a trajectory: unstable once any in-service machine separates from
/// the centre of inertia by more than the threshold.
pub fn label_stability(traj: &Trajectory, config: &SimConfig) -> (bool, f64) {
    let thr = config.angle_threshold;
    let mut prev = traj.max_coi_deviation(0);
    if prev > thr {
        return (false, traj.times[0].max(f64::MIN_POSITIVE));
    }
    for k in 1..traj.times.len() {
        let cur = traj.max_coi_deviation(k);
        if cur > thr {
            let (t0, t1) = (traj.times[k - 1], traj.times[k]);
            let frac = ((thr - prev) / (cur - prev)).clamp(0.0, 1.0);
            let t = t0 + frac * (t1 - t0);
            return (false, t.max(f64::MIN_POSITIVE));
        }
        prev = cur;
    }
    (true, StabilityLabel::STABLE_SENTINEL)
}

/// True when the case is stable or becomes unstable only after the storage
/// response delay.
pub fn is_operationally_safe(label: &StabilityLabel, config: &SimConfig) -> Result<bool> {
    let tau = config.tau_response.ok_or(Error::MissingTau)?;
    Ok(label.stable || label.t_instab > tau)
}

/// Which end of each scanned branch is faulted.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EndRule {
    From,
    To,
    /// End with the higher nominal voltage; equal voltages pick the `to` end.
    HigherVoltage,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FaultScan {
    /// Branch ids to fault; empty means every branch.
    pub branches: Vec<String>,
    pub end: EndRule,
    pub t_clear: f64,
    pub trip_line: bool,
}

impl Default for FaultScan {
    fn default() -> Self {
        FaultScan {
            branches: Vec::new(),
            end: EndRule::HigherVoltage,
            t_clear: 0.1,
            trip_line: true,
        }
    }
}

impl FaultScan {
    pub fn faults(&self, case: &NetworkCase) -> Result<Vec<FaultSpec>> {
        let ids: Vec<String> = if self.branches.is_empty() {
            case.branches.iter().map(|b| b.id.clone()).collect()
        } else {
            self.branches.clone()
        };
        let mut out = Vec::with_capacity(ids.len());
        for id in ids {
            let br = case.branch(&id)?;
            let end = match self.end {
                EndRule::From => FaultEnd::From,
                EndRule::To => FaultEnd::To,
                EndRule::HigherVoltage => {
                    let kv = |b| case.buses[case.bus_index(b).unwrap()].base_kv;
                    if kv(br.from_bus) > kv(br.to_bus) {
                        FaultEnd::From
                    } else {
                        FaultEnd::To
                    }
                }
            };
            out.push(FaultSpec {
                branch_id: id,
                faulted_end: end,
                t_clear: self.t_clear,
                trip_line: self.trip_line,
            });
        }
        out.sort_by(|a, b| branch_id_cmp(&a.branch_id, &b.branch_id));
        Ok(out)
    }
}

/// Simulates and labels one (scenario, fault) pair.
pub fn assess(
    sys: &DynamicSystem<'_>,
    scenario_id: usize,
    fault: &FaultSpec,
    config: &SimConfig,
) -> Result<StabilityLabel> {
    let traj = simulate_system(sys, fault, config)?;
    let (stable, t_instab) = label_stability(&traj, config);
    Ok(StabilityLabel {
        scenario_id,
        branch_id: fault.branch_id.clone(),
        stable,
        t_instab,
    })
}

pub fn write_labels_csv<W: Write>(w: W, labels: &[StabilityLabel]) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    wr.write_record(["scenario_id", "branch_id", "stable", "t_instab"])?;
    for l in labels {
        let t = if l.stable { "-1".to_string() } else { fmt_f64(l.t_instab) };
        wr.write_record([l.scenario_id.to_string().as_str(), &l.branch_id, fmt_bool(l.stable), &t])?;
    }
    wr.flush().map_err(|e| Error::Csv(e.to_string()))?;
    Ok(())
}

pub fn read_labels_csv<R: Read>(r: R) -> Result<Vec<StabilityLabel>> {
    let mut rd = csv::Reader::from_reader(r);
    let header: Vec<String> = rd.headers()?.iter().map(str::to_string).collect();
    if header != ["scenario_id", "branch_id", "stable", "t_instab"] {
        return Err(Error::Csv(format!("unexpected labels header {header:?}")));
    }
    let mut out = Vec::new();
    for rec in rd.records() {
        let rec = rec?;
        let label = StabilityLabel {
            scenario_id: rec[0]
                .parse()
                .map_err(|_| Error::Csv(format!("bad scenario id {:?}", &rec[0])))?,
            branch_id: rec[1].to_string(),
            stable: parse_bool(&rec[2])?,
            t_instab: parse_f64(&rec[3])?,
        };
        if label.stable != (label.t_instab == StabilityLabel::STABLE_SENTINEL) {
            return Err(Error::Csv(format!("inconsistent label row {:?}", rec)));
        }
        out.push(label);
    }
    Ok(out)
}
