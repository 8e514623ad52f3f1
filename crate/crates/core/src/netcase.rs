//! Static network model: case-file parsing, validation and Y-bus assembly.
//!
//! Case files are TOML documents with the top-level keys `name`, `base_mva`,
//! `freq_hz`, `buses`, `branches`, `generators` and `loads`. Unknown keys are
//! rejected. After validation the element collections are held in canonical
//! order (buses by id, branches by endpoints, generators and loads by bus).

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::path::Path;

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type BusId = u32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BusKind {
    Slack,
    Pv,
    Pq,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Bus {
    pub id: BusId,
    pub kind: BusKind,
    pub base_kv: f64,
    pub vmin: f64,
    pub vmax: f64,
    #[serde(default)]
    pub shunt_g: f64,
    #[serde(default)]
    pub shunt_b: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Branch {
    pub id: String,
    pub from_bus: BusId,
    pub to_bus: BusId,
    pub r: f64,
    pub x: f64,
    #[serde(default)]
    pub b_charging: f64,
    #[serde(default = "unit_tap")]
    pub tap: f64,
    pub rating: f64,
}

fn unit_tap() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Generator {
    pub bus: BusId,
    pub pmin: f64,
    pub pmax: f64,
    pub qmin: f64,
    pub qmax: f64,
    pub vset: f64,
    pub cost_a: f64,
    pub cost_b: f64,
    pub cost_c: f64,
    pub inertia_h: f64,
    pub xdp: f64,
    #[serde(default)]
    pub damping_d: f64,
    pub mbase: f64,
}

impl Generator {
    /// Hourly cost at `pg` MW.
    pub fn cost(&self, pg: f64) -> f64 {
        self.cost_a + self.cost_b * pg + self.cost_c * pg * pg
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LoadSpec {
    pub bus: BusId,
    pub p_base: f64,
    pub q_base: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkCase {
    pub name: String,
    pub base_mva: f64,
    #[serde(default = "default_freq")]
    pub freq_hz: f64,
    pub buses: Vec<Bus>,
    #[serde(default)]
    pub branches: Vec<Branch>,
    pub generators: Vec<Generator>,
    #[serde(default)]
    pub loads: Vec<LoadSpec>,
}

fn default_freq() -> f64 {
    60.0
}

/// Canonical branch id: `"min-max"` of the two endpoint bus ids.
/// Orders canonical ids `a-b` numerically, falling back to text.
pub fn branch_id_cmp(a: &str, b: &str) -> std::cmp::Ordering {
    fn key(s: &str) -> Option<(u64, u64)> {
        let (x, y) = s.split_once('-')?;
        Some((x.parse().ok()?, y.parse().ok()?))
    }
    match (key(a), key(b)) {
        (Some(x), Some(y)) => x.cmp(&y).then_with(|| a.cmp(b)),
        _ => a.cmp(b),
    }
}

pub fn canonical_branch_id(a: BusId, b: BusId) -> String {
    format!("{}-{}", a.min(b), a.max(b))
}

/// Dense complex bus admittance matrix in per-unit, indexed by bus position.
#[derive(Debug, Clone, PartialEq)]
pub struct AdmittanceMatrix(pub DMatrix<Complex64>);

impl AdmittanceMatrix {
    pub fn n(&self) -> usize {
        self.0.nrows()
    }

    pub fn get(&self, i: usize, j: usize) -> Complex64 {
        self.0[(i, j)]
    }
}

impl NetworkCase {
    /// Parses and validates a case document.
    pub fn parse(text: &str) -> Result<Self> {
        let mut case: NetworkCase = toml::from_str(text).map_err(|e| syntax_error(text, e))?;
        case.canonicalize();
        case.validate()?;
        Ok(case)
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path.as_ref()).map_err(|e| Error::io(&path, e))?;
        Self::parse(&text)
    }

    /// The bundled nine-bus benchmark.
    pub fn wscc9() -> Self {
        Self::parse(WSCC9_CASE).expect("bundled wscc9 case is valid")
    }

    pub fn to_text(&self) -> String {
        toml::to_string(self).expect("case serializes")
    }

    fn canonicalize(&mut self) {
        self.buses.sort_by_key(|b| b.id);
        self.branches.sort_by(|a, b| {
            let ka = (a.from_bus.min(a.to_bus), a.from_bus.max(a.to_bus));
            let kb = (b.from_bus.min(b.to_bus), b.from_bus.max(b.to_bus));
            ka.cmp(&kb)
        });
        self.generators.sort_by_key(|g| g.bus);
        self.loads.sort_by_key(|l| l.bus);
    }

    fn validate(&self) -> Result<()> {
        let inv = |m: String| Err(Error::Invariant(m));
        if !(self.base_mva > 0.0) {
            return inv(format!("base_mva must be positive, got {}", self.base_mva));
        }
        if !(self.freq_hz > 0.0) {
            return inv(format!("freq_hz must be positive, got {}", self.freq_hz));
        }
        if self.buses.is_empty() {
            return inv("case has no buses".into());
        }
        let mut ids = BTreeSet::new();
        for b in &self.buses {
            if b.id == 0 {
                return inv("bus ids must be positive".into());
            }
            if !ids.insert(b.id) {
                return inv(format!("duplicate bus id {}", b.id));
            }
            if !(b.vmin > 0.0 && b.vmin <= b.vmax) {
                return inv(format!("bus {}: need 0 < vmin <= vmax", b.id));
            }
        }
        let n_slack = self.buses.iter().filter(|b| b.kind == BusKind::Slack).count();
        if n_slack != 1 {
            return inv(format!("expected exactly one slack bus, found {n_slack}"));
        }

        let mut branch_ids = BTreeSet::new();
        for br in &self.branches {
            for bus in [br.from_bus, br.to_bus] {
                if !ids.contains(&bus) {
                    return Err(Error::Ref {
                        element: format!("branch {}", br.id),
                        bus,
                    });
                }
            }
            if br.from_bus == br.to_bus {
                return inv(format!("branch {} connects bus {} to itself", br.id, br.from_bus));
            }
            if br.id != canonical_branch_id(br.from_bus, br.to_bus) {
                return inv(format!(
                    "branch id {} is not canonical (expected {})",
                    br.id,
                    canonical_branch_id(br.from_bus, br.to_bus)
                ));
            }
            if !branch_ids.insert(br.id.clone()) {
                return inv(format!("parallel branch {} not supported", br.id));
            }
            if br.x == 0.0 {
                return inv(format!("branch {} has zero reactance", br.id));
            }
            if !(br.rating > 0.0) {
                return inv(format!("branch {} rating must be positive", br.id));
            }
            if !(br.tap > 0.0) {
                return inv(format!("branch {} tap must be positive", br.id));
            }
        }

        let mut gen_buses = BTreeSet::new();
        for g in &self.generators {
            if !ids.contains(&g.bus) {
                return Err(Error::Ref {
                    element: format!("generator at bus {}", g.bus),
                    bus: g.bus,
                });
            }
            if !gen_buses.insert(g.bus) {
                return inv(format!("more than one generator at bus {}", g.bus));
            }
            if g.pmin > g.pmax {
                return inv(format!("generator {}: pmin > pmax", g.bus));
            }
            if g.qmin > g.qmax {
                return inv(format!("generator {}: qmin > qmax", g.bus));
            }
            if !(g.inertia_h > 0.0) {
                return inv(format!("generator {}: inertia_h must be positive", g.bus));
            }
            if !(g.xdp > 0.0) {
                return inv(format!("generator {}: xdp must be positive", g.bus));
            }
            if !(g.mbase > 0.0) {
                return inv(format!("generator {}: mbase must be positive", g.bus));
            }
            let kind = self.buses[self.bus_index(g.bus).unwrap()].kind;
            if kind == BusKind::Pq {
                return inv(format!("generator at PQ bus {}", g.bus));
            }
        }
        for b in &self.buses {
            if b.kind != BusKind::Pq && !gen_buses.contains(&b.id) {
                return inv(format!("bus {} is {:?} but has no generator", b.id, b.kind));
            }
        }

        let mut load_buses = BTreeSet::new();
        for l in &self.loads {
            if !ids.contains(&l.bus) {
                return Err(Error::Ref {
                    element: format!("load at bus {}", l.bus),
                    bus: l.bus,
                });
            }
            if !load_buses.insert(l.bus) {
                return inv(format!("more than one load at bus {}", l.bus));
            }
            if !(l.p_base >= 0.0) {
                return inv(format!("load at bus {}: p_base must be non-negative", l.bus));
            }
        }

        if !self.is_connected(None) {
            return inv("network is not connected".into());
        }
        Ok(())
    }

    pub fn n_bus(&self) -> usize {
        self.buses.len()
    }

    /// Position of a bus in `buses`.
    pub fn bus_index(&self, id: BusId) -> Option<usize> {
        self.buses.binary_search_by_key(&id, |b| b.id).ok()
    }

    pub fn slack_index(&self) -> usize {
        self.buses
            .iter()
            .position(|b| b.kind == BusKind::Slack)
            .expect("validated case has a slack bus")
    }

    pub fn branch(&self, id: &str) -> Result<&Branch> {
        self.branches
            .iter()
            .find(|b| b.id == id)
            .ok_or_else(|| Error::UnknownBranch(id.to_string()))
    }

    pub fn generator_at(&self, bus: BusId) -> Option<&Generator> {
        self.generators.iter().find(|g| g.bus == bus)
    }

    pub fn total_load_mw(&self) -> f64 {
        self.loads.iter().map(|l| l.p_base).sum()
    }

    /// True when every bus is reachable over branches other than `exclude`.
    pub fn is_connected(&self, exclude: Option<&str>) -> bool {
        let components = self.components(exclude);
        components.iter().all(|&c| c == 0)
    }

    /// Connected-component label per bus position, with `exclude` removed.
    pub fn components(&self, exclude: Option<&str>) -> Vec<usize> {
        let n = self.n_bus();
        let mut adj: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
        for br in self.branches.iter().filter(|b| Some(b.id.as_str()) != exclude) {
            let (f, t) = (
                self.bus_index(br.from_bus).unwrap(),
                self.bus_index(br.to_bus).unwrap(),
            );
            adj.entry(f).or_default().push(t);
            adj.entry(t).or_default().push(f);
        }
        let mut label = vec![usize::MAX; n];
        let mut next = 0;
        for start in 0..n {
            if label[start] != usize::MAX {
                continue;
            }
            label[start] = next;
            let mut queue = VecDeque::from([start]);
            while let Some(u) = queue.pop_front() {
                for &v in adj.get(&u).map(Vec::as_slice).unwrap_or(&[]) {
                    if label[v] == usize::MAX {
                        label[v] = next;
                        queue.push_back(v);
                    }
                }
            }
            next += 1;
        }
        label
    }

    /// Builds the bus admittance matrix, optionally without one branch.
    pub fn build_ybus(&self, exclude: Option<&str>) -> Result<AdmittanceMatrix> {
        if let Some(id) = exclude {
            self.branch(id)?;
        }
        let n = self.n_bus();
        let mut y = DMatrix::from_element(n, n, Complex64::new(0.0, 0.0));
        for br in self.branches.iter().filter(|b| Some(b.id.as_str()) != exclude) {
            let f = self.bus_index(br.from_bus).unwrap();
            let t = self.bus_index(br.to_bus).unwrap();
            let ys = Complex64::new(1.0, 0.0) / Complex64::new(br.r, br.x);
            let bc = Complex64::new(0.0, br.b_charging / 2.0);
            let tap = br.tap;
            y[(f, f)] += (ys + bc) / (tap * tap);
            y[(t, t)] += ys + bc;
            y[(f, t)] -= ys / tap;
            y[(t, f)] -= ys / tap;
        }
        for (i, b) in self.buses.iter().enumerate() {
            y[(i, i)] += Complex64::new(b.shunt_g, b.shunt_b);
        }
        Ok(AdmittanceMatrix(y))
    }
}

/// Text of the bundled nine-bus fixture.
pub const WSCC9_CASE: &str = include_str!("../data/wscc9.case");

fn syntax_error(text: &str, e: toml::de::Error) -> Error {
    let line = e
        .span()
        .map(|span| text[..span.start.min(text.len())].matches('\n').count() + 1);
    let message = e.message().to_string();
    let field = message
        .split('`')
        .nth(1)
        .filter(|_| message.contains('`'))
        .map(str::to_string);
    Error::Syntax {
        line,
        field,
        message,
    }
}
