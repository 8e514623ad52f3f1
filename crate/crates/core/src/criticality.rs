//! Generator grouping and line criticality statistics over a fault scan.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;

use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::csvio::{fmt_bool, fmt_f64};
use crate::error::{Error, Result};
use crate::netcase::{branch_id_cmp, BusId, NetworkCase};
use crate::tdsim::StabilityLabel;

/// Inertia-scaled distance below which machines are merged into one group.
pub const DEFAULT_GROUP_THRESHOLD: f64 = 0.2;
pub const DEFAULT_WEAK_FRACTION: f64 = 0.8;

#[derive(Debug, Clone, PartialEq)]
pub struct GeneratorGrouping {
    /// Machine bus ids, one sorted list per group; groups ordered by first member.
    pub groups: Vec<Vec<BusId>>,
    /// Machine bus ids in case order, indexing `distance`.
    pub machines: Vec<BusId>,
    pub distance: DMatrix<f64>,
}

/// Groups machines by single linkage on `|Z_th| * 2 / (H_i + H_j)`, where
/// `Z_th = Z_ii + Z_jj - 2 Z_ij` is the Thevenin impedance between the two
/// machine buses of the series network (loads and shunts removed).
pub fn group_generators(case: &NetworkCase, threshold: f64) -> Result<GeneratorGrouping> {
    let z = series_impedance(case)?;
    let gens = &case.generators;
    let m = gens.len();
    let pos: Vec<usize> = gens.iter().map(|g| case.bus_index(g.bus).unwrap()).collect();
    let h: Vec<f64> = gens.iter().map(|g| g.inertia_h * g.mbase / case.base_mva).collect();
    let distance = DMatrix::from_fn(m, m, |i, j| {
        if i == j {
            return 0.0;
        }
        let (a, b) = (pos[i], pos[j]);
        let zth: Complex64 = z[(a, a)] + z[(b, b)] - z[(a, b)] - z[(b, a)];
        zth.norm() * 2.0 / (h[i] + h[j])
    });
    if distance.iter().any(|d| !d.is_finite()) {
        return Err(Error::SingularNetwork("non-finite transfer impedance".into()));
    }

    // Single linkage: union every pair closer than the threshold.
    let mut parent: Vec<usize> = (0..m).collect();
    fn root(p: &mut [usize], mut i: usize) -> usize {
        while p[i] != i {
            p[i] = p[p[i]];
            i = p[i];
        }
        i
    }
    for i in 0..m {
        for j in (i + 1)..m {
            if distance[(i, j)] < threshold {
                let (ri, rj) = (root(&mut parent, i), root(&mut parent, j));
                if ri != rj {
                    parent[ri.max(rj)] = ri.min(rj);
                }
            }
        }
    }
    let mut groups: BTreeMap<usize, Vec<BusId>> = BTreeMap::new();
    for i in 0..m {
        let r = root(&mut parent, i);
        groups.entry(r).or_default().push(gens[i].bus);
    }
    let mut groups: Vec<Vec<BusId>> = groups.into_values().collect();
    for g in &mut groups {
        g.sort_unstable();
    }
    groups.sort();
    Ok(GeneratorGrouping {
        groups,
        machines: gens.iter().map(|g| g.bus).collect(),
        distance,
    })
}

/// Nodal impedance matrix of the shunt-free network grounded at the slack
/// bus. Differences `Z_ii + Z_jj - 2 Z_ij` do not depend on that choice.
fn series_impedance(case: &NetworkCase) -> Result<DMatrix<Complex64>> {
    let mut y = case.build_ybus(None)?.0;
    let n = y.nrows();
    for i in 0..n {
        let off: Complex64 = (0..n).filter(|&j| j != i).map(|j| y[(i, j)]).sum();
        y[(i, i)] = -off;
    }
    let r = case.slack_index();
    let keep: Vec<usize> = (0..n).filter(|&i| i != r).collect();
    let yr = DMatrix::from_fn(n - 1, n - 1, |i, j| y[(keep[i], keep[j])]);
    let scale = yr.iter().map(|v| v.norm()).fold(0.0, f64::max);
    let lu = yr.lu();
    let u = lu.u();
    let min_pivot = (0..n - 1).map(|i| u[(i, i)].norm()).fold(f64::INFINITY, f64::min);
    let singular = || Error::SingularNetwork("series admittance matrix is not invertible".into());
    if n > 1 && !(min_pivot > scale * 1e-12) {
        return Err(singular());
    }
    let zr = lu.try_inverse().ok_or_else(singular)?;
    let mut z = DMatrix::from_element(n, n, Complex64::new(0.0, 0.0));
    for (a, &i) in keep.iter().enumerate() {
        for (b, &j) in keep.iter().enumerate() {
            z[(i, j)] = zr[(a, b)];
        }
    }
    Ok(z)
}

#[derive(Debug, Clone, PartialEq)]
pub struct LineStats {
    pub branch_id: String,
    pub unstable_count: usize,
    pub unstable_scenarios: Vec<usize>,
    pub median_t_instab: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LineCriticalityReport {
    pub n_scenarios: usize,
    /// Sorted by unstable count, descending; ties by branch id.
    pub ranking: Vec<LineStats>,
    pub weak_set: Vec<String>,
    /// No branch had any unstable scenario.
    pub degenerate: bool,
}

impl LineCriticalityReport {
    pub fn weakest(&self) -> &LineStats {
        &self.ranking[0]
    }

    pub fn line(&self, id: &str) -> Option<&LineStats> {
        self.ranking.iter().find(|l| l.branch_id == id)
    }

    pub fn unstable_fraction(&self, id: &str) -> Option<f64> {
        self.line(id)
            .map(|l| l.unstable_count as f64 / self.n_scenarios as f64)
    }

    pub fn is_weak(&self, id: &str) -> bool {
        self.weak_set.iter().any(|w| w == id)
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(["branch_id", "unstable_count", "unstable_fraction", "median_t_instab", "is_weak"])?;
        for l in &self.ranking {
            let frac = l.unstable_count as f64 / self.n_scenarios as f64;
            wr.write_record([
                l.branch_id.as_str(),
                &l.unstable_count.to_string(),
                &fmt_f64(frac),
                &l.median_t_instab.map(fmt_f64).unwrap_or_default(),
                fmt_bool(self.is_weak(&l.branch_id)),
            ])?;
        }
        wr.flush().map_err(|e| Error::Csv(e.to_string()))?;
        Ok(())
    }
}

fn median(v: &mut [f64]) -> Option<f64> {
    if v.is_empty() {
        return None;
    }
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Some(if n % 2 == 1 { v[n / 2] } else { 0.5 * (v[n / 2 - 1] + v[n / 2]) })
}

/// Counts unstable scenarios per branch and selects the weak set.
pub fn rank_lines(labels: &[StabilityLabel], weak_fraction: f64) -> Result<LineCriticalityReport> {
    if labels.is_empty() {
        return Err(Error::EmptyInput("label matrix has no rows".into()));
    }
    if !(0.0..=1.0).contains(&weak_fraction) {
        return Err(Error::Config(format!("weak_fraction must be in [0, 1], got {weak_fraction}")));
    }
    let mut by_branch: BTreeMap<&str, BTreeMap<usize, &StabilityLabel>> = BTreeMap::new();
    for l in labels {
        if by_branch
            .entry(l.branch_id.as_str())
            .or_default()
            .insert(l.scenario_id, l)
            .is_some()
        {
            return Err(Error::Invariant(format!(
                "duplicate label for scenario {} on {}",
                l.scenario_id, l.branch_id
            )));
        }
    }
    let scenarios: BTreeSet<usize> = labels.iter().map(|l| l.scenario_id).collect();
    for (b, rows) in &by_branch {
        if rows.len() != scenarios.len() {
            return Err(Error::Invariant(format!(
                "label matrix incomplete: {b} has {} of {} scenarios",
                rows.len(),
                scenarios.len()
            )));
        }
    }

    let mut ranking: Vec<LineStats> = by_branch
        .iter()
        .map(|(b, rows)| {
            let unstable: Vec<&StabilityLabel> = rows.values().filter(|l| !l.stable).copied().collect();
            let mut times: Vec<f64> = unstable.iter().map(|l| l.t_instab).collect();
            LineStats {
                branch_id: b.to_string(),
                unstable_count: unstable.len(),
                unstable_scenarios: unstable.iter().map(|l| l.scenario_id).collect(),
                median_t_instab: median(&mut times),
            }
        })
        .collect();
    ranking.sort_by(|a, b| {
        b.unstable_count
            .cmp(&a.unstable_count)
            .then_with(|| branch_id_cmp(&a.branch_id, &b.branch_id))
    });

    let max = ranking[0].unstable_count;
    let degenerate = max == 0;
    let weak_set = if degenerate {
        vec![ranking[0].branch_id.clone()]
    } else {
        ranking
            .iter()
            .filter(|l| l.unstable_count as f64 >= weak_fraction * max as f64)
            .map(|l| l.branch_id.clone())
            .collect()
    };
    Ok(LineCriticalityReport {
        n_scenarios: scenarios.len(),
        ranking,
        weak_set,
        degenerate,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct SubclassLine {
    pub branch_id: String,
    pub unstable_count: usize,
    /// Share of this line's unstable scenarios also unstable on the weakest
    /// line; `None` when the line has none.
    pub containment: Option<f64>,
    /// median t_instab(line) - median t_instab(weakest).
    pub median_delay: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SubclassReport {
    pub weakest: String,
    pub lines: Vec<SubclassLine>,
}

impl SubclassReport {
    /// Mean containment over stiff lines with at least one unstable case;
    /// 1.0 when there are none (the property holds vacuously).
    pub fn mean_containment(&self) -> f64 {
        let c: Vec<f64> = self.lines.iter().filter_map(|l| l.containment).collect();
        if c.is_empty() {
            1.0
        } else {
            c.iter().sum::<f64>() / c.len() as f64
        }
    }

    /// Every stiff line with instabilities loses synchronism no earlier (by
    /// median) than the weakest line.
    pub fn stiff_lines_later(&self) -> bool {
        self.lines.iter().all(|l| l.median_delay.map_or(true, |d| d >= 0.0))
    }
}

/// Checks whether stiff-line instabilities are a subset of, and later than,
/// those of the weakest line. Violations are reported, never raised.
pub fn check_subclass_property(report: &LineCriticalityReport) -> Result<SubclassReport> {
    if report.ranking.is_empty() {
        return Err(Error::EmptyInput("no lines in report".into()));
    }
    let weakest = report.weakest();
    if report.ranking.len() > 1 && report.ranking[1].unstable_count == weakest.unstable_count {
        return Err(Error::Invariant(format!(
            "no unique weakest line ({} and {} tie)",
            weakest.branch_id, report.ranking[1].branch_id
        )));
    }
    let weak_set: BTreeSet<usize> = weakest.unstable_scenarios.iter().copied().collect();
    let lines = report
        .ranking
        .iter()
        .filter(|l| !report.is_weak(&l.branch_id))
        .map(|l| {
            let containment = (l.unstable_count > 0).then(|| {
                let inside = l.unstable_scenarios.iter().filter(|s| weak_set.contains(s)).count();
                inside as f64 / l.unstable_count as f64
            });
            let median_delay = match (l.median_t_instab, weakest.median_t_instab) {
                (Some(a), Some(b)) => Some(a - b),
                _ => None,
            };
            SubclassLine {
                branch_id: l.branch_id.clone(),
                unstable_count: l.unstable_count,
                containment,
                median_delay,
            }
        })
        .collect();
    Ok(SubclassReport {
        weakest: weakest.branch_id.clone(),
        lines,
    })
}
