//! Classifier inputs: the fixed feature vector, z-score standardization and
//! time-of-instability class labels.

use std::collections::{BTreeMap, BTreeSet};
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::csvio::{fmt_bool, fmt_f64, parse_bool, parse_f64};
use crate::error::{Error, Result};
use crate::netcase::NetworkCase;
use crate::operating::OperatingPoint;
use crate::tdsim::StabilityLabel;

pub const DEFAULT_BIN_WIDTH: f64 = 0.1;

/// Standard deviations below this are treated as constant columns.
const MIN_STD: f64 = 1e-12;

/// Column names in canonical order: loads, generators (both by bus id), the
/// monitored line's end voltages, then the dispatch cost.
pub fn feature_names(case: &NetworkCase) -> Vec<String> {
    let mut names = Vec::new();
    for bus in sorted_load_buses(case) {
        names.push(format!("p_load_{bus}"));
        names.push(format!("q_load_{bus}"));
    }
    for bus in sorted_gen_buses(case) {
        names.push(format!("p_gen_{bus}"));
        names.push(format!("q_gen_{bus}"));
    }
    names.extend(["vm_from", "va_from", "vm_to", "va_to", "cost"].map(String::from));
    names
}

fn sorted_load_buses(case: &NetworkCase) -> Vec<u32> {
    let mut v: Vec<u32> = case.loads.iter().map(|l| l.bus).collect();
    v.sort_unstable();
    v
}

fn sorted_gen_buses(case: &NetworkCase) -> Vec<u32> {
    let mut v: Vec<u32> = case.generators.iter().map(|g| g.bus).collect();
    v.sort_unstable();
    v
}

/// Feature vector of an operating point with respect to `line`.
pub fn extract_features(case: &NetworkCase, op: &OperatingPoint, line: &str) -> Result<Vec<f64>> {
    let br = case.branch(line)?;
    let mut x = Vec::with_capacity(2 * case.loads.len() + 2 * case.generators.len() + 5);
    for bus in sorted_load_buses(case) {
        let k = case.loads.iter().position(|l| l.bus == bus).unwrap();
        x.push(op.load_p[k]);
        x.push(op.load_q[k]);
    }
    for bus in sorted_gen_buses(case) {
        let k = case.generators.iter().position(|g| g.bus == bus).unwrap();
        x.push(op.pg[k]);
        x.push(op.qg[k]);
    }
    let f = case.bus_index(br.from_bus).unwrap();
    let t = case.bus_index(br.to_bus).unwrap();
    x.extend([op.vm[f], op.va[f], op.vm[t], op.va[t], op.objective]);
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite(format!("features of scenario {}", op.scenario_id)));
    }
    Ok(x)
}

/// Per-column z-score with training statistics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    /// Population standard deviation; constant columns store 1.
    pub std: Vec<f64>,
}

impl Standardizer {
    pub fn fit(rows: &[Vec<f64>]) -> Result<Self> {
        if rows.len() < 2 {
            return Err(Error::TooFewRows(rows.len()));
        }
        let d = rows[0].len();
        let n = rows.len() as f64;
        let mut mean = vec![0.0; d];
        for r in rows {
            if r.len() != d {
                return Err(Error::DimensionMismatch { expected: d, got: r.len() });
            }
            for (m, v) in mean.iter_mut().zip(r) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut var = vec![0.0; d];
        for r in rows {
            for j in 0..d {
                var[j] += (r[j] - mean[j]).powi(2);
            }
        }
        let std = var
            .into_iter()
            .map(|v| {
                let s = (v / n).sqrt();
                if s < MIN_STD {
                    1.0
                } else {
                    s
                }
            })
            .collect();
        Ok(Standardizer { mean, std })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn transform(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                got: x.len(),
            });
        }
        Ok(x.iter()
            .zip(self.mean.iter().zip(&self.std))
            .map(|(v, (m, s))| (v - m) / s)
            .collect())
    }

    pub fn transform_all(&self, rows: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
        rows.iter().map(|r| self.transform(r)).collect()
    }
}

/// Fewest decimals that render every multiple of `width` exactly (0.25 → 2).
fn bin_decimals(width: f64) -> usize {
    (0..12)
        .find(|&d| {
            let scaled = width * 10f64.powi(d as i32);
            (scaled - scaled.round()).abs() < 1e-9 * scaled.max(1.0)
        })
        .unwrap_or(12)
}

/// Rounds a time of instability to the nearest multiple of `width` (ties
/// upward) and renders it, e.g. 1.66 → "1.7".
pub fn bin_time_label(t_instab: f64, width: f64) -> Result<String> {
    if !(t_instab > 0.0) || !t_instab.is_finite() {
        return Err(Error::NotUnstable);
    }
    if !(width > 0.0) {
        return Err(Error::Config(format!("bin width must be positive, got {width}")));
    }
    // The small bias keeps decimal ties such as 1.75 / 0.1 = 17.4999... upward.
    let k = (t_instab / width + 0.5 + 1e-9).floor();
    Ok(format!("{:.*}", bin_decimals(width), k * width))
}

/// Seconds represented by a class label.
pub fn label_seconds(label: &str) -> Result<f64> {
    label
        .parse::<f64>()
        .map_err(|_| Error::UnknownLabel(label.to_string()))
}

/// Sorts labels by their numeric value.
pub fn sort_labels(labels: &mut [String]) {
    labels.sort_by(|a, b| {
        let (x, y) = (a.parse::<f64>().unwrap_or(f64::NAN), b.parse::<f64>().unwrap_or(f64::NAN));
        x.total_cmp(&y).then_with(|| a.cmp(b))
    });
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetRow {
    pub scenario_id: usize,
    pub features: Vec<f64>,
    pub stable: bool,
    pub t_instab: f64,
    /// Present iff the row is unstable.
    pub class_label: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub feature_names: Vec<String>,
    pub rows: Vec<DatasetRow>,
}

/// A scenario left out of a dataset and why.
#[derive(Debug, Clone, PartialEq)]
pub struct Skipped {
    pub scenario_id: usize,
    pub reason: String,
}

impl Dataset {
    /// Distinct class labels in numeric order.
    pub fn vocabulary(&self) -> Vec<String> {
        let set: BTreeSet<&String> = self.rows.iter().filter_map(|r| r.class_label.as_ref()).collect();
        let mut v: Vec<String> = set.into_iter().cloned().collect();
        sort_labels(&mut v);
        v
    }

    pub fn features(&self) -> Vec<Vec<f64>> {
        self.rows.iter().map(|r| r.features.clone()).collect()
    }

    pub fn unstable_rows(&self) -> Vec<&DatasetRow> {
        self.rows.iter().filter(|r| !r.stable).collect()
    }

    pub fn unstable_fraction(&self) -> f64 {
        if self.rows.is_empty() {
            return 0.0;
        }
        self.unstable_rows().len() as f64 / self.rows.len() as f64
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        let mut header = vec!["scenario_id".to_string()];
        header.extend(self.feature_names.iter().cloned());
        header.extend(["stable", "t_instab", "class_label"].map(String::from));
        wr.write_record(&header)?;
        for r in &self.rows {
            let mut rec = vec![r.scenario_id.to_string()];
            rec.extend(r.features.iter().map(|&v| fmt_f64(v)));
            rec.push(fmt_bool(r.stable).to_string());
            rec.push(if r.stable { "-1".into() } else { fmt_f64(r.t_instab) });
            rec.push(r.class_label.clone().unwrap_or_default());
            wr.write_record(&rec)?;
        }
        wr.flush().map_err(|e| Error::Csv(e.to_string()))?;
        Ok(())
    }

    pub fn read_csv<R: Read>(r: R) -> Result<Self> {
        let mut rd = csv::Reader::from_reader(r);
        let header: Vec<String> = rd.headers()?.iter().map(str::to_string).collect();
        let n = header.len();
        if n < 5
            || header[0] != "scenario_id"
            || header[n - 3..] != ["stable", "t_instab", "class_label"]
        {
            return Err(Error::Csv(format!("unexpected dataset header {header:?}")));
        }
        let feature_names = header[1..n - 3].to_vec();
        let mut rows = Vec::new();
        for rec in rd.records() {
            let rec = rec?;
            let stable = parse_bool(&rec[n - 3])?;
            let label = &rec[n - 1];
            let row = DatasetRow {
                scenario_id: rec[0]
                    .parse()
                    .map_err(|_| Error::Csv(format!("bad scenario id {:?}", &rec[0])))?,
                features: (1..n - 3).map(|j| parse_f64(&rec[j])).collect::<Result<_>>()?,
                stable,
                t_instab: parse_f64(&rec[n - 2])?,
                class_label: (!label.is_empty()).then(|| label.to_string()),
            };
            if row.stable == row.class_label.is_some() {
                return Err(Error::Csv(format!(
                    "row {}: class label must be present exactly for unstable rows",
                    row.scenario_id
                )));
            }
            rows.push(row);
        }
        Ok(Dataset { feature_names, rows })
    }
}

/// Joins operating points with the labels of `line`. Infeasible or unlabeled
/// scenarios are skipped and reported.
pub fn build_dataset(
    case: &NetworkCase,
    ops: &[OperatingPoint],
    labels: &[StabilityLabel],
    line: &str,
    bin_width: f64,
) -> Result<(Dataset, Vec<Skipped>)> {
    let by_scenario: BTreeMap<usize, &StabilityLabel> = labels
        .iter()
        .filter(|l| l.branch_id == line)
        .map(|l| (l.scenario_id, l))
        .collect();
    if by_scenario.is_empty() {
        return Err(Error::LineNotInLabels(line.to_string()));
    }
    let mut rows = Vec::new();
    let mut skipped = Vec::new();
    for op in ops {
        if !op.feasible {
            skipped.push(Skipped {
                scenario_id: op.scenario_id,
                reason: format!("infeasible dispatch ({} violations)", op.n_violations),
            });
            continue;
        }
        let Some(label) = by_scenario.get(&op.scenario_id) else {
            skipped.push(Skipped {
                scenario_id: op.scenario_id,
                reason: format!("no label for line {line}"),
            });
            continue;
        };
        let class_label = if label.stable {
            None
        } else {
            Some(bin_time_label(label.t_instab, bin_width)?)
        };
        rows.push(DatasetRow {
            scenario_id: op.scenario_id,
            features: extract_features(case, op, line)?,
            stable: label.stable,
            t_instab: label.t_instab,
            class_label,
        });
    }
    Ok((
        Dataset {
            feature_names: feature_names(case),
            rows,
        },
        skipped,
    ))
}
