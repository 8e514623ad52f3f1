//! Evaluation metrics and the report artifacts of a run.

use std::fmt::Write as _;
use std::io::Write;

use crate::csvio::fmt_f64;
use crate::error::{Error, Result};
use crate::features::{label_seconds, Dataset};
use crate::ml::{predict_mlp, predict_svm, TrainedModels};

pub const STABLE: &str = "stable";
pub const UNSTABLE: &str = "unstable";

/// Rows are actual labels, columns predicted labels.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfusionMatrix {
    pub vocabulary: Vec<String>,
    pub counts: Vec<Vec<usize>>,
    /// Cell / total × 100.
    pub percent: Vec<Vec<f64>>,
}

impl ConfusionMatrix {
    pub fn total(&self) -> usize {
        self.counts.iter().flatten().sum()
    }

    pub fn correct(&self) -> usize {
        (0..self.vocabulary.len()).map(|i| self.counts[i][i]).sum()
    }

    /// Misclassified share in percent.
    pub fn error_percent(&self) -> f64 {
        let t = self.total();
        if t == 0 {
            return 0.0;
        }
        100.0 * (t - self.correct()) as f64 / t as f64
    }
}

pub fn confusion(preds: &[String], actuals: &[String], vocabulary: &[String]) -> Result<ConfusionMatrix> {
    if preds.len() != actuals.len() {
        return Err(Error::LengthMismatch {
            expected: actuals.len(),
            got: preds.len(),
        });
    }
    let pos = |l: &String| {
        vocabulary
            .iter()
            .position(|v| v == l)
            .ok_or_else(|| Error::UnknownLabel(l.clone()))
    };
    let k = vocabulary.len();
    let mut counts = vec![vec![0usize; k]; k];
    for (p, a) in preds.iter().zip(actuals) {
        counts[pos(a)?][pos(p)?] += 1;
    }
    let total: usize = counts.iter().flatten().sum();
    let percent = counts
        .iter()
        .map(|row| {
            row.iter()
                .map(|&c| if total == 0 { 0.0 } else { c as f64 / total as f64 * 100.0 })
                .collect()
        })
        .collect();
    Ok(ConfusionMatrix {
        vocabulary: vocabulary.to_vec(),
        counts,
        percent,
    })
}

/// Mean absolute difference, (1/n) Σ |predicted − actual|.
pub fn mae(pred: &[f64], actual: &[f64]) -> Result<f64> {
    if pred.len() != actual.len() {
        return Err(Error::LengthMismatch {
            expected: actual.len(),
            got: pred.len(),
        });
    }
    if pred.is_empty() {
        return Err(Error::EmptyInput("no values for MAE".into()));
    }
    Ok(pred.iter().zip(actual).map(|(p, a)| (p - a).abs()).sum::<f64>() / pred.len() as f64)
}

/// Fraction of predictions that belong to the training vocabulary.
pub fn credibility(preds: &[String], vocabulary: &[String]) -> Result<f64> {
    if preds.is_empty() {
        return Err(Error::EmptyInput("no predictions".into()));
    }
    let inside = preds.iter().filter(|p| vocabulary.contains(p)).count();
    Ok(inside as f64 / preds.len() as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Incident {
    pub scenario_id: usize,
    pub actual: String,
    pub predicted: String,
    pub abs_error: f64,
}

/// Training-side figures carried into the report.
#[derive(Debug, Clone, PartialEq, Default, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainingFigures {
    pub mlp_train_accuracy: f64,
    pub mlp_epochs: usize,
    pub mlp_final_loss: f64,
    pub svm_cv_accuracy: Option<f64>,
    pub svm_c: Option<f64>,
    pub svm_scale_multiplier: Option<f64>,
    pub knn_cv_accuracy: Option<f64>,
    pub svm_train_accuracy: Option<f64>,
}

fn mean_var(v: &[f64]) -> (f64, f64) {
    if v.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    (m, v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / n)
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub rows: usize,
    pub binary: ConfusionMatrix,
    /// Unstable rows predicted stable / unstable rows.
    pub false_stable_rate: f64,
    /// Stable rows predicted unstable / stable rows.
    pub false_unstable_rate: f64,
    pub unstable_rows: usize,
    pub multiclass: Option<ConfusionMatrix>,
    /// Misclassified unstable rows / unstable rows, percent.
    pub labeling_error_percent: Option<f64>,
    pub mae_seconds: Option<f64>,
    pub credibility: Option<f64>,
    pub mean_actual: Option<f64>,
    pub mean_predicted: Option<f64>,
    pub var_actual: Option<f64>,
    pub var_predicted: Option<f64>,
    pub incidents: Vec<Incident>,
    pub training: Option<TrainingFigures>,
}

impl EvalReport {
    pub fn binary_error_percent(&self) -> f64 {
        self.binary.error_percent()
    }
}

/// Evaluates trained models on a dataset whose features are raw (the model's
/// standardizer is applied). The multiclass part uses the rows that are
/// actually unstable.
pub fn summarize(models: &TrainedModels, data: &Dataset, training: Option<TrainingFigures>) -> Result<EvalReport> {
    if data.rows.is_empty() {
        return Err(Error::EmptyInput("evaluation dataset has no rows".into()));
    }
    if data.feature_names != models.feature_names {
        return Err(Error::DimensionMismatch {
            expected: models.feature_names.len(),
            got: data.feature_names.len(),
        });
    }
    let bin_vocab = vec![STABLE.to_string(), UNSTABLE.to_string()];
    let name = |s: bool| if s { STABLE } else { UNSTABLE }.to_string();
    let mut bp = Vec::new();
    let mut ba = Vec::new();
    for r in &data.rows {
        bp.push(name(predict_mlp(&models.mlp, &r.features, &models.standardizer)?.stable));
        ba.push(name(r.stable));
    }
    let binary = confusion(&bp, &ba, &bin_vocab)?;
    let rate = |actual: usize, predicted: usize| {
        let row = &binary.counts[actual];
        let n: usize = row.iter().sum();
        if n == 0 {
            0.0
        } else {
            row[predicted] as f64 / n as f64
        }
    };
    let false_stable_rate = rate(1, 0);
    let false_unstable_rate = rate(0, 1);

    let unstable: Vec<_> = data.unstable_rows();
    let mut report = EvalReport {
        rows: data.rows.len(),
        binary,
        false_stable_rate,
        false_unstable_rate,
        unstable_rows: unstable.len(),
        multiclass: None,
        labeling_error_percent: None,
        mae_seconds: None,
        credibility: None,
        mean_actual: None,
        mean_predicted: None,
        var_actual: None,
        var_predicted: None,
        incidents: Vec::new(),
        training,
    };
    let Some(svm) = &models.svm else {
        return Ok(report);
    };
    if unstable.is_empty() {
        return Ok(report);
    }
    let mut preds = Vec::new();
    let mut actuals = Vec::new();
    for r in &unstable {
        let z = models.standardizer.transform(&r.features)?;
        preds.push(predict_svm(svm, &z)?.0);
        actuals.push(r.class_label.clone().expect("unstable rows carry a class"));
    }
    let pt: Vec<f64> = preds.iter().map(|p| label_seconds(p)).collect::<Result<_>>()?;
    let at: Vec<f64> = actuals.iter().map(|a| label_seconds(a)).collect::<Result<_>>()?;
    // Vocabulary for the matrix: training classes plus any unseen actual class.
    let mut vocab = svm.vocabulary.clone();
    for a in &actuals {
        if !vocab.contains(a) {
            vocab.push(a.clone());
        }
    }
    crate::features::sort_labels(&mut vocab);
    let multi = confusion(&preds, &actuals, &vocab)?;
    let wrong = preds.iter().zip(&actuals).filter(|(p, a)| p != a).count();
    report.incidents = unstable
        .iter()
        .zip(preds.iter().zip(&actuals))
        .zip(pt.iter().zip(&at))
        .filter(|((_, (p, a)), _)| p != a)
        .map(|((r, (p, a)), (x, y))| Incident {
            scenario_id: r.scenario_id,
            actual: a.clone(),
            predicted: p.clone(),
            abs_error: (x - y).abs(),
        })
        .collect();
    report.incidents.sort_by_key(|i| i.scenario_id);
    report.labeling_error_percent = Some(100.0 * wrong as f64 / unstable.len() as f64);
    report.mae_seconds = Some(mae(&pt, &at)?);
    report.credibility = Some(credibility(&preds, &svm.vocabulary)?);
    let (ma, va) = mean_var(&at);
    let (mp, vp) = mean_var(&pt);
    report.mean_actual = Some(ma);
    report.var_actual = Some(va);
    report.mean_predicted = Some(mp);
    report.var_predicted = Some(vp);
    report.multiclass = Some(multi);
    Ok(report)
}

fn opt(v: Option<f64>) -> String {
    v.map(fmt_f64).unwrap_or_default()
}

impl EvalReport {
    /// Ordered (metric, value) pairs shared by metrics.csv and report.md.
    pub fn metrics(&self) -> Vec<(&'static str, String)> {
        let mut m = vec![
            ("rows", self.rows.to_string()),
            ("unstable_rows", self.unstable_rows.to_string()),
            ("binary_error_percent", fmt_f64(self.binary_error_percent())),
            ("false_stable_rate", fmt_f64(self.false_stable_rate)),
            ("false_unstable_rate", fmt_f64(self.false_unstable_rate)),
            ("labeling_error_percent", opt(self.labeling_error_percent)),
            ("mae_seconds", opt(self.mae_seconds)),
            ("credibility", opt(self.credibility)),
            ("mean_actual_t_instab", opt(self.mean_actual)),
            ("mean_predicted_t_instab", opt(self.mean_predicted)),
            ("var_actual_t_instab", opt(self.var_actual)),
            ("var_predicted_t_instab", opt(self.var_predicted)),
            ("misclassified_incidents", self.incidents.len().to_string()),
        ];
        if let Some(t) = &self.training {
            m.extend([
                ("mlp_train_accuracy", fmt_f64(t.mlp_train_accuracy)),
                ("mlp_epochs", t.mlp_epochs.to_string()),
                ("mlp_final_loss", fmt_f64(t.mlp_final_loss)),
                ("svm_cv_accuracy", opt(t.svm_cv_accuracy)),
                ("svm_c", opt(t.svm_c)),
                ("svm_scale_multiplier", opt(t.svm_scale_multiplier)),
                ("svm_train_accuracy", opt(t.svm_train_accuracy)),
                ("knn_cv_accuracy", opt(t.knn_cv_accuracy)),
            ]);
        }
        m
    }

    pub fn write_metrics_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(["metric", "value"])?;
        for (k, v) in self.metrics() {
            wr.write_record([k, v.as_str()])?;
        }
        wr.flush().map_err(|e| Error::Csv(e.to_string()))?;
        Ok(())
    }

    pub fn write_incidents_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(["scenario_id", "actual", "predicted", "abs_error"])?;
        for i in &self.incidents {
            wr.write_record([
                i.scenario_id.to_string().as_str(),
                &i.actual,
                &i.predicted,
                &fmt_f64(i.abs_error),
            ])?;
        }
        wr.flush().map_err(|e| Error::Csv(e.to_string()))?;
        Ok(())
    }

    /// Long format: one row per cell of the binary and multiclass matrices.
    pub fn write_confusion_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(["matrix", "actual", "predicted", "count", "percent"])?;
        let mut emit = |name: &str, m: &ConfusionMatrix| -> Result<()> {
            for (i, a) in m.vocabulary.iter().enumerate() {
                for (j, p) in m.vocabulary.iter().enumerate() {
                    wr.write_record([
                        name,
                        a,
                        p,
                        &m.counts[i][j].to_string(),
                        &fmt_f64(m.percent[i][j]),
                    ])?;
                }
            }
            Ok(())
        };
        emit("binary", &self.binary)?;
        if let Some(m) = &self.multiclass {
            emit("multiclass", m)?;
        }
        wr.flush().map_err(|e| Error::Csv(e.to_string()))?;
        Ok(())
    }

    pub fn markdown(&self, title: &str) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "# {title}\n");
        let _ = writeln!(
            s,
            "Binary figures use every evaluated row. The time-of-instability figures use only rows \
             that are actually unstable; the labeling error is misclassified unstable rows divided \
             by unstable rows, and the MAE compares class values in seconds.\n"
        );
        let _ = writeln!(s, "| metric | value |\n|---|---|");
        for (k, v) in self.metrics() {
            let shown = if v.contains('e') {
                v.parse::<f64>().map(|x| format!("{x:.6}")).unwrap_or(v)
            } else {
                v
            };
            let _ = writeln!(s, "| {k} | {shown} |");
        }
        let _ = writeln!(s, "\n## Binary confusion (percent of rows)\n");
        table(&mut s, &self.binary);
        if let Some(m) = &self.multiclass {
            let _ = writeln!(s, "\n## Time-of-instability classes\n");
            let _ = writeln!(s, "{} classes, {} misclassified incidents (see incidents.csv).", m.vocabulary.len(), self.incidents.len());
        }
        s
    }
}

fn table(s: &mut String, m: &ConfusionMatrix) {
    let _ = write!(s, "| actual \\ predicted |");
    for v in &m.vocabulary {
        let _ = write!(s, " {v} |");
    }
    let _ = write!(s, "\n|---|");
    for _ in &m.vocabulary {
        let _ = write!(s, "---|");
    }
    let _ = writeln!(s);
    for (i, a) in m.vocabulary.iter().enumerate() {
        let _ = write!(s, "| {a} |");
        for j in 0..m.vocabulary.len() {
            let _ = write!(s, " {:.2} |", m.percent[i][j]);
        }
        let _ = writeln!(s);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn s(v: &[&str]) -> Vec<String> {
        v.iter().map(|x| x.to_string()).collect()
    }

    #[test]
    fn mae_hand_values() {
        assert_eq!(mae(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
        assert!((mae(&[1.7, 2.0], &[2.0, 2.0]).unwrap() - 0.15).abs() < 1e-15);
        let v = mae(&[1.5, 2.0, 1.0], &[1.6, 2.0, 1.3]).unwrap();
        assert!((v - 0.4 / 3.0).abs() < 1e-15);
        assert!(matches!(mae(&[], &[]), Err(Error::EmptyInput(_))));
        assert!(matches!(mae(&[1.0], &[]), Err(Error::LengthMismatch { .. })));
    }

    #[test]
    fn confusion_cases() {
        let v = s(&["a", "b"]);
        let act = s(&["a", "a", "a", "a", "a", "b", "b", "b", "b", "b"]);
        let perfect = confusion(&act, &act, &v).unwrap();
        assert_eq!(perfect.percent, vec![vec![50.0, 0.0], vec![0.0, 50.0]]);
        assert_eq!(perfect.error_percent(), 0.0);
        let flipped: Vec<String> = act.iter().map(|x| if x == "a" { "b" } else { "a" }.to_string()).collect();
        let wrong = confusion(&flipped, &act, &v).unwrap();
        assert_eq!(wrong.percent, vec![vec![0.0, 50.0], vec![50.0, 0.0]]);
        assert!(matches!(confusion(&s(&["c"]), &s(&["a"]), &v), Err(Error::UnknownLabel(_))));

        let mut a = vec!["a".to_string(); 699];
        let mut p = a.clone();
        p[10] = "b".into();
        a[0] = "a".into();
        let c = confusion(&p, &a, &v).unwrap();
        assert!((c.error_percent() - 100.0 / 699.0).abs() < 1e-12);
        let sum: f64 = c.percent.iter().flatten().sum();
        assert!((sum - 100.0).abs() < 1e-9);
    }

    #[test]
    fn credibility_fraction() {
        let v = s(&["1.0", "1.5"]);
        assert_eq!(credibility(&s(&["1.0", "1.5"]), &v).unwrap(), 1.0);
        assert_eq!(credibility(&s(&["1.0", "1.5", "1.0", "9.9"]), &v).unwrap(), 0.75);
    }
}
