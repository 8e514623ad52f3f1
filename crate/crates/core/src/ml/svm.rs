//! Soft-margin SVM with the kernel `(1 + x·z / s)^2`, trained by SMO with
//! second-order working-set selection, combined one-vs-one for multiclass.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::check_rows;
use crate::error::{Error, Result};
use crate::features::sort_labels;

/// Curvature floor for non-positive-definite pairs.
const TAU: f64 = 1e-12;

pub fn kernel(x: &[f64], z: &[f64], scale: f64) -> f64 {
    let d: f64 = x.iter().zip(z).map(|(a, b)| a * b).sum();
    let u = 1.0 + d / scale;
    u * u
}

/// Median Euclidean distance over all row pairs (0 for fewer than 2 rows).
pub fn median_pairwise_distance(x: &[Vec<f64>]) -> f64 {
    let mut d = Vec::with_capacity(x.len() * x.len().saturating_sub(1) / 2);
    for i in 0..x.len() {
        for j in (i + 1)..x.len() {
            d.push(x[i].iter().zip(&x[j]).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt());
        }
    }
    if d.is_empty() {
        return 0.0;
    }
    d.sort_by(f64::total_cmp);
    let n = d.len();
    if n % 2 == 1 {
        d[n / 2]
    } else {
        0.5 * (d[n / 2 - 1] + d[n / 2])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SvmBinaryModel {
    pub support_vectors: Vec<Vec<f64>>,
    /// alpha_i * y_i per support vector.
    pub coef: Vec<f64>,
    pub bias: f64,
    pub scale: f64,
    pub c: f64,
    /// Label voted for by a positive decision value.
    pub positive: String,
    pub negative: String,
    pub iterations: usize,
    /// False when the iteration cap was hit before the KKT tolerance.
    pub converged: bool,
    pub kkt_violation: f64,
}

impl SvmBinaryModel {
    pub fn decision(&self, x: &[f64]) -> f64 {
        self.support_vectors
            .iter()
            .zip(&self.coef)
            .map(|(sv, c)| c * kernel(sv, x, self.scale))
            .sum::<f64>()
            + self.bias
    }
}

/// Diagnostics of one SMO solve.
#[derive(Debug, Clone, PartialEq)]
pub struct SmoTrace {
    pub alpha: Vec<f64>,
    /// Dual objective sum(alpha) - 1/2 alpha'Q alpha after every update.
    pub dual_objective: Vec<f64>,
    pub kkt_violation: f64,
    pub iterations: usize,
    pub converged: bool,
    pub rho: f64,
}

/// Solves the binary dual for labels `y` in {-1, +1} with per-row bounds.
pub fn smo(gram: &[Vec<f64>], y: &[f64], upper: &[f64], tol: f64, max_iter: usize) -> SmoTrace {
    let n = y.len();
    let q = |i: usize, j: usize| y[i] * y[j] * gram[i][j];
    let mut alpha = vec![0.0; n];
    // Gradient of 1/2 a'Qa - e'a.
    let mut grad = vec![-1.0; n];
    let mut dual = Vec::new();
    let mut obj = 0.0;
    let mut iterations = 0;
    let is_up = |a: f64, yi: f64, c: f64| (yi > 0.0 && a < c) || (yi < 0.0 && a > 0.0);
    let is_low = |a: f64, yi: f64, c: f64| (yi > 0.0 && a > 0.0) || (yi < 0.0 && a < c);
    let mut gap;
    loop {
        // Maximal violating pair with second-order selection of j.
        let mut gmax = f64::NEG_INFINITY;
        let mut i_sel = usize::MAX;
        for t in 0..n {
            if is_up(alpha[t], y[t], upper[t]) && -y[t] * grad[t] > gmax {
                gmax = -y[t] * grad[t];
                i_sel = t;
            }
        }
        let mut gmin = f64::INFINITY;
        let mut j_sel = usize::MAX;
        let mut best = f64::INFINITY;
        for t in 0..n {
            if !is_low(alpha[t], y[t], upper[t]) {
                continue;
            }
            let v = -y[t] * grad[t];
            gmin = gmin.min(v);
            if i_sel != usize::MAX && v < gmax {
                let b = gmax - v;
                let a = (gram[i_sel][i_sel] + gram[t][t] - 2.0 * gram[i_sel][t]).max(TAU);
                let score = -b * b / a;
                if score < best {
                    best = score;
                    j_sel = t;
                }
            }
        }
        gap = gmax - gmin;
        if i_sel == usize::MAX || j_sel == usize::MAX || gap < tol || iterations >= max_iter {
            break;
        }
        iterations += 1;
        let (i, j) = (i_sel, j_sel);
        let (old_ai, old_aj) = (alpha[i], alpha[j]);
        let (ci, cj) = (upper[i], upper[j]);
        let a = (gram[i][i] + gram[j][j] - 2.0 * gram[i][j]).max(TAU);
        if y[i] != y[j] {
            let delta = (-grad[i] - grad[j]) / a;
            let diff = alpha[i] - alpha[j];
            alpha[i] += delta;
            alpha[j] += delta;
            if diff > 0.0 {
                if alpha[j] < 0.0 {
                    alpha[j] = 0.0;
                    alpha[i] = diff;
                }
            } else if alpha[i] < 0.0 {
                alpha[i] = 0.0;
                alpha[j] = -diff;
            }
            if diff > ci - cj {
                if alpha[i] > ci {
                    alpha[i] = ci;
                    alpha[j] = ci - diff;
                }
            } else if alpha[j] > cj {
                alpha[j] = cj;
                alpha[i] = cj + diff;
            }
        } else {
            let delta = (grad[i] - grad[j]) / a;
            let sum = alpha[i] + alpha[j];
            alpha[i] -= delta;
            alpha[j] += delta;
            if sum > ci {
                if alpha[i] > ci {
                    alpha[i] = ci;
                    alpha[j] = sum - ci;
                }
            } else if alpha[j] < 0.0 {
                alpha[j] = 0.0;
                alpha[i] = sum;
            }
            if sum > cj {
                if alpha[j] > cj {
                    alpha[j] = cj;
                    alpha[i] = sum - cj;
                }
            } else if alpha[i] < 0.0 {
                alpha[i] = 0.0;
                alpha[j] = sum;
            }
        }
        let (dai, daj) = (alpha[i] - old_ai, alpha[j] - old_aj);
        // Exact change of the dual objective for a two-coordinate move.
        obj += -(dai * grad[i] + daj * grad[j])
            - 0.5 * (q(i, i) * dai * dai + q(j, j) * daj * daj + 2.0 * q(i, j) * dai * daj);
        for t in 0..n {
            grad[t] += q(t, i) * dai + q(t, j) * daj;
        }
        dual.push(obj);
    }

    // Offset from free vectors, or the midpoint of the feasible interval.
    let (mut ub, mut lb, mut sum, mut nfree) = (f64::INFINITY, f64::NEG_INFINITY, 0.0, 0usize);
    for t in 0..n {
        let yg = y[t] * grad[t];
        if alpha[t] >= upper[t] {
            if y[t] < 0.0 {
                ub = ub.min(yg);
            } else {
                lb = lb.max(yg);
            }
        } else if alpha[t] <= 0.0 {
            if y[t] > 0.0 {
                ub = ub.min(yg);
            } else {
                lb = lb.max(yg);
            }
        } else {
            nfree += 1;
            sum += yg;
        }
    }
    let rho = if nfree > 0 {
        sum / nfree as f64
    } else if ub.is_finite() && lb.is_finite() {
        0.5 * (ub + lb)
    } else if ub.is_finite() {
        ub
    } else if lb.is_finite() {
        lb
    } else {
        0.0
    };
    SmoTrace {
        alpha,
        dual_objective: dual,
        kkt_violation: gap.max(0.0),
        iterations,
        converged: gap < tol,
        rho,
    }
}

/// Trains one binary machine; `positive[i]` marks rows of the positive class.
pub fn train_binary(
    x: &[Vec<f64>],
    positive: &[bool],
    costs: (f64, f64),
    c: f64,
    scale: f64,
    tol: f64,
    max_iter: usize,
    labels: (&str, &str),
) -> SvmBinaryModel {
    let n = x.len();
    let gram: Vec<Vec<f64>> = (0..n)
        .map(|i| (0..n).map(|j| kernel(&x[i], &x[j], scale)).collect())
        .collect();
    let y: Vec<f64> = positive.iter().map(|&p| if p { 1.0 } else { -1.0 }).collect();
    let upper: Vec<f64> = positive.iter().map(|&p| c * if p { costs.0 } else { costs.1 }).collect();
    let tr = smo(&gram, &y, &upper, tol, max_iter);
    let mut sv = Vec::new();
    let mut coef = Vec::new();
    for i in 0..n {
        if tr.alpha[i] > 0.0 {
            sv.push(x[i].clone());
            coef.push(tr.alpha[i] * y[i]);
        }
    }
    SvmBinaryModel {
        support_vectors: sv,
        coef,
        bias: -tr.rho,
        scale,
        c,
        positive: labels.0.to_string(),
        negative: labels.1.to_string(),
        iterations: tr.iterations,
        converged: tr.converged,
        kkt_violation: tr.kkt_violation,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SvmMulticlassModel {
    /// Labels in numeric order.
    pub vocabulary: Vec<String>,
    /// One machine per label pair (a, b) with a before b in the vocabulary;
    /// `a` is the positive side.
    pub machines: Vec<SvmBinaryModel>,
    pub scale: f64,
    pub c: f64,
    pub dim: usize,
}

impl SvmMulticlassModel {
    pub fn converged(&self) -> bool {
        self.machines.iter().all(|m| m.converged)
    }
}

/// Hyper-parameters of one one-vs-one fit.
#[derive(Debug, Clone, PartialEq)]
pub struct SvmParams<'a> {
    pub c: f64,
    /// Multiplier on the median pairwise distance.
    pub scale_multiplier: f64,
    pub class_costs: &'a BTreeMap<String, f64>,
    pub tol: f64,
    pub max_iter: usize,
}

/// Trains all pairwise machines on standardized rows.
pub fn train_svm_ovo(x: &[Vec<f64>], labels: &[String], p: &SvmParams<'_>) -> Result<SvmMulticlassModel> {
    if x.len() != labels.len() {
        return Err(Error::LengthMismatch {
            expected: x.len(),
            got: labels.len(),
        });
    }
    let dim = check_rows(x)?;
    let mut vocabulary: Vec<String> = labels.to_vec();
    sort_labels(&mut vocabulary);
    vocabulary.dedup();
    if vocabulary.len() < 2 {
        return Err(Error::SingleClass);
    }
    let base = median_pairwise_distance(x);
    let scale = if base > 0.0 { base } else { 1.0 } * p.scale_multiplier;
    let cost = |l: &str| p.class_costs.get(l).copied().unwrap_or(1.0);

    let mut machines = Vec::new();
    for a in 0..vocabulary.len() {
        for b in (a + 1)..vocabulary.len() {
            let (la, lb) = (&vocabulary[a], &vocabulary[b]);
            let idx: Vec<usize> = (0..x.len()).filter(|&i| &labels[i] == la || &labels[i] == lb).collect();
            let xs: Vec<Vec<f64>> = idx.iter().map(|&i| x[i].clone()).collect();
            let pos: Vec<bool> = idx.iter().map(|&i| &labels[i] == la).collect();
            machines.push(train_binary(
                &xs,
                &pos,
                (cost(la), cost(lb)),
                p.c,
                scale,
                p.tol,
                p.max_iter,
                (la, lb),
            ));
        }
    }
    Ok(SvmMulticlassModel {
        vocabulary,
        machines,
        scale,
        c: p.c,
        dim,
    })
}

/// Majority vote over pairwise machines on a standardized input. Ties go to
/// the larger summed |decision| of won duels, then the earlier label.
pub fn predict_svm(model: &SvmMulticlassModel, x: &[f64]) -> Result<(String, BTreeMap<String, usize>)> {
    if x.len() != model.dim {
        return Err(Error::DimensionMismatch {
            expected: model.dim,
            got: x.len(),
        });
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("prediction input".into()));
    }
    let k = model.vocabulary.len();
    let pos_of = |l: &str| model.vocabulary.iter().position(|v| v == l).unwrap();
    let mut votes = vec![0usize; k];
    let mut strength = vec![0.0; k];
    for m in &model.machines {
        let f = m.decision(x);
        let winner = if f > 0.0 { pos_of(&m.positive) } else { pos_of(&m.negative) };
        votes[winner] += 1;
        strength[winner] += f.abs();
    }
    let mut best = 0;
    for c in 1..k {
        let better = votes[c] > votes[best] || (votes[c] == votes[best] && strength[c] > strength[best]);
        if better {
            best = c;
        }
    }
    let counts = model.vocabulary.iter().cloned().zip(votes).collect();
    Ok((model.vocabulary[best].clone(), counts))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn blobs() -> (Vec<Vec<f64>>, Vec<String>) {
        let mut x = Vec::new();
        let mut l = Vec::new();
        for i in 0..15 {
            let t = i as f64 * 0.4;
            x.push(vec![-2.0 + 0.3 * t.sin(), 1.0 + 0.3 * t.cos()]);
            l.push("1.0".to_string());
            x.push(vec![2.0 + 0.3 * t.cos(), -1.0 + 0.3 * t.sin()]);
            l.push("2.0".to_string());
        }
        (x, l)
    }

    fn params(costs: &BTreeMap<String, f64>) -> SvmParams<'_> {
        SvmParams {
            c: 10.0,
            scale_multiplier: 1.0,
            class_costs: costs,
            tol: 1e-3,
            max_iter: 100_000,
        }
    }

    #[test]
    fn separated_blobs() {
        let (x, l) = blobs();
        let costs = BTreeMap::new();
        let m = train_svm_ovo(&x, &l, &params(&costs)).unwrap();
        assert!(m.converged());
        for (xi, li) in x.iter().zip(&l) {
            let (p, votes) = predict_svm(&m, xi).unwrap();
            assert_eq!(&p, li);
            let mut v: Vec<usize> = votes.values().copied().collect();
            v.sort();
            assert_eq!(v, vec![0, 1]);
        }
    }

    #[test]
    fn dual_constraint_and_bounds() {
        let (x, l) = blobs();
        let pos: Vec<bool> = l.iter().map(|s| s == "1.0").collect();
        let y: Vec<f64> = pos.iter().map(|&p| if p { 1.0 } else { -1.0 }).collect();
        let gram: Vec<Vec<f64>> = x.iter().map(|a| x.iter().map(|b| kernel(a, b, 2.0)).collect()).collect();
        let upper = vec![1.0; x.len()];
        let tr = smo(&gram, &y, &upper, 1e-6, 100_000);
        assert!(tr.converged && tr.kkt_violation < 1e-6);
        let s: f64 = tr.alpha.iter().zip(&y).map(|(a, y)| a * y).sum();
        assert!(s.abs() < 1e-6);
        assert!(tr.alpha.iter().all(|&a| (0.0..=1.0).contains(&a)));
    }

    #[test]
    fn single_class_rejected() {
        let costs = BTreeMap::new();
        let x = vec![vec![0.0], vec![1.0]];
        let l = vec!["1.0".to_string(), "1.0".to_string()];
        assert!(matches!(train_svm_ovo(&x, &l, &params(&costs)), Err(Error::SingleClass)));
    }

    #[test]
    fn cyclic_tie_goes_to_first_label() {
        // Three machines each voting for a different class with equal strength.
        let mk = |pos: &str, neg: &str, bias: f64| SvmBinaryModel {
            support_vectors: vec![],
            coef: vec![],
            bias,
            scale: 1.0,
            c: 1.0,
            positive: pos.into(),
            negative: neg.into(),
            iterations: 0,
            converged: true,
            kkt_violation: 0.0,
        };
        let m = SvmMulticlassModel {
            vocabulary: vec!["0.5".into(), "1.0".into(), "1.5".into()],
            machines: vec![mk("0.5", "1.0", 1.0), mk("0.5", "1.5", -1.0), mk("1.0", "1.5", 1.0)],
            scale: 1.0,
            c: 1.0,
            dim: 1,
        };
        let (p, votes) = predict_svm(&m, &[0.0]).unwrap();
        assert!(votes.values().all(|&v| v == 1));
        assert_eq!(p, "0.5");
    }
}
