//! Stratified k-fold cross-validation and the SVM hyper-parameter grid.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::svm::{predict_svm, train_svm_ovo, SvmParams};
use super::SvmConfig;
use crate::error::{Error, Result};

/// Fold of every row: rows are shuffled by `seed`, stably grouped by label,
/// then dealt round-robin so each class spreads evenly over the folds.
pub fn fold_assignment(labels: &[String], k: usize, seed: u64) -> Result<Vec<usize>> {
    if k < 2 {
        return Err(Error::Config(format!("k must be at least 2, got {k}")));
    }
    if k > labels.len() {
        return Err(Error::KTooLarge { k, rows: labels.len() });
    }
    let mut order: Vec<usize> = (0..labels.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    order.sort_by(|&a, &b| labels[a].cmp(&labels[b]));
    let mut fold = vec![0; labels.len()];
    for (pos, &row) in order.iter().enumerate() {
        fold[row] = pos % k;
    }
    Ok(fold)
}

#[derive(Debug, Clone, PartialEq)]
pub struct CvResult {
    pub fold_accuracy: Vec<f64>,
    /// Unweighted mean of the fold accuracies.
    pub mean_accuracy: f64,
}

/// Trainer signature: fit on the first two arguments, predict the third.
pub type Trainer<'a> = dyn Fn(&[Vec<f64>], &[String], &[Vec<f64>]) -> Result<Vec<String>> + Sync + 'a;

pub fn cross_validate(x: &[Vec<f64>], labels: &[String], k: usize, seed: u64, trainer: &Trainer<'_>) -> Result<CvResult> {
    if x.len() != labels.len() {
        return Err(Error::LengthMismatch {
            expected: x.len(),
            got: labels.len(),
        });
    }
    let fold = fold_assignment(labels, k, seed)?;
    let mut fold_accuracy = Vec::with_capacity(k);
    for f in 0..k {
        let (mut tx, mut tl, mut vx, mut vl) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
        for i in 0..x.len() {
            if fold[i] == f {
                vx.push(x[i].clone());
                vl.push(labels[i].clone());
            } else {
                tx.push(x[i].clone());
                tl.push(labels[i].clone());
            }
        }
        let pred = trainer(&tx, &tl, &vx)?;
        let ok = pred.iter().zip(&vl).filter(|(p, a)| p == a).count();
        fold_accuracy.push(ok as f64 / vl.len() as f64);
    }
    let mean_accuracy = fold_accuracy.iter().sum::<f64>() / k as f64;
    Ok(CvResult {
        fold_accuracy,
        mean_accuracy,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridPoint {
    pub c: f64,
    pub scale_multiplier: f64,
    pub cv_accuracy: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridResult {
    pub best: GridPoint,
    /// Every evaluated point, C-major in ascending order.
    pub table: Vec<GridPoint>,
}

/// Fits an SVM on one fold; a single-class training fold predicts its class.
pub fn svm_trainer<'a>(cfg: &'a SvmConfig, c: f64, mult: f64) -> impl Fn(&[Vec<f64>], &[String], &[Vec<f64>]) -> Result<Vec<String>> + Sync + 'a {
    move |tx, tl, vx| {
        if tl.iter().all(|l| l == &tl[0]) {
            return Ok(vec![tl[0].clone(); vx.len()]);
        }
        let params = SvmParams {
            c,
            scale_multiplier: mult,
            class_costs: &cfg.class_costs,
            tol: cfg.tol,
            max_iter: cfg.max_iter,
        };
        let m = train_svm_ovo(tx, tl, &params)?;
        vx.iter().map(|v| predict_svm(&m, v).map(|p| p.0)).collect()
    }
}

/// Exhaustive grid over (C, scale multiplier) by k-fold accuracy. Ties keep
/// the smaller C, then the smaller multiplier.
pub fn grid_search(x: &[Vec<f64>], labels: &[String], cfg: &SvmConfig, seed: u64) -> Result<GridResult> {
    if cfg.c_grid.is_empty() || cfg.scale_grid.is_empty() {
        return Err(Error::Config("svm grids must be non-empty".into()));
    }
    let mut cs = cfg.c_grid.clone();
    let mut ms = cfg.scale_grid.clone();
    cs.sort_by(f64::total_cmp);
    ms.sort_by(f64::total_cmp);
    let points: Vec<(f64, f64)> = cs.iter().flat_map(|&c| ms.iter().map(move |&m| (c, m))).collect();
    let table: Vec<GridPoint> = points
        .par_iter()
        .map(|&(c, m)| {
            let trainer = svm_trainer(cfg, c, m);
            let r = cross_validate(x, labels, cfg.k_folds, seed, &trainer)?;
            Ok(GridPoint {
                c,
                scale_multiplier: m,
                cv_accuracy: r.mean_accuracy,
            })
        })
        .collect::<Result<_>>()?;
    let mut best = table[0].clone();
    for p in &table[1..] {
        if p.cv_accuracy > best.cv_accuracy {
            best = p.clone();
        }
    }
    Ok(GridResult { best, table })
}
