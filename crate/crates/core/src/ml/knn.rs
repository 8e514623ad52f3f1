//! k-nearest-neighbour baseline for the time-of-instability classes.

use serde::{Deserialize, Serialize};

use super::check_rows;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KnnModel {
    pub k: usize,
    pub x: Vec<Vec<f64>>,
    pub labels: Vec<String>,
}

impl KnnModel {
    pub fn fit(x: &[Vec<f64>], labels: &[String], k: usize) -> Result<Self> {
        if x.len() != labels.len() {
            return Err(Error::LengthMismatch {
                expected: x.len(),
                got: labels.len(),
            });
        }
        check_rows(x)?;
        if k == 0 {
            return Err(Error::Config("k must be positive".into()));
        }
        Ok(KnnModel {
            k: k.min(x.len()),
            x: x.to_vec(),
            labels: labels.to_vec(),
        })
    }

    /// Majority label among the k nearest rows; ties go to the label whose
    /// nearest member is closest.
    pub fn predict(&self, q: &[f64]) -> Result<String> {
        let d = self.x[0].len();
        if q.len() != d {
            return Err(Error::DimensionMismatch { expected: d, got: q.len() });
        }
        let mut dist: Vec<(f64, usize)> = self
            .x
            .iter()
            .enumerate()
            .map(|(i, r)| (r.iter().zip(q).map(|(a, b)| (a - b).powi(2)).sum::<f64>(), i))
            .collect();
        dist.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        // (label, votes, rank of first appearance)
        let mut tally: Vec<(&str, usize, usize)> = Vec::new();
        for (rank, &(_, i)) in dist.iter().take(self.k).enumerate() {
            match tally.iter_mut().find(|t| t.0 == self.labels[i]) {
                Some(t) => t.1 += 1,
                None => tally.push((&self.labels[i], 1, rank)),
            }
        }
        let best = tally
            .iter()
            .max_by(|a, b| a.1.cmp(&b.1).then(b.2.cmp(&a.2)))
            .unwrap();
        Ok(best.0.to_string())
    }
}
