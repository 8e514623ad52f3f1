//! Binary classifier: tanh hidden layer, logistic output, mean cross-entropy
//! loss, trained full-batch.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{check_rows, MlpConfig, Optimizer};
use crate::error::{Error, Result};
use crate::features::Standardizer;

/// Keeps log() finite when the output saturates.
const PROB_EPS: f64 = 1e-15;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpModel {
    pub n_in: usize,
    pub n_hidden: usize,
    /// Hidden weights, `n_hidden` rows of `n_in`.
    pub w1: Vec<Vec<f64>>,
    pub b1: Vec<f64>,
    pub w2: Vec<f64>,
    pub b2: f64,
    pub seed: u64,
    pub epochs: usize,
    pub final_loss: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MlpPrediction {
    pub stable: bool,
    pub score: f64,
    pub confidence: f64,
}

impl MlpPrediction {
    pub fn from_score(score: f64) -> Self {
        MlpPrediction {
            stable: score >= 0.5,
            score,
            confidence: 2.0 * (score - 0.5).abs(),
        }
    }
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

impl MlpModel {
    /// Random weights uniform in [-0.5, 0.5].
    pub fn init(n_in: usize, n_hidden: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut u = || rng.gen_range(-0.5..=0.5);
        let w1 = (0..n_hidden).map(|_| (0..n_in).map(|_| u()).collect()).collect();
        let b1 = (0..n_hidden).map(|_| u()).collect();
        let w2 = (0..n_hidden).map(|_| u()).collect();
        let b2 = u();
        MlpModel {
            n_in,
            n_hidden,
            w1,
            b1,
            w2,
            b2,
            seed,
            epochs: 0,
            final_loss: f64::NAN,
        }
    }

    pub fn n_params(&self) -> usize {
        self.n_hidden * (self.n_in + 2) + 1
    }

    /// Flattened parameters: w1 row-major, b1, w2, b2.
    pub fn params(&self) -> Vec<f64> {
        let mut p = Vec::with_capacity(self.n_params());
        for row in &self.w1 {
            p.extend(row);
        }
        p.extend(&self.b1);
        p.extend(&self.w2);
        p.push(self.b2);
        p
    }

    pub fn set_params(&mut self, p: &[f64]) {
        let (h, d) = (self.n_hidden, self.n_in);
        for (j, row) in self.w1.iter_mut().enumerate() {
            row.copy_from_slice(&p[j * d..(j + 1) * d]);
        }
        self.b1.copy_from_slice(&p[h * d..h * d + h]);
        self.w2.copy_from_slice(&p[h * d + h..h * d + 2 * h]);
        self.b2 = p[h * d + 2 * h];
    }

    /// Network output in (0, 1) for an already standardized input.
    pub fn forward(&self, x: &[f64]) -> f64 {
        let mut z = self.b2;
        for j in 0..self.n_hidden {
            let a: f64 = self.b1[j] + self.w1[j].iter().zip(x).map(|(w, v)| w * v).sum::<f64>();
            z += self.w2[j] * a.tanh();
        }
        sigmoid(z)
    }

    /// Mean cross-entropy and its gradient with respect to `params()`.
    pub fn loss_and_grad(&self, x: &[Vec<f64>], y: &[f64]) -> (f64, Vec<f64>) {
        let (h, d) = (self.n_hidden, self.n_in);
        let n = x.len() as f64;
        let mut g = vec![0.0; self.n_params()];
        let mut loss = 0.0;
        let mut hidden = vec![0.0; h];
        for (xi, &yi) in x.iter().zip(y) {
            let mut z = self.b2;
            for j in 0..h {
                let a: f64 = self.b1[j] + self.w1[j].iter().zip(xi).map(|(w, v)| w * v).sum::<f64>();
                hidden[j] = a.tanh();
                z += self.w2[j] * hidden[j];
            }
            let p = sigmoid(z);
            let pc = p.clamp(PROB_EPS, 1.0 - PROB_EPS);
            loss -= yi * pc.ln() + (1.0 - yi) * (1.0 - pc).ln();
            // d loss / d z for logistic + cross-entropy.
            let dz = (p - yi) / n;
            for j in 0..h {
                g[h * d + h + j] += dz * hidden[j];
                let da = dz * self.w2[j] * (1.0 - hidden[j] * hidden[j]);
                for k in 0..d {
                    g[j * d + k] += da * xi[k];
                }
                g[h * d + j] += da;
            }
            g[h * d + 2 * h] += dz;
        }
        (loss / n, g)
    }

    fn loss(&self, x: &[Vec<f64>], y: &[f64]) -> f64 {
        let n = x.len() as f64;
        x.iter()
            .zip(y)
            .map(|(xi, &yi)| {
                let p = self.forward(xi).clamp(PROB_EPS, 1.0 - PROB_EPS);
                -(yi * p.ln() + (1.0 - yi) * (1.0 - p).ln())
            })
            .sum::<f64>()
            / n
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn axpy(w: &[f64], a: f64, p: &[f64]) -> Vec<f64> {
    w.iter().zip(p).map(|(wi, pi)| wi + a * pi).collect()
}

/// Objective wrapper that evaluates a parameter vector on a fixed model shape.
struct Objective<'a> {
    shape: MlpModel,
    x: &'a [Vec<f64>],
    y: &'a [f64],
}

impl Objective<'_> {
    fn eval(&mut self, p: &[f64]) -> (f64, Vec<f64>) {
        self.shape.set_params(p);
        self.shape.loss_and_grad(self.x, self.y)
    }

    fn value(&mut self, p: &[f64]) -> f64 {
        self.shape.set_params(p);
        self.shape.loss(self.x, self.y)
    }
}

/// Training trace: loss after every accepted iteration.
pub type LossHistory = Vec<f64>;

/// Trains on standardized rows; `stable[i]` is the target (true → 1).
pub fn train_mlp(x: &[Vec<f64>], stable: &[bool], cfg: &MlpConfig, seed: u64) -> Result<MlpModel> {
    train_mlp_traced(x, stable, cfg, seed).map(|(m, _)| m)
}

pub fn train_mlp_traced(
    x: &[Vec<f64>],
    stable: &[bool],
    cfg: &MlpConfig,
    seed: u64,
) -> Result<(MlpModel, LossHistory)> {
    if x.len() != stable.len() {
        return Err(Error::LengthMismatch {
            expected: x.len(),
            got: stable.len(),
        });
    }
    if x.len() < 2 {
        return Err(Error::TooFewRows(x.len()));
    }
    let d = check_rows(x)?;
    if stable.iter().all(|&s| s) || stable.iter().all(|&s| !s) {
        return Err(Error::SingleClass);
    }
    let y: Vec<f64> = stable.iter().map(|&s| if s { 1.0 } else { 0.0 }).collect();
    let model = MlpModel::init(d, cfg.hidden, seed);
    let w0 = model.params();
    let mut obj = Objective { shape: model, x, y: &y };
    let (w, epochs, history) = match cfg.optimizer {
        Optimizer::Scg => scg(&mut obj, w0, cfg)?,
        Optimizer::GradientDescent => gradient_descent(&mut obj, w0, cfg)?,
    };
    let mut model = obj.shape;
    model.set_params(&w);
    model.epochs = epochs;
    model.final_loss = model.loss(x, &y);
    if !model.final_loss.is_finite() {
        return Err(Error::NonFinite("training loss".into()));
    }
    Ok((model, history))
}

/// Scaled conjugate gradient with the usual trust-region style λ control.
fn scg(obj: &mut Objective<'_>, mut w: Vec<f64>, cfg: &MlpConfig) -> Result<(Vec<f64>, usize, LossHistory)> {
    const SIGMA: f64 = 5e-5;
    let n = w.len();
    let (mut e, g) = obj.eval(&w);
    let mut history = vec![e];
    let mut r: Vec<f64> = g.iter().map(|v| -v).collect();
    let mut p = r.clone();
    let mut lambda = 5e-7;
    let mut lambda_bar = 0.0;
    let mut success = true;
    let mut delta = 0.0;
    let mut epochs = 0;
    let mut since_restart = 0;

    while epochs < cfg.max_epochs {
        epochs += 1;
        let p2 = dot(&p, &p);
        if p2 == 0.0 {
            break;
        }
        if success {
            let sigma = SIGMA / p2.sqrt();
            let (_, g_plus) = obj.eval(&axpy(&w, sigma, &p));
            let g_w: Vec<f64> = r.iter().map(|v| -v).collect();
            let s: Vec<f64> = g_plus.iter().zip(&g_w).map(|(a, b)| (a - b) / sigma).collect();
            delta = dot(&p, &s);
        }
        delta += (lambda - lambda_bar) * p2;
        if delta <= 0.0 {
            lambda_bar = 2.0 * (lambda - delta / p2);
            delta = -delta + lambda * p2;
            lambda = lambda_bar;
        }
        let mu = dot(&p, &r);
        let alpha = mu / delta;
        let w_new = axpy(&w, alpha, &p);
        let e_new = obj.value(&w_new);
        if !e_new.is_finite() {
            return Err(Error::NonFinite("loss during conjugate gradient step".into()));
        }
        let comparison = 2.0 * delta * (e - e_new) / (mu * mu);
        if comparison >= 0.0 && e_new <= e {
            w = w_new;
            let (e_acc, g_new) = obj.eval(&w);
            let prev = e;
            e = e_acc;
            history.push(e);
            let r_new: Vec<f64> = g_new.iter().map(|v| -v).collect();
            lambda_bar = 0.0;
            success = true;
            since_restart += 1;
            if since_restart >= n {
                p = r_new.clone();
                since_restart = 0;
            } else {
                let beta = (dot(&r_new, &r_new) - dot(&r_new, &r)) / mu;
                p = r_new.iter().zip(&p).map(|(a, b)| a + beta * b).collect();
            }
            r = r_new;
            if comparison >= 0.75 {
                lambda *= 0.25;
            }
            if e <= cfg.loss_tol || (prev - e).abs() <= f64::EPSILON * prev.abs() && dot(&r, &r) < 1e-24 {
                break;
            }
        } else {
            lambda_bar = lambda;
            success = false;
        }
        if comparison < 0.25 {
            lambda += delta * (1.0 - comparison) / p2;
        }
        if !lambda.is_finite() || lambda > 1e100 {
            break;
        }
        if dot(&r, &r) == 0.0 {
            break;
        }
    }
    Ok((w, epochs, history))
}

fn gradient_descent(
    obj: &mut Objective<'_>,
    mut w: Vec<f64>,
    cfg: &MlpConfig,
) -> Result<(Vec<f64>, usize, LossHistory)> {
    let (mut e, mut g) = obj.eval(&w);
    let mut history = vec![e];
    let mut step = 1.0;
    let mut epochs = 0;
    while epochs < cfg.max_epochs && e > cfg.loss_tol {
        epochs += 1;
        let g2 = dot(&g, &g);
        if g2 < 1e-24 {
            break;
        }
        // Armijo backtracking.
        let mut accepted = false;
        while step > 1e-12 {
            let trial = axpy(&w, -step, &g);
            let e_t = obj.value(&trial);
            if e_t.is_finite() && e_t <= e - 1e-4 * step * g2 {
                w = trial;
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        if !accepted {
            break;
        }
        let (e_new, g_new) = obj.eval(&w);
        e = e_new;
        g = g_new;
        history.push(e);
        step *= 2.0;
    }
    Ok((w, epochs, history))
}

/// Classifies a raw feature vector.
pub fn predict_mlp(model: &MlpModel, x: &[f64], standardizer: &Standardizer) -> Result<MlpPrediction> {
    if x.len() != model.n_in {
        return Err(Error::DimensionMismatch {
            expected: model.n_in,
            got: x.len(),
        });
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("prediction input".into()));
    }
    let z = standardizer.transform(x)?;
    Ok(MlpPrediction::from_score(model.forward(&z)))
}
