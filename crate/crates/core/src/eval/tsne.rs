//! Exact t-SNE (no Barnes–Hut approximation) for 2-D embedding plots.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Matrix;

/// Entropy tolerance of the per-point bandwidth search (nats).
pub const ENTROPY_TOL: f64 = 1e-5;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TsneConfig {
    pub perplexity: f64,
    pub iterations: usize,
    pub learning_rate: f64,
    pub early_exaggeration: f64,
    /// Iterations with exaggerated P; momentum also switches here.
    pub exaggeration_iters: usize,
    pub initial_momentum: f64,
    pub final_momentum: f64,
    /// Largest number of rows projected per figure (stratified by label).
    pub max_points: usize,
}

impl Default for TsneConfig {
    fn default() -> Self {
        Self {
            perplexity: 30.0,
            iterations: 1000,
            learning_rate: 200.0,
            early_exaggeration: 12.0,
            exaggeration_iters: 250,
            initial_momentum: 0.5,
            final_momentum: 0.8,
            max_points: 2000,
        }
    }
}

impl TsneConfig {
    pub fn validate(&self) -> Vec<String> {
        let mut errs = Vec::new();
        if !(self.perplexity > 0.0) {
            errs.push(format!("tsne.perplexity: {} must be positive", self.perplexity));
        }
        if !(self.learning_rate > 0.0) {
            errs.push(format!("tsne.learning_rate: {} must be positive", self.learning_rate));
        }
        if !(self.early_exaggeration >= 1.0) {
            errs.push(format!(
                "tsne.early_exaggeration: {} must be at least 1",
                self.early_exaggeration
            ));
        }
        if self.max_points < 4 {
            errs.push("tsne.max_points: must be at least 4".into());
        }
        errs
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TsneResult {
    pub y: Matrix,
    pub kl_initial: f64,
    pub kl_final: f64,
}

fn squared_distances(x: &Matrix) -> Matrix {
    let n = x.rows();
    let mut d = Matrix::zeros(n, n);
    for i in 0..n {
        for j in i + 1..n {
            let v: f64 = x.row(i).iter().zip(x.row(j)).map(|(a, b)| (a - b) * (a - b)).sum();
            d.set(i, j, v);
            d.set(j, i, v);
        }
    }
    d
}

/// Row `i` of `exp(-beta d_ij)` normalised over `j != i`, with its entropy.
fn conditional_row(d: &[f64], i: usize, beta: f64, out: &mut [f64]) -> f64 {
    let min = d
        .iter()
        .enumerate()
        .filter(|&(j, _)| j != i)
        .map(|(_, &v)| v)
        .fold(f64::INFINITY, f64::min);
    let mut total = 0.0;
    for (j, (o, &v)) in out.iter_mut().zip(d).enumerate() {
        *o = if j == i { 0.0 } else { (-beta * (v - min)).exp() };
        total += *o;
    }
    let mut h = 0.0;
    for o in out.iter_mut() {
        *o /= total;
        if *o > 0.0 {
            h -= *o * o.ln();
        }
    }
    h
}

/// Conditional affinities `p_{j|i}` with each row's bandwidth chosen by
/// bisection so its entropy equals `ln(perplexity)`.
pub fn conditional_probabilities(x: &Matrix, perplexity: f64) -> Matrix {
    let n = x.rows();
    let d = squared_distances(x);
    let target = perplexity.ln();
    let mut p = Matrix::zeros(n, n);
    for i in 0..n {
        let (mut lo, mut hi) = (0.0, f64::INFINITY);
        let mut beta = 1.0;
        for _ in 0..200 {
            let h = conditional_row(d.row(i), i, beta, p.row_mut(i));
            if (h - target).abs() < ENTROPY_TOL {
                break;
            }
            if h > target {
                lo = beta;
                beta = if hi.is_finite() { (beta + hi) / 2.0 } else { beta * 2.0 };
            } else {
                hi = beta;
                beta = (beta + lo) / 2.0;
            }
        }
    }
    p
}

/// Symmetrised joint affinities `(P + Pᵀ) / 2n`.
pub fn joint_probabilities(x: &Matrix, perplexity: f64) -> Matrix {
    let n = x.rows();
    let c = conditional_probabilities(x, perplexity);
    Matrix::from_fn(n, n, |i, j| (c.get(i, j) + c.get(j, i)) / (2.0 * n as f64))
}

/// Student-t affinities of the low-dimensional points, and the unnormalised
/// kernel `1 / (1 + ‖y_i − y_j‖²)`.
pub fn student_t_affinities(y: &Matrix) -> (Matrix, Matrix) {
    let n = y.rows();
    let d = squared_distances(y);
    let kernel = Matrix::from_fn(n, n, |i, j| if i == j { 0.0 } else { 1.0 / (1.0 + d.get(i, j)) });
    let total: f64 = kernel.data().iter().sum();
    let q = Matrix::from_fn(n, n, |i, j| kernel.get(i, j) / total);
    (q, kernel)
}

pub fn kl_divergence(p: &Matrix, q: &Matrix) -> f64 {
    p.data()
        .iter()
        .zip(q.data())
        .filter(|(a, _)| **a > 0.0)
        .map(|(a, b)| a * (a / b.max(1e-300)).ln())
        .sum()
}

/// Projects the rows of `x` to two dimensions.
pub fn tsne_project(x: &Matrix, cfg: &TsneConfig, seed: u64) -> Result<TsneResult> {
    let n = x.rows();
    if n < 4 {
        return Err(Error::config(format!("t-SNE needs at least 4 points, got {n}")));
    }
    if !(cfg.perplexity > 0.0 && cfg.perplexity <= (n - 1) as f64) {
        return Err(Error::config(format!(
            "perplexity {} is infeasible for {n} points",
            cfg.perplexity
        )));
    }
    if cfg.perplexity > n as f64 / 3.0 {
        log::warn!("perplexity {} exceeds n/3 for {n} points", cfg.perplexity);
    }
    let p = joint_probabilities(x, cfg.perplexity);

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, 1e-2).expect("valid normal");
    let mut y = Matrix::from_fn(n, 2, |_, _| normal.sample(&mut rng));
    let mut update = Matrix::zeros(n, 2);
    let mut gains = Matrix::from_fn(n, 2, |_, _| 1.0);
    let kl_initial = kl_divergence(&p, &student_t_affinities(&y).0);

    for iter in 0..cfg.iterations {
        let exaggeration = if iter < cfg.exaggeration_iters { cfg.early_exaggeration } else { 1.0 };
        let momentum = if iter < cfg.exaggeration_iters { cfg.initial_momentum } else { cfg.final_momentum };
        let (q, kernel) = student_t_affinities(&y);
        for i in 0..n {
            let mut grad = [0.0; 2];
            for j in 0..n {
                let w = 4.0 * (exaggeration * p.get(i, j) - q.get(i, j)) * kernel.get(i, j);
                grad[0] += w * (y.get(i, 0) - y.get(j, 0));
                grad[1] += w * (y.get(i, 1) - y.get(j, 1));
            }
            for (k, g) in grad.iter().enumerate() {
                let u = update.get(i, k);
                let gain = if (*g > 0.0) != (u > 0.0) {
                    gains.get(i, k) + 0.2
                } else {
                    (gains.get(i, k) * 0.8).max(0.01)
                };
                gains.set(i, k, gain);
                update.set(i, k, momentum * u - cfg.learning_rate * gain * g);
            }
        }
        for i in 0..n {
            for k in 0..2 {
                y.set(i, k, y.get(i, k) + update.get(i, k));
            }
        }
        for k in 0..2 {
            let mean = y.column(k).iter().sum::<f64>() / n as f64;
            for i in 0..n {
                y.set(i, k, y.get(i, k) - mean);
            }
        }
    }
    let kl_final = kl_divergence(&p, &student_t_affinities(&y).0);
    Ok(TsneResult { y, kl_initial, kl_final })
}

/// Stacks per-patient embeddings with their labels, keeps at most
/// `cfg.max_points` rows (stratified by label) and projects them. Returns
/// the projection and the labels of the kept rows.
pub fn project_embeddings(embeddings: &[(&Matrix, &[i8])], cfg: &TsneConfig, seed: u64) -> Result<(TsneResult, Vec<i8>)> {
    let mut labels = Vec::new();
    let mut rows: Vec<&[f64]> = Vec::new();
    for (z, y) in embeddings {
        if z.rows() != y.len() {
            return Err(Error::dim("project_embeddings", format!("{} rows vs {} labels", z.rows(), y.len())));
        }
        rows.extend((0..z.rows()).map(|r| z.row(r)));
        labels.extend_from_slice(y);
    }
    let cols = embeddings.first().map_or(0, |(z, _)| z.cols());
    if rows.iter().any(|r| r.len() != cols) {
        return Err(Error::dim("project_embeddings", "embeddings differ in width"));
    }
    let keep = stratified_subsample(&labels, cfg.max_points, seed);
    let x = Matrix::from_fn(keep.len(), cols, |r, c| rows[keep[r]][c]);
    let kept: Vec<i8> = keep.iter().map(|&i| labels[i]).collect();
    Ok((tsne_project(&x, cfg, seed)?, kept))
}

/// At most `max` indices, allocated to each label in proportion to its
/// frequency, in ascending order.
pub fn stratified_subsample(labels: &[i8], max: usize, seed: u64) -> Vec<usize> {
    if labels.len() <= max {
        return (0..labels.len()).collect();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pos: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == 1).collect();
    let mut neg: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] != 1).collect();
    let take_pos = ((pos.len() as f64 / labels.len() as f64) * max as f64).round() as usize;
    let take_pos = take_pos.min(pos.len()).min(max);
    pos.shuffle(&mut rng);
    neg.shuffle(&mut rng);
    pos.truncate(take_pos);
    neg.truncate(max - take_pos);
    let mut out: Vec<usize> = pos.into_iter().chain(neg).collect();
    out.sort_unstable();
    out
}
