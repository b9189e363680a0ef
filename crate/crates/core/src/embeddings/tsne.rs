use rand_distr::{Distribution, Normal};

use super::DistanceMatrix;
use crate::error::{Error, Result};
use crate::kv::KeyValues;
use crate::rng;

#[derive(Clone, Debug, PartialEq)]
pub struct TsneConfig {
    pub perplexity: f64,
    pub iterations: usize,
    pub learning_rate: f64,
    pub early_exaggeration: f64,
    pub exaggeration_iterations: usize,
    pub momentum: f64,
    pub final_momentum: f64,
    pub seed: u64,
}

impl Default for TsneConfig {
    fn default() -> Self {
        TsneConfig {
            perplexity: 30.0,
            iterations: 1000,
            learning_rate: 200.0,
            early_exaggeration: 12.0,
            exaggeration_iterations: 250,
            momentum: 0.5,
            final_momentum: 0.8,
            seed: 0,
        }
    }
}

impl TsneConfig {
    pub fn with_kv(&self, kv: &KeyValues) -> Result<Self> {
        Ok(TsneConfig {
            perplexity: kv.get_or("tsne_perplexity", self.perplexity)?,
            iterations: kv.get_or("tsne_iterations", self.iterations)?,
            learning_rate: kv.get_or("tsne_learning_rate", self.learning_rate)?,
            early_exaggeration: kv.get_or("tsne_early_exaggeration", self.early_exaggeration)?,
            exaggeration_iterations: kv.get_or("tsne_exaggeration_iterations", self.exaggeration_iterations)?,
            ..self.clone()
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TsneResult {
    pub coords: Vec<[f64; 2]>,
    /// `kl[t]` is KL(P‖Q) after `t` iterations, measured against the
    /// unexaggerated P.
    pub kl: Vec<f64>,
}

const BANDWIDTH_STEPS: usize = 64;
const ENTROPY_TOL: f64 = 1e-5;
const P_FLOOR: f64 = 1e-12;
const MIN_GAIN: f64 = 0.01;

/// Row-conditional affinities `p_{j|i} ∝ exp(−β_i d_ij)` with `β_i` found by
/// bisection so that each row's entropy is `ln(perplexity)`.
fn conditional_affinities(d: &DistanceMatrix, perplexity: f64) -> Vec<f64> {
    let n = d.len();
    let target = perplexity.ln();
    let mut p = vec![0.0; n * n];
    for i in 0..n {
        let (mut beta, mut lo, mut hi) = (1.0, 0.0, f64::INFINITY);
        let d_min = (0..n).filter(|&j| j != i).map(|j| d.get(i, j)).fold(f64::INFINITY, f64::min);
        for _ in 0..BANDWIDTH_STEPS {
            let mut sum = 0.0;
            let mut weighted = 0.0;
            for j in (0..n).filter(|&j| j != i) {
                // Shift by the nearest distance so the largest weight is 1.
                let w = (-beta * (d.get(i, j) - d_min)).exp();
                p[i * n + j] = w;
                sum += w;
                weighted += w * (d.get(i, j) - d_min);
            }
            let entropy = sum.ln() + beta * weighted / sum;
            for j in 0..n {
                p[i * n + j] /= sum;
            }
            let diff = entropy - target;
            if diff.abs() < ENTROPY_TOL {
                break;
            }
            if diff > 0.0 {
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

/// Exact t-SNE on a precomputed distance matrix.
pub fn tsne(d: &DistanceMatrix, cfg: &TsneConfig) -> Result<TsneResult> {
    let n = d.len();
    if n < 4 {
        return Err(Error::InsufficientData(format!("t-SNE needs at least 4 points, got {n}")));
    }
    let perplexity = cfg.perplexity.min((n - 1) as f64 / 3.0);
    let cond = conditional_affinities(d, perplexity);
    let mut p = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            if i != j {
                p[i * n + j] = ((cond[i * n + j] + cond[j * n + i]) / (2.0 * n as f64)).max(P_FLOOR);
            }
        }
    }

    let mut rng = rng::stream(cfg.seed, rng::TSNE);
    let normal = Normal::new(0.0, 1e-4).expect("valid std");
    let mut y: Vec<f64> = (0..2 * n).map(|_| normal.sample(&mut rng)).collect();
    let mut update = vec![0.0; 2 * n];
    let mut gains = vec![1.0f64; 2 * n];
    let mut num = vec![0.0; n * n];
    let mut grad = vec![0.0; 2 * n];
    let mut kl = Vec::with_capacity(cfg.iterations + 1);

    for it in 0..=cfg.iterations {
        let mut z = 0.0;
        for i in 0..n {
            for j in i + 1..n {
                let dx = y[2 * i] - y[2 * j];
                let dy = y[2 * i + 1] - y[2 * j + 1];
                let q = 1.0 / (1.0 + dx * dx + dy * dy);
                num[i * n + j] = q;
                num[j * n + i] = q;
                z += 2.0 * q;
            }
        }
        let mut cost = 0.0;
        for i in 0..n {
            for j in (0..n).filter(|&j| j != i) {
                let pij = p[i * n + j];
                cost += pij * (pij / (num[i * n + j] / z).max(P_FLOOR)).ln();
            }
        }
        kl.push(cost);
        if it == cfg.iterations {
            break;
        }

        let exaggeration = if it < cfg.exaggeration_iterations { cfg.early_exaggeration } else { 1.0 };
        grad.iter_mut().for_each(|g| *g = 0.0);
        for i in 0..n {
            for j in (0..n).filter(|&j| j != i) {
                let w = num[i * n + j];
                let coef = 4.0 * (exaggeration * p[i * n + j] - w / z) * w;
                grad[2 * i] += coef * (y[2 * i] - y[2 * j]);
                grad[2 * i + 1] += coef * (y[2 * i + 1] - y[2 * j + 1]);
            }
        }
        let momentum = if it < cfg.exaggeration_iterations { cfg.momentum } else { cfg.final_momentum };
        for k in 0..2 * n {
            gains[k] = if (grad[k] > 0.0) != (update[k] > 0.0) {
                gains[k] + 0.2
            } else {
                (gains[k] * 0.8f64).max(MIN_GAIN)
            };
            update[k] = momentum * update[k] - cfg.learning_rate * gains[k] * grad[k];
            y[k] += update[k];
        }
        for axis in 0..2 {
            let mean = (0..n).map(|i| y[2 * i + axis]).sum::<f64>() / n as f64;
            (0..n).for_each(|i| y[2 * i + axis] -= mean);
        }
    }
    Ok(TsneResult {
        coords: y.chunks(2).map(|c| [c[0], c[1]]).collect(),
        kl,
    })
}
