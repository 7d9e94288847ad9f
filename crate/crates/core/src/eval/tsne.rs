//! Exact t-SNE: quadratic pairwise affinities, perplexity-calibrated Gaussian
//! kernels, Student-t low-dimensional kernel, gradient descent with momentum and
//! per-coordinate gains.

use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Result, SitError};
use crate::linalg::Matrix;
use crate::scalar::Scalar;
use crate::seeding::stream;

/// Largest input the quadratic implementation accepts.
pub const TSNE_MAX_POINTS: usize = 5000;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TsneConfig {
    pub perplexity: f64,
    pub iterations: usize,
    pub early_exaggeration: f64,
    pub exaggeration_iterations: usize,
    /// `None` picks `max(N / (4 * early_exaggeration), 50)`.
    pub learning_rate: Option<f64>,
    pub initial_momentum: f64,
    pub final_momentum: f64,
}

impl Default for TsneConfig {
    fn default() -> Self {
        TsneConfig {
            perplexity: 30.0,
            iterations: 1000,
            early_exaggeration: 12.0,
            exaggeration_iterations: 250,
            learning_rate: None,
            initial_momentum: 0.5,
            final_momentum: 0.8,
        }
    }
}

fn squared_distances(x: &Matrix<f64>) -> Vec<f64> {
    let n = x.rows();
    let mut d = vec![0.0; n * n];
    for i in 0..n {
        for j in (i + 1)..n {
            let s: f64 = x.row(i).iter().zip(x.row(j)).map(|(a, b)| (a - b) * (a - b)).sum();
            d[i * n + j] = s;
            d[j * n + i] = s;
        }
    }
    d
}

/// Row-conditional affinities `p_{j|i}` with each row's entropy matched to
/// `ln(perplexity)` by bisection on the kernel precision.
fn conditional_affinities(dist: &[f64], n: usize, perplexity: f64) -> Vec<f64> {
    let target = perplexity.ln();
    let mut p = vec![0.0; n * n];
    for i in 0..n {
        let row = &dist[i * n..(i + 1) * n];
        let (mut beta, mut lo, mut hi) = (1.0f64, f64::NEG_INFINITY, f64::INFINITY);
        // distances relative to the nearest neighbour keep exp() away from underflow
        let min_d = row
            .iter()
            .enumerate()
            .filter(|&(j, _)| j != i)
            .map(|(_, &v)| v)
            .fold(f64::INFINITY, f64::min);
        for _ in 0..100 {
            let mut sum = 0.0;
            let mut weighted = 0.0;
            for (j, &dj) in row.iter().enumerate() {
                if j == i {
                    continue;
                }
                let w = (-(dj - min_d) * beta).exp();
                sum += w;
                weighted += w * (dj - min_d);
            }
            let entropy = sum.ln() + beta * weighted / sum;
            let diff = entropy - target;
            if diff.abs() < 1e-5 {
                break;
            }
            if diff > 0.0 {
                lo = beta;
                beta = if hi.is_finite() { (beta + hi) / 2.0 } else { beta * 2.0 };
            } else {
                hi = beta;
                beta = if lo.is_finite() { (beta + lo) / 2.0 } else { beta / 2.0 };
            }
        }
        let mut sum = 0.0;
        for j in 0..n {
            if j != i {
                let w = (-(row[j] - min_d) * beta).exp();
                p[i * n + j] = w;
                sum += w;
            }
        }
        for j in 0..n {
            p[i * n + j] /= sum;
        }
    }
    p
}

/// Embeds the rows of `data` in two dimensions. Deterministic given `seed`.
pub fn tsne<T: Scalar>(data: &Matrix<T>, config: &TsneConfig, seed: u64) -> Result<Matrix<f64>> {
    let n = data.rows();
    if n < 3 {
        return Err(SitError::arg(format!("t-SNE needs at least 3 points, got {n}")));
    }
    if n > TSNE_MAX_POINTS {
        return Err(SitError::arg(format!(
            "exact t-SNE is limited to {TSNE_MAX_POINTS} points, got {n}; subsample the input first"
        )));
    }
    if !(config.perplexity > 0.0) {
        return Err(SitError::config("tsne.perplexity", "must be > 0"));
    }
    let max_perplexity = (n as f64 - 1.0) / 3.0;
    let perplexity = if config.perplexity > max_perplexity {
        log::warn!(
            "perplexity {} too large for {n} points; using {max_perplexity:.2}",
            config.perplexity
        );
        max_perplexity
    } else {
        config.perplexity
    };

    let learning_rate = config
        .learning_rate
        .unwrap_or_else(|| (n as f64 / (4.0 * config.early_exaggeration)).max(50.0));
    if !(learning_rate > 0.0) {
        return Err(SitError::config("tsne.learning_rate", "must be > 0"));
    }

    let x: Matrix<f64> = data.cast();
    let cond = conditional_affinities(&squared_distances(&x), n, perplexity);
    let mut p = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            p[i * n + j] = ((cond[i * n + j] + cond[j * n + i]) / (2.0 * n as f64)).max(1e-12);
        }
    }

    let mut rng = stream(seed, "tsne-init", 0);
    let mut y: Vec<f64> = (0..2 * n)
        .map(|_| 1e-4 * Distribution::<f64>::sample(&StandardNormal, &mut rng))
        .collect();
    let mut velocity = vec![0.0; 2 * n];
    let mut gains = vec![1.0f64; 2 * n];
    let mut num = vec![0.0; n * n];
    let mut grad = vec![0.0; 2 * n];

    for it in 0..config.iterations {
        let exaggeration = if it < config.exaggeration_iterations {
            config.early_exaggeration
        } else {
            1.0
        };
        let momentum = if it < config.exaggeration_iterations {
            config.initial_momentum
        } else {
            config.final_momentum
        };

        let mut z = 0.0;
        for i in 0..n {
            for j in (i + 1)..n {
                let dx = y[2 * i] - y[2 * j];
                let dy = y[2 * i + 1] - y[2 * j + 1];
                let q = 1.0 / (1.0 + dx * dx + dy * dy);
                num[i * n + j] = q;
                num[j * n + i] = q;
                z += 2.0 * q;
            }
        }
        for i in 0..n {
            let (mut gx, mut gy) = (0.0, 0.0);
            for j in 0..n {
                if i == j {
                    continue;
                }
                let q = num[i * n + j];
                let mult = (exaggeration * p[i * n + j] - q / z) * q;
                gx += mult * (y[2 * i] - y[2 * j]);
                gy += mult * (y[2 * i + 1] - y[2 * j + 1]);
            }
            grad[2 * i] = 4.0 * gx;
            grad[2 * i + 1] = 4.0 * gy;
        }
        for k in 0..2 * n {
            gains[k] = if (grad[k] > 0.0) != (velocity[k] > 0.0) {
                gains[k] + 0.2
            } else {
                gains[k] * 0.8
            };
            gains[k] = gains[k].max(0.01);
            velocity[k] = momentum * velocity[k] - learning_rate * gains[k] * grad[k];
            y[k] += velocity[k];
        }
        let (mx, my) = (0..n).fold((0.0, 0.0), |(a, b), i| (a + y[2 * i], b + y[2 * i + 1]));
        for i in 0..n {
            y[2 * i] -= mx / n as f64;
            y[2 * i + 1] -= my / n as f64;
        }
    }
    if y.iter().any(|v| !v.is_finite()) {
        return Err(SitError::Numeric("t-SNE produced non-finite coordinates".into()));
    }
    Matrix::from_vec(n, 2, y)
}

/// KL(P‖Q) of an embedding, for diagnostics and tests.
pub fn kl_divergence<T: Scalar>(data: &Matrix<T>, embedding: &Matrix<f64>, perplexity: f64) -> f64 {
    let n = data.rows();
    let x: Matrix<f64> = data.cast();
    let cond = conditional_affinities(&squared_distances(&x), n, perplexity.min((n as f64 - 1.0) / 3.0));
    let yd = squared_distances(embedding);
    let z: f64 = (0..n * n).filter(|k| k / n != k % n).map(|k| 1.0 / (1.0 + yd[k])).sum();
    let mut kl = 0.0;
    for i in 0..n {
        for j in 0..n {
            if i == j {
                continue;
            }
            let pij = ((cond[i * n + j] + cond[j * n + i]) / (2.0 * n as f64)).max(1e-12);
            let qij = (1.0 / (1.0 + yd[i * n + j]) / z).max(1e-12);
            kl += pij * (pij / qij).ln();
        }
    }
    kl
}
