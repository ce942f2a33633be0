//! Exact t-SNE for desk-scale point sets (vocabulary embeddings).
//!
//! Gaussian affinities with per-point perplexity calibration by binary
//! search; Student-t low-dimensional kernel. Optimization runs an early
//! exaggeration phase with momentum, then plain gradient descent with
//! backtracking line search, which makes the KL objective non-increasing
//! over the post-exaggeration phase.

use super::EvalError;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TsneConfig {
    pub perplexity: f64,
    pub iterations: usize,
    /// Iterations of the early exaggeration phase.
    pub exaggeration_len: usize,
    pub exaggeration_factor: f64,
    pub learning_rate: f64,
    pub seed: u64,
}

impl Default for TsneConfig {
    fn default() -> Self {
        Self {
            perplexity: 5.0,
            iterations: 1000,
            exaggeration_len: 250,
            exaggeration_factor: 4.0,
            learning_rate: 100.0,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TsneResult {
    /// One (x, y) row per input vector.
    pub coords: Vec<(f64, f64)>,
    /// KL divergence after every iteration.
    pub kl_trace: Vec<f64>,
    pub exaggeration_len: usize,
}

pub fn tsne_project(vectors: &[Vec<f64>], config: &TsneConfig) -> Result<TsneResult, EvalError> {
    let n = vectors.len();
    if n < 2 {
        return Err(EvalError::DegenerateInput(
            "need at least two points".into(),
        ));
    }
    if config.perplexity >= n as f64 {
        return Err(EvalError::InvalidConfig(format!(
            "perplexity {} must be below the point count {n}",
            config.perplexity
        )));
    }
    let dim = vectors[0].len();
    if vectors.iter().any(|v| v.len() != dim) {
        return Err(EvalError::InvalidConfig(
            "vectors must share one dimension".into(),
        ));
    }
    let all_identical = vectors.iter().all(|v| v == &vectors[0]);
    if all_identical {
        return Err(EvalError::DegenerateInput(
            "all input vectors are identical".into(),
        ));
    }

    let d2 = pairwise_sq_distances(vectors);
    let p = joint_affinities(&d2, n, config.perplexity);

    let mut rng = ChaCha12Rng::seed_from_u64(config.seed);
    let normal = Normal::new(0.0, 1e-4).expect("valid std");
    let mut y: Vec<f64> = (0..n * 2).map(|_| normal.sample(&mut rng)).collect();
    let mut kl_trace = Vec::with_capacity(config.iterations);

    let exaggerated: Vec<f64> = p.iter().map(|v| v * config.exaggeration_factor).collect();
    let exag_end = config.exaggeration_len.min(config.iterations);

    // Backtracking gradient descent throughout: the trial step halves until
    // the phase objective decreases, which keeps the tiny point sets of
    // vocabulary embeddings stable at any learning rate and makes the true
    // KL non-increasing over the post-exaggeration phase.
    let mut objective = kl_of(&exaggerated, &y, n);
    for iter in 0..config.iterations {
        let p_phase: &[f64] = if iter < exag_end { &exaggerated } else { &p };
        if iter == exag_end {
            objective = kl_of(&p, &y, n);
        }
        let (grad, _) = gradient_and_kl(p_phase, &y, n);
        let mut step = config.learning_rate;
        loop {
            let trial: Vec<f64> = y
                .iter()
                .zip(&grad)
                .map(|(yi, gi)| yi - step * gi)
                .collect();
            let trial_obj = kl_of(p_phase, &trial, n);
            if trial_obj <= objective || step < 1e-12 {
                y = trial;
                objective = trial_obj;
                break;
            }
            step *= 0.5;
        }
        kl_trace.push(if iter < exag_end {
            kl_of(&p, &y, n)
        } else {
            objective
        });
    }

    let coords = (0..n).map(|i| (y[2 * i], y[2 * i + 1])).collect();
    Ok(TsneResult {
        coords,
        kl_trace,
        exaggeration_len: exag_end,
    })
}

fn pairwise_sq_distances(vectors: &[Vec<f64>]) -> Vec<f64> {
    let n = vectors.len();
    let mut d2 = vec![0.0; n * n];
    for i in 0..n {
        for j in i + 1..n {
            let d: f64 = vectors[i]
                .iter()
                .zip(&vectors[j])
                .map(|(a, b)| (a - b) * (a - b))
                .sum();
            d2[i * n + j] = d;
            d2[j * n + i] = d;
        }
    }
    d2
}

/// Conditional affinities with per-row perplexity calibration, symmetrized
/// to the joint distribution P.
fn joint_affinities(d2: &[f64], n: usize, perplexity: f64) -> Vec<f64> {
    let target_entropy = perplexity.ln();
    let mut p_cond = vec![0.0; n * n];
    for i in 0..n {
        let mut beta = 1.0;
        let (mut beta_min, mut beta_max) = (f64::NEG_INFINITY, f64::INFINITY);
        for _ in 0..64 {
            let mut sum = 0.0;
            for j in 0..n {
                let v = if i == j {
                    0.0
                } else {
                    (-beta * d2[i * n + j]).exp()
                };
                p_cond[i * n + j] = v;
                sum += v;
            }
            let mut entropy = 0.0;
            if sum > 0.0 {
                for j in 0..n {
                    let pj = p_cond[i * n + j] / sum;
                    p_cond[i * n + j] = pj;
                    if pj > 1e-12 {
                        entropy -= pj * pj.ln();
                    }
                }
            }
            let diff = entropy - target_entropy;
            if diff.abs() < 1e-7 {
                break;
            }
            if diff > 0.0 {
                beta_min = beta;
                beta = if beta_max.is_infinite() {
                    beta * 2.0
                } else {
                    (beta + beta_max) / 2.0
                };
            } else {
                beta_max = beta;
                beta = if beta_min.is_infinite() {
                    beta / 2.0
                } else {
                    (beta + beta_min) / 2.0
                };
            }
        }
    }
    let mut p = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            p[i * n + j] = ((p_cond[i * n + j] + p_cond[j * n + i]) / (2.0 * n as f64)).max(1e-12);
        }
    }
    for i in 0..n {
        p[i * n + i] = 1e-12;
    }
    p
}

/// Student-t kernel weights (unnormalized) and their sum.
fn q_weights(y: &[f64], n: usize) -> (Vec<f64>, f64) {
    let mut w = vec![0.0; n * n];
    let mut sum = 0.0;
    for i in 0..n {
        for j in i + 1..n {
            let dx = y[2 * i] - y[2 * j];
            let dy = y[2 * i + 1] - y[2 * j + 1];
            let v = 1.0 / (1.0 + dx * dx + dy * dy);
            w[i * n + j] = v;
            w[j * n + i] = v;
            sum += 2.0 * v;
        }
    }
    (w, sum)
}

fn gradient_and_kl(p: &[f64], y: &[f64], n: usize) -> (Vec<f64>, f64) {
    let (w, sum) = q_weights(y, n);
    let mut grad = vec![0.0; n * 2];
    let mut kl = 0.0;
    for i in 0..n {
        for j in 0..n {
            if i == j {
                continue;
            }
            let pij = p[i * n + j];
            let qij = (w[i * n + j] / sum).max(1e-12);
            kl += pij * (pij / qij).ln();
            let mult = 4.0 * (pij - qij) * w[i * n + j];
            grad[2 * i] += mult * (y[2 * i] - y[2 * j]);
            grad[2 * i + 1] += mult * (y[2 * i + 1] - y[2 * j + 1]);
        }
    }
    (grad, kl / 2.0)
}

fn kl_of(p: &[f64], y: &[f64], n: usize) -> f64 {
    let (w, sum) = q_weights(y, n);
    let mut kl = 0.0;
    for i in 0..n {
        for j in 0..n {
            if i == j {
                continue;
            }
            let pij = p[i * n + j];
            let qij = (w[i * n + j] / sum).max(1e-12);
            kl += pij * (pij / qij).ln();
        }
    }
    kl / 2.0
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cluster_data() -> Vec<Vec<f64>> {
        let mut v = Vec::new();
        for i in 0..6 {
            let base = if i < 3 { 0.0 } else { 20.0 };
            v.push(vec![base + i as f64, base - 1.5 * i as f64, 0.5]);
        }
        v
    }

    #[test]
    fn shape_and_determinism() {
        let cfg = TsneConfig {
            iterations: 120,
            exaggeration_len: 40,
            perplexity: 2.0,
            ..TsneConfig::default()
        };
        let data = cluster_data();
        let a = tsne_project(&data, &cfg).unwrap();
        assert_eq!(a.coords.len(), data.len());
        assert!(a.coords.iter().all(|(x, y)| x.is_finite() && y.is_finite()));
        let b = tsne_project(&data, &cfg).unwrap();
        assert_eq!(a, b);
        let c = tsne_project(
            &data,
            &TsneConfig {
                seed: 1,
                ..cfg.clone()
            },
        )
        .unwrap();
        assert_ne!(a.coords, c.coords);
    }

    #[test]
    fn kl_non_increasing_after_exaggeration() {
        let cfg = TsneConfig {
            iterations: 200,
            exaggeration_len: 50,
            perplexity: 2.0,
            ..TsneConfig::default()
        };
        let r = tsne_project(&cluster_data(), &cfg).unwrap();
        for w in r.kl_trace[r.exaggeration_len..].windows(2) {
            assert!(
                w[1] <= w[0] + 1e-6,
                "KL increased post-exaggeration: {} -> {}",
                w[0],
                w[1]
            );
        }
    }

    #[test]
    fn duplicate_points_land_together() {
        // Twelve well-separated points plus an exact duplicate of point 0;
        // at vocabulary-like scale the duplicate pair collapses.
        let mut data: Vec<Vec<f64>> = (0..12)
            .map(|i| {
                let a = i as f64 * 10.0;
                vec![a * 0.7, (i * i) as f64 % 17.0 * 3.0, a * 0.2]
            })
            .collect();
        data.push(data[0].clone());
        let cfg = TsneConfig {
            iterations: 1200,
            exaggeration_len: 250,
            perplexity: 3.0,
            ..TsneConfig::default()
        };
        let r = tsne_project(&data, &cfg).unwrap();
        let span = r
            .coords
            .iter()
            .flat_map(|&(x, y)| [x, y])
            .fold(0.0f64, |acc, v| acc.max(v.abs()));
        let (x0, y0) = r.coords[0];
        let (xd, yd) = r.coords[12];
        let dist = ((x0 - xd).powi(2) + (y0 - yd).powi(2)).sqrt();
        assert!(
            dist < 1e-3 * span.max(1.0),
            "duplicates separated: {dist} vs span {span}"
        );
    }

    #[test]
    fn degenerate_inputs_rejected() {
        let cfg = TsneConfig::default();
        let same = vec![vec![1.0, 2.0]; 8];
        assert!(matches!(
            tsne_project(&same, &cfg),
            Err(EvalError::DegenerateInput(_))
        ));
        let too_few = vec![vec![1.0]];
        assert!(tsne_project(&too_few, &cfg).is_err());
        let bad_perp = TsneConfig {
            perplexity: 10.0,
            ..cfg
        };
        assert!(tsne_project(&cluster_data(), &bad_perp).is_err());
    }
}
