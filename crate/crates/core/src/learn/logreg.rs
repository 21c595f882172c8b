//! Binary logistic regression trained by mini-batch gradient descent,
//! minimizing mean log-loss plus (l2/2)·‖w‖².

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{LearnError, SparseVec};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogRegConfig {
    pub l2: f64,
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for LogRegConfig {
    fn default() -> Self {
        LogRegConfig {
            l2: 1e-4,
            learning_rate: 0.5,
            epochs: 60,
            batch_size: 32,
            seed: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LogisticModel {
    pub weights: Vec<f64>,
    pub bias: f64,
    pub l2: f64,
    pub config: LogRegConfig,
    pub initial_loss: f64,
    pub final_loss: f64,
}

impl LogisticModel {
    pub fn dim(&self) -> usize {
        self.weights.len()
    }

    pub fn predict_proba(&self, x: &SparseVec) -> Result<f64, LearnError> {
        predict_proba(self, x)
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

/// ln(1 + e^z) without overflow.
fn softplus(z: f64) -> f64 {
    z.max(0.0) + (-z.abs()).exp().ln_1p()
}

fn logit(weights: &[f64], bias: f64, x: &SparseVec) -> Result<f64, LearnError> {
    let mut z = bias;
    for &(idx, v) in x {
        let w = weights.get(idx).ok_or(LearnError::DimensionMismatch {
            index: idx,
            dim: weights.len(),
        })?;
        z += w * v;
    }
    Ok(z)
}

/// σ(w·x + b), stable for logits far beyond ±40.
pub fn predict_proba(model: &LogisticModel, x: &SparseVec) -> Result<f64, LearnError> {
    Ok(sigmoid(logit(&model.weights, model.bias, x)?))
}

/// Mean log-loss plus (l2/2)·‖w‖² over the dataset.
pub fn log_loss(weights: &[f64], bias: f64, x: &[SparseVec], y: &[bool], l2: f64) -> f64 {
    let n = x.len() as f64;
    let data: f64 = x
        .iter()
        .zip(y)
        .map(|(xi, &yi)| {
            let z = logit(weights, bias, xi).expect("consistent dimensions");
            softplus(z) - if yi { z } else { 0.0 }
        })
        .sum();
    let reg: f64 = 0.5 * l2 * weights.iter().map(|w| w * w).sum::<f64>();
    data / n + reg
}

/// Analytic gradient of `log_loss` in (weights, bias).
pub fn log_loss_gradient(
    weights: &[f64],
    bias: f64,
    x: &[SparseVec],
    y: &[bool],
    l2: f64,
) -> (Vec<f64>, f64) {
    let n = x.len() as f64;
    let mut grad_w = vec![0.0f64; weights.len()];
    let mut grad_b = 0.0f64;
    for (xi, &yi) in x.iter().zip(y) {
        let z = logit(weights, bias, xi).expect("consistent dimensions");
        let residual = sigmoid(z) - if yi { 1.0 } else { 0.0 };
        for &(idx, v) in xi {
            grad_w[idx] += residual * v;
        }
        grad_b += residual;
    }
    for (g, w) in grad_w.iter_mut().zip(weights) {
        *g = *g / n + l2 * w;
    }
    (grad_w, grad_b / n)
}

/// Trains by mini-batch gradient descent; deterministic given the seed.
/// Requires both classes; single-class data is rejected.
pub fn train_logreg(
    x: &[SparseVec],
    y: &[bool],
    dim: usize,
    config: &LogRegConfig,
) -> Result<LogisticModel, LearnError> {
    if x.len() != y.len() {
        return Err(LearnError::LengthMismatch {
            labels: y.len(),
            examples: x.len(),
        });
    }
    if x.len() < 2 {
        return Err(LearnError::TooFewExamples {
            need: 2,
            got: x.len(),
        });
    }
    if y.iter().all(|&l| l) || y.iter().all(|&l| !l) {
        return Err(LearnError::SingleClass);
    }
    for xi in x {
        if let Some(&(idx, _)) = xi.iter().find(|&&(idx, _)| idx >= dim) {
            return Err(LearnError::DimensionMismatch { index: idx, dim });
        }
    }

    let mut weights = vec![0.0f64; dim];
    let mut bias = 0.0f64;
    let initial_loss = log_loss(&weights, bias, x, y, config.l2);

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order: Vec<usize> = (0..x.len()).collect();
    let batch = config.batch_size.max(1);
    for _ in 0..config.epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(batch) {
            let m = chunk.len() as f64;
            let mut grad_b = 0.0f64;
            let mut updates: Vec<(usize, f64)> = Vec::new();
            for &i in chunk {
                let z = logit(&weights, bias, &x[i])?;
                let residual = sigmoid(z) - if y[i] { 1.0 } else { 0.0 };
                for &(idx, v) in &x[i] {
                    updates.push((idx, residual * v));
                }
                grad_b += residual;
            }
            let lr = config.learning_rate;
            // L2 shrinkage applied densely, data gradient sparsely.
            if config.l2 > 0.0 {
                let shrink = 1.0 - lr * config.l2;
                for w in &mut weights {
                    *w *= shrink;
                }
            }
            for (idx, g) in updates {
                weights[idx] -= lr * g / m;
            }
            bias -= lr * grad_b / m;
        }
    }
    let final_loss = log_loss(&weights, bias, x, y, config.l2);
    Ok(LogisticModel {
        weights,
        bias,
        l2: config.l2,
        config: *config,
        initial_loss,
        final_loss,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn sparse(values: &[f64]) -> SparseVec {
        super::super::dense_to_sparse(values)
    }

    #[test]
    fn separable_two_points() {
        let x = vec![sparse(&[1.0]), sparse(&[-1.0])];
        let y = vec![true, false];
        let model = train_logreg(&x, &y, 1, &LogRegConfig::default()).unwrap();
        assert!(model.predict_proba(&x[0]).unwrap() > 0.5);
        assert!(model.predict_proba(&x[1]).unwrap() < 0.5);
        assert!(model.final_loss <= model.initial_loss);
    }

    #[test]
    fn heavy_l2_pushes_weights_to_zero() {
        let x = vec![sparse(&[1.0]), sparse(&[-1.0]), sparse(&[0.9]), sparse(&[-0.8])];
        let y = vec![true, false, true, false];
        let strong = LogRegConfig {
            l2: 50.0,
            learning_rate: 0.01,
            epochs: 200,
            ..LogRegConfig::default()
        };
        let model = train_logreg(&x, &y, 1, &strong).unwrap();
        assert!(model.weights[0].abs() < 0.05, "w = {}", model.weights[0]);
        // Balanced classes: prediction falls back to the prior via the bias.
        let p = model.predict_proba(&sparse(&[0.0])).unwrap();
        assert!((p - 0.5).abs() < 0.1);
    }

    #[test]
    fn single_class_rejected() {
        let x = vec![sparse(&[1.0]), sparse(&[2.0])];
        assert!(matches!(
            train_logreg(&x, &[true, true], 1, &LogRegConfig::default()),
            Err(LearnError::SingleClass)
        ));
    }

    #[test]
    fn sigma_properties() {
        let zero = LogisticModel {
            weights: vec![0.0; 3],
            bias: 0.0,
            l2: 0.0,
            config: LogRegConfig::default(),
            initial_loss: 0.0,
            final_loss: 0.0,
        };
        assert_eq!(predict_proba(&zero, &sparse(&[1.0, 2.0, 3.0])).unwrap(), 0.5);

        let hot = LogisticModel {
            weights: vec![40.0],
            bias: 0.0,
            ..zero.clone()
        };
        let p = predict_proba(&hot, &sparse(&[1.0])).unwrap();
        assert!(p >= 1.0 - 1e-9 && p.is_finite());
        let p_neg = predict_proba(&hot, &sparse(&[-1.0])).unwrap();
        assert!((p + p_neg - 1.0).abs() < 1e-12 || p_neg < 1e-9);
        for z in [-5.0f64, -0.3, 0.0, 0.7, 12.0] {
            assert!((sigmoid(z) + sigmoid(-z) - 1.0).abs() < 1e-12);
        }
        // Extreme logits stay finite.
        let extreme = LogisticModel {
            weights: vec![1000.0],
            ..zero
        };
        assert!(predict_proba(&extreme, &sparse(&[1.0])).unwrap().is_finite());
    }

    #[test]
    fn dimension_mismatch_errors() {
        let model = LogisticModel {
            weights: vec![0.0; 2],
            bias: 0.0,
            l2: 0.0,
            config: LogRegConfig::default(),
            initial_loss: 0.0,
            final_loss: 0.0,
        };
        assert!(matches!(
            predict_proba(&model, &vec![(5, 1.0)]),
            Err(LearnError::DimensionMismatch { index: 5, dim: 2 })
        ));
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(33);
        for trial in 0..20 {
            let dim = rng.gen_range(2..=50);
            let n = rng.gen_range(4..=30);
            let x: Vec<SparseVec> = (0..n)
                .map(|_| {
                    let mut row: SparseVec = Vec::new();
                    for i in 0..dim {
                        if rng.gen_bool(0.6) {
                            row.push((i, rng.gen_range(-2.0..2.0)));
                        }
                    }
                    row
                })
                .collect();
            let y: Vec<bool> = (0..n).map(|_| rng.gen_bool(0.5)).collect();
            let weights: Vec<f64> = (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let bias: f64 = rng.gen_range(-1.0..1.0);
            let l2 = 0.1;

            let (grad_w, grad_b) = log_loss_gradient(&weights, bias, &x, &y, l2);
            let eps = 1e-5;
            let mut max_rel = 0.0f64;
            for d in 0..dim {
                let mut plus = weights.clone();
                plus[d] += eps;
                let mut minus = weights.clone();
                minus[d] -= eps;
                let numeric = (log_loss(&plus, bias, &x, &y, l2)
                    - log_loss(&minus, bias, &x, &y, l2))
                    / (2.0 * eps);
                let denom = numeric.abs().max(grad_w[d].abs()).max(1e-8);
                max_rel = max_rel.max((numeric - grad_w[d]).abs() / denom);
            }
            let numeric_b = (log_loss(&weights, bias + eps, &x, &y, l2)
                - log_loss(&weights, bias - eps, &x, &y, l2))
                / (2.0 * eps);
            let denom_b = numeric_b.abs().max(grad_b.abs()).max(1e-8);
            max_rel = max_rel.max((numeric_b - grad_b).abs() / denom_b);
            assert!(max_rel < 1e-4, "trial {trial}: max relative error {max_rel}");
        }
    }

    #[test]
    fn training_is_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x: Vec<SparseVec> = (0..40)
            .map(|_| sparse(&[rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)]))
            .collect();
        let y: Vec<bool> = x.iter().map(|v| v[0].1 + v[1].1 > 0.0).collect();
        let a = train_logreg(&x, &y, 2, &LogRegConfig::default()).unwrap();
        let b = train_logreg(&x, &y, 2, &LogRegConfig::default()).unwrap();
        assert_eq!(a.weights, b.weights);
        assert_eq!(a.bias, b.bias);
    }

    #[test]
    fn calibration_near_prior() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let x: Vec<SparseVec> = (0..200)
            .map(|_| sparse(&[rng.gen_range(-1.0..1.0)]))
            .collect();
        // 30% positive, weakly related to the feature.
        let y: Vec<bool> = x
            .iter()
            .map(|v| rng.gen_bool(if v[0].1 > 0.0 { 0.4 } else { 0.2 }))
            .collect();
        let prior = y.iter().filter(|&&l| l).count() as f64 / y.len() as f64;
        let model = train_logreg(&x, &y, 1, &LogRegConfig::default()).unwrap();
        let mean_p: f64 = x
            .iter()
            .map(|v| model.predict_proba(v).unwrap())
            .sum::<f64>()
            / x.len() as f64;
        assert!(
            (mean_p - prior).abs() < 0.15,
            "mean probability {mean_p} vs prior {prior}"
        );
    }
}
