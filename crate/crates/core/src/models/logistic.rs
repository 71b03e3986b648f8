use serde::{Deserialize, Serialize};

use super::ScoringModel;
use crate::data::{FeatureMatrix, Label};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LogisticParams {
    pub max_iterations: usize,
    /// Stop once every component of the mean log-likelihood gradient is
    /// below this.
    pub tolerance: f64,
}

impl Default for LogisticParams {
    fn default() -> Self {
        Self {
            max_iterations: 500,
            tolerance: 1e-8,
        }
    }
}

/// Unpenalised logistic regression; weights are on the original feature
/// scale.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogisticRegressionModel {
    pub weights: Vec<f64>,
    pub bias: f64,
    pub iterations: usize,
    pub converged: bool,
}

pub(crate) fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

impl ScoringModel for LogisticRegressionModel {
    fn n_features(&self) -> usize {
        self.weights.len()
    }

    fn score(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.weights.len() {
            return Err(Error::DimensionMismatch {
                expected: self.weights.len(),
                got: x.len(),
            });
        }
        let z = self.bias + x.iter().zip(&self.weights).map(|(a, b)| a * b).sum::<f64>();
        // Keep scores strictly inside (0, 1).
        Ok(sigmoid(z).clamp(f64::EPSILON, 1.0 - f64::EPSILON))
    }
}

/// Maximum-likelihood fit by Newton's method with step halving, on
/// internally standardised features.
pub fn fit_logistic(
    features: &FeatureMatrix,
    labels: &[Label],
    params: LogisticParams,
) -> Result<LogisticRegressionModel> {
    let n = labels.len();
    if n == 0 {
        return Err(Error::EmptyInput("logistic regression training set"));
    }
    if features.n_rows() != n {
        return Err(Error::Validation(format!(
            "{} rows but {n} labels",
            features.n_rows()
        )));
    }
    if !features.all_finite() {
        return Err(Error::Validation("non-finite feature value".into()));
    }
    let d = features.n_cols();
    let nf = n as f64;

    let mut mean = vec![0.0; d];
    let mut sd = vec![0.0; d];
    for row in features.rows() {
        for j in 0..d {
            mean[j] += row[j] / nf;
        }
    }
    for row in features.rows() {
        for j in 0..d {
            sd[j] += (row[j] - mean[j]).powi(2) / nf;
        }
    }
    for s in &mut sd {
        *s = if *s > 0.0 { s.sqrt() } else { 1.0 };
    }
    // Design matrix with a leading intercept column.
    let p = d + 1;
    let design: Vec<f64> = features
        .rows()
        .flat_map(|row| {
            std::iter::once(1.0).chain(
                (0..d)
                    .map(|j| (row[j] - mean[j]) / sd[j])
                    .collect::<Vec<_>>(),
            )
        })
        .collect();
    let y: Vec<f64> = labels.iter().map(|&v| f64::from(v)).collect();

    let log_lik = |beta: &[f64]| -> f64 {
        design
            .chunks_exact(p)
            .zip(&y)
            .map(|(x, &yi)| {
                let z: f64 = x.iter().zip(beta).map(|(a, b)| a * b).sum();
                // log(1 + e^z), stably
                let softplus = if z > 0.0 {
                    z + (-z).exp().ln_1p()
                } else {
                    z.exp().ln_1p()
                };
                yi * z - softplus
            })
            .sum::<f64>()
            / nf
    };

    let mut beta = vec![0.0; p];
    let mut current = log_lik(&beta);
    let mut iterations = 0;
    let mut converged = false;
    while iterations < params.max_iterations {
        let mut grad = vec![0.0; p];
        let mut hess = vec![0.0; p * p];
        for (x, &yi) in design.chunks_exact(p).zip(&y) {
            let z: f64 = x.iter().zip(&beta).map(|(a, b)| a * b).sum();
            let mu = sigmoid(z);
            let w = mu * (1.0 - mu);
            for a in 0..p {
                grad[a] += (yi - mu) * x[a] / nf;
                for b in 0..=a {
                    hess[a * p + b] += w * x[a] * x[b] / nf;
                }
            }
        }
        if grad.iter().all(|g| g.abs() <= params.tolerance) {
            converged = true;
            break;
        }
        iterations += 1;
        for a in 0..p {
            for b in 0..a {
                hess[b * p + a] = hess[a * p + b];
            }
            hess[a * p + a] += 1e-10;
        }
        let step = solve_spd(&hess, &grad, p).unwrap_or_else(|| grad.clone());
        let mut scale = 1.0;
        loop {
            let trial: Vec<f64> = beta.iter().zip(&step).map(|(b, s)| b + scale * s).collect();
            let value = log_lik(&trial);
            if value >= current || scale < 1e-10 {
                beta = trial;
                current = value;
                break;
            }
            scale *= 0.5;
        }
    }

    let weights: Vec<f64> = (0..d).map(|j| beta[j + 1] / sd[j]).collect();
    let bias = beta[0] - (0..d).map(|j| beta[j + 1] * mean[j] / sd[j]).sum::<f64>();
    Ok(LogisticRegressionModel {
        weights,
        bias,
        iterations,
        converged,
    })
}

/// Cholesky solve of `a x = b` for a symmetric positive-definite `a`.
fn solve_spd(a: &[f64], b: &[f64], n: usize) -> Option<Vec<f64>> {
    let mut l = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..=i {
            let mut s = a[i * n + j];
            for k in 0..j {
                s -= l[i * n + k] * l[j * n + k];
            }
            if i == j {
                if s <= 0.0 {
                    return None;
                }
                l[i * n + i] = s.sqrt();
            } else {
                l[i * n + j] = s / l[j * n + j];
            }
        }
    }
    let mut z = vec![0.0; n];
    for i in 0..n {
        let s: f64 = (0..i).map(|k| l[i * n + k] * z[k]).sum();
        z[i] = (b[i] - s) / l[i * n + i];
    }
    let mut x = vec![0.0; n];
    for i in (0..n).rev() {
        let s: f64 = (i + 1..n).map(|k| l[k * n + i] * x[k]).sum();
        x[i] = (z[i] - s) / l[i * n + i];
    }
    Some(x)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn symmetric_data_has_zero_bias() {
        let x = FeatureMatrix::from_column(&[-1.0, 1.0, -1.0, 1.0, -2.0, 2.0]);
        let m = fit_logistic(&x, &[0, 1, 1, 0, 0, 1], LogisticParams::default()).unwrap();
        assert!(m.bias.abs() < 1e-9, "bias {}", m.bias);
        assert!(m.converged);
    }

    #[test]
    fn two_point_separable_data_keeps_bias_at_zero() {
        let x = FeatureMatrix::from_column(&[-1.0, 1.0]);
        let m = fit_logistic(&x, &[0, 1], LogisticParams::default()).unwrap();
        assert!(m.bias.abs() < 1e-9);
        assert!(m.weights[0] > 0.0);
        assert!(m.iterations <= 500);
    }

    #[test]
    fn all_negative_labels() {
        let x = FeatureMatrix::from_column(&[0.0, 1.0, 2.0, 3.0]);
        let m = fit_logistic(&x, &[0, 0, 0, 0], LogisticParams::default()).unwrap();
        assert!(m.weights[0].abs() < 1e-6);
        assert!(m.bias < -10.0);
        for v in [-5.0, 0.0, 10.0] {
            let s = m.score(&[v]).unwrap();
            assert!(s < 0.5 && s > 0.0);
        }
    }

    #[test]
    fn recovers_known_coefficients() {
        // Deterministic grid where the empirical log-odds are exactly 0.5 + 1.5 x.
        let mut xs = Vec::new();
        let mut ys = Vec::new();
        for &v in &[-1.0, 0.0, 1.0] {
            let p = sigmoid(0.5 + 1.5 * v);
            let pos = (p * 1000.0).round() as usize;
            for i in 0..1000 {
                xs.push(v);
                ys.push(u8::from(i < pos));
            }
        }
        let m = fit_logistic(
            &FeatureMatrix::from_column(&xs),
            &ys,
            LogisticParams::default(),
        )
        .unwrap();
        assert!((m.weights[0] - 1.5).abs() < 0.01, "{:?}", m);
        assert!((m.bias - 0.5).abs() < 0.01);
    }

    #[test]
    fn rejects_non_finite() {
        let x = FeatureMatrix::from_column(&[0.0, f64::NAN]);
        assert!(fit_logistic(&x, &[0, 1], LogisticParams::default()).is_err());
    }
}
