use serde::{Deserialize, Serialize};

use crate::data::Label;
use crate::error::{Error, Result};

pub const PLATT_GRADIENT_TOLERANCE: f64 = 1e-8;
pub const PLATT_MAX_ITERATIONS: usize = 10_000;

/// Sigmoid `1 / (1 + exp(a*s + b))` fitted to smoothed targets.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlattFit {
    pub a: f64,
    pub b: f64,
    /// Target used for positives, `(n_pos + 1) / (n_pos + 2)`.
    pub target_pos: f64,
    /// Target used for negatives, `1 / (n_neg + 2)`.
    pub target_neg: f64,
    pub iterations: usize,
    pub gradient_norm: f64,
}

impl PlattFit {
    pub fn with_parameters(a: f64, b: f64) -> Self {
        Self {
            a,
            b,
            target_pos: f64::NAN,
            target_neg: f64::NAN,
            iterations: 0,
            gradient_norm: f64::NAN,
        }
    }

    pub fn predict(&self, s: f64) -> f64 {
        sigmoid_neg(self.a * s + self.b)
    }
}

/// `1 / (1 + exp(f))`, evaluated without overflow.
fn sigmoid_neg(f: f64) -> f64 {
    if f >= 0.0 {
        let e = (-f).exp();
        e / (1.0 + e)
    } else {
        1.0 / (1.0 + f.exp())
    }
}

fn softplus(f: f64) -> f64 {
    if f > 0.0 {
        f + (-f).exp().ln_1p()
    } else {
        f.exp().ln_1p()
    }
}

pub fn apply_platt(fit: &PlattFit, s: f64) -> f64 {
    fit.predict(s)
}

/// Cross-entropy of the sigmoid against the smoothed targets, written in
/// terms of `f = a*s + b`: `sum log(1 + e^f) - (1 - t) f`.
pub fn platt_loss(scores: &[f64], targets: &[f64], a: f64, b: f64) -> f64 {
    scores
        .iter()
        .zip(targets)
        .map(|(&s, &t)| {
            let f = a * s + b;
            softplus(f) - (1.0 - t) * f
        })
        .sum()
}

pub fn platt_targets(labels: &[Label]) -> (f64, f64, Vec<f64>) {
    let n_pos = labels.iter().filter(|&&y| y == 1).count() as f64;
    let n_neg = labels.len() as f64 - n_pos;
    let hi = (n_pos + 1.0) / (n_pos + 2.0);
    let lo = 1.0 / (n_neg + 2.0);
    let targets = labels
        .iter()
        .map(|&y| if y == 1 { hi } else { lo })
        .collect();
    (hi, lo, targets)
}

/// Newton's method with backtracking on the smoothed-target cross-entropy,
/// run until the gradient norm reaches the tolerance or the iteration cap.
pub fn fit_platt(scores: &[f64], labels: &[Label]) -> Result<PlattFit> {
    if scores.is_empty() {
        return Err(Error::EmptyInput("Platt scaling"));
    }
    if scores.len() != labels.len() {
        return Err(Error::Validation(format!(
            "{} scores but {} labels",
            scores.len(),
            labels.len()
        )));
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::Validation("non-finite score".into()));
    }
    let n_pos = labels.iter().filter(|&&y| y == 1).count();
    if n_pos == 0 || n_pos == labels.len() {
        return Err(Error::SingleClass(
            "Platt scaling needs both classes in the calibration set".into(),
        ));
    }
    let (target_pos, target_neg, targets) = platt_targets(labels);

    let gradient = |a: f64, b: f64| -> ([f64; 2], [f64; 3]) {
        let (mut ga, mut gb) = (0.0, 0.0);
        let (mut haa, mut hab, mut hbb) = (0.0, 0.0, 0.0);
        for (&s, &t) in scores.iter().zip(&targets) {
            let p = sigmoid_neg(a * s + b);
            let d = t - p;
            ga += s * d;
            gb += d;
            let w = p * (1.0 - p);
            haa += w * s * s;
            hab += w * s;
            hbb += w;
        }
        ([ga, gb], [haa, hab, hbb])
    };

    let n_neg = (labels.len() - n_pos) as f64;
    let mut a = 0.0;
    let mut b = ((n_neg + 1.0) / (n_pos as f64 + 1.0)).ln();
    let mut loss = platt_loss(scores, &targets, a, b);
    let mut iterations = 0;
    let (mut g, mut h) = gradient(a, b);
    let mut gnorm = g[0].hypot(g[1]);
    while gnorm > PLATT_GRADIENT_TOLERANCE && iterations < PLATT_MAX_ITERATIONS {
        iterations += 1;
        // Small ridge keeps the system solvable when all scores coincide.
        let (haa, hab, hbb) = (h[0] + 1e-12, h[1], h[2] + 1e-12);
        let det = haa * hbb - hab * hab;
        let (da, db) = (
            -(hbb * g[0] - hab * g[1]) / det,
            -(-hab * g[0] + haa * g[1]) / det,
        );
        let slope = g[0] * da + g[1] * db;
        let mut step = 1.0;
        let mut moved = false;
        while step >= 1e-12 {
            let (na, nb) = (a + step * da, b + step * db);
            let nl = platt_loss(scores, &targets, na, nb);
            let (ng, nh) = gradient(na, nb);
            let ngnorm = ng[0].hypot(ng[1]);
            // Close to the optimum the loss change drowns in rounding; a full
            // Newton step that shrinks the gradient is accepted then.
            if nl <= loss + 1e-4 * step * slope || (step == 1.0 && ngnorm < gnorm) {
                (a, b, loss, g, h, gnorm) = (na, nb, nl, ng, nh, ngnorm);
                moved = true;
                break;
            }
            step *= 0.5;
        }
        if !moved {
            break;
        }
    }

    Ok(PlattFit {
        a,
        b,
        target_pos,
        target_neg,
        iterations,
        gradient_norm: gnorm,
    })
}
