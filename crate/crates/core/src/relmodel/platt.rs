//! Platt scaling: a two-parameter sigmoid over log-densities, fit by Newton's
//! method with backtracking on the target-smoothed Bernoulli likelihood.

use serde::{Deserialize, Serialize};

use super::ModelError;

pub const GRADIENT_TOLERANCE: f64 = 1e-8;
const MAX_ITERS: usize = 100;
const MIN_STEP: f64 = 1e-10;
const HESSIAN_RIDGE: f64 = 1e-12;

/// `p(s) = 1 / (1 + exp(a·s + b))`; calibrated probability rises with the
/// score when `a < 0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlattParams {
    pub a: f64,
    pub b: f64,
}

impl PlattParams {
    pub fn is_increasing(&self) -> bool {
        self.a < 0.0
    }

    /// Calibrated probability, kept inside the open interval (0, 1).
    pub fn prob(&self, score: f64) -> f64 {
        let z = self.a * score + self.b;
        let p = if z >= 0.0 {
            let e = (-z).exp();
            e / (1.0 + e)
        } else {
            1.0 / (1.0 + z.exp())
        };
        p.clamp(f64::MIN_POSITIVE, 1.0 - f64::EPSILON)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlattFit {
    pub params: PlattParams,
    pub iterations: usize,
    pub gradient_norm: f64,
}

pub fn fit_platt(scores: &[f64], labels: &[bool]) -> Result<PlattParams, ModelError> {
    fit_platt_report(scores, labels).map(|f| f.params)
}

/// Negative log-likelihood against smoothed targets, evaluated without
/// overflow.
fn objective(scores: &[f64], targets: &[f64], a: f64, b: f64) -> f64 {
    scores
        .iter()
        .zip(targets)
        .map(|(s, t)| {
            let z = s * a + b;
            if z >= 0.0 {
                t * z + (-z).exp().ln_1p()
            } else {
                (t - 1.0) * z + z.exp().ln_1p()
            }
        })
        .sum()
}

pub fn fit_platt_report(scores: &[f64], labels: &[bool]) -> Result<PlattFit, ModelError> {
    if scores.len() != labels.len() {
        return Err(ModelError::InvalidModel(format!(
            "{} scores but {} labels",
            scores.len(),
            labels.len()
        )));
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(ModelError::InvalidModel("non-finite calibration score".into()));
    }
    let n_pos = labels.iter().filter(|l| **l).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(ModelError::SingleClass { positives: n_pos, negatives: n_neg });
    }
    let hi = (n_pos as f64 + 1.0) / (n_pos as f64 + 2.0);
    let lo = 1.0 / (n_neg as f64 + 2.0);
    let targets: Vec<f64> = labels.iter().map(|&l| if l { hi } else { lo }).collect();

    let mut a = 0.0;
    let mut b = ((n_neg as f64 + 1.0) / (n_pos as f64 + 1.0)).ln();
    let mut fval = objective(scores, &targets, a, b);
    let mut gradient_norm = f64::INFINITY;
    let mut iterations = 0;

    for it in 0..MAX_ITERS {
        iterations = it;
        let (mut h11, mut h22, mut h21) = (HESSIAN_RIDGE, HESSIAN_RIDGE, 0.0);
        let (mut g1, mut g2) = (0.0, 0.0);
        for (s, t) in scores.iter().zip(&targets) {
            let z = s * a + b;
            let (p, q) = if z >= 0.0 {
                let e = (-z).exp();
                (e / (1.0 + e), 1.0 / (1.0 + e))
            } else {
                let e = z.exp();
                (1.0 / (1.0 + e), e / (1.0 + e))
            };
            let d2 = p * q;
            h11 += s * s * d2;
            h22 += d2;
            h21 += s * d2;
            let d1 = t - p;
            g1 += s * d1;
            g2 += d1;
        }
        gradient_norm = g1.hypot(g2);
        if gradient_norm < GRADIENT_TOLERANCE {
            break;
        }
        let det = h11 * h22 - h21 * h21;
        let da = -(h22 * g1 - h21 * g2) / det;
        let db = -(-h21 * g1 + h11 * g2) / det;
        let gd = g1 * da + g2 * db;

        let mut step = 1.0;
        let mut moved = false;
        while step >= MIN_STEP {
            let (na, nb) = (a + step * da, b + step * db);
            let nf = objective(scores, &targets, na, nb);
            if nf < fval + 1e-4 * step * gd {
                a = na;
                b = nb;
                fval = nf;
                moved = true;
                break;
            }
            step /= 2.0;
        }
        if !moved {
            log::debug!("Platt line search stalled at gradient norm {gradient_norm:e}");
            break;
        }
        iterations = it + 1;
    }
    Ok(PlattFit {
        params: PlattParams { a, b },
        iterations,
        gradient_norm,
    })
}
