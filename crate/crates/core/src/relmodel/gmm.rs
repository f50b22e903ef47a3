//! Diagonal-covariance Gaussian mixtures fit by expectation-maximization.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::features::{PairFeatures, FEATURE_DIM};
use super::ModelError;
use crate::rng::substream;

pub const VARIANCE_FLOOR: f64 = 1e-4;
const LN_2PI: f64 = 1.837_877_066_409_345_5;

type Vector = [f64; FEATURE_DIM];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GmmModel {
    weights: Vec<f64>,
    means: Vec<Vector>,
    variances: Vec<Vector>,
}

impl GmmModel {
    pub fn new(weights: Vec<f64>, means: Vec<Vector>, variances: Vec<Vector>) -> Result<Self, ModelError> {
        let k = weights.len();
        if k == 0 || means.len() != k || variances.len() != k {
            return Err(ModelError::InvalidModel(format!(
                "component counts disagree: {} weights, {} means, {} variances",
                k,
                means.len(),
                variances.len()
            )));
        }
        if weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(ModelError::InvalidModel("weights must be finite and non-negative".into()));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(ModelError::InvalidModel(format!("weights sum to {total}, expected 1")));
        }
        if means.iter().flatten().any(|m| !m.is_finite()) {
            return Err(ModelError::InvalidModel("means must be finite".into()));
        }
        if variances.iter().flatten().any(|v| !(v.is_finite() && *v >= VARIANCE_FLOOR)) {
            return Err(ModelError::InvalidModel(format!(
                "variances must be finite and at least {VARIANCE_FLOOR}"
            )));
        }
        Ok(GmmModel {
            weights,
            means,
            variances,
        })
    }

    pub fn k(&self) -> usize {
        self.weights.len()
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn means(&self) -> &[Vector] {
        &self.means
    }

    pub fn variances(&self) -> &[Vector] {
        &self.variances
    }

    fn component_log_densities(&self, x: &Vector, out: &mut [f64]) {
        for (k, slot) in out.iter_mut().enumerate() {
            let mut acc = self.weights[k].ln();
            for d in 0..FEATURE_DIM {
                let v = self.variances[k][d];
                let diff = x[d] - self.means[k][d];
                acc -= 0.5 * (LN_2PI + v.ln() + diff * diff / v);
            }
            *slot = acc;
        }
    }

    /// `ln Σ_k w_k N(x; μ_k, diag σ²_k)`, evaluated with log-sum-exp.
    pub fn log_density(&self, x: &PairFeatures) -> f64 {
        let mut buf = vec![0.0; self.k()];
        self.component_log_densities(&x.0, &mut buf);
        log_sum_exp(&buf)
    }

    /// Plain density; underflows to zero far in the tails, prefer
    /// [`GmmModel::log_density`] there.
    pub fn density(&self, x: &PairFeatures) -> f64 {
        self.log_density(x).exp()
    }

    /// Posterior component probabilities at `x`.
    pub fn responsibilities(&self, x: &PairFeatures) -> Vec<f64> {
        let mut buf = vec![0.0; self.k()];
        self.component_log_densities(&x.0, &mut buf);
        let norm = log_sum_exp(&buf);
        buf.iter().map(|l| (l - norm).exp()).collect()
    }
}

pub fn gmm_density(m: &GmmModel, x: &PairFeatures) -> f64 {
    m.density(x)
}

fn log_sum_exp(xs: &[f64]) -> f64 {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + xs.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GmmFitOptions {
    pub max_iters: usize,
    /// Stop once `|ΔLL| < rel_tol · |LL|`.
    pub rel_tol: f64,
    pub restarts: usize,
}

impl Default for GmmFitOptions {
    fn default() -> Self {
        GmmFitOptions {
            max_iters: 200,
            rel_tol: 1e-6,
            restarts: 10,
        }
    }
}

/// Result of a multi-restart EM fit.
#[derive(Debug, Clone, PartialEq)]
pub struct GmmFit {
    pub model: GmmModel,
    /// Mean per-sample log-likelihood of `model`.
    pub log_likelihood: f64,
    pub converged: bool,
    /// Mean log-likelihood after each E-step, one trace per restart.
    pub traces: Vec<Vec<f64>>,
    pub degenerate: bool,
}

pub fn fit_gmm(samples: &[PairFeatures], k: usize, seed: u64) -> Result<GmmFit, ModelError> {
    fit_gmm_with(samples, k, seed, &GmmFitOptions::default())
}

pub fn fit_gmm_with(samples: &[PairFeatures], k: usize, seed: u64, opts: &GmmFitOptions) -> Result<GmmFit, ModelError> {
    if k == 0 || samples.len() < 5 * k {
        return Err(ModelError::TooFewSamples {
            have: samples.len(),
            need: 5 * k.max(1),
        });
    }
    if samples.iter().any(|s| s.0.iter().any(|v| !v.is_finite())) {
        return Err(ModelError::InvalidModel("non-finite feature in training samples".into()));
    }
    let xs: Vec<Vector> = samples.iter().map(|s| s.0).collect();
    let global_var = per_dim_variance(&xs);
    let degenerate = global_var.iter().all(|v| *v < VARIANCE_FLOOR);
    if degenerate {
        log::warn!(
            "all {} training samples are (nearly) identical; variances fall back to the floor {VARIANCE_FLOOR}",
            xs.len()
        );
    }

    let mut rng = substream(seed, "gmm-init");
    let mut best: Option<(GmmModel, f64, bool)> = None;
    let mut traces = Vec::with_capacity(opts.restarts.max(1));
    for _ in 0..opts.restarts.max(1) {
        let init = kmeanspp_init(&xs, k, &global_var, &mut rng);
        let (model, ll, converged, trace) = run_em(&xs, init, opts);
        traces.push(trace);
        if best.as_ref().is_none_or(|(_, b, _)| ll > *b) {
            best = Some((model, ll, converged));
        }
    }
    let (model, log_likelihood, converged) = best.expect("at least one restart");
    Ok(GmmFit {
        model,
        log_likelihood,
        converged,
        traces,
        degenerate,
    })
}

fn per_dim_variance(xs: &[Vector]) -> Vector {
    let n = xs.len() as f64;
    let mut mean = [0.0; FEATURE_DIM];
    for x in xs {
        for d in 0..FEATURE_DIM {
            mean[d] += x[d];
        }
    }
    for m in &mut mean {
        *m /= n;
    }
    let mut var = [0.0; FEATURE_DIM];
    for x in xs {
        for d in 0..FEATURE_DIM {
            var[d] += (x[d] - mean[d]).powi(2);
        }
    }
    var.map(|v| v / n)
}

fn sq_dist(a: &Vector, b: &Vector) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum()
}

/// k-means++ seeding followed by one hard assignment to build the initial
/// mixture.
fn kmeanspp_init(xs: &[Vector], k: usize, global_var: &Vector, rng: &mut ChaCha8Rng) -> GmmModel {
    let n = xs.len();
    let mut centers: Vec<Vector> = vec![xs[rng.random_range(0..n)]];
    let mut d2: Vec<f64> = xs.iter().map(|x| sq_dist(x, &centers[0])).collect();
    while centers.len() < k {
        let total: f64 = d2.iter().sum();
        let idx = if total > 0.0 {
            let mut u = rng.random::<f64>() * total;
            let mut pick = n - 1;
            for (i, d) in d2.iter().enumerate() {
                if u < *d {
                    pick = i;
                    break;
                }
                u -= d;
            }
            pick
        } else {
            rng.random_range(0..n)
        };
        centers.push(xs[idx]);
        for (slot, x) in d2.iter_mut().zip(xs) {
            *slot = slot.min(sq_dist(x, &xs[idx]));
        }
    }

    let mut counts = vec![0usize; k];
    let mut sums = vec![[0.0; FEATURE_DIM]; k];
    let mut sq = vec![[0.0; FEATURE_DIM]; k];
    for x in xs {
        let c = (0..k)
            .min_by(|&a, &b| sq_dist(x, &centers[a]).total_cmp(&sq_dist(x, &centers[b])))
            .expect("k > 0");
        counts[c] += 1;
        for d in 0..FEATURE_DIM {
            sums[c][d] += x[d];
            sq[c][d] += x[d] * x[d];
        }
    }
    let floor_var = global_var.map(|v| v.max(VARIANCE_FLOOR));
    let mut weights = Vec::with_capacity(k);
    let mut means = Vec::with_capacity(k);
    let mut variances = Vec::with_capacity(k);
    for c in 0..k {
        if counts[c] < 2 {
            weights.push(1.0);
            means.push(centers[c]);
            variances.push(floor_var);
            continue;
        }
        let m = counts[c] as f64;
        let mean = sums[c].map(|s| s / m);
        let mut var = [0.0; FEATURE_DIM];
        for d in 0..FEATURE_DIM {
            var[d] = (sq[c][d] / m - mean[d] * mean[d]).max(VARIANCE_FLOOR);
        }
        weights.push(m);
        means.push(mean);
        variances.push(var);
    }
    let total: f64 = weights.iter().sum();
    GmmModel {
        weights: weights.iter().map(|w| w / total).collect(),
        means,
        variances,
    }
}

/// E-step: fills `resp` (row-major n×k) and returns the mean log-likelihood.
fn e_step(model: &GmmModel, xs: &[Vector], resp: &mut [f64]) -> f64 {
    let k = model.k();
    let mut total = 0.0;
    for (i, x) in xs.iter().enumerate() {
        let row = &mut resp[i * k..(i + 1) * k];
        model.component_log_densities(x, row);
        let norm = log_sum_exp(row);
        for r in row.iter_mut() {
            *r = (*r - norm).exp();
        }
        total += norm;
    }
    total / xs.len() as f64
}

fn m_step(model: &mut GmmModel, xs: &[Vector], resp: &[f64]) {
    let k = model.k();
    let n = xs.len() as f64;
    for c in 0..k {
        let mut nk = 0.0;
        let mut mean = [0.0; FEATURE_DIM];
        for (i, x) in xs.iter().enumerate() {
            let r = resp[i * k + c];
            nk += r;
            for d in 0..FEATURE_DIM {
                mean[d] += r * x[d];
            }
        }
        model.weights[c] = nk / n;
        // A component with (numerically) no support keeps its location; its
        // contribution to the likelihood is negligible either way.
        if nk <= f64::MIN_POSITIVE * 1e10 {
            continue;
        }
        for m in &mut mean {
            *m /= nk;
        }
        let mut var = [0.0; FEATURE_DIM];
        for (i, x) in xs.iter().enumerate() {
            let r = resp[i * k + c];
            for d in 0..FEATURE_DIM {
                var[d] += r * (x[d] - mean[d]).powi(2);
            }
        }
        model.means[c] = mean;
        model.variances[c] = var.map(|v| (v / nk).max(VARIANCE_FLOOR));
    }
    let total: f64 = model.weights.iter().sum();
    for w in &mut model.weights {
        *w /= total;
    }
}

fn run_em(xs: &[Vector], mut model: GmmModel, opts: &GmmFitOptions) -> (GmmModel, f64, bool, Vec<f64>) {
    let k = model.k();
    let mut resp = vec![0.0; xs.len() * k];
    let mut ll = e_step(&model, xs, &mut resp);
    let mut trace = vec![ll];
    let mut converged = false;
    for _ in 0..opts.max_iters {
        let prev_model = model.clone();
        m_step(&mut model, xs, &resp);
        let next = e_step(&model, xs, &mut resp);
        trace.push(next);
        if next < ll {
            // Only rounding can lower the likelihood here; keep the better
            // parameters and stop.
            log::debug!("EM log-likelihood dropped by {}", ll - next);
            model = prev_model;
            converged = true;
            break;
        }
        let change = next - ll;
        ll = next;
        if change < opts.rel_tol * ll.abs() {
            converged = true;
            break;
        }
    }
    (model, ll, converged, trace)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_distr::{Distribution, StandardNormal};

    fn gaussian_samples(n: usize, centers: &[Vector], seed: u64) -> Vec<PairFeatures> {
        let mut rng = substream(seed, "test-samples");
        (0..n)
            .map(|i| {
                let c = &centers[i % centers.len()];
                let mut x = [0.0; FEATURE_DIM];
                for d in 0..FEATURE_DIM {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    x[d] = c[d] + z;
                }
                PairFeatures(x)
            })
            .collect()
    }

    #[test]
    fn unit_gaussian_normalizer_at_mean() {
        let m = GmmModel::new(vec![1.0], vec![[0.5, -1.0, 2.0, 0.0]], vec![[1.0; 4]]).unwrap();
        let d = m.density(&PairFeatures([0.5, -1.0, 2.0, 0.0]));
        let expected = (2.0 * std::f64::consts::PI).powi(-2);
        assert!((d - expected).abs() < 1e-15);
        assert!((d - 0.025330).abs() < 1e-6);
    }

    #[test]
    fn symmetric_components_share_responsibility() {
        let m = GmmModel::new(vec![0.5, 0.5], vec![[1.0, 0.0, 0.0, 0.0], [-1.0, 0.0, 0.0, 0.0]], vec![[1.0; 4]; 2])
            .unwrap();
        let r = m.responsibilities(&PairFeatures([0.0; 4]));
        assert!((r[0] - 0.5).abs() < 1e-15 && (r[1] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn log_density_is_finite_far_out() {
        let m = GmmModel::new(vec![0.3, 0.7], vec![[0.0; 4], [1.0; 4]], vec![[VARIANCE_FLOOR; 4], [2.0; 4]]).unwrap();
        for scale in [1.0, 10.0, 100.0, 1000.0] {
            let l = m.log_density(&PairFeatures([scale, -scale, scale, -scale]));
            assert!(l.is_finite(), "{scale} -> {l}");
        }
        assert!(m.density(&PairFeatures([3.0; 4])) > 0.0);
    }

    #[test]
    fn rejects_invalid_parameters() {
        assert!(GmmModel::new(vec![0.6, 0.6], vec![[0.0; 4]; 2], vec![[1.0; 4]; 2]).is_err());
        assert!(GmmModel::new(vec![1.0], vec![[0.0; 4]], vec![[1e-6; 4]]).is_err());
    }

    #[test]
    fn density_integrates_to_one() {
        // Monte-Carlo over the box [-8, 8]^4 with 10^6 uniform draws.
        let m = GmmModel::new(
            vec![0.4, 0.6],
            vec![[1.0, -0.5, 0.0, 0.3], [-1.5, 1.0, 0.5, -0.2]],
            vec![[0.5, 1.0, 0.8, 1.2], [1.0, 0.6, 0.9, 0.7]],
        )
        .unwrap();
        let mut rng = substream(3, "mc");
        let n = 1_000_000;
        let side = 16.0f64;
        let mut acc = 0.0;
        for _ in 0..n {
            let x = [(); 4].map(|_| rng.random::<f64>() * side - side / 2.0);
            acc += m.density(&PairFeatures(x));
        }
        let integral = acc / n as f64 * side.powi(4);
        assert!((integral - 1.0).abs() < 0.02, "integral {integral}");
    }

    #[test]
    fn single_component_is_closed_form() {
        let xs = gaussian_samples(200, &[[1.0, 2.0, -1.0, 0.5]], 11);
        let fit = fit_gmm(&xs, 1, 0).unwrap();
        let n = xs.len() as f64;
        for d in 0..FEATURE_DIM {
            let mean = xs.iter().map(|x| x.0[d]).sum::<f64>() / n;
            let var = xs.iter().map(|x| (x.0[d] - mean).powi(2)).sum::<f64>() / n;
            assert!((fit.model.means()[0][d] - mean).abs() < 1e-12);
            assert!((fit.model.variances()[0][d] - var.max(VARIANCE_FLOOR)).abs() < 1e-12);
        }
        assert_eq!(fit.model.weights(), &[1.0]);
    }

    #[test]
    fn recovers_planted_components() {
        let xs = gaussian_samples(5000, &[[2.0, 2.0, 0.0, 0.0], [-2.0, -2.0, 0.0, 0.0]], 5);
        let fit = fit_gmm(&xs, 2, 17).unwrap();
        let mut means = fit.model.means().to_vec();
        means.sort_by(|a, b| a[0].total_cmp(&b[0]));
        let planted = [[-2.0, -2.0, 0.0, 0.0], [2.0, 2.0, 0.0, 0.0]];
        for (m, p) in means.iter().zip(&planted) {
            for d in 0..FEATURE_DIM {
                assert!((m[d] - p[d]).abs() < 0.1, "{m:?} vs {p:?}");
            }
        }
        for trace in &fit.traces {
            for w in trace.windows(2) {
                assert!(w[1] >= w[0] - 1e-9);
            }
        }
    }

    #[test]
    fn identical_samples_hit_the_floor() {
        let xs = vec![PairFeatures([0.3, 0.3, 0.0, 0.0]); 20];
        let fit = fit_gmm(&xs, 2, 1).unwrap();
        assert!(fit.degenerate);
        assert!(fit.model.variances().iter().flatten().all(|v| *v == VARIANCE_FLOOR));
    }

    #[test]
    fn too_few_samples_error() {
        let xs = vec![PairFeatures([0.0; 4]); 14];
        assert!(matches!(fit_gmm(&xs, 3, 0), Err(ModelError::TooFewSamples { have: 14, need: 15 })));
    }

    #[test]
    fn fit_is_deterministic() {
        let xs = gaussian_samples(300, &[[0.0; 4], [3.0, 0.0, 1.0, 0.0], [0.0, 3.0, 0.0, 1.0]], 2);
        let a = fit_gmm(&xs, 3, 99).unwrap();
        let b = fit_gmm(&xs, 3, 99).unwrap();
        assert_eq!(a, b);
    }
}
