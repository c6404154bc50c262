use crate::data::{LabeledPosteriors, PriorVector, DEFAULT_FLOOR};
use crate::decide::resolve_priors;
use crate::error::{Error, Result};
use crate::numeric::log_sum_exp;
use crate::optim::{minimize, BfgsOptions};

use super::{CalibrationTransform, Provenance, TransformParams};

/// Lower bound on the scale; the objective is only defined for alpha > 0.
const MIN_ALPHA: f64 = 1e-8;

/// Result of an affine or temperature fit together with optimizer
/// diagnostics.
#[derive(Debug, Clone)]
pub struct AffineFit {
    pub alpha: f64,
    pub beta: Vec<f64>,
    pub objective: f64,
    pub grad_norm: f64,
    pub iterations: usize,
}

/// Weighted cross-entropy of `softmax(alpha * log q + beta)`.
struct Objective<'a> {
    logq: Vec<f64>,
    labels: &'a [usize],
    weights: Vec<f64>,
    k: usize,
    with_bias: bool,
}

impl<'a> Objective<'a> {
    fn new(train: &'a LabeledPosteriors, priors: Option<&PriorVector>, with_bias: bool) -> Result<Self> {
        let counts = train.class_counts();
        if counts.iter().filter(|&&c| c > 0).count() < 2 {
            return Err(Error::invalid_data("calibration needs at least two classes present in the training data"));
        }
        let n = train.n_samples() as f64;
        let weights = match priors {
            None => vec![1.0 / n; train.n_samples()],
            Some(_) => {
                let p = resolve_priors(train, priors)?;
                train.labels().iter().map(|&h| p.get(h) / counts[h] as f64).collect()
            }
        };
        let logq = train.flat().iter().map(|&x| x.max(DEFAULT_FLOOR).ln()).collect();
        Ok(Self { logq, labels: train.labels(), weights, k: train.n_classes(), with_bias })
    }

    fn eval(&self, x: &[f64], grad: &mut [f64]) -> f64 {
        let k = self.k;
        let alpha = x[0];
        grad.iter_mut().for_each(|g| *g = 0.0);
        let mut z = vec![0.0; k];
        let mut loss = 0.0;
        for (t, l) in self.logq.chunks_exact(k).enumerate() {
            for j in 0..k {
                z[j] = alpha * l[j] + if self.with_bias { x[1 + j] } else { 0.0 };
            }
            let lse = log_sum_exp(&z);
            let h = self.labels[t];
            let w = self.weights[t];
            loss += w * (lse - z[h]);
            for j in 0..k {
                let resid = (z[j] - lse).exp() - if j == h { 1.0 } else { 0.0 };
                grad[0] += w * resid * l[j];
                if self.with_bias {
                    grad[1 + j] += w * resid;
                }
            }
        }
        loss
    }
}

fn run(train: &LabeledPosteriors, priors: Option<&PriorVector>, with_bias: bool) -> Result<AffineFit> {
    let obj = Objective::new(train, priors, with_bias)?;
    let k = train.n_classes();
    let mut x0 = vec![1.0];
    if with_bias {
        x0.extend(std::iter::repeat_n(0.0, k));
    }
    let mut lower = vec![f64::NEG_INFINITY; x0.len()];
    lower[0] = MIN_ALPHA;
    let res = minimize(|x, g| obj.eval(x, g), x0, &lower, BfgsOptions::default())?;
    let alpha = res.x[0];
    let beta = if with_bias {
        let mean = res.x[1..].iter().sum::<f64>() / k as f64;
        res.x[1..].iter().map(|b| b - mean).collect()
    } else {
        vec![0.0; k]
    };
    Ok(AffineFit { alpha, beta, objective: res.value, grad_norm: res.grad_norm, iterations: res.iterations })
}

/// Affine (`with_bias`) or temperature fit with optimizer diagnostics.
pub fn fit_affine_raw(train: &LabeledPosteriors, priors: Option<&PriorVector>, with_bias: bool) -> Result<AffineFit> {
    run(train, priors, with_bias)
}

fn provenance(method: &str, train: &LabeledPosteriors, fit: &AffineFit) -> Provenance {
    Provenance {
        method: method.into(),
        protocol: "tt".into(),
        n_train: train.n_samples(),
        iterations: Some(fit.iterations),
        grad_norm: Some(fit.grad_norm),
        ..Provenance::default()
    }
}

/// Fits `softmax(alpha * log q + beta)` by minimizing the (optionally
/// prior-weighted) cross-entropy. `beta` is reported with zero sum.
pub fn fit_affine_dp(train: &LabeledPosteriors, priors: Option<&PriorVector>) -> Result<CalibrationTransform> {
    let fit = run(train, priors, true)?;
    Ok(CalibrationTransform {
        provenance: provenance("dp", train, &fit),
        params: TransformParams::AffineDp { alpha: fit.alpha, beta: fit.beta },
        n_classes: train.n_classes(),
    })
}

/// Temperature scaling: the affine fit with `beta` fixed at zero.
pub fn fit_temperature(train: &LabeledPosteriors, priors: Option<&PriorVector>) -> Result<CalibrationTransform> {
    let fit = run(train, priors, false)?;
    Ok(CalibrationTransform {
        provenance: provenance("temp", train, &fit),
        params: TransformParams::Temperature { alpha: fit.alpha },
        n_classes: train.n_classes(),
    })
}
