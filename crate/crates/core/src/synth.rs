//! Synthetic benchmark data with known optimal posteriors.
//!
//! Class `i` draws features from a Gaussian with one-hot mean `e_i` and
//! covariance `sigma * I` (`sigma` is a variance). The one-hot means sit at
//! pairwise distance sqrt(2). Four systems are derived from the same
//! samples:
//!
//! * `cal`: the exact posterior under the data priors;
//! * `mcp`: the posterior under mismatched priors (0.9 on the last class);
//! * `mcs`, `mcps`: `cal` and `mcp` scaled in the log domain.
//!
//! Sampling is class by class, sample by sample, dimension by dimension
//! from a ChaCha20 stream, so a seed fully determines the bundle.

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::data::{floor_row, LabeledPosteriors, PriorVector, DEFAULT_FLOOR};
use crate::error::{Error, Result};
use crate::numeric::softmax_in_place;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub n_classes: usize,
    pub n_samples: usize,
    /// Prior of the first class; the rest share `1 - p1` equally.
    pub p1: f64,
    /// Per-dimension variance of the class-conditional Gaussians.
    pub sigma: f64,
    /// Log-domain scale used for `mcs` and `mcps`.
    pub mcs_scale: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self { n_classes: 2, n_samples: 1000, p1: 0.8, sigma: 0.15, mcs_scale: 5.0, seed: 0 }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_classes < 2 {
            return Err(Error::invalid_arg("synthetic data needs at least 2 classes"));
        }
        if !(self.p1 > 0.0 && self.p1 < 1.0) {
            return Err(Error::invalid_arg(format!("p1 = {} outside (0, 1)", self.p1)));
        }
        if !(self.sigma > 0.0 && self.sigma.is_finite()) {
            return Err(Error::invalid_arg(format!("sigma = {} must be positive", self.sigma)));
        }
        if !(self.mcs_scale > 0.0 && self.mcs_scale.is_finite()) {
            return Err(Error::invalid_arg(format!("scale = {} must be positive", self.mcs_scale)));
        }
        Ok(())
    }

    pub fn priors(&self) -> PriorVector {
        let k = self.n_classes;
        let mut p = vec![(1.0 - self.p1) / (k - 1) as f64; k];
        p[0] = self.p1;
        PriorVector::new(p).expect("valid by construction")
    }

    /// Per-class sample counts: nearest integer for each class, rounding
    /// remainder absorbed by the first class.
    pub fn class_counts(&self) -> Result<Vec<usize>> {
        let p = self.priors();
        let mut counts: Vec<i64> = p.as_slice().iter().map(|&pi| (pi * self.n_samples as f64).round() as i64).collect();
        let rest: i64 = counts[1..].iter().sum();
        counts[0] = self.n_samples as i64 - rest;
        if let Some(class) = counts.iter().position(|&c| c <= 0) {
            return Err(Error::invalid_arg(format!(
                "class {} gets no samples with N={} and p1={}",
                class + 1,
                self.n_samples,
                self.p1
            )));
        }
        Ok(counts.into_iter().map(|c| c as usize).collect())
    }

    /// Priors assumed by the `mcp` system: 0.9 on the last class.
    pub fn mismatched_priors(&self) -> PriorVector {
        let k = self.n_classes;
        let mut p = vec![0.1 / (k - 1) as f64; k];
        p[k - 1] = 0.9;
        PriorVector::new(p).expect("valid by construction")
    }
}

#[derive(Debug, Clone)]
pub struct SynthBundle {
    pub config: SynthConfig,
    /// Row-major N x K features.
    pub features: Vec<f64>,
    pub labels: Vec<usize>,
    /// Row-major N x K class-conditional log densities.
    pub log_likelihoods: Vec<f64>,
    pub cal: LabeledPosteriors,
    pub mcp: LabeledPosteriors,
    pub mcs: LabeledPosteriors,
    pub mcps: LabeledPosteriors,
}

impl SynthBundle {
    pub fn likelihoods(&self) -> Vec<f64> {
        self.log_likelihoods.iter().map(|l| l.exp()).collect()
    }

    pub fn systems(&self) -> [(&'static str, &LabeledPosteriors); 4] {
        [("cal", &self.cal), ("mcp", &self.mcp), ("mcs", &self.mcs), ("mcps", &self.mcps)]
    }

    pub fn system(&self, name: &str) -> Option<&LabeledPosteriors> {
        self.systems().into_iter().find(|(n, _)| *n == name).map(|(_, d)| d)
    }
}

/// Posteriors `softmax(log-likelihood + log prior)`, floored.
pub fn posteriors_from_log_likelihoods(log_lik: &[f64], k: usize, priors: &PriorVector) -> Vec<f64> {
    let log_p: Vec<f64> = priors.as_slice().iter().map(|p| p.ln()).collect();
    let mut out = log_lik.to_vec();
    for row in out.chunks_exact_mut(k) {
        row.iter_mut().zip(&log_p).for_each(|(v, lp)| *v += lp);
        softmax_in_place(row);
        floor_row(row, DEFAULT_FLOOR).expect("softmax rows are positive");
    }
    out
}

pub fn generate(config: &SynthConfig) -> Result<SynthBundle> {
    config.validate()?;
    let k = config.n_classes;
    let counts = config.class_counts()?;
    let n = config.n_samples;
    let std = config.sigma.sqrt();
    let mut rng = ChaCha20Rng::seed_from_u64(config.seed);
    let mut features = Vec::with_capacity(n * k);
    let mut labels = Vec::with_capacity(n);
    for (class, &count) in counts.iter().enumerate() {
        for _ in 0..count {
            for d in 0..k {
                let z: f64 = StandardNormal.sample(&mut rng);
                features.push(if d == class { 1.0 } else { 0.0 } + std * z);
            }
            labels.push(class);
        }
    }
    let norm = -0.5 * k as f64 * (2.0 * std::f64::consts::PI * config.sigma).ln();
    let mut log_likelihoods = Vec::with_capacity(n * k);
    for x in features.chunks_exact(k) {
        for class in 0..k {
            let d2: f64 =
                x.iter().enumerate().map(|(d, &v)| (v - if d == class { 1.0 } else { 0.0 }).powi(2)).sum();
            log_likelihoods.push(norm - d2 / (2.0 * config.sigma));
        }
    }
    let data_priors = PriorVector::new(counts.iter().map(|&c| c as f64 / n as f64).collect())?;
    let cal = LabeledPosteriors::from_flat(posteriors_from_log_likelihoods(&log_likelihoods, k, &data_priors), k, labels.clone())?;
    let mcp = LabeledPosteriors::from_flat(
        posteriors_from_log_likelihoods(&log_likelihoods, k, &config.mismatched_priors()),
        k,
        labels.clone(),
    )?;
    let mcs = miscalibrate_scale(&cal, config.mcs_scale)?;
    let mcps = miscalibrate_scale(&mcp, config.mcs_scale)?;
    Ok(SynthBundle { config: config.clone(), features, labels, log_likelihoods, cal, mcp, mcs, mcps })
}

/// Row-wise `softmax(scale * log q)`.
pub fn miscalibrate_scale(ds: &LabeledPosteriors, scale: f64) -> Result<LabeledPosteriors> {
    if !(scale > 0.0 && scale.is_finite()) {
        return Err(Error::invalid_arg(format!("scale = {scale} must be positive")));
    }
    let k = ds.n_classes();
    let mut out: Vec<f64> = ds.flat().iter().map(|&q| scale * q.max(f64::MIN_POSITIVE).ln()).collect();
    for row in out.chunks_exact_mut(k) {
        softmax_in_place(row);
        floor_row(row, DEFAULT_FLOOR).map_err(|m| Error::invalid_data(m.to_string()))?;
    }
    ds.with_posteriors(out)
}

/// One of the four systems in the binary risk-curve scenario.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RiskCurvePreset {
    pub name: String,
    pub config: SynthConfig,
    /// Log-domain scale applied to the `cal` posteriors (1 = unscaled).
    pub scale: f64,
}

impl RiskCurvePreset {
    pub fn generate(&self) -> Result<LabeledPosteriors> {
        let bundle = generate(&self.config)?;
        if self.scale == 1.0 {
            Ok(bundle.cal)
        } else {
            miscalibrate_scale(&bundle.cal, self.scale)
        }
    }
}

pub const RISKCURVE_PRESET_SAMPLES: usize = 100_000;

/// Binary systems with P1 = 0.6: calibrated, under- and over-confident
/// scalings of it, and a calibrated system on noisier features.
pub fn riskcurve_presets(seed: u64) -> Vec<RiskCurvePreset> {
    let base = SynthConfig { n_classes: 2, n_samples: RISKCURVE_PRESET_SAMPLES, p1: 0.6, sigma: 0.15, mcs_scale: 5.0, seed };
    let with = |name: &str, sigma: f64, scale: f64| RiskCurvePreset {
        name: name.into(),
        config: SynthConfig { sigma, ..base.clone() },
        scale,
    };
    vec![with("cal", 0.15, 1.0), with("mcs-u", 0.15, 0.48), with("mcs-o", 0.15, 2.0), with("cal-h", 0.19, 1.0)]
}
