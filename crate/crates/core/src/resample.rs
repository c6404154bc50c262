//! Percentile bootstrap for any [`MetricSpec`].

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::caltx::FoldPlan;
use crate::data::LabeledPosteriors;
use crate::error::{Error, Result};
use crate::metric::{MetricContext, MetricSpec};
use crate::numeric::percentile_sorted;

pub const DEFAULT_REPLICATES: usize = 100;
pub const DEFAULT_GAMMA: f64 = 95.0;
/// Largest tolerated fraction of failed replicates.
pub const MAX_FAILURE_FRACTION: f64 = 0.1;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BootstrapResult {
    pub metric: String,
    pub point_estimate: f64,
    pub lower: f64,
    pub upper: f64,
    pub b: usize,
    pub gamma: f64,
    pub seed: u64,
    pub n_failed: usize,
    /// Successful replicate values in replicate order.
    pub replicates: Vec<f64>,
}

impl BootstrapResult {
    pub fn width(&self) -> f64 {
        self.upper - self.lower
    }
}

/// Resampled indices of replicate `r`: ChaCha20 keyed by `seed`, stream `r`.
pub fn replicate_indices(n: usize, seed: u64, r: usize) -> Vec<usize> {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rng.set_stream(r as u64);
    (0..n).map(|_| rng.random_range(0..n)).collect()
}

/// Bootstraps `spec` over `B` resamples of `ds` and reports the
/// `(100 - gamma) / 2` and `100 - (100 - gamma) / 2` percentiles.
///
/// Calibrators are retrained on each replicate. Under cross-validation the
/// folds are assigned to the original samples (stratified with
/// `ctx.seed`) and inherited by their copies, so duplicates never straddle
/// a train/test split.
pub fn bootstrap_ci(
    ds: &LabeledPosteriors,
    spec: &MetricSpec,
    b: usize,
    gamma: f64,
    seed: u64,
    ctx: &MetricContext,
) -> Result<BootstrapResult> {
    if b < 2 {
        return Err(Error::invalid_arg("bootstrap needs at least 2 replicates"));
    }
    if !(gamma > 0.0 && gamma < 100.0) {
        return Err(Error::invalid_arg(format!("gamma = {gamma} outside (0, 100)")));
    }
    let mut base = ctx.clone();
    if let Some(folds) = spec.crossval_folds() {
        base.fold_plan = Some(FoldPlan::stratified(ds.labels(), ds.n_classes(), folds, ctx.seed)?);
    }
    let point_estimate = spec.evaluate(ds, &base)?;
    let n = ds.n_samples();
    let outcomes: Vec<Option<f64>> = (0..b)
        .into_par_iter()
        .map(|r| {
            let idx = replicate_indices(n, seed, r);
            let mut rctx = base.clone();
            rctx.fold_plan = base.fold_plan.as_ref().map(|p| p.project(&idx));
            spec.evaluate(&ds.subset(&idx), &rctx).ok().filter(|v| v.is_finite())
        })
        .collect();
    let replicates: Vec<f64> = outcomes.iter().flatten().copied().collect();
    let n_failed = b - replicates.len();
    if n_failed as f64 > MAX_FAILURE_FRACTION * b as f64 || replicates.is_empty() {
        return Err(Error::BootstrapFailures { failed: n_failed, total: b });
    }
    let mut sorted = replicates.clone();
    sorted.sort_by(f64::total_cmp);
    let tail = (100.0 - gamma) / 2.0;
    Ok(BootstrapResult {
        metric: spec.name.clone(),
        point_estimate,
        lower: percentile_sorted(&sorted, tail),
        upper: percentile_sorted(&sorted, 100.0 - tail),
        b,
        gamma,
        seed,
        n_failed,
        replicates,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identical_samples_give_zero_width() {
        let ds = LabeledPosteriors::new(vec![vec![0.7, 0.3]; 20], vec![0; 20]).unwrap();
        let spec: MetricSpec = "ce".parse().unwrap();
        let r = bootstrap_ci(&ds, &spec, 50, 95.0, 3, &MetricContext::default()).unwrap();
        assert_eq!(r.lower, r.point_estimate);
        assert_eq!(r.upper, r.point_estimate);
        assert_eq!(r.replicates.len(), 50);
    }

    #[test]
    fn replicate_streams_are_distinct_and_stable() {
        let a = replicate_indices(50, 1, 0);
        assert_eq!(a, replicate_indices(50, 1, 0));
        assert_ne!(a, replicate_indices(50, 1, 1));
        assert!(a.iter().all(|&i| i < 50));
    }

    #[test]
    fn rejects_bad_arguments() {
        let ds = LabeledPosteriors::new(vec![vec![0.7, 0.3]; 4], vec![0, 1, 0, 1]).unwrap();
        let spec: MetricSpec = "ce".parse().unwrap();
        assert!(bootstrap_ci(&ds, &spec, 1, 95.0, 0, &MetricContext::default()).is_err());
        assert!(bootstrap_ci(&ds, &spec, 10, 100.0, 0, &MetricContext::default()).is_err());
    }

    #[test]
    fn too_many_failures_is_an_error() {
        // NCE of a single-class replicate is undefined, and with two samples
        // of different classes half of all resamples are single-class.
        let ds = LabeledPosteriors::new(vec![vec![0.7, 0.3], vec![0.4, 0.6]], vec![0, 1]).unwrap();
        let spec: MetricSpec = "nce".parse().unwrap();
        assert!(matches!(
            bootstrap_ci(&ds, &spec, 40, 95.0, 0, &MetricContext::default()),
            Err(Error::BootstrapFailures { .. })
        ));
    }
}
