use serde::{Deserialize, Serialize};

use crate::data::LabeledPosteriors;
use crate::error::{Error, Result};

use super::{CalibrationTransform, Provenance, TransformParams};

/// Value assigned to a bin that received no training samples.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EmptyBinFallback {
    /// Midpoint of the bin.
    #[default]
    Center,
    /// Empirical frequency of class 2 in the whole training set.
    TrainPrior,
}

/// Equal-width bin of `q2` among `m` bins on `[0, 1]`; the last bin is
/// closed on the right.
pub fn bin_index(q2: f64, m: usize) -> usize {
    if !(q2 > 0.0) {
        return 0;
    }
    ((q2 * m as f64).floor() as usize).min(m - 1)
}

/// Histogram binning with the default empty-bin fallback.
pub fn fit_histogram_binning(train: &LabeledPosteriors, bins: usize) -> Result<CalibrationTransform> {
    fit_histogram_binning_with(train, bins, EmptyBinFallback::default())
}

/// Each bin maps to the fraction of class-2 samples whose `q2` falls in it.
pub fn fit_histogram_binning_with(
    train: &LabeledPosteriors,
    bins: usize,
    fallback: EmptyBinFallback,
) -> Result<CalibrationTransform> {
    if train.n_classes() != 2 {
        return Err(Error::invalid_arg(format!("histogram binning needs K=2, found K={}", train.n_classes())));
    }
    if bins < 1 {
        return Err(Error::invalid_arg("histogram needs at least one bin"));
    }
    let mut hits = vec![0usize; bins];
    let mut total = vec![0usize; bins];
    for (q, h) in train.samples() {
        let b = bin_index(q[1], bins);
        total[b] += 1;
        hits[b] += usize::from(h == 1);
    }
    let prior2 = train.class_counts()[1] as f64 / train.n_samples() as f64;
    let values = (0..bins)
        .map(|b| match (total[b], fallback) {
            (0, EmptyBinFallback::Center) => (b as f64 + 0.5) / bins as f64,
            (0, EmptyBinFallback::TrainPrior) => prior2,
            (n, _) => hits[b] as f64 / n as f64,
        })
        .collect();
    let edges = (0..=bins).map(|b| b as f64 / bins as f64).collect();
    Ok(CalibrationTransform {
        params: TransformParams::Histogram { edges, values, fallback },
        n_classes: 2,
        provenance: Provenance {
            method: format!("hist:{bins}"),
            protocol: "tt".into(),
            n_train: train.n_samples(),
            ..Provenance::default()
        },
    })
}
