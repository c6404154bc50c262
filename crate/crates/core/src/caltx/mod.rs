//! Post-hoc calibration transforms and the protocols used to train them.
//!
//! Four families are available: the direction-preserving affine map
//! `softmax(alpha * log q + beta)`, its `beta = 0` special case (temperature
//! scaling on log posteriors), equal-width histogram binning and isotonic
//! regression by pool-adjacent-violators. The last two only apply to binary
//! tasks and act on the class-2 posterior.
//!
//! Systems that dump unnormalized logits should be ingested through the
//! log-domain loader; after the softmax the two forms are equivalent.

mod affine;
mod histogram;
mod pav;
mod protocol;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::data::{floor_row, LabeledPosteriors, PriorVector, DEFAULT_FLOOR};
use crate::error::{Error, Result};
use crate::numeric::softmax_in_place;

pub use affine::{fit_affine_dp, fit_affine_raw, fit_temperature, AffineFit};
pub use histogram::{bin_index, fit_histogram_binning, fit_histogram_binning_with, EmptyBinFallback};
pub use pav::{fit_pav, isotonic_regression};
pub use protocol::{
    calibrate, crossval_calibrate, crossval_calibrate_with_plan, Calibrated, FoldPlan, Protocol, ProtocolSpec, DEFAULT_FOLDS,
};

/// Calibration family selector, parsed from `dp`, `temp`, `hist[:M]`, `pav`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "family")]
pub enum Family {
    AffineDp,
    Temperature,
    Histogram { bins: usize },
    IsotonicPav,
}

pub const DEFAULT_HISTOGRAM_BINS: usize = 10;

impl Family {
    pub fn is_binary_only(self) -> bool {
        matches!(self, Family::Histogram { .. } | Family::IsotonicPav)
    }

    pub fn short_name(self) -> String {
        match self {
            Family::AffineDp => "dp".into(),
            Family::Temperature => "temp".into(),
            Family::Histogram { bins } => format!("hist:{bins}"),
            Family::IsotonicPav => "pav".into(),
        }
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.short_name())
    }
}

impl FromStr for Family {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "dp" | "affine" => Ok(Family::AffineDp),
            "temp" | "temperature" => Ok(Family::Temperature),
            "pav" | "isotonic" => Ok(Family::IsotonicPav),
            "hist" => Ok(Family::Histogram { bins: DEFAULT_HISTOGRAM_BINS }),
            _ => {
                if let Some(m) = s.strip_prefix("hist:") {
                    let bins = m.parse().map_err(|_| Error::invalid_arg(format!("bad bin count in '{s}'")))?;
                    if bins < 1 {
                        return Err(Error::invalid_arg("histogram needs at least one bin"));
                    }
                    return Ok(Family::Histogram { bins });
                }
                Err(Error::invalid_arg(format!("unknown calibration method '{s}' (expected dp|temp|hist[:M]|pav)")))
            }
        }
    }
}

/// Fitted parameters of one transform family.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "family")]
pub enum TransformParams {
    AffineDp { alpha: f64, beta: Vec<f64> },
    Temperature { alpha: f64 },
    Histogram { edges: Vec<f64>, values: Vec<f64>, fallback: EmptyBinFallback },
    /// Right-continuous step function of q2: `values[b]` applies on
    /// `[thresholds[b], thresholds[b + 1])`, clamped at both ends.
    IsotonicPav { thresholds: Vec<f64>, values: Vec<f64> },
}

/// How a transform was obtained.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Provenance {
    pub method: String,
    pub protocol: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub folds: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fold: Option<usize>,
    pub n_train: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub iterations: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub grad_norm: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationTransform {
    #[serde(flatten)]
    pub params: TransformParams,
    pub n_classes: usize,
    pub provenance: Provenance,
}

impl CalibrationTransform {
    pub fn family(&self) -> Family {
        match &self.params {
            TransformParams::AffineDp { .. } => Family::AffineDp,
            TransformParams::Temperature { .. } => Family::Temperature,
            TransformParams::Histogram { values, .. } => Family::Histogram { bins: values.len() },
            TransformParams::IsotonicPav { .. } => Family::IsotonicPav,
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    /// Calibrated posterior for one input row, before flooring.
    fn map_row(&self, q: &[f64], out: &mut [f64], floor: f64) {
        match &self.params {
            TransformParams::AffineDp { alpha, beta } => {
                for ((o, &x), &b) in out.iter_mut().zip(q).zip(beta) {
                    *o = alpha * x.max(floor).max(f64::MIN_POSITIVE).ln() + b;
                }
                softmax_in_place(out);
            }
            TransformParams::Temperature { alpha } => {
                for (o, &x) in out.iter_mut().zip(q) {
                    *o = alpha * x.max(floor).max(f64::MIN_POSITIVE).ln();
                }
                softmax_in_place(out);
            }
            TransformParams::Histogram { values, .. } => {
                let v = values[bin_index(q[1], values.len())];
                out[0] = 1.0 - v;
                out[1] = v;
            }
            TransformParams::IsotonicPav { thresholds, values } => {
                let b = thresholds.partition_point(|&t| t <= q[1]).saturating_sub(1);
                out[0] = 1.0 - values[b];
                out[1] = values[b];
            }
        }
    }
}

/// Fits a transform of the given family on `train` (train-on-train; the
/// protocol layer decides which samples those are).
pub fn fit(family: Family, train: &LabeledPosteriors, priors: Option<&PriorVector>) -> Result<CalibrationTransform> {
    match family {
        Family::AffineDp => fit_affine_dp(train, priors),
        Family::Temperature => fit_temperature(train, priors),
        Family::Histogram { bins } => fit_histogram_binning(train, bins),
        Family::IsotonicPav => fit_pav(train),
    }
}

/// Applies a transform with the default posterior floor.
pub fn apply_transform(tx: &CalibrationTransform, ds: &LabeledPosteriors) -> Result<LabeledPosteriors> {
    apply_transform_with_floor(tx, ds, DEFAULT_FLOOR)
}

/// Applies a transform; output rows are floored and renormalized.
pub fn apply_transform_with_floor(
    tx: &CalibrationTransform,
    ds: &LabeledPosteriors,
    floor: f64,
) -> Result<LabeledPosteriors> {
    let k = ds.n_classes();
    if tx.family().is_binary_only() && k != 2 {
        return Err(Error::invalid_arg(format!("{} calibration only applies to binary data, found K={k}", tx.family())));
    }
    if tx.n_classes != k {
        return Err(Error::DimensionMismatch { expected: tx.n_classes, found: k });
    }
    let mut out = vec![0.0; ds.n_samples() * k];
    for (q, o) in ds.rows().zip(out.chunks_exact_mut(k)) {
        tx.map_row(q, o, floor);
        floor_row(o, floor).map_err(|m| Error::invalid_data(m.to_string()))?;
    }
    ds.with_posteriors(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tx(params: TransformParams, k: usize) -> CalibrationTransform {
        CalibrationTransform { params, n_classes: k, provenance: Provenance::default() }
    }

    #[test]
    fn identity_affine() {
        let ds = LabeledPosteriors::new(vec![vec![0.6, 0.3, 0.1], vec![0.2, 0.2, 0.6]], vec![0, 2]).unwrap();
        let id = tx(TransformParams::AffineDp { alpha: 1.0, beta: vec![0.0; 3] }, 3);
        let out = apply_transform(&id, &ds).unwrap();
        for (a, b) in ds.flat().iter().zip(out.flat()) {
            assert!((a - b).abs() < 1e-12);
        }
        assert_eq!(out.labels(), ds.labels());
    }

    #[test]
    fn large_temperature_approaches_one_hot() {
        let ds = LabeledPosteriors::new(vec![vec![0.6, 0.4]], vec![0]).unwrap();
        let t = tx(TransformParams::Temperature { alpha: 1e3 }, 2);
        let out = apply_transform(&t, &ds).unwrap();
        assert!((out.row(0)[0] - 1.0).abs() < 1e-3 && out.row(0)[1] < 1e-3);
    }

    #[test]
    fn binary_family_rejects_multiclass() {
        let ds = LabeledPosteriors::new(vec![vec![0.6, 0.3, 0.1]], vec![0]).unwrap();
        let h = tx(TransformParams::Histogram { edges: vec![0.0, 1.0], values: vec![0.5], fallback: EmptyBinFallback::Center }, 3);
        assert!(apply_transform(&h, &ds).is_err());
    }

    #[test]
    fn family_parse() {
        assert_eq!("dp".parse::<Family>().unwrap(), Family::AffineDp);
        assert_eq!("temp".parse::<Family>().unwrap(), Family::Temperature);
        assert_eq!("hist:10".parse::<Family>().unwrap(), Family::Histogram { bins: 10 });
        assert_eq!("pav".parse::<Family>().unwrap(), Family::IsotonicPav);
        assert!("hist:0".parse::<Family>().is_err());
        assert!("platt".parse::<Family>().is_err());
    }

    #[test]
    fn transform_json_roundtrip() {
        let t = tx(TransformParams::AffineDp { alpha: 0.5, beta: vec![0.25, -0.25] }, 2);
        let text = t.to_json().unwrap();
        assert!(text.contains("\"family\": \"affine_dp\""));
        assert_eq!(CalibrationTransform::from_json(&text).unwrap(), t);
    }

    #[test]
    fn step_thresholds_roundtrip_exactly() {
        let thresholds = vec![1e-10, 1.0028699417946958e-10, 0.1 + 0.2, 0.9982436305126874];
        let t = tx(TransformParams::IsotonicPav { thresholds, values: vec![0.0, 1.0 / 3.0, 0.5, 1.0] }, 2);
        let back = CalibrationTransform::from_json(&t.to_json().unwrap()).unwrap();
        assert_eq!(back, t);
    }
}
