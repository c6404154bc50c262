use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{load_dataset, DatasetSource, LabeledPosteriors, PriorVector, DEFAULT_FLOOR};
use crate::error::{Error, Result};

use super::{apply_transform_with_floor, fit, CalibrationTransform, Family};

/// Assignment of every sample to one cross-validation fold.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldPlan {
    pub assignment: Vec<usize>,
    pub n_folds: usize,
    pub seed: u64,
}

impl FoldPlan {
    /// Shuffles each class under `seed` and deals its samples round-robin,
    /// continuing the rotation across classes so fold sizes stay balanced.
    pub fn stratified(labels: &[usize], n_classes: usize, n_folds: usize, seed: u64) -> Result<Self> {
        if n_folds < 2 {
            return Err(Error::invalid_arg("cross-validation needs at least 2 folds"));
        }
        if n_folds > labels.len() {
            return Err(Error::invalid_arg(format!("{n_folds} folds requested for {} samples", labels.len())));
        }
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let mut assignment = vec![0; labels.len()];
        let mut next = 0;
        for class in 0..n_classes {
            let mut idx: Vec<usize> = (0..labels.len()).filter(|&t| labels[t] == class).collect();
            idx.shuffle(&mut rng);
            for t in idx {
                assignment[t] = next;
                next = (next + 1) % n_folds;
            }
        }
        Ok(Self { assignment, n_folds, seed })
    }

    /// The plan restricted to (possibly repeated) sample indices, e.g. a
    /// bootstrap replicate.
    pub fn project(&self, indices: &[usize]) -> Self {
        Self { assignment: indices.iter().map(|&i| self.assignment[i]).collect(), n_folds: self.n_folds, seed: self.seed }
    }

    pub fn fold_members(&self, fold: usize) -> (Vec<usize>, Vec<usize>) {
        (0..self.assignment.len()).partition(|&t| self.assignment[t] != fold)
    }
}

/// Where the calibration transform is trained.
#[derive(Debug, Clone)]
pub enum Protocol {
    /// Trained and applied on the same data (optimistic).
    TrainOnTest,
    CrossValidation { folds: usize },
    /// Trained on a separate dataset, applied to the evaluated one.
    HeldOut(Arc<LabeledPosteriors>),
}

impl Protocol {
    pub fn tag(&self) -> String {
        match self {
            Protocol::TrainOnTest => "tt".into(),
            Protocol::CrossValidation { folds } => format!("xv:{folds}"),
            Protocol::HeldOut(_) => "heldout".into(),
        }
    }
}

impl fmt::Display for Protocol {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.tag())
    }
}

/// Parsed protocol argument `tt`, `xv:<k>` or `heldout:<path>`; the held-out
/// file is only read by [`ProtocolSpec::resolve`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ProtocolSpec {
    TrainOnTest,
    CrossValidation { folds: usize },
    HeldOut(PathBuf),
}

pub const DEFAULT_FOLDS: usize = 5;

impl FromStr for ProtocolSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "tt" => Ok(ProtocolSpec::TrainOnTest),
            "xv" => Ok(ProtocolSpec::CrossValidation { folds: DEFAULT_FOLDS }),
            _ => {
                if let Some(k) = s.strip_prefix("xv:") {
                    let folds = k.parse().map_err(|_| Error::invalid_arg(format!("bad fold count in '{s}'")))?;
                    return Ok(ProtocolSpec::CrossValidation { folds });
                }
                if let Some(p) = s.strip_prefix("heldout:") {
                    if p.is_empty() {
                        return Err(Error::invalid_arg("heldout protocol needs a path"));
                    }
                    return Ok(ProtocolSpec::HeldOut(PathBuf::from(p)));
                }
                Err(Error::invalid_arg(format!("unknown protocol '{s}' (expected tt|xv:<k>|heldout:<path>)")))
            }
        }
    }
}

impl ProtocolSpec {
    pub fn resolve(&self) -> Result<Protocol> {
        Ok(match self {
            ProtocolSpec::TrainOnTest => Protocol::TrainOnTest,
            ProtocolSpec::CrossValidation { folds } => Protocol::CrossValidation { folds: *folds },
            ProtocolSpec::HeldOut(path) => Protocol::HeldOut(Arc::new(load_dataset(&DatasetSource::path(path))?)),
        })
    }
}

/// Calibrated posteriors and the transforms that produced them.
#[derive(Debug, Clone)]
pub struct Calibrated {
    pub calibrated: LabeledPosteriors,
    pub transforms: Vec<CalibrationTransform>,
    pub plan: Option<FoldPlan>,
}

/// Cross-validation with a fresh stratified plan.
pub fn crossval_calibrate(ds: &LabeledPosteriors, family: Family, folds: usize, seed: u64) -> Result<Calibrated> {
    let plan = FoldPlan::stratified(ds.labels(), ds.n_classes(), folds, seed)?;
    crossval_calibrate_with_plan(ds, family, &plan, None, DEFAULT_FLOOR)
}

/// Each sample is calibrated by the transform fitted on the other folds.
/// Folds are fitted in parallel; the result does not depend on scheduling.
pub fn crossval_calibrate_with_plan(
    ds: &LabeledPosteriors,
    family: Family,
    plan: &FoldPlan,
    priors: Option<&PriorVector>,
    floor: f64,
) -> Result<Calibrated> {
    if plan.assignment.len() != ds.n_samples() {
        return Err(Error::DimensionMismatch { expected: ds.n_samples(), found: plan.assignment.len() });
    }
    let present = ds.class_counts();
    let per_fold: Vec<_> = (0..plan.n_folds).map(|f| plan.fold_members(f)).collect();
    for (f, (train, _)) in per_fold.iter().enumerate() {
        let mut seen = vec![false; ds.n_classes()];
        train.iter().for_each(|&t| seen[ds.label(t)] = true);
        if let Some(c) = (0..ds.n_classes()).find(|&c| present[c] > 0 && !seen[c]) {
            return Err(Error::invalid_data(format!(
                "stratification failed: class '{}' absent from the training portion of fold {f}",
                ds.class_names()[c]
            )));
        }
    }
    let fitted: Vec<Result<(CalibrationTransform, Vec<usize>, LabeledPosteriors)>> = per_fold
        .into_par_iter()
        .enumerate()
        .filter(|(_, (_, held))| !held.is_empty())
        .map(|(f, (train, held))| {
            let mut tx = fit(family, &ds.subset(&train), priors)?;
            tx.provenance.protocol = format!("xv:{}", plan.n_folds);
            tx.provenance.seed = Some(plan.seed);
            tx.provenance.folds = Some(plan.n_folds);
            tx.provenance.fold = Some(f);
            let out = apply_transform_with_floor(&tx, &ds.subset(&held), floor)?;
            Ok((tx, held, out))
        })
        .collect();
    let k = ds.n_classes();
    let mut flat = vec![0.0; ds.n_samples() * k];
    let mut transforms = Vec::with_capacity(plan.n_folds);
    for r in fitted {
        let (tx, held, out) = r?;
        for (j, &t) in held.iter().enumerate() {
            flat[t * k..(t + 1) * k].copy_from_slice(out.row(j));
        }
        transforms.push(tx);
    }
    Ok(Calibrated { calibrated: ds.with_posteriors(flat)?, transforms, plan: Some(plan.clone()) })
}

/// Calibrates `ds` under `protocol`. `seed` drives the fold plan for
/// cross-validation.
pub fn calibrate(
    ds: &LabeledPosteriors,
    family: Family,
    protocol: &Protocol,
    seed: u64,
    priors: Option<&PriorVector>,
    floor: f64,
) -> Result<Calibrated> {
    match protocol {
        Protocol::TrainOnTest => {
            let tx = fit(family, ds, priors)?;
            let calibrated = apply_transform_with_floor(&tx, ds, floor)?;
            Ok(Calibrated { calibrated, transforms: vec![tx], plan: None })
        }
        Protocol::CrossValidation { folds } => {
            let plan = FoldPlan::stratified(ds.labels(), ds.n_classes(), *folds, seed)?;
            crossval_calibrate_with_plan(ds, family, &plan, priors, floor)
        }
        Protocol::HeldOut(train) => {
            if train.n_classes() != ds.n_classes() {
                return Err(Error::DimensionMismatch { expected: ds.n_classes(), found: train.n_classes() });
            }
            let mut tx = fit(family, train, priors)?;
            tx.provenance.protocol = "heldout".into();
            let calibrated = apply_transform_with_floor(&tx, ds, floor)?;
            Ok(Calibrated { calibrated, transforms: vec![tx], plan: None })
        }
    }
}
