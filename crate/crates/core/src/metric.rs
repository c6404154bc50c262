//! Named metric specifications, shared by the evaluator and the bootstrap.
//!
//! Grammar (one metric per token):
//!
//! | token | metric |
//! |---|---|
//! | `ce`, `bs` | cross-entropy, Brier score |
//! | `nce`, `nbs` | the same divided by the naive system's value |
//! | `nrisk:<cost>` | normalized Bayes risk, `<cost>` as in [`CostSpec`] or `@file.json` |
//! | `ece[:M]`, `ecemc[:M]` | binary and max-confidence calibration error (0-1 scale) |
//! | `rcl:<rule>:<method>:<protocol>` | relative calibration loss in percent |
//!
//! [`parse_metric_list`] accepts comma-separated tokens; commas inside an
//! `alpha:` cost vector are kept with their metric.

use std::collections::HashMap;
use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;
use std::sync::Arc;

use serde::Serialize;

use crate::caltx::{calibrate, crossval_calibrate_with_plan, Family, FoldPlan, Protocol, ProtocolSpec};
use crate::calmet::{calibration_report, ece_binary, ece_multiclass, CalibrationReport, EceReport, DEFAULT_ECE_BINS};
use crate::data::{load_dataset, DatasetSource, LabeledPosteriors, PriorVector, DEFAULT_FLOOR};
use crate::decide::{bayes_decisions, empirical_risk_with_priors, naive_risk, CostMatrix, CostSpec, RiskBreakdown};
use crate::epsr::{expected_psr, normalized_epsr, ScoringRule};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub enum MetricKind {
    Epsr(ScoringRule),
    NormalizedEpsr(ScoringRule),
    NormalizedRisk(CostSpec),
    Ece { bins: usize },
    EceMulticlass { bins: usize },
    Rcl { rule: ScoringRule, family: Family, protocol: ProtocolSpec },
}

/// A metric together with the token it was parsed from.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricSpec {
    pub name: String,
    pub kind: MetricKind,
}

impl fmt::Display for MetricSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.name)
    }
}

fn parse_bins(rest: Option<&str>, token: &str) -> Result<usize> {
    match rest {
        None => Ok(DEFAULT_ECE_BINS),
        Some(m) => {
            let bins: usize = m.parse().map_err(|_| Error::invalid_arg(format!("bad bin count in '{token}'")))?;
            if bins < 1 {
                return Err(Error::invalid_arg("ECE needs at least one bin"));
            }
            Ok(bins)
        }
    }
}

impl FromStr for MetricSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let (head, rest) = match s.split_once(':') {
            Some((h, r)) => (h, Some(r)),
            None => (s, None),
        };
        let kind = match (head, rest) {
            ("ce", None) => MetricKind::Epsr(ScoringRule::Log),
            ("bs", None) => MetricKind::Epsr(ScoringRule::Brier),
            ("nce", None) => MetricKind::NormalizedEpsr(ScoringRule::Log),
            ("nbs", None) => MetricKind::NormalizedEpsr(ScoringRule::Brier),
            ("nrisk", Some(cost)) => {
                if let Some(path) = cost.strip_prefix('@') {
                    let text = std::fs::read_to_string(path)
                        .map_err(|source| Error::Io { path: PathBuf::from(path), source })?;
                    MetricKind::NormalizedRisk(CostSpec::Explicit(CostMatrix::from_json(&text)?))
                } else {
                    MetricKind::NormalizedRisk(cost.parse()?)
                }
            }
            ("ece", _) => MetricKind::Ece { bins: parse_bins(rest, s)? },
            ("ecemc", _) => MetricKind::EceMulticlass { bins: parse_bins(rest, s)? },
            ("rcl", Some(r)) => {
                let mut parts = r.splitn(3, ':');
                let (Some(rule), Some(method), Some(protocol)) = (parts.next(), parts.next(), parts.next()) else {
                    return Err(Error::invalid_arg(format!("'{s}': expected rcl:<rule>:<method>:<protocol>")));
                };
                let (family, protocol) = split_method_protocol(method, protocol)?;
                MetricKind::Rcl { rule: rule.parse()?, family, protocol }
            }
            _ => return Err(Error::invalid_arg(format!("unknown metric '{s}'"))),
        };
        Ok(MetricSpec { name: s.to_string(), kind })
    }
}

/// `hist:10:xv:5` arrives as method `hist`, protocol `10:xv:5`.
fn split_method_protocol(method: &str, protocol: &str) -> Result<(Family, ProtocolSpec)> {
    if method == "hist" {
        if let Some((m, p)) = protocol.split_once(':') {
            if m.chars().all(|c| c.is_ascii_digit()) && !m.is_empty() {
                return Ok((format!("hist:{m}").parse()?, p.parse()?));
            }
        }
    }
    Ok((method.parse()?, protocol.parse()?))
}

/// Splits a comma-separated metric list, re-attaching numeric fragments of
/// `alpha:` vectors to their metric.
pub fn parse_metric_list(s: &str) -> Result<Vec<MetricSpec>> {
    let mut tokens: Vec<String> = Vec::new();
    for piece in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        match tokens.last_mut() {
            Some(last) if piece.parse::<f64>().is_ok() => {
                last.push(',');
                last.push_str(piece);
            }
            _ => tokens.push(piece.to_string()),
        }
    }
    if tokens.is_empty() {
        return Err(Error::invalid_arg("empty metric list"));
    }
    tokens.iter().map(|t| t.parse()).collect()
}

/// Evaluation settings shared by all metrics of one run.
#[derive(Debug, Clone)]
pub struct MetricContext {
    pub priors: Option<PriorVector>,
    pub floor: f64,
    /// Seed for cross-validation fold plans.
    pub seed: u64,
    /// Fold plan to use instead of a fresh one (bootstrap replicates).
    pub fold_plan: Option<FoldPlan>,
    heldout: HashMap<PathBuf, Arc<LabeledPosteriors>>,
}

impl Default for MetricContext {
    fn default() -> Self {
        Self { priors: None, floor: DEFAULT_FLOOR, seed: 0, fold_plan: None, heldout: HashMap::new() }
    }
}

impl MetricContext {
    pub fn new(priors: Option<PriorVector>, floor: f64, seed: u64) -> Self {
        Self { priors, floor, seed, ..Self::default() }
    }

    /// Loads every held-out training set named by `specs` once.
    pub fn preload(&mut self, specs: &[MetricSpec]) -> Result<()> {
        for spec in specs {
            if let MetricKind::Rcl { protocol: ProtocolSpec::HeldOut(path), .. } = &spec.kind {
                if !self.heldout.contains_key(path) {
                    let ds = load_dataset(&DatasetSource::path(path))?;
                    self.heldout.insert(path.clone(), Arc::new(ds));
                }
            }
        }
        Ok(())
    }

    fn protocol(&self, spec: &ProtocolSpec) -> Result<Protocol> {
        match spec {
            ProtocolSpec::HeldOut(path) => match self.heldout.get(path) {
                Some(ds) => Ok(Protocol::HeldOut(ds.clone())),
                None => spec.resolve(),
            },
            other => other.resolve(),
        }
    }
}

/// Additional structured output of a metric.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(untagged)]
pub enum MetricDetail {
    Risk(RiskBreakdown),
    Calibration(CalibrationReport),
    Ece(EceReport),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricOutcome {
    pub value: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub detail: Option<MetricDetail>,
}

impl MetricSpec {
    pub fn evaluate(&self, ds: &LabeledPosteriors, ctx: &MetricContext) -> Result<f64> {
        self.evaluate_detailed(ds, ctx).map(|o| o.value)
    }

    pub fn evaluate_detailed(&self, ds: &LabeledPosteriors, ctx: &MetricContext) -> Result<MetricOutcome> {
        let priors = ctx.priors.as_ref();
        let plain = |value| Ok(MetricOutcome { value, detail: None });
        match &self.kind {
            MetricKind::Epsr(rule) => plain(expected_psr(ds, *rule, priors)?),
            MetricKind::NormalizedEpsr(rule) => plain(normalized_epsr(ds, *rule, priors)?),
            MetricKind::NormalizedRisk(cost) => {
                let cm = cost.build(ds.n_classes())?;
                let decisions = bayes_decisions(ds, &cm)?;
                let risk = empirical_risk_with_priors(ds, &cm, &decisions, priors)?;
                let naive = naive_risk(&risk.priors, &cm)?;
                if naive <= 0.0 {
                    return Err(Error::DegenerateCostMatrix);
                }
                Ok(MetricOutcome { value: risk.expected_cost / naive, detail: Some(MetricDetail::Risk(risk)) })
            }
            MetricKind::Ece { bins } => {
                let r = ece_binary(ds, *bins)?;
                Ok(MetricOutcome { value: r.ece, detail: Some(MetricDetail::Ece(r)) })
            }
            MetricKind::EceMulticlass { bins } => {
                let r = ece_multiclass(ds, *bins)?;
                Ok(MetricOutcome { value: r.ece, detail: Some(MetricDetail::Ece(r)) })
            }
            MetricKind::Rcl { rule, family, protocol } => {
                let protocol = ctx.protocol(protocol)?;
                let cal = match (&protocol, &ctx.fold_plan) {
                    (Protocol::CrossValidation { folds }, Some(plan)) if plan.n_folds == *folds => {
                        crossval_calibrate_with_plan(ds, *family, plan, priors, ctx.floor)?
                    }
                    _ => calibrate(ds, *family, &protocol, ctx.seed, priors, ctx.floor)?,
                };
                let r = calibration_report(ds, &cal, *rule, priors, &family.short_name(), &protocol.tag())?;
                Ok(MetricOutcome { value: r.rcl_percent, detail: Some(MetricDetail::Calibration(r)) })
            }
        }
    }

    /// Cross-validation fold count, when the metric retrains under one.
    pub fn crossval_folds(&self) -> Option<usize> {
        match &self.kind {
            MetricKind::Rcl { protocol: ProtocolSpec::CrossValidation { folds }, .. } => Some(*folds),
            _ => None,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_all_forms() {
        let specs = parse_metric_list("nce,nbs,nrisk:01,nrisk:alpha:0.3,0.7,ece:15,ecemc,rcl:bs:dp:xv:5").unwrap();
        let kinds: Vec<_> = specs.iter().map(|s| s.kind.clone()).collect();
        assert_eq!(kinds[0], MetricKind::NormalizedEpsr(ScoringRule::Log));
        assert_eq!(kinds[3], MetricKind::NormalizedRisk(CostSpec::Alpha(vec![0.3, 0.7])));
        assert_eq!(kinds[4], MetricKind::Ece { bins: 15 });
        assert_eq!(kinds[5], MetricKind::EceMulticlass { bins: 10 });
        assert_eq!(
            kinds[6],
            MetricKind::Rcl {
                rule: ScoringRule::Brier,
                family: Family::AffineDp,
                protocol: ProtocolSpec::CrossValidation { folds: 5 }
            }
        );
        assert_eq!(specs[3].name, "nrisk:alpha:0.3,0.7");
        let h: MetricSpec = "rcl:ce:hist:20:tt".parse().unwrap();
        assert_eq!(
            h.kind,
            MetricKind::Rcl { rule: ScoringRule::Log, family: Family::Histogram { bins: 20 }, protocol: ProtocolSpec::TrainOnTest }
        );
        assert!(parse_metric_list("nrisk").is_err());
        assert!(parse_metric_list("auc").is_err());
        assert!(parse_metric_list("").is_err());
    }

    #[test]
    fn reject_cost_metric() {
        let ds = LabeledPosteriors::new(vec![vec![0.55, 0.45], vec![0.95, 0.05], vec![0.04, 0.96]], vec![1, 0, 1]).unwrap();
        let spec: MetricSpec = "nrisk:01-reject:0.1".parse().unwrap();
        let out = spec.evaluate_detailed(&ds, &MetricContext::default()).unwrap();
        let Some(MetricDetail::Risk(r)) = out.detail else { panic!() };
        // first sample rejected at cost 0.1, others correct
        assert!((r.sample_average_cost - 0.1 / 3.0).abs() < 1e-12);
        assert!((out.value - (0.1 / 3.0) / 0.1).abs() < 1e-12);
    }
}
