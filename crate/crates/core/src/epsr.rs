//! Proper scoring rules and their expectations over a dataset.
//!
//! Both strict rules use the natural logarithm / the 1/K-scaled squared
//! error. Expectations can be re-parameterized by target class priors, in
//! which case each sample of class `h` is weighted by `P_h / N_h`.
//!
//! Binary weighted Bayes-risk curves are built on the open grid
//! `a1 = i / (G + 1)`, `i = 1..=G`, with the cost matrix that thresholds the
//! class-1 posterior at `a1`. Integrated with the trapezoid rule, the
//! uniform weight recovers the cross-entropy and the Beta(2,2) weight the
//! Brier score.

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, Exp1};
use serde::{Deserialize, Serialize};

use crate::data::{LabeledPosteriors, PriorVector};
use crate::decide::{bayes_decision, cost_matrix_alpha, resolve_priors};
use crate::error::{Error, Result};
use crate::numeric::{compensated_sum, trapezoid};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScoringRule {
    /// Negative log loss; its expectation is the cross-entropy.
    Log,
    /// `(1/K) sum_i (q_i - I(h = i))^2`; its expectation is the Brier score.
    Brier,
}

impl ScoringRule {
    pub fn name(self) -> &'static str {
        match self {
            ScoringRule::Log => "log",
            ScoringRule::Brier => "brier",
        }
    }
}

impl fmt::Display for ScoringRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ScoringRule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "log" | "ce" => Ok(ScoringRule::Log),
            "brier" | "bs" => Ok(ScoringRule::Brier),
            _ => Err(Error::invalid_arg(format!("unknown scoring rule '{s}' (expected log|ce|brier|bs)"))),
        }
    }
}

/// Loss of posterior `q` for a sample of class `h`.
pub fn psr_pointwise(rule: ScoringRule, q: &[f64], h: usize) -> f64 {
    match rule {
        ScoringRule::Log => -q[h].ln(),
        ScoringRule::Brier => {
            let k = q.len() as f64;
            q.iter()
                .enumerate()
                .map(|(i, &qi)| {
                    let y = if i == h { 1.0 } else { 0.0 };
                    (qi - y) * (qi - y)
                })
                .sum::<f64>()
                / k
        }
    }
}

/// `E_{h ~ p}[C*(h, q)]`.
pub fn expected_loss_under(rule: ScoringRule, p: &[f64], q: &[f64]) -> f64 {
    p.iter().enumerate().filter(|(_, &ph)| ph > 0.0).map(|(h, &ph)| ph * psr_pointwise(rule, q, h)).sum()
}

/// Dataset expectation of a scoring rule, optionally reweighted to `priors`.
pub fn expected_psr(ds: &LabeledPosteriors, rule: ScoringRule, priors: Option<&PriorVector>) -> Result<f64> {
    match priors {
        None => Ok(compensated_sum(ds.samples().map(|(q, h)| psr_pointwise(rule, q, h))) / ds.n_samples() as f64),
        Some(_) => {
            let priors = resolve_priors(ds, priors)?;
            let counts = ds.class_counts();
            let weights: Vec<f64> = (0..ds.n_classes())
                .map(|i| if counts[i] == 0 { 0.0 } else { priors.get(i) / counts[i] as f64 })
                .collect();
            Ok(compensated_sum(ds.samples().map(|(q, h)| weights[h] * psr_pointwise(rule, q, h))))
        }
    }
}

/// Expected loss of the system that always outputs `priors`.
pub fn naive_epsr(priors: &PriorVector, rule: ScoringRule) -> f64 {
    let p = priors.as_slice();
    match rule {
        ScoringRule::Log => -p.iter().filter(|&&x| x > 0.0).map(|&x| x * x.ln()).sum::<f64>(),
        ScoringRule::Brier => p.iter().map(|&x| x * (1.0 - x)).sum::<f64>() / p.len() as f64,
    }
}

/// Expected loss divided by the naive system's expected loss under the
/// same priors.
pub fn normalized_epsr(ds: &LabeledPosteriors, rule: ScoringRule, priors: Option<&PriorVector>) -> Result<f64> {
    let resolved = resolve_priors(ds, priors)?;
    let baseline = naive_epsr(&resolved, rule);
    if !(baseline > 0.0) {
        return Err(Error::NormalizationUndefined);
    }
    Ok(expected_psr(ds, rule, priors)? / baseline)
}

/// Weight applied to the binary Bayes-risk curve.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WeightKind {
    /// `W = 1`; integrates to the cross-entropy.
    Uniform,
    /// `W = a1 (1 - a1) / B(2,2)`. Because the Brier loss here carries the
    /// `1/K` factor, the integral is three times the Brier score; the ratio
    /// to the naive curve's integral is exactly the normalized Brier score.
    Beta22,
}

impl WeightKind {
    pub fn weight(self, a1: f64) -> f64 {
        match self {
            WeightKind::Uniform => 1.0,
            WeightKind::Beta22 => 6.0 * a1 * (1.0 - a1),
        }
    }

    /// The scoring rule whose expectation is the integral of this curve.
    pub fn matching_rule(self) -> ScoringRule {
        match self {
            WeightKind::Uniform => ScoringRule::Log,
            WeightKind::Beta22 => ScoringRule::Brier,
        }
    }
}

impl FromStr for WeightKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "uniform" => Ok(WeightKind::Uniform),
            "beta22" => Ok(WeightKind::Beta22),
            _ => Err(Error::invalid_arg(format!("unknown weight '{s}' (expected uniform|beta22)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RiskCurve {
    pub grid: Vec<f64>,
    pub risks: Vec<f64>,
    pub weight_kind: WeightKind,
}

impl RiskCurve {
    /// Trapezoid integral over the grid.
    pub fn integral(&self) -> f64 {
        trapezoid(&self.grid, &self.risks)
    }

    /// Writes `a1,weighted_risk` rows.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["a1", "weighted_risk"])?;
        for (a, r) in self.grid.iter().zip(&self.risks) {
            w.write_record([a.to_string(), r.to_string()])?;
        }
        w.flush().map_err(|e| Error::Io { path: "<csv>".into(), source: e })?;
        Ok(())
    }
}

pub const DEFAULT_RISK_GRID: usize = 2000;

/// Weighted Bayes-risk curve of a binary dataset.
pub fn risk_curve(ds: &LabeledPosteriors, grid_size: usize, weight_kind: WeightKind) -> Result<RiskCurve> {
    if ds.n_classes() != 2 {
        return Err(Error::invalid_arg(format!(
            "risk curves need a binary dataset, found {} classes",
            ds.n_classes()
        )));
    }
    if grid_size < 3 {
        return Err(Error::invalid_arg("risk curve grid needs at least 3 points"));
    }
    // Deciding D1 is Bayes-optimal exactly when q1 >= a1.
    let mut class0: Vec<f64> = Vec::new();
    let mut class1: Vec<f64> = Vec::new();
    for (q, h) in ds.samples() {
        if h == 0 {
            class0.push(q[0]);
        } else {
            class1.push(q[0]);
        }
    }
    class0.sort_by(f64::total_cmp);
    class1.sort_by(f64::total_cmp);
    let n = ds.n_samples() as f64;
    let denom = (grid_size + 1) as f64;
    let grid: Vec<f64> = (1..=grid_size).map(|i| i as f64 / denom).collect();
    let risks = grid
        .iter()
        .map(|&a1| {
            let miss0 = class0.partition_point(|&x| x < a1) as f64;
            let miss1 = (class1.len() - class1.partition_point(|&x| x < a1)) as f64;
            let risk = (miss0 / a1 + miss1 / (1.0 - a1)) / n;
            weight_kind.weight(a1) * risk
        })
        .collect();
    Ok(RiskCurve { grid, risks, weight_kind })
}

/// Unweighted Bayes risk of a binary dataset under `cost_matrix_alpha([a1, 1 - a1])`,
/// evaluated with the general decision rule.
pub fn bayes_risk_at(ds: &LabeledPosteriors, a1: f64) -> Result<f64> {
    if ds.n_classes() != 2 {
        return Err(Error::invalid_arg("bayes_risk_at needs a binary dataset"));
    }
    let cm = cost_matrix_alpha(&[a1, 1.0 - a1])?;
    let mut total = Vec::with_capacity(ds.n_samples());
    for (q, h) in ds.samples() {
        total.push(cm.cost(h, bayes_decision(q, &cm)?));
    }
    Ok(compensated_sum(total) / ds.n_samples() as f64)
}

/// Monte Carlo estimate of the integral of Bayes risks over the simplex
/// with cost points drawn uniformly (Dirichlet(1, ..., 1)). With this
/// weight the integral equals the cross-entropy for any K. The estimator
/// has heavy tails near the simplex faces, so it needs many draws.
pub fn mc_risk_integral(ds: &LabeledPosteriors, draws: usize, seed: u64) -> Result<f64> {
    if draws == 0 {
        return Err(Error::invalid_arg("need at least one draw"));
    }
    let k = ds.n_classes();
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut a = vec![0.0; k];
    let mut totals = Vec::with_capacity(draws);
    let n = ds.n_samples() as f64;
    for _ in 0..draws {
        loop {
            for x in a.iter_mut() {
                *x = Exp1.sample(&mut rng);
            }
            let s: f64 = a.iter().sum();
            a.iter_mut().for_each(|x| *x /= s);
            if a.iter().all(|&x| x > 0.0) {
                break;
            }
        }
        let scale = (k - 1) as f64;
        let risk = compensated_sum(ds.samples().map(|(q, h)| {
            // argmin_j sum_{i != j} q_i / a_i  ==  argmax_j q_j / a_j
            let mut best = 0;
            for j in 1..k {
                if q[j] / a[j] > q[best] / a[best] {
                    best = j;
                }
            }
            if best == h {
                0.0
            } else {
                1.0 / (scale * a[h])
            }
        })) / n;
        totals.push(risk);
    }
    Ok(compensated_sum(totals) / draws as f64)
}

/// Grid points of the open simplex with spacing `step`, for K in {2, 3}.
pub fn simplex_grid(k: usize, step: f64) -> Result<Vec<Vec<f64>>> {
    if !(step > 0.0 && step < 0.5) {
        return Err(Error::invalid_arg("grid step must lie in (0, 0.5)"));
    }
    let n = (1.0 / step).round() as usize;
    match k {
        2 => Ok((1..n).map(|i| {
            let q1 = i as f64 / n as f64;
            vec![q1, 1.0 - q1]
        })
        .collect()),
        3 => {
            let mut pts = Vec::new();
            for i in 1..n {
                for j in 1..(n - i) {
                    let q1 = i as f64 / n as f64;
                    let q2 = j as f64 / n as f64;
                    pts.push(vec![q1, q2, 1.0 - q1 - q2]);
                }
            }
            Ok(pts)
        }
        _ => Err(Error::invalid_arg("simplex grid supports K = 2 or 3")),
    }
}

/// Brute-force minimizer over a simplex grid of `E_{h ~ p}[C*(h, q)]`.
/// For a strict rule the result lies within one grid step of `p`.
pub fn psr_property_probe(rule: ScoringRule, p: &[f64], step: f64) -> Result<Vec<f64>> {
    let grid = simplex_grid(p.len(), step)?;
    let mut best = &grid[0];
    let mut best_val = f64::INFINITY;
    for q in &grid {
        let v = expected_loss_under(rule, p, q);
        if v < best_val {
            best_val = v;
            best = q;
        }
    }
    Ok(best.clone())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::empirical_priors;
    use proptest::prelude::*;

    fn two_sample() -> LabeledPosteriors {
        LabeledPosteriors::new(vec![vec![0.8, 0.2], vec![0.3, 0.7]], vec![0, 1]).unwrap()
    }

    #[test]
    fn pointwise_values() {
        assert_eq!(psr_pointwise(ScoringRule::Log, &[1.0, 0.0], 0), 0.0);
        assert!((psr_pointwise(ScoringRule::Log, &[0.5, 0.5], 1) - 2f64.ln()).abs() < 1e-15);
        assert!((psr_pointwise(ScoringRule::Brier, &[0.5, 0.5], 0) - 0.25).abs() < 1e-15);
    }

    #[test]
    fn expected_psr_examples() {
        let ds = two_sample();
        let ce = expected_psr(&ds, ScoringRule::Log, None).unwrap();
        assert!((ce - (-(0.8f64.ln()) - 0.7f64.ln()) / 2.0).abs() < 1e-15);
        assert!((ce - 0.289_909_247_6).abs() < 1e-9);
        let p = PriorVector::new(vec![1.0, 0.0]).unwrap();
        let ce0 = expected_psr(&ds, ScoringRule::Log, Some(&p)).unwrap();
        assert!((ce0 - 0.223_143_551_3).abs() < 1e-9);
        let perfect = LabeledPosteriors::new(vec![vec![1.0, 0.0], vec![0.0, 1.0]], vec![0, 1]).unwrap();
        for rule in [ScoringRule::Log, ScoringRule::Brier] {
            assert_eq!(expected_psr(&perfect, rule, None).unwrap(), 0.0);
        }
    }

    #[test]
    fn absent_class_with_positive_prior() {
        let ds = LabeledPosteriors::new(vec![vec![0.8, 0.2]], vec![0]).unwrap();
        let p = PriorVector::new(vec![0.5, 0.5]).unwrap();
        assert!(matches!(expected_psr(&ds, ScoringRule::Log, Some(&p)), Err(Error::AbsentClass { class: 1 })));
    }

    #[test]
    fn naive_values() {
        let half = PriorVector::new(vec![0.5, 0.5]).unwrap();
        assert!((naive_epsr(&half, ScoringRule::Log) - 2f64.ln()).abs() < 1e-15);
        let p = PriorVector::new(vec![0.8, 0.2]).unwrap();
        // -(0.8 ln 0.8 + 0.2 ln 0.2)
        assert!((naive_epsr(&p, ScoringRule::Log) - 0.500_402_423_538_188_5).abs() < 1e-12);
        assert!((naive_epsr(&p, ScoringRule::Brier) - 0.16).abs() < 1e-15);
        let degenerate = PriorVector::new(vec![1.0, 0.0]).unwrap();
        assert_eq!(naive_epsr(&degenerate, ScoringRule::Log), 0.0);
    }

    #[test]
    fn normalized_anchors() {
        let mut labels = vec![0; 8];
        labels.extend([1, 1]);
        let naive = LabeledPosteriors::new(vec![vec![0.8, 0.2]; 10], labels).unwrap();
        for rule in [ScoringRule::Log, ScoringRule::Brier] {
            assert!((normalized_epsr(&naive, rule, None).unwrap() - 1.0).abs() < 1e-12);
        }
        let perfect = LabeledPosteriors::new(vec![vec![1.0, 0.0], vec![0.0, 1.0]], vec![0, 1]).unwrap();
        assert_eq!(normalized_epsr(&perfect, ScoringRule::Brier, None).unwrap(), 0.0);
        let one_class = LabeledPosteriors::new(vec![vec![0.8, 0.2]; 3], vec![0; 3]).unwrap();
        assert!(matches!(normalized_epsr(&one_class, ScoringRule::Log, None), Err(Error::NormalizationUndefined)));
    }

    #[test]
    fn risk_curve_errors_and_size() {
        let ds = two_sample();
        assert_eq!(risk_curve(&ds, 3, WeightKind::Uniform).unwrap().grid, vec![0.25, 0.5, 0.75]);
        assert!(risk_curve(&ds, 2, WeightKind::Uniform).is_err());
        let k3 = LabeledPosteriors::new(vec![vec![0.2, 0.3, 0.5]], vec![0]).unwrap();
        assert!(risk_curve(&k3, 10, WeightKind::Uniform).is_err());
    }

    #[test]
    fn risk_curve_matches_general_decision_rule() {
        // posteriors off the grid so no sample sits on a threshold
        let rows: Vec<Vec<f64>> = (0..50).map(|t| {
            let q1 = (t as f64 + 0.37) / 50.3;
            vec![q1, 1.0 - q1]
        }).collect();
        let labels: Vec<usize> = (0..50).map(|t| (t * 13 % 7 < 3) as usize).collect();
        let ds = LabeledPosteriors::new(rows, labels).unwrap();
        let curve = risk_curve(&ds, 99, WeightKind::Uniform).unwrap();
        for (a1, r) in curve.grid.iter().zip(&curve.risks) {
            let direct = bayes_risk_at(&ds, *a1).unwrap();
            assert!((direct - r).abs() < 1e-12, "a1={a1}: {direct} vs {r}");
        }
    }

    #[test]
    fn curve_integrals_on_fine_grid() {
        let rows = vec![vec![0.7, 0.3], vec![0.35, 0.65], vec![0.9, 0.1], vec![0.45, 0.55]];
        let ds = LabeledPosteriors::new(rows, vec![0, 1, 1, 0]).unwrap();
        let ce = expected_psr(&ds, ScoringRule::Log, None).unwrap();
        let bs = expected_psr(&ds, ScoringRule::Brier, None).unwrap();
        let u = risk_curve(&ds, 200_000, WeightKind::Uniform).unwrap().integral();
        let b = risk_curve(&ds, 200_000, WeightKind::Beta22).unwrap().integral();
        assert!((u - ce).abs() / ce < 1e-3, "{u} vs {ce}");
        assert!((b - 3.0 * bs).abs() / bs < 1e-3, "{b} vs 3 x {bs}");
    }

    #[test]
    fn risk_at_half_is_twice_error_rate() {
        let ds = two_sample();
        assert_eq!(bayes_risk_at(&ds, 0.5).unwrap(), 0.0);
        let wrong = LabeledPosteriors::new(vec![vec![0.8, 0.2], vec![0.3, 0.7]], vec![1, 1]).unwrap();
        assert_eq!(bayes_risk_at(&wrong, 0.5).unwrap(), 2.0 * 0.5);
    }

    #[test]
    fn mc_integral_approximates_ce_for_three_classes() {
        let rows = vec![vec![0.5, 0.3, 0.2], vec![0.1, 0.7, 0.2], vec![0.2, 0.2, 0.6]];
        let ds = LabeledPosteriors::new(rows, vec![0, 1, 0]).unwrap();
        let ce = expected_psr(&ds, ScoringRule::Log, None).unwrap();
        let mc = mc_risk_integral(&ds, 200_000, 11).unwrap();
        assert!((mc - ce).abs() / ce < 0.03, "mc {mc} vs ce {ce}");
    }

    #[test]
    fn probe_examples() {
        assert_eq!(psr_property_probe(ScoringRule::Log, &[0.5, 0.5], 0.01).unwrap(), vec![0.5, 0.5]);
        let q = psr_property_probe(ScoringRule::Brier, &[0.7, 0.3], 0.01).unwrap();
        assert!((q[0] - 0.7).abs() < 1e-12);
        let p = [0.2, 0.3, 0.5];
        let q = psr_property_probe(ScoringRule::Log, &p, 0.02).unwrap();
        assert!(q.iter().zip(&p).all(|(a, b)| (a - b).abs() <= 0.02 + 1e-12), "{q:?}");
        assert_eq!(simplex_grid(2, 0.01).unwrap().len(), 99);
    }

    fn simplex(k: usize) -> impl Strategy<Value = Vec<f64>> {
        prop::collection::vec(0.001f64..1.0, k).prop_map(|mut v| {
            let s: f64 = v.iter().sum();
            v.iter_mut().for_each(|x| *x /= s);
            v
        })
    }

    proptest! {
        #[test]
        fn prior_form_matches_plain_average(
            rows in prop::collection::vec(simplex(3), 3..30),
            rule in prop_oneof![Just(ScoringRule::Log), Just(ScoringRule::Brier)],
        ) {
            let labels: Vec<usize> = (0..rows.len()).map(|t| t % 3).collect();
            let ds = LabeledPosteriors::new(rows, labels).unwrap();
            let p = empirical_priors(&ds);
            let plain = expected_psr(&ds, rule, None).unwrap();
            let weighted = expected_psr(&ds, rule, Some(&p)).unwrap();
            prop_assert!((plain - weighted).abs() <= 1e-12);
        }

        #[test]
        fn pointwise_bounds(q in simplex(4), h in 0usize..4) {
            let b = psr_pointwise(ScoringRule::Brier, &q, h);
            prop_assert!((0.0..=2.0 / 4.0 + 1e-15).contains(&b));
            prop_assert!(psr_pointwise(ScoringRule::Log, &q, h) >= 0.0);
        }
    }
}
