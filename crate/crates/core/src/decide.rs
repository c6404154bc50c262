//! Cost matrices, Bayes decisions and (normalized) empirical risks.

use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::data::{empirical_priors, LabeledPosteriors, PriorVector};
use crate::error::{Error, Result};
use crate::numeric::compensated_sum;

/// K×M matrix of costs `c_ij` for deciding `D_j` when the true class is `H_i`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostMatrix {
    #[serde(rename = "decisions")]
    decision_names: Vec<String>,
    costs: Vec<Vec<f64>>,
}

impl CostMatrix {
    pub fn new(costs: Vec<Vec<f64>>, decision_names: Vec<String>) -> Result<Self> {
        let m = decision_names.len();
        if m < 2 {
            return Err(Error::invalid_arg("a cost matrix needs at least 2 decisions"));
        }
        if costs.len() < 2 {
            return Err(Error::invalid_arg("a cost matrix needs at least 2 classes"));
        }
        for row in &costs {
            if row.len() != m {
                return Err(Error::DimensionMismatch { expected: m, found: row.len() });
            }
            if row.iter().any(|c| !c.is_finite() || *c < 0.0) {
                return Err(Error::invalid_arg("costs must be finite and nonnegative"));
            }
        }
        Ok(Self { decision_names, costs })
    }

    /// Square 0-1 cost: zero on the diagonal, one elsewhere.
    pub fn zero_one(k: usize) -> Self {
        let costs = (0..k).map(|i| (0..k).map(|j| if i == j { 0.0 } else { 1.0 }).collect()).collect();
        Self { decision_names: decision_names(k), costs }
    }

    /// 0-1 cost plus a reject column of constant cost.
    pub fn zero_one_reject(k: usize, reject_cost: f64) -> Result<Self> {
        let mut cm = Self::zero_one(k);
        for row in &mut cm.costs {
            row.push(reject_cost);
        }
        cm.decision_names.push("reject".into());
        Self::new(cm.costs, cm.decision_names)
    }

    /// 0-1 cost where errors on the last class cost `cost` instead of one.
    pub fn imbalanced(k: usize, cost: f64) -> Result<Self> {
        let mut cm = Self::zero_one(k);
        for (j, c) in cm.costs[k - 1].iter_mut().enumerate() {
            if j != k - 1 {
                *c = cost;
            }
        }
        Self::new(cm.costs, cm.decision_names)
    }

    /// Reads `{"decisions": [...], "costs": [[...]]}`.
    pub fn from_json(text: &str) -> Result<Self> {
        let raw: CostMatrix = serde_json::from_str(text)?;
        Self::new(raw.costs, raw.decision_names)
    }

    pub fn n_classes(&self) -> usize {
        self.costs.len()
    }

    pub fn n_decisions(&self) -> usize {
        self.decision_names.len()
    }

    pub fn cost(&self, class: usize, decision: usize) -> f64 {
        self.costs[class][decision]
    }

    pub fn costs(&self) -> &[Vec<f64>] {
        &self.costs
    }

    pub fn decision_names(&self) -> &[String] {
        &self.decision_names
    }

    fn check_classes(&self, k: usize) -> Result<()> {
        if self.n_classes() != k {
            return Err(Error::DimensionMismatch { expected: self.n_classes(), found: k });
        }
        Ok(())
    }
}

fn decision_names(k: usize) -> Vec<String> {
    (1..=k).map(|j| format!("D{j}")).collect()
}

/// Built-in cost specifications: `01`, `01-reject:<cost>`, `imb:<cost>` and
/// `alpha:<a1,...,aK>`. Resolving a spec needs the class count.
#[derive(Debug, Clone, PartialEq)]
pub enum CostSpec {
    ZeroOne,
    ZeroOneReject(f64),
    Imbalanced(f64),
    Alpha(Vec<f64>),
    Explicit(CostMatrix),
}

impl CostSpec {
    pub fn build(&self, k: usize) -> Result<CostMatrix> {
        let cm = match self {
            CostSpec::ZeroOne => CostMatrix::zero_one(k),
            CostSpec::ZeroOneReject(c) => CostMatrix::zero_one_reject(k, *c)?,
            CostSpec::Imbalanced(c) => CostMatrix::imbalanced(k, *c)?,
            CostSpec::Alpha(a) => cost_matrix_alpha(a)?,
            CostSpec::Explicit(cm) => cm.clone(),
        };
        cm.check_classes(k)?;
        Ok(cm)
    }
}

impl FromStr for CostSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = |e: &dyn std::fmt::Display| Error::invalid_arg(format!("bad cost spec '{s}': {e}"));
        if s == "01" {
            return Ok(CostSpec::ZeroOne);
        }
        if let Some(c) = s.strip_prefix("01-reject:") {
            return c.parse().map(CostSpec::ZeroOneReject).map_err(|e| bad(&e));
        }
        if let Some(c) = s.strip_prefix("imb:") {
            return c.parse().map(CostSpec::Imbalanced).map_err(|e| bad(&e));
        }
        if let Some(a) = s.strip_prefix("alpha:") {
            let a = a
                .split(',')
                .map(|x| x.trim().parse::<f64>())
                .collect::<Result<Vec<_>, _>>()
                .map_err(|e| bad(&e))?;
            return Ok(CostSpec::Alpha(a));
        }
        Err(bad(&"expected 01, 01-reject:<c>, imb:<c> or alpha:<a1,..,aK>"))
    }
}

/// Cost matrix `C_a(i,j) = (1 - I(i=j)) / ((K-1) a_i)` whose Bayes risks,
/// integrated over `a` with a suitable weight, produce strict scoring rules.
pub fn cost_matrix_alpha(a: &[f64]) -> Result<CostMatrix> {
    let k = a.len();
    if k < 2 {
        return Err(Error::invalid_arg("alpha cost matrix needs at least 2 classes"));
    }
    if a.iter().any(|&x| !(x > 0.0) || !x.is_finite()) {
        return Err(Error::invalid_arg("alpha cost point must be strictly inside the simplex"));
    }
    let s: f64 = a.iter().sum();
    if (s - 1.0).abs() > 1e-9 {
        return Err(Error::invalid_arg(format!("alpha cost point sums to {s}, not 1")));
    }
    let scale = (k - 1) as f64;
    let costs = (0..k)
        .map(|i| (0..k).map(|j| if i == j { 0.0 } else { 1.0 / (scale * a[i]) }).collect())
        .collect();
    CostMatrix::new(costs, decision_names(k))
}

/// `argmin_d sum_i C(H_i, d) q_i`, ties broken by the lowest index.
pub fn bayes_decision(q: &[f64], cm: &CostMatrix) -> Result<usize> {
    cm.check_classes(q.len())?;
    Ok(bayes_decision_unchecked(q, cm))
}

fn bayes_decision_unchecked(q: &[f64], cm: &CostMatrix) -> usize {
    let mut best = 0;
    let mut best_cost = f64::INFINITY;
    for d in 0..cm.n_decisions() {
        let c: f64 = q.iter().enumerate().map(|(i, qi)| cm.costs[i][d] * qi).sum();
        if c < best_cost {
            best_cost = c;
            best = d;
        }
    }
    best
}

/// Bayes decisions for every sample in `ds`.
pub fn bayes_decisions(ds: &LabeledPosteriors, cm: &CostMatrix) -> Result<Vec<usize>> {
    cm.check_classes(ds.n_classes())?;
    Ok(ds.rows().map(|q| bayes_decision_unchecked(q, cm)).collect())
}

/// Decision counts and per-class decision rates behind an expected cost.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RiskBreakdown {
    pub counts: Vec<Vec<usize>>,
    /// `R_ij = N_ij / N_i`; rows of classes without samples are zero.
    pub rates: Vec<Vec<f64>>,
    pub priors: PriorVector,
    /// `sum_ij c_ij P_i R_ij`.
    pub expected_cost: f64,
    /// `(1/N) sum_t c(h_t, d_t)`; equals `expected_cost` under empirical priors.
    pub sample_average_cost: f64,
}

pub fn empirical_risk(ds: &LabeledPosteriors, cm: &CostMatrix, decisions: &[usize]) -> Result<RiskBreakdown> {
    empirical_risk_with_priors(ds, cm, decisions, None)
}

/// Expected cost with optional target priors. Per-class decision rates are
/// always the empirical ones; only `P_i` is replaced.
pub fn empirical_risk_with_priors(
    ds: &LabeledPosteriors,
    cm: &CostMatrix,
    decisions: &[usize],
    priors: Option<&PriorVector>,
) -> Result<RiskBreakdown> {
    let k = ds.n_classes();
    let m = cm.n_decisions();
    cm.check_classes(k)?;
    if decisions.len() != ds.n_samples() {
        return Err(Error::DimensionMismatch { expected: ds.n_samples(), found: decisions.len() });
    }
    let mut counts = vec![vec![0usize; m]; k];
    for (&h, &d) in ds.labels().iter().zip(decisions) {
        if d >= m {
            return Err(Error::invalid_arg(format!("decision index {d} out of range for {m} decisions")));
        }
        counts[h][d] += 1;
    }
    let priors = resolve_priors(ds, priors)?;
    let class_counts = ds.class_counts();
    let rates: Vec<Vec<f64>> = counts
        .iter()
        .zip(&class_counts)
        .map(|(row, &n_i)| {
            row.iter().map(|&c| if n_i == 0 { 0.0 } else { c as f64 / n_i as f64 }).collect()
        })
        .collect();
    let expected_cost = compensated_sum((0..k).flat_map(|i| {
        let p = priors.get(i);
        let rates = &rates;
        (0..m).map(move |j| cm.costs[i][j] * p * rates[i][j])
    }));
    let sample_average_cost = compensated_sum(ds.labels().iter().zip(decisions).map(|(&h, &d)| cm.costs[h][d]))
        / ds.n_samples() as f64;
    Ok(RiskBreakdown { counts, rates, priors, expected_cost, sample_average_cost })
}

/// Returns the supplied priors (checked against `ds`) or the empirical ones.
pub(crate) fn resolve_priors(ds: &LabeledPosteriors, priors: Option<&PriorVector>) -> Result<PriorVector> {
    match priors {
        None => Ok(empirical_priors(ds)),
        Some(p) => {
            if p.len() != ds.n_classes() {
                return Err(Error::DimensionMismatch { expected: ds.n_classes(), found: p.len() });
            }
            let counts = ds.class_counts();
            if let Some(class) = (0..p.len()).find(|&i| p.get(i) > 0.0 && counts[i] == 0) {
                return Err(Error::AbsentClass { class });
            }
            Ok(p.clone())
        }
    }
}

/// Expected cost of the best constant decision, `min_d sum_i c_id P_i`.
pub fn naive_risk(priors: &PriorVector, cm: &CostMatrix) -> Result<f64> {
    cm.check_classes(priors.len())?;
    Ok((0..cm.n_decisions())
        .map(|d| (0..priors.len()).map(|i| cm.costs[i][d] * priors.get(i)).sum::<f64>())
        .fold(f64::INFINITY, f64::min))
}

/// Bayes-decision expected cost divided by the naive expected cost.
pub fn normalized_bayes_risk(ds: &LabeledPosteriors, cm: &CostMatrix, priors: Option<&PriorVector>) -> Result<f64> {
    let decisions = bayes_decisions(ds, cm)?;
    let risk = empirical_risk_with_priors(ds, cm, &decisions, priors)?;
    let naive = naive_risk(&risk.priors, cm)?;
    if naive <= 0.0 {
        return Err(Error::DegenerateCostMatrix);
    }
    Ok(risk.expected_cost / naive)
}
