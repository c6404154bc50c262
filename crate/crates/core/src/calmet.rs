//! Calibration metrics: calibration loss, binned calibration errors, score
//! divergences and the semi-empirical decomposition of an EPSR.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::caltx::{calibrate, Calibrated, Family, Protocol};
use crate::caltx::bin_index;
use crate::data::{LabeledPosteriors, PriorVector, DEFAULT_FLOOR};
use crate::epsr::{expected_psr, psr_pointwise, ScoringRule};
use crate::error::{Error, Result};
use crate::numeric::{argmax, compensated_sum};

pub const DEFAULT_ECE_BINS: usize = 10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationReport {
    pub rule: ScoringRule,
    pub method: String,
    pub protocol: String,
    pub epsr_raw: f64,
    pub epsr_min: f64,
    pub cal_loss: f64,
    pub rcl_percent: f64,
}

impl CalibrationReport {
    pub fn new(rule: ScoringRule, method: String, protocol: String, epsr_raw: f64, epsr_min: f64) -> Self {
        let cal_loss = epsr_raw - epsr_min;
        let rcl_percent = if epsr_raw == 0.0 { 0.0 } else { 100.0 * cal_loss / epsr_raw };
        Self { rule, method, protocol, epsr_raw, epsr_min, cal_loss, rcl_percent }
    }
}

/// Calibration loss from already calibrated posteriors; both expectations
/// use the same prior parameterization.
pub fn calibration_report(
    ds: &LabeledPosteriors,
    calibrated: &Calibrated,
    rule: ScoringRule,
    priors: Option<&PriorVector>,
    method: &str,
    protocol: &str,
) -> Result<CalibrationReport> {
    check_aligned(ds, &calibrated.calibrated)?;
    let raw = expected_psr(ds, rule, priors)?;
    let min = expected_psr(&calibrated.calibrated, rule, priors)?;
    Ok(CalibrationReport::new(rule, method.into(), protocol.into(), raw, min))
}

/// Fits `family` under `protocol`, applies it and reports how much of the
/// raw EPSR the calibrator recovers.
pub fn calibration_loss(
    ds: &LabeledPosteriors,
    rule: ScoringRule,
    family: Family,
    protocol: &Protocol,
    seed: u64,
    priors: Option<&PriorVector>,
) -> Result<CalibrationReport> {
    let cal = calibrate(ds, family, protocol, seed, priors, DEFAULT_FLOOR)?;
    calibration_report(ds, &cal, rule, priors, &family.short_name(), &protocol.tag())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinStats {
    pub counts: Vec<usize>,
    /// Mean predicted probability per bin (0 for empty bins).
    pub mean_predicted: Vec<f64>,
    /// Empirical frequency of the target event per bin (0 for empty bins).
    pub empirical: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EceReport {
    pub bins: usize,
    pub ece: f64,
    pub ece_percent: f64,
    pub stats: BinStats,
}

fn binned_error(pairs: impl Iterator<Item = (f64, bool)>, bins: usize, n: usize) -> Result<EceReport> {
    if bins < 1 {
        return Err(Error::invalid_arg("ECE needs at least one bin"));
    }
    let mut counts = vec![0usize; bins];
    let mut pred = vec![Vec::new(); bins];
    let mut hits = vec![0usize; bins];
    for (p, y) in pairs {
        let b = bin_index(p, bins);
        counts[b] += 1;
        pred[b].push(p);
        hits[b] += usize::from(y);
    }
    let mut mean_predicted = vec![0.0; bins];
    let mut empirical = vec![0.0; bins];
    let mut terms = Vec::with_capacity(bins);
    for b in 0..bins {
        if counts[b] == 0 {
            continue;
        }
        let c = counts[b] as f64;
        mean_predicted[b] = compensated_sum(pred[b].iter().copied()) / c;
        empirical[b] = hits[b] as f64 / c;
        terms.push(c / n as f64 * (empirical[b] - mean_predicted[b]).abs());
    }
    let ece = compensated_sum(terms);
    Ok(EceReport { bins, ece, ece_percent: 100.0 * ece, stats: BinStats { counts, mean_predicted, empirical } })
}

/// Binary ECE on the class-2 posterior against the class-2 frequency.
pub fn ece_binary(ds: &LabeledPosteriors, bins: usize) -> Result<EceReport> {
    if ds.n_classes() != 2 {
        return Err(Error::invalid_arg(format!("binary ECE needs K=2, found K={}", ds.n_classes())));
    }
    binned_error(ds.samples().map(|(q, h)| (q[1], h == 1)), bins, ds.n_samples())
}

/// Multiclass ECE: max posterior against argmax correctness.
pub fn ece_multiclass(ds: &LabeledPosteriors, bins: usize) -> Result<EceReport> {
    binned_error(
        ds.samples().map(|(q, h)| {
            let j = argmax(q);
            (q[j], j == h)
        }),
        bins,
        ds.n_samples(),
    )
}

/// Divergence induced by a scoring rule: KL for log, `(1/K)||s - q||^2`
/// for Brier, so that `E_s[C*(h, q)] = d(s, q) + E_s[C*(h, s)]`.
pub fn score_divergence(s: &[f64], q: &[f64], rule: ScoringRule) -> f64 {
    match rule {
        ScoringRule::Log => s.iter().zip(q).filter(|(&si, _)| si > 0.0).map(|(&si, &qi)| si * (si / qi).ln()).sum(),
        ScoringRule::Brier => s.iter().zip(q).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / s.len() as f64,
    }
}

fn check_aligned(ds: &LabeledPosteriors, calibrated: &LabeledPosteriors) -> Result<()> {
    if ds.n_samples() != calibrated.n_samples() {
        return Err(Error::DimensionMismatch { expected: ds.n_samples(), found: calibrated.n_samples() });
    }
    if ds.n_classes() != calibrated.n_classes() {
        return Err(Error::DimensionMismatch { expected: ds.n_classes(), found: calibrated.n_classes() });
    }
    Ok(())
}

fn soft_loss(rule: ScoringRule, s: &[f64], q: &[f64]) -> f64 {
    s.iter().enumerate().filter(|(_, &si)| si > 0.0).map(|(i, &si)| si * psr_pointwise(rule, q, i)).sum()
}

/// `(1/N) sum_t sum_i s_ti C*(i, q_t)`: empirical over q, class given q
/// taken from the calibrated posteriors `s`.
pub fn semi_empirical_epsr(ds: &LabeledPosteriors, calibrated: &LabeledPosteriors, rule: ScoringRule) -> Result<f64> {
    check_aligned(ds, calibrated)?;
    let n = ds.n_samples() as f64;
    Ok(compensated_sum(calibrated.rows().zip(ds.rows()).map(|(s, q)| soft_loss(rule, s, q))) / n)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Decomposition {
    pub rule: ScoringRule,
    pub expected_divergence: f64,
    pub refinement: f64,
    pub reconstructed_total: f64,
    /// Semi-empirical EPSR computed directly.
    pub total: f64,
    pub identity_gap: f64,
}

/// Splits the semi-empirical EPSR into expected divergence and the
/// generalized entropy (refinement) of the calibrated posteriors.
pub fn decomposition_report(
    ds: &LabeledPosteriors,
    calibrated: &LabeledPosteriors,
    rule: ScoringRule,
) -> Result<Decomposition> {
    check_aligned(ds, calibrated)?;
    let n = ds.n_samples() as f64;
    let expected_divergence =
        compensated_sum(calibrated.rows().zip(ds.rows()).map(|(s, q)| score_divergence(s, q, rule))) / n;
    let refinement = compensated_sum(calibrated.rows().map(|s| soft_loss(rule, s, s))) / n;
    let total = semi_empirical_epsr(ds, calibrated, rule)?;
    let reconstructed_total = expected_divergence + refinement;
    Ok(Decomposition {
        rule,
        expected_divergence,
        refinement,
        reconstructed_total,
        total,
        identity_gap: (reconstructed_total - total).abs(),
    })
}

/// Divergences compared by the mean-as-minimizer probe.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DivergenceKind {
    /// `|s_2 - q_2|`.
    L1Class2,
    /// `sum_i |s_i - q_i|`.
    L1Full,
    /// `sum_i (s_i - q_i)^2`.
    L2,
    /// `sum_i s_i ln(s_i / q_i)`.
    Kl,
}

impl DivergenceKind {
    pub const ALL: [DivergenceKind; 4] = [DivergenceKind::L1Class2, DivergenceKind::L1Full, DivergenceKind::L2, DivergenceKind::Kl];

    pub fn name(self) -> &'static str {
        match self {
            DivergenceKind::L1Class2 => "l1_class2",
            DivergenceKind::L1Full => "l1_full",
            DivergenceKind::L2 => "l2",
            DivergenceKind::Kl => "kl",
        }
    }

    fn eval(self, s: &[f64], q: &[f64]) -> f64 {
        match self {
            DivergenceKind::L1Class2 => (s[1] - q[1]).abs(),
            DivergenceKind::L1Full => s.iter().zip(q).map(|(a, b)| (a - b).abs()).sum(),
            DivergenceKind::L2 => s.iter().zip(q).map(|(a, b)| (a - b) * (a - b)).sum(),
            DivergenceKind::Kl => score_divergence(s, q, ScoringRule::Log),
        }
    }
}

impl fmt::Display for DivergenceKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for DivergenceKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        DivergenceKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::invalid_arg(format!("unknown divergence '{s}' (expected l1_class2|l1_full|l2|kl)")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MinimizerProbe {
    pub kind: DivergenceKind,
    pub grid_step: f64,
    /// Class-1 component of the grid point minimizing the mean divergence.
    pub minimizer: f64,
    /// Class-1 component of the mean of the rows.
    pub mean: f64,
    pub gap: f64,
}

/// Grid search for the fixed binary point `q0` minimizing the mean
/// divergence `d(s_t, q0)`; Bregman divergences put it at the mean of `s`.
pub fn mean_minimizer_probe(rows: &[Vec<f64>], kind: DivergenceKind, grid_step: f64) -> Result<MinimizerProbe> {
    if rows.is_empty() {
        return Err(Error::invalid_arg("probe needs at least one row"));
    }
    if rows.iter().any(|r| r.len() != 2) {
        return Err(Error::invalid_arg("mean-minimizer probe needs binary rows"));
    }
    if !(grid_step > 0.0 && grid_step < 0.5) {
        return Err(Error::invalid_arg("grid step must lie in (0, 0.5)"));
    }
    let n = (1.0 / grid_step).round() as usize;
    let mut best = (f64::INFINITY, 0.0);
    for i in 1..n {
        let q1 = i as f64 / n as f64;
        let q = [q1, 1.0 - q1];
        let v = compensated_sum(rows.iter().map(|s| kind.eval(s, &q)));
        if v < best.0 {
            best = (v, q1);
        }
    }
    let mean = compensated_sum(rows.iter().map(|s| s[0])) / rows.len() as f64;
    Ok(MinimizerProbe { kind, grid_step, minimizer: best.1, mean, gap: (best.1 - mean).abs() })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::empirical_priors;
    use proptest::prelude::*;

    fn binary(q2: &[f64], labels: &[usize]) -> LabeledPosteriors {
        LabeledPosteriors::new(q2.iter().map(|&p| vec![1.0 - p, p]).collect(), labels.to_vec()).unwrap()
    }

    #[test]
    fn ece_hand_example() {
        let ds = binary(&[0.2, 0.4, 0.8, 0.9], &[0, 1, 1, 1]);
        let r = ece_binary(&ds, 2).unwrap();
        assert!((r.ece - 0.175).abs() < 1e-12);
        assert_eq!(r.stats.counts, vec![2, 2]);
        assert!((r.ece_percent - 17.5).abs() < 1e-10);
    }

    #[test]
    fn ece_of_naive_and_one_hot() {
        let labels = [0, 1, 0, 0, 1];
        let p = 0.4;
        assert!(ece_binary(&binary(&[p; 5], &labels), 10).unwrap().ece.abs() < 1e-15);
        let onehot = binary(&[0.0, 1.0, 0.0, 0.0, 1.0], &labels);
        assert_eq!(ece_binary(&onehot, 10).unwrap().ece, 0.0);
        assert_eq!(ece_multiclass(&onehot, 10).unwrap().ece, 0.0);
    }

    #[test]
    fn ecemc_single_bin() {
        let ds = binary(&[0.9, 0.9, 0.1, 0.1], &[1, 0, 0, 1]);
        assert!((ece_multiclass(&ds, 10).unwrap().ece - 0.4).abs() < 1e-12);
        assert!(ece_binary(&ds, 0).is_err());
    }

    #[test]
    fn kl_example() {
        assert!((score_divergence(&[1.0, 0.0], &[0.8, 0.2], ScoringRule::Log) - 0.223_143_551_314_209_7).abs() < 1e-12);
        let q = [0.3, 0.7];
        assert_eq!(score_divergence(&q, &q, ScoringRule::Log), 0.0);
        assert_eq!(score_divergence(&q, &q, ScoringRule::Brier), 0.0);
    }

    #[test]
    fn semi_empirical_degenerate_cases() {
        let ds = LabeledPosteriors::new(vec![vec![0.7, 0.2, 0.1], vec![0.3, 0.3, 0.4]], vec![0, 2]).unwrap();
        let onehot =
            LabeledPosteriors::new(vec![vec![1.0, 0.0, 0.0], vec![0.0, 0.0, 1.0]], vec![0, 2]).unwrap();
        for rule in [ScoringRule::Log, ScoringRule::Brier] {
            let se = semi_empirical_epsr(&ds, &onehot, rule).unwrap();
            assert!((se - expected_psr(&ds, rule, None).unwrap()).abs() < 1e-15);
        }
        let se = semi_empirical_epsr(&ds, &ds, ScoringRule::Log).unwrap();
        let h: f64 = ds.rows().map(|q| -q.iter().map(|x| x * x.ln()).sum::<f64>()).sum::<f64>() / 2.0;
        assert!((se - h).abs() < 1e-15);
        let d = decomposition_report(&ds, &ds, ScoringRule::Log).unwrap();
        assert_eq!(d.expected_divergence, 0.0);
        assert!((d.total - d.refinement).abs() < 1e-15);
    }

    #[test]
    fn rcl_zero_when_raw_zero() {
        let r = CalibrationReport::new(ScoringRule::Brier, "dp".into(), "tt".into(), 0.0, 0.0);
        assert_eq!(r.rcl_percent, 0.0);
    }

    #[test]
    fn dp_train_on_test_never_hurts() {
        let ds = binary(&[0.2, 0.3, 0.25, 0.7, 0.4, 0.1], &[1, 1, 0, 1, 1, 0]);
        let r = calibration_loss(&ds, ScoringRule::Log, Family::AffineDp, &Protocol::TrainOnTest, 0, None).unwrap();
        assert!(r.cal_loss >= -1e-9);
    }

    #[test]
    fn symmetric_sample_probe() {
        let rows: Vec<Vec<f64>> = [0.2, 0.4, 0.5, 0.6, 0.8].iter().map(|&p| vec![p, 1.0 - p]).collect();
        for kind in DivergenceKind::ALL {
            let p = mean_minimizer_probe(&rows, kind, 0.01).unwrap();
            assert!((p.minimizer - 0.5).abs() <= 0.01 + 1e-12, "{kind}: {}", p.minimizer);
            assert!((p.mean - 0.5).abs() < 1e-12);
        }
    }

    fn simplex(k: usize) -> impl Strategy<Value = Vec<f64>> {
        prop::collection::vec(0.01f64..1.0, k).prop_map(|v| {
            let s: f64 = v.iter().sum();
            v.into_iter().map(|x| x / s).collect()
        })
    }

    proptest! {
        #[test]
        fn per_sample_divergence_identity(s in simplex(3), q in simplex(3)) {
            for rule in [ScoringRule::Log, ScoringRule::Brier] {
                let lhs = soft_loss(rule, &s, &q);
                let rhs = score_divergence(&s, &q, rule) + soft_loss(rule, &s, &s);
                prop_assert!((lhs - rhs).abs() < 1e-12);
            }
        }

        #[test]
        fn ece_invariant_to_order_and_duplication(
            data in prop::collection::vec((0.0f64..1.0, prop::bool::ANY), 1..40)
        ) {
            let q2: Vec<f64> = data.iter().map(|d| d.0).collect();
            let labels: Vec<usize> = data.iter().map(|d| usize::from(d.1)).collect();
            let base = ece_binary(&binary(&q2, &labels), 10).unwrap().ece;
            let rq: Vec<f64> = q2.iter().rev().copied().collect();
            let rl: Vec<usize> = labels.iter().rev().copied().collect();
            prop_assert!((ece_binary(&binary(&rq, &rl), 10).unwrap().ece - base).abs() < 1e-12);
            let dq: Vec<f64> = q2.iter().chain(&q2).copied().collect();
            let dl: Vec<usize> = labels.iter().chain(&labels).copied().collect();
            prop_assert!((ece_binary(&binary(&dq, &dl), 10).unwrap().ece - base).abs() < 1e-12);
        }
    }

    #[test]
    fn naive_rows_have_zero_ece() {
        let labels = vec![0, 0, 0, 1, 1];
        let tmp = binary(&[0.5; 5], &labels);
        let p = empirical_priors(&tmp);
        let ds = binary(&[p.get(1); 5], &labels);
        assert!(ece_binary(&ds, 10).unwrap().ece < 1e-15);
    }
}
