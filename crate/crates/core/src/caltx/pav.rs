use crate::data::LabeledPosteriors;
use crate::error::{Error, Result};

use super::{CalibrationTransform, Provenance, TransformParams};

/// Isotonic (nondecreasing) least-squares fit of `ys` against the order of
/// `xs`. Returns block start values of x and the block means; equal x
/// values always share a block.
pub fn isotonic_regression(xs: &[f64], ys: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let mut order: Vec<usize> = (0..xs.len()).collect();
    order.sort_by(|&a, &b| xs[a].total_cmp(&xs[b]).then(a.cmp(&b)));

    // (first x, last x, sum y, weight)
    let mut blocks: Vec<(f64, f64, f64, f64)> = Vec::new();
    for &i in &order {
        match blocks.last_mut() {
            Some(last) if last.1 == xs[i] => {
                last.2 += ys[i];
                last.3 += 1.0;
            }
            _ => blocks.push((xs[i], xs[i], ys[i], 1.0)),
        }
        while blocks.len() >= 2 {
            let cur = blocks[blocks.len() - 1];
            let prev = blocks[blocks.len() - 2];
            if prev.2 * cur.3 > cur.2 * prev.3 {
                blocks.pop();
                let p = blocks.last_mut().unwrap();
                p.1 = cur.1;
                p.2 += cur.2;
                p.3 += cur.3;
            } else {
                break;
            }
        }
    }
    blocks.iter().map(|&(x, _, s, w)| (x, s / w)).unzip()
}

/// Fits the isotonic regression of class-2 indicators on `q2`.
pub fn fit_pav(train: &LabeledPosteriors) -> Result<CalibrationTransform> {
    if train.n_classes() != 2 {
        return Err(Error::invalid_arg(format!("PAV calibration needs K=2, found K={}", train.n_classes())));
    }
    let xs: Vec<f64> = train.rows().map(|q| q[1]).collect();
    let ys: Vec<f64> = train.labels().iter().map(|&h| if h == 1 { 1.0 } else { 0.0 }).collect();
    let (thresholds, values) = isotonic_regression(&xs, &ys);
    Ok(CalibrationTransform {
        params: TransformParams::IsotonicPav { thresholds, values },
        n_classes: 2,
        provenance: Provenance {
            method: "pav".into(),
            protocol: "tt".into(),
            n_train: train.n_samples(),
            ..Provenance::default()
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn fitted(xs: &[f64], ys: &[f64]) -> Vec<f64> {
        let (t, v) = isotonic_regression(xs, ys);
        xs.iter().map(|&x| v[t.partition_point(|&b| b <= x) - 1]).collect()
    }

    #[test]
    fn pools_middle_pair() {
        assert_eq!(fitted(&[0.1, 0.4, 0.6, 0.9], &[0.0, 1.0, 0.0, 1.0]), vec![0.0, 0.5, 0.5, 1.0]);
    }

    #[test]
    fn monotone_is_untouched() {
        assert_eq!(fitted(&[0.1, 0.4, 0.6, 0.9], &[0.0, 0.0, 1.0, 1.0]), vec![0.0, 0.0, 1.0, 1.0]);
    }

    #[test]
    fn constant_labels() {
        assert_eq!(fitted(&[0.3, 0.1, 0.2], &[1.0, 1.0, 1.0]), vec![1.0, 1.0, 1.0]);
    }

    #[test]
    fn ties_share_a_value() {
        let f = fitted(&[0.5, 0.5, 0.2], &[1.0, 0.0, 0.0]);
        assert_eq!(f[0], f[1]);
        // the tie at 0.3 arrives after 0.2 and 0.3 have been merged
        let f = fitted(&[0.2, 0.3, 0.3], &[1.0, 0.0, 1.0]);
        assert_eq!(f[1], f[2]);
        assert!((f[0] - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn step_map_clamps_out_of_range() {
        let ds = LabeledPosteriors::new(
            vec![vec![0.8, 0.2], vec![0.6, 0.4], vec![0.3, 0.7]],
            vec![0, 1, 1],
        )
        .unwrap();
        let tx = fit_pav(&ds).unwrap();
        let probe = LabeledPosteriors::new(vec![vec![0.99, 0.01], vec![0.01, 0.99], vec![0.45, 0.55]], vec![0, 0, 0]).unwrap();
        let out = super::super::apply_transform(&tx, &probe).unwrap();
        assert!(out.row(0)[1] < 1e-9);
        assert!((out.row(1)[1] - 1.0).abs() < 1e-9);
        assert!((out.row(2)[1] - 1.0).abs() < 1e-9);
    }

    /// Exhaustive search over nondecreasing assignments on a 0.05 grid;
    /// tied inputs share one value.
    fn brute_force_sse(xs: &[f64], ys: &[f64]) -> f64 {
        let mut order: Vec<usize> = (0..xs.len()).collect();
        order.sort_by(|&a, &b| xs[a].total_cmp(&xs[b]));
        let mut groups: Vec<Vec<f64>> = Vec::new();
        let mut last = f64::NAN;
        for &i in &order {
            if xs[i] == last {
                groups.last_mut().unwrap().push(ys[i]);
            } else {
                groups.push(vec![ys[i]]);
                last = xs[i];
            }
        }
        fn rec(g: &[Vec<f64>], lo: usize, acc: f64, best: &mut f64) {
            if g.is_empty() {
                *best = best.min(acc);
                return;
            }
            for level in lo..=20 {
                let v = level as f64 * 0.05;
                let a = acc + g[0].iter().map(|y| (y - v).powi(2)).sum::<f64>();
                if a < *best {
                    rec(&g[1..], level, a, best);
                }
            }
        }
        let mut best = f64::INFINITY;
        rec(&groups, 0, 0.0, &mut best);
        best
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]
        #[test]
        fn pav_minimizes_brier_among_monotone(
            data in prop::collection::vec((prop_oneof![0.0f64..1.0, (0u8..4).prop_map(|i| f64::from(i) * 0.25)], prop::bool::ANY), 1..=6)
        ) {
            let xs: Vec<f64> = data.iter().map(|d| d.0).collect();
            let ys: Vec<f64> = data.iter().map(|d| if d.1 { 1.0 } else { 0.0 }).collect();
            let f = fitted(&xs, &ys);
            for w in {
                let mut o: Vec<usize> = (0..xs.len()).collect();
                o.sort_by(|&a, &b| xs[a].total_cmp(&xs[b]));
                o
            }.windows(2) {
                prop_assert!(f[w[0]] <= f[w[1]] + 1e-15);
            }
            let sse: f64 = f.iter().zip(&ys).map(|(a, b)| (a - b).powi(2)).sum();
            prop_assert!(sse <= brute_force_sse(&xs, &ys) + 1e-9);
        }
    }
}
