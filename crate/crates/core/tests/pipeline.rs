use psreval::caltx::{apply_transform, calibrate, CalibrationTransform, Family, Protocol};
use psreval::calmet::{calibration_report, decomposition_report};
use psreval::metric::{parse_metric_list, MetricContext};
use psreval::resample::bootstrap_ci;
use psreval::synth::{generate, SynthConfig};
use psreval::{load_dataset, validate_and_normalize, DatasetSource, ScoringRule, DEFAULT_FLOOR};

fn config(seed: u64) -> SynthConfig {
    SynthConfig { n_samples: 500, seed, ..SynthConfig::default() }
}

#[test]
fn csv_roundtrip_is_bit_exact() {
    let bundle = generate(&config(11)).unwrap();
    for (name, ds) in bundle.systems() {
        let mut buf = Vec::new();
        ds.write_csv(&mut buf).unwrap();
        let back = load_dataset(&DatasetSource::table(String::from_utf8(buf).unwrap())).unwrap();
        assert_eq!(back.labels(), ds.labels(), "{name}");
        assert_eq!(back.flat(), ds.flat(), "{name}");
        assert_eq!(back.class_names(), ds.class_names(), "{name}");
    }
}

#[test]
fn saved_transform_reproduces_calibration() {
    let bundle = generate(&config(12)).unwrap();
    let ds = validate_and_normalize(&bundle.mcs, DEFAULT_FLOOR).unwrap();
    for family in [Family::AffineDp, Family::Temperature, Family::Histogram { bins: 10 }, Family::IsotonicPav] {
        let cal = calibrate(&ds, family, &Protocol::TrainOnTest, 0, None, DEFAULT_FLOOR).unwrap();
        let text = cal.transforms[0].to_json().unwrap();
        let tx = CalibrationTransform::from_json(&text).unwrap();
        let again = apply_transform(&tx, &ds).unwrap();
        assert_eq!(again.flat(), cal.calibrated.flat(), "{family}");
    }
}

#[test]
fn calibration_recovers_scaling_damage() {
    let bundle = generate(&config(13)).unwrap();
    let cal = bundle.cal.clone();
    let mcs = bundle.mcs.clone();
    let protocol = Protocol::CrossValidation { folds: 5 };
    let fit = |ds| calibrate(ds, Family::AffineDp, &protocol, 3, None, DEFAULT_FLOOR).unwrap();
    let r_cal = calibration_report(&cal, &fit(&cal), ScoringRule::Log, None, "dp", "xv:5").unwrap();
    let r_mcs = calibration_report(&mcs, &fit(&mcs), ScoringRule::Log, None, "dp", "xv:5").unwrap();
    assert!(r_mcs.rcl_percent > 20.0, "{r_mcs:?}");
    assert!(r_mcs.rcl_percent > r_cal.rcl_percent);
}

#[test]
fn decomposition_closes_on_synthetic_systems() {
    let bundle = generate(&config(14)).unwrap();
    for (name, ds) in bundle.systems() {
        let cal = calibrate(ds, Family::AffineDp, &Protocol::TrainOnTest, 0, None, DEFAULT_FLOOR).unwrap();
        for rule in [ScoringRule::Log, ScoringRule::Brier] {
            let d = decomposition_report(ds, &cal.calibrated, rule).unwrap();
            assert!(d.identity_gap.abs() < 1e-12, "{name} {rule}: {d:?}");
        }
    }
}

#[test]
fn metric_list_evaluates_end_to_end() {
    let bundle = generate(&config(15)).unwrap();
    let specs = parse_metric_list("ce,bs,nce,nbs,nrisk:01,nrisk:01-reject:0.1,nrisk:imb:10,ece:15,ecemc,rcl:log:pav:xv:4").unwrap();
    let ctx = MetricContext::new(None, DEFAULT_FLOOR, 9);
    for spec in &specs {
        let v = spec.evaluate(&bundle.mcp, &ctx).unwrap();
        assert!(v.is_finite(), "{spec}: {v}");
    }
}

#[test]
fn bootstrap_is_seed_deterministic() {
    let bundle = generate(&config(16)).unwrap();
    let spec = "rcl:bs:dp:xv:5".parse().unwrap();
    let ctx = MetricContext::new(None, DEFAULT_FLOOR, 4);
    let a = bootstrap_ci(&bundle.mcs, &spec, 20, 90.0, 8, &ctx).unwrap();
    let b = bootstrap_ci(&bundle.mcs, &spec, 20, 90.0, 8, &ctx).unwrap();
    assert_eq!(a, b);
    let c = bootstrap_ci(&bundle.mcs, &spec, 20, 90.0, 9, &ctx).unwrap();
    assert_ne!(a.replicates, c.replicates);
    assert!(a.lower <= a.upper);
}
