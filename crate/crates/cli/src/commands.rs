use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use psreval::caltx::{calibrate as run_calibration, Family, ProtocolSpec};
use psreval::calmet::{calibration_report, mean_minimizer_probe, DivergenceKind, MinimizerProbe};
use psreval::epsr::{expected_psr, normalized_epsr, psr_property_probe, risk_curve, WeightKind};
use psreval::metric::{parse_metric_list, MetricContext, MetricDetail, MetricKind, MetricSpec};
use psreval::resample::{bootstrap_ci, BootstrapResult};
use psreval::synth::{riskcurve_presets, generate, SynthConfig};
use psreval::{
    empirical_priors, load_dataset, validate_and_normalize, DatasetSource, LabeledPosteriors, PriorVector, ScoringRule,
};
use serde::Serialize;
use serde_json::{json, Value};

use crate::svg::Plot;
use crate::table::{num, Table};
use crate::{
    BootstrapArgs, CalibrateArgs, DataArgs, EvalArgs, Failure, Format, MinimizerProbeArgs, ProbeCommand, PsrProbeArgs,
    RiskCurveArgs, SynthArgs,
};

type Outcome = Result<(), Failure>;

const TOOL: &str = "psreval";

#[derive(Debug, Serialize)]
struct DatasetInfo {
    path: String,
    domain: &'static str,
    n_samples: usize,
    n_classes: usize,
    class_names: Vec<String>,
    class_counts: Vec<usize>,
    priors: Vec<f64>,
    priors_source: &'static str,
}

impl DatasetInfo {
    fn new(path: &Path, log_domain: bool, ds: &LabeledPosteriors, priors: Option<&PriorVector>) -> Self {
        let (priors, priors_source) = match priors {
            Some(p) => (p.as_slice().to_vec(), "explicit"),
            None => (empirical_priors(ds).as_slice().to_vec(), "empirical"),
        };
        Self {
            path: path.display().to_string(),
            domain: if log_domain { "log" } else { "probability" },
            n_samples: ds.n_samples(),
            n_classes: ds.n_classes(),
            class_names: ds.class_names().to_vec(),
            class_counts: ds.class_counts(),
            priors,
            priors_source,
        }
    }
}

#[derive(Debug, Serialize)]
struct MetricEntry {
    name: String,
    config: Value,
    value: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    detail: Option<MetricDetail>,
}

#[derive(Debug, Serialize)]
struct MetricReport {
    tool: &'static str,
    version: &'static str,
    command: &'static str,
    dataset: DatasetInfo,
    floor: f64,
    seeds: BTreeMap<&'static str, u64>,
    metrics: Vec<MetricEntry>,
}

fn load(path: &Path, log_domain: bool, floor: f64) -> Result<LabeledPosteriors, Failure> {
    let mut src = DatasetSource::path(path);
    if log_domain {
        src = src.log_domain();
    }
    let ds = load_dataset(&src)?;
    Ok(validate_and_normalize(&ds, floor)?)
}

fn load_with_priors(args: &DataArgs) -> Result<(LabeledPosteriors, Option<PriorVector>), Failure> {
    let priors = args.priors.as_deref().map(str::parse::<PriorVector>).transpose()?;
    let ds = load(&args.data, args.log_domain, args.floor)?;
    if let Some(p) = &priors {
        if p.len() != ds.n_classes() {
            return Err(Failure::usage(format!(
                "{} priors given for a dataset with {} classes",
                p.len(),
                ds.n_classes()
            )));
        }
    }
    Ok((ds, priors))
}

fn write_file(path: &Path, contents: &str) -> Outcome {
    fs::write(path, contents).map_err(|e| Failure::io(path, e))
}

fn to_json<T: Serialize>(value: &T) -> Result<String, Failure> {
    crate::json::to_string(value).map_err(|e| Failure::from(psreval::Error::from(e)))
}

fn emit<T: Serialize>(format: Format, value: &T, table: &Table) -> Outcome {
    match format {
        Format::Json => print!("{}", to_json(value)?),
        Format::Table => print!("{}", table.render()),
    }
    Ok(())
}

fn require_seed(seed: Option<u64>, why: &str) -> Result<u64, Failure> {
    seed.ok_or_else(|| Failure::usage(format!("--seed is required {why}")))
}

fn protocol_config(spec: &ProtocolSpec, seed: u64) -> Value {
    match spec {
        ProtocolSpec::TrainOnTest => json!({ "protocol": "tt" }),
        ProtocolSpec::CrossValidation { folds } => json!({ "protocol": "xv", "folds": folds, "fold_seed": seed }),
        ProtocolSpec::HeldOut(p) => json!({ "protocol": "heldout", "train_path": p.display().to_string() }),
    }
}

fn metric_config(spec: &MetricSpec, k: usize, seed: u64) -> Result<Value, Failure> {
    Ok(match &spec.kind {
        MetricKind::Epsr(rule) => json!({ "metric": "epsr", "rule": rule.name() }),
        MetricKind::NormalizedEpsr(rule) => json!({ "metric": "normalized_epsr", "rule": rule.name() }),
        MetricKind::NormalizedRisk(cost) => {
            json!({ "metric": "normalized_risk", "cost_matrix": cost.build(k)? })
        }
        MetricKind::Ece { bins } => json!({ "metric": "ece", "scope": "class2", "bins": bins }),
        MetricKind::EceMulticlass { bins } => json!({ "metric": "ece", "scope": "top_class", "bins": bins }),
        MetricKind::Rcl { rule, family, protocol } => {
            let mut v = json!({ "metric": "rcl", "rule": rule.name(), "method": family.short_name() });
            if let (Value::Object(m), Value::Object(p)) = (&mut v, protocol_config(protocol, seed)) {
                m.extend(p);
            }
            v
        }
    })
}

fn needs_seed(specs: &[MetricSpec]) -> bool {
    specs.iter().any(|s| s.crossval_folds().is_some())
}

pub fn eval(args: &EvalArgs, format: Format) -> Outcome {
    let specs = parse_metric_list(&args.metrics)?;
    let seed = if needs_seed(&specs) { Some(require_seed(args.seed, "for cross-validated metrics")?) } else { args.seed };
    let (ds, priors) = load_with_priors(&args.data)?;
    let mut ctx = MetricContext::new(priors.clone(), args.data.floor, seed.unwrap_or(0));
    ctx.preload(&specs)?;

    let mut entries = Vec::with_capacity(specs.len());
    let mut table = Table::new(["metric", "value"]);
    for spec in &specs {
        let config = metric_config(spec, ds.n_classes(), ctx.seed)?;
        let out = spec.evaluate_detailed(&ds, &ctx).map_err(|e| {
            let f = Failure::from(e);
            Failure { message: format!("metric '{}': {}", spec.name, f.message), ..f }
        })?;
        table.push([spec.name.clone(), num(out.value)]);
        entries.push(MetricEntry { name: spec.name.clone(), config, value: out.value, detail: out.detail });
    }
    let mut seeds = BTreeMap::new();
    if let Some(s) = seed {
        seeds.insert("fold_seed", s);
    }
    let report = MetricReport {
        tool: TOOL,
        version: psreval::VERSION,
        command: "eval",
        dataset: DatasetInfo::new(&args.data.data, args.data.log_domain, &ds, priors.as_ref()),
        floor: args.data.floor,
        seeds,
        metrics: entries,
    };
    if let Some(path) = &args.out {
        write_file(path, &to_json(&report)?)?;
    }
    emit(format, &report, &table)
}

pub fn calibrate(args: &CalibrateArgs, format: Format) -> Outcome {
    let family: Family = args.method.parse()?;
    let spec: ProtocolSpec = args.protocol.parse()?;
    let seed = match spec {
        ProtocolSpec::CrossValidation { .. } => Some(require_seed(args.seed, "for cross-validation")?),
        _ => args.seed,
    };
    let (ds, priors) = load_with_priors(&args.data)?;
    let protocol = spec.resolve()?;
    let cal = run_calibration(&ds, family, &protocol, seed.unwrap_or(0), priors.as_ref(), args.data.floor)?;

    let method = family.short_name();
    let mut reports = Vec::new();
    let mut table = Table::new(["rule", "method", "protocol", "epsr_raw", "epsr_min", "cal_loss", "rcl_percent"]);
    for rule in [ScoringRule::Log, ScoringRule::Brier] {
        let r = calibration_report(&ds, &cal, rule, priors.as_ref(), &method, &protocol.tag())?;
        table.push([
            rule.name().to_string(),
            method.clone(),
            protocol.tag(),
            num(r.epsr_raw),
            num(r.epsr_min),
            num(r.cal_loss),
            num(r.rcl_percent),
        ]);
        reports.push(r);
    }

    fs::create_dir_all(&args.out_dir).map_err(|e| Failure::io(&args.out_dir, e))?;
    cal.calibrated.save_csv(&args.out_dir.join("calibrated.csv"))?;
    let mut transform = json!({
        "method": method,
        "protocol": protocol_config(&spec, seed.unwrap_or(0)),
        "transforms": cal.transforms,
    });
    if let (Some(plan), Value::Object(m)) = (&cal.plan, &mut transform) {
        m.insert("fold_assignment".into(), json!(plan.assignment));
    }
    write_file(&args.out_dir.join("transform.json"), &to_json(&transform)?)?;

    let mut seeds = BTreeMap::new();
    if let Some(s) = seed {
        seeds.insert("fold_seed", s);
    }
    let report = json!({
        "tool": TOOL,
        "version": psreval::VERSION,
        "command": "calibrate",
        "dataset": DatasetInfo::new(&args.data.data, args.data.log_domain, &ds, priors.as_ref()),
        "floor": args.data.floor,
        "seeds": seeds,
        "reports": reports,
    });
    write_file(&args.out_dir.join("report.json"), &to_json(&report)?)?;
    emit(format, &report, &table)
}

#[derive(Debug, Serialize)]
struct CurveSummary {
    dataset: String,
    weight: WeightKind,
    grid_size: usize,
    integral: f64,
    naive_integral: f64,
    normalized_integral: f64,
    rule: ScoringRule,
    epsr: f64,
    normalized_epsr: f64,
}

pub fn riskcurve(args: &RiskCurveArgs, format: Format) -> Outcome {
    let weight: WeightKind = args.weight.parse()?;
    let ds = load(&args.data, args.log_domain, args.floor)?;
    let curve = risk_curve(&ds, args.grid, weight)?;
    let priors = empirical_priors(&ds);
    let naive_rows = vec![priors.as_slice().to_vec(); ds.n_samples()];
    let naive = LabeledPosteriors::new(naive_rows, ds.labels().to_vec())?;
    let naive_integral = risk_curve(&naive, args.grid, weight)?.integral();
    let integral = curve.integral();
    let rule = weight.matching_rule();
    let summary = CurveSummary {
        dataset: args.data.display().to_string(),
        weight,
        grid_size: args.grid,
        integral,
        naive_integral,
        normalized_integral: integral / naive_integral,
        rule,
        epsr: expected_psr(&ds, rule, None)?,
        normalized_epsr: normalized_epsr(&ds, rule, None)?,
    };

    let mut csv = Vec::new();
    curve.write_csv(&mut csv)?;
    write_file(&args.out, std::str::from_utf8(&csv).expect("csv is UTF-8"))?;
    if let Some(path) = &args.svg {
        let title = format!(
            "{} weight: integral {:.6}, normalized {:.6}",
            args.weight, summary.integral, summary.normalized_integral
        );
        let plot = Plot { title: &title, x_label: "a1", y_label: "weighted Bayes risk", xs: &curve.grid, ys: &curve.risks };
        write_file(path, &plot.render())?;
    }

    let mut table = Table::new(["quantity", "value"]);
    table.push(["grid_size".to_string(), args.grid.to_string()]);
    table.push(["integral".to_string(), num(summary.integral)]);
    table.push(["naive_integral".to_string(), num(summary.naive_integral)]);
    table.push(["normalized_integral".to_string(), num(summary.normalized_integral)]);
    table.push([rule.name().to_string(), num(summary.epsr)]);
    table.push([format!("normalized_{}", rule.name()), num(summary.normalized_epsr)]);
    emit(format, &summary, &table)
}

#[derive(Debug, Serialize)]
struct BootstrapReport {
    tool: &'static str,
    version: &'static str,
    command: &'static str,
    dataset: DatasetInfo,
    floor: f64,
    seeds: BTreeMap<&'static str, u64>,
    config: Value,
    result: BootstrapResult,
}

pub fn bootstrap(args: &BootstrapArgs, format: Format) -> Outcome {
    let spec: MetricSpec = args.metric.parse()?;
    let (ds, priors) = load_with_priors(&args.data)?;
    let fold_seed = args.fold_seed.unwrap_or(args.seed);
    let mut ctx = MetricContext::new(priors.clone(), args.data.floor, fold_seed);
    ctx.preload(std::slice::from_ref(&spec))?;
    let result = bootstrap_ci(&ds, &spec, args.b, args.gamma, args.seed, &ctx)?;

    let mut table = Table::new(["metric", "estimate", "lower", "upper", "width", "b", "failed"]);
    table.push([
        result.metric.clone(),
        num(result.point_estimate),
        num(result.lower),
        num(result.upper),
        num(result.width()),
        result.b.to_string(),
        result.n_failed.to_string(),
    ]);
    let mut seeds = BTreeMap::from([("resample_seed", args.seed)]);
    if spec.crossval_folds().is_some() {
        seeds.insert("fold_seed", fold_seed);
    }
    let report = BootstrapReport {
        tool: TOOL,
        version: psreval::VERSION,
        command: "bootstrap",
        dataset: DatasetInfo::new(&args.data.data, args.data.log_domain, &ds, priors.as_ref()),
        floor: args.data.floor,
        seeds,
        config: metric_config(&spec, ds.n_classes(), fold_seed)?,
        result,
    };
    if let Some(path) = &args.out {
        write_file(path, &to_json(&report)?)?;
    }
    emit(format, &report, &table)
}

pub fn probe(cmd: &ProbeCommand, format: Format) -> Outcome {
    match cmd {
        ProbeCommand::Psr(a) => probe_psr(a, format),
        ProbeCommand::Minimizer(a) => probe_minimizer(a, format),
    }
}

fn probe_psr(args: &PsrProbeArgs, format: Format) -> Outcome {
    let rule: ScoringRule = args.rule.parse()?;
    let p: PriorVector = args.p.parse()?;
    let q = psr_property_probe(rule, p.as_slice(), args.step)?;
    let gap = q.iter().zip(p.as_slice()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    let out = json!({ "rule": rule.name(), "p": p.as_slice(), "step": args.step, "minimizer": q, "max_abs_gap": gap });
    let mut table = Table::new(["class", "p", "minimizer"]);
    for (j, (pj, qj)) in p.as_slice().iter().zip(&q).enumerate() {
        table.push([format!("H{}", j + 1), num(*pj), num(*qj)]);
    }
    emit(format, &out, &table)
}

fn probe_minimizer(args: &MinimizerProbeArgs, format: Format) -> Outcome {
    let kinds: Vec<DivergenceKind> = if args.divergence == "all" {
        DivergenceKind::ALL.to_vec()
    } else {
        vec![args.divergence.parse()?]
    };
    let ds = load(&args.data, args.log_domain, 0.0)?;
    let rows: Vec<Vec<f64>> = ds.rows().map(<[f64]>::to_vec).collect();
    let probes = kinds
        .into_iter()
        .map(|k| mean_minimizer_probe(&rows, k, args.step))
        .collect::<psreval::Result<Vec<MinimizerProbe>>>()?;
    let mut table = Table::new(["divergence", "minimizer", "mean", "gap"]);
    for p in &probes {
        table.push([p.kind.name().to_string(), num(p.minimizer), num(p.mean), num(p.gap)]);
    }
    emit(format, &probes, &table)
}

#[derive(Debug, Serialize)]
struct SynthManifest {
    tool: &'static str,
    version: &'static str,
    command: &'static str,
    systems: Vec<SystemInfo>,
}

#[derive(Debug, Serialize)]
struct SystemInfo {
    name: String,
    file: String,
    config: SynthConfig,
    /// Priors assumed when forming the posteriors.
    assumed_priors: Vec<f64>,
    /// Log-domain scale applied afterwards (1 = none).
    scale: f64,
    ce: f64,
    bs: f64,
}

pub fn synth(args: &SynthArgs, format: Format) -> Outcome {
    fs::create_dir_all(&args.out).map_err(|e| Failure::io(&args.out, e))?;
    let mut systems = Vec::new();
    let mut save = |name: &str, ds: &LabeledPosteriors, config: &SynthConfig, assumed: &PriorVector, scale: f64| -> Outcome {
        let file = format!("{name}.csv");
        ds.save_csv(&args.out.join(&file))?;
        systems.push(SystemInfo {
            name: name.into(),
            file,
            config: config.clone(),
            assumed_priors: assumed.as_slice().to_vec(),
            scale,
            ce: expected_psr(ds, ScoringRule::Log, None)?,
            bs: expected_psr(ds, ScoringRule::Brier, None)?,
        });
        Ok(())
    };

    if args.riskcurve_preset {
        if args.k != 2 {
            return Err(Failure::usage("the risk-curve preset is binary; drop --k"));
        }
        for mut preset in riskcurve_presets(args.seed) {
            if let Some(n) = args.n {
                preset.config.n_samples = n;
            }
            let ds = preset.generate()?;
            let data_priors = empirical_priors(&ds);
            save(&preset.name, &ds, &preset.config, &data_priors, preset.scale)?;
        }
    } else {
        let config = SynthConfig {
            n_classes: args.k,
            n_samples: args.n.unwrap_or(SynthConfig::default().n_samples),
            p1: args.p1,
            sigma: args.sigma,
            mcs_scale: args.scale,
            seed: args.seed,
        };
        let bundle = generate(&config)?;
        let data_priors = empirical_priors(&bundle.cal);
        let wrong = config.mismatched_priors();
        save("cal", &bundle.cal, &config, &data_priors, 1.0)?;
        save("mcp", &bundle.mcp, &config, &wrong, 1.0)?;
        save("mcs", &bundle.mcs, &config, &data_priors, config.mcs_scale)?;
        save("mcps", &bundle.mcps, &config, &wrong, config.mcs_scale)?;
    }

    let manifest = SynthManifest { tool: TOOL, version: psreval::VERSION, command: "synth", systems };
    write_file(&args.out.join("config.json"), &to_json(&manifest)?)?;
    let mut table = Table::new(["system", "file", "n", "k", "ce", "bs"]);
    for s in &manifest.systems {
        table.push([
            s.name.clone(),
            s.file.clone(),
            s.config.n_samples.to_string(),
            s.config.n_classes.to_string(),
            num(s.ce),
            num(s.bs),
        ]);
    }
    emit(format, &manifest, &table)
}
