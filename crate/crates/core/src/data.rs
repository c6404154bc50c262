//! Labeled posterior sets: the data model every metric consumes, plus CSV
//! ingestion and the validation/flooring step that guards logarithms.
//!
//! Files are UTF-8 CSV with header `label,q_1,...,q_K`. A column named
//! `q_<j>` with `j` the 1-based column number yields the display name `H<j>`;
//! any other suffix (`q_cat`) is taken as the class name. Labels may be given
//! by class name or by 0-based index.

use std::fs::File;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::softmax_in_place;

/// Floor applied to posteriors before any logarithm is taken.
pub const DEFAULT_FLOOR: f64 = 1e-10;
/// Largest floor accepted by [`validate_and_normalize`].
pub const MAX_FLOOR: f64 = 1e-3;
/// Row-sum tolerance for validated posterior sets.
pub const ROW_SUM_TOL: f64 = 1e-6;
/// Row-sum deviation tolerated in raw files before renormalization.
pub const INGEST_ROW_SUM_TOL: f64 = 1e-3;

/// N posterior vectors on the K-simplex with their integer class labels.
///
/// Immutable after construction; all transforms return new values.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledPosteriors {
    posteriors: Vec<f64>,
    labels: Vec<usize>,
    class_names: Vec<String>,
    n_classes: usize,
}

impl LabeledPosteriors {
    /// Builds a set from row vectors, checking every invariant. Rows must
    /// already sum to 1 within [`ROW_SUM_TOL`].
    pub fn new(rows: Vec<Vec<f64>>, labels: Vec<usize>) -> Result<Self> {
        let k = rows.first().map_or(0, Vec::len);
        let mut flat = Vec::with_capacity(rows.len() * k);
        for (t, row) in rows.iter().enumerate() {
            if row.len() != k {
                return Err(Error::Malformed {
                    row: t,
                    message: format!("expected {k} posterior values, found {}", row.len()),
                });
            }
            flat.extend_from_slice(row);
        }
        Self::from_flat(flat, k, labels)
    }

    /// Builds a set from a row-major N×K buffer.
    pub fn from_flat(posteriors: Vec<f64>, n_classes: usize, labels: Vec<usize>) -> Result<Self> {
        let names = default_class_names(n_classes);
        Self::with_names(posteriors, n_classes, labels, names)
    }

    pub fn with_names(
        posteriors: Vec<f64>,
        n_classes: usize,
        labels: Vec<usize>,
        class_names: Vec<String>,
    ) -> Result<Self> {
        if n_classes < 2 {
            return Err(Error::invalid_data(format!("need at least 2 classes, found {n_classes}")));
        }
        if labels.is_empty() {
            return Err(Error::invalid_data("dataset has no samples"));
        }
        if posteriors.len() != labels.len() * n_classes {
            return Err(Error::DimensionMismatch {
                expected: labels.len() * n_classes,
                found: posteriors.len(),
            });
        }
        if class_names.len() != n_classes {
            return Err(Error::DimensionMismatch { expected: n_classes, found: class_names.len() });
        }
        for (t, row) in posteriors.chunks_exact(n_classes).enumerate() {
            check_row(row, t, ROW_SUM_TOL)?;
        }
        if let Some((t, &h)) = labels.iter().enumerate().find(|(_, &h)| h >= n_classes) {
            return Err(Error::Malformed {
                row: t,
                message: format!("label index {h} out of range for {n_classes} classes"),
            });
        }
        Ok(Self { posteriors, labels, class_names, n_classes })
    }

    pub fn n_samples(&self) -> usize {
        self.labels.len()
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn label(&self, t: usize) -> usize {
        self.labels[t]
    }

    pub fn class_names(&self) -> &[String] {
        &self.class_names
    }

    pub fn row(&self, t: usize) -> &[f64] {
        &self.posteriors[t * self.n_classes..(t + 1) * self.n_classes]
    }

    pub fn rows(&self) -> std::slice::ChunksExact<'_, f64> {
        self.posteriors.chunks_exact(self.n_classes)
    }

    /// Iterator over `(posterior, label)` pairs.
    pub fn samples(&self) -> impl Iterator<Item = (&[f64], usize)> + '_ {
        self.rows().zip(self.labels.iter().copied())
    }

    pub fn flat(&self) -> &[f64] {
        &self.posteriors
    }

    /// Per-class sample counts N_i.
    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.n_classes];
        for &h in &self.labels {
            counts[h] += 1;
        }
        counts
    }

    pub fn is_binary(&self) -> bool {
        self.n_classes == 2
    }

    /// Same labels and names with new posteriors (validated).
    pub fn with_posteriors(&self, posteriors: Vec<f64>) -> Result<Self> {
        Self::with_names(posteriors, self.n_classes, self.labels.clone(), self.class_names.clone())
    }

    /// Rows selected by index, in the given order (duplicates allowed).
    pub fn subset(&self, indices: &[usize]) -> Self {
        let k = self.n_classes;
        let mut posteriors = Vec::with_capacity(indices.len() * k);
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            posteriors.extend_from_slice(self.row(i));
            labels.push(self.labels[i]);
        }
        Self { posteriors, labels, class_names: self.class_names.clone(), n_classes: k }
    }

    /// Writes the set as CSV. Values use the shortest round-trip decimal
    /// form, so loading the file back is bit-exact.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["label".to_string()];
        for (j, name) in self.class_names.iter().enumerate() {
            if *name == format!("H{}", j + 1) {
                header.push(format!("q_{}", j + 1));
            } else {
                header.push(format!("q_{name}"));
            }
        }
        w.write_record(&header)?;
        for (row, h) in self.samples() {
            let mut rec = Vec::with_capacity(self.n_classes + 1);
            rec.push(self.class_names[h].clone());
            rec.extend(row.iter().map(|v| v.to_string()));
            w.write_record(&rec)?;
        }
        w.flush().map_err(|e| Error::Io { path: PathBuf::from("<csv>"), source: e })?;
        Ok(())
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        let f = File::create(path).map_err(|e| Error::Io { path: path.to_owned(), source: e })?;
        self.write_csv(f)
    }
}

pub fn default_class_names(k: usize) -> Vec<String> {
    (1..=k).map(|j| format!("H{j}")).collect()
}

fn check_row(row: &[f64], t: usize, tol: f64) -> Result<()> {
    if let Some(v) = row.iter().find(|v| !v.is_finite() || **v < 0.0) {
        return Err(Error::Malformed { row: t, message: format!("invalid probability {v}") });
    }
    let s: f64 = row.iter().sum();
    if (s - 1.0).abs() > tol {
        return Err(Error::Malformed {
            row: t,
            message: format!("row sum {s} deviates from 1 by more than {tol}"),
        });
    }
    Ok(())
}

/// Class prior probabilities.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PriorVector(Vec<f64>);

impl PriorVector {
    pub fn new(priors: Vec<f64>) -> Result<Self> {
        if priors.len() < 2 {
            return Err(Error::invalid_arg("priors need at least 2 entries"));
        }
        if priors.iter().any(|p| !p.is_finite() || *p < 0.0) {
            return Err(Error::invalid_arg("priors must be finite and nonnegative"));
        }
        let s: f64 = priors.iter().sum();
        if (s - 1.0).abs() > 1e-9 {
            return Err(Error::invalid_arg(format!("priors sum to {s}, not 1")));
        }
        Ok(Self(priors))
    }

    pub fn uniform(k: usize) -> Self {
        Self(vec![1.0 / k as f64; k])
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn get(&self, i: usize) -> f64 {
        self.0[i]
    }
}

impl FromStr for PriorVector {
    type Err = Error;

    /// Parses a comma-separated list such as `0.9,0.1`.
    fn from_str(s: &str) -> Result<Self> {
        let values = s
            .split(',')
            .map(|x| x.trim().parse::<f64>())
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| Error::invalid_arg(format!("bad prior list '{s}': {e}")))?;
        Self::new(values)
    }
}

/// Domain of the numbers stored in a posterior table.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Domain {
    #[default]
    Probability,
    /// Log-probabilities or unnormalized logits; rows are exponentiated after
    /// a shift by the maximum and renormalized.
    LogProbability,
}

#[derive(Debug, Clone)]
pub enum SourceInput {
    Path(PathBuf),
    Table(String),
}

/// Where a posterior table comes from and how to interpret it.
#[derive(Debug, Clone)]
pub struct DatasetSource {
    pub input: SourceInput,
    pub domain: Domain,
}

impl DatasetSource {
    pub fn path(path: impl Into<PathBuf>) -> Self {
        Self { input: SourceInput::Path(path.into()), domain: Domain::Probability }
    }

    pub fn table(text: impl Into<String>) -> Self {
        Self { input: SourceInput::Table(text.into()), domain: Domain::Probability }
    }

    pub fn log_domain(mut self) -> Self {
        self.domain = Domain::LogProbability;
        self
    }
}

/// Parses and validates a posterior table.
pub fn load_dataset(source: &DatasetSource) -> Result<LabeledPosteriors> {
    match &source.input {
        SourceInput::Path(p) => {
            let mut text = String::new();
            File::open(p)
                .and_then(|mut f| f.read_to_string(&mut text))
                .map_err(|e| Error::Io { path: p.clone(), source: e })?;
            parse_table(&text, source.domain)
        }
        SourceInput::Table(text) => parse_table(text, source.domain),
    }
}

fn parse_table(text: &str, domain: Domain) -> Result<LabeledPosteriors> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_reader(text.as_bytes());
    let header = rdr.headers()?.clone();
    if header.len() < 3 {
        return Err(Error::Malformed {
            row: 0,
            message: "header must be label,q_1,...,q_K with K >= 2".into(),
        });
    }
    if header.get(0) != Some("label") {
        return Err(Error::Malformed { row: 0, message: "first column must be 'label'".into() });
    }
    let k = header.len() - 1;
    let mut class_names = Vec::with_capacity(k);
    for (j, col) in header.iter().skip(1).enumerate() {
        let suffix = col.strip_prefix("q_").ok_or_else(|| Error::Malformed {
            row: 0,
            message: format!("posterior column '{col}' must start with 'q_'"),
        })?;
        if suffix == (j + 1).to_string() {
            class_names.push(format!("H{}", j + 1));
        } else {
            class_names.push(suffix.to_string());
        }
    }

    let mut flat = Vec::new();
    let mut labels = Vec::new();
    for (t, rec) in rdr.records().enumerate() {
        let rec = rec?;
        if rec.len() != k + 1 {
            return Err(Error::Malformed {
                row: t,
                message: format!("expected {} fields, found {}", k + 1, rec.len()),
            });
        }
        let label_field = &rec[0];
        let h = resolve_label(label_field, &class_names).ok_or_else(|| Error::Malformed {
            row: t,
            message: format!("unknown label '{label_field}'"),
        })?;
        let mut row = Vec::with_capacity(k);
        for field in rec.iter().skip(1) {
            let v: f64 = field.parse().map_err(|_| Error::Malformed {
                row: t,
                message: format!("cannot parse '{field}' as a number"),
            })?;
            row.push(v);
        }
        match domain {
            Domain::Probability => {
                check_row(&row, t, INGEST_ROW_SUM_TOL)?;
                let s: f64 = row.iter().sum();
                if (s - 1.0).abs() > 1e-12 {
                    row.iter_mut().for_each(|v| *v /= s);
                }
            }
            Domain::LogProbability => {
                if row.iter().any(|v| v.is_nan() || *v == f64::INFINITY) {
                    return Err(Error::Malformed { row: t, message: "invalid log-probability".into() });
                }
                if row.iter().all(|v| *v == f64::NEG_INFINITY) {
                    return Err(Error::Malformed { row: t, message: "all log-probabilities are -inf".into() });
                }
                softmax_in_place(&mut row);
            }
        }
        flat.extend_from_slice(&row);
        labels.push(h);
    }
    LabeledPosteriors::with_names(flat, k, labels, class_names)
}

fn resolve_label(field: &str, names: &[String]) -> Option<usize> {
    if let Some(i) = names.iter().position(|n| n == field) {
        return Some(i);
    }
    field.parse::<usize>().ok().filter(|&i| i < names.len())
}

/// Clamps every entry to at least `floor` and renormalizes rows so they sum
/// to 1. Entries at the floor stay there while the remaining mass is
/// rescaled. Rows that already satisfy both conditions are left untouched,
/// which makes the operation idempotent.
pub fn validate_and_normalize(ds: &LabeledPosteriors, floor: f64) -> Result<LabeledPosteriors> {
    if !(0.0..=MAX_FLOOR).contains(&floor) {
        return Err(Error::invalid_arg(format!("floor {floor} outside [0, {MAX_FLOOR}]")));
    }
    let k = ds.n_classes();
    let mut out = ds.flat().to_vec();
    for (t, row) in out.chunks_exact_mut(k).enumerate() {
        floor_row(row, floor).map_err(|m| Error::Malformed { row: t, message: m.into() })?;
    }
    ds.with_posteriors(out)
}

/// In-place version of the flooring step for a single row.
pub(crate) fn floor_row(row: &mut [f64], floor: f64) -> Result<(), &'static str> {
    let already = row.iter().all(|&v| v >= floor);
    let s: f64 = row.iter().sum();
    if already && (s - 1.0).abs() <= 1e-12 {
        return Ok(());
    }
    if !(s > 0.0) || !s.is_finite() {
        return Err("row cannot be renormalized (zero or non-finite sum)");
    }
    row.iter_mut().for_each(|v| *v /= s);
    let k = row.len();
    let mut clamped = vec![false; k];
    for _ in 0..=k {
        let mut changed = false;
        for (v, c) in row.iter_mut().zip(clamped.iter_mut()) {
            if !*c && *v <= floor {
                *v = floor;
                *c = true;
                changed = true;
            }
        }
        let n_clamped = clamped.iter().filter(|c| **c).count();
        let free_mass = 1.0 - n_clamped as f64 * floor;
        let free_sum: f64 = row.iter().zip(&clamped).filter(|(_, c)| !**c).map(|(v, _)| *v).sum();
        if free_sum <= 0.0 {
            return Err("floor leaves no free probability mass");
        }
        let scale = free_mass / free_sum;
        for (v, c) in row.iter_mut().zip(&clamped) {
            if !*c {
                *v *= scale;
            }
        }
        if !changed && row.iter().all(|&v| v >= floor) {
            break;
        }
    }
    // push the rounding residual into the largest entry
    let imax = crate::numeric::argmax(row);
    let rest: f64 = row.iter().enumerate().filter(|(i, _)| *i != imax).map(|(_, v)| *v).sum();
    row[imax] = 1.0 - rest;
    Ok(())
}

/// Empirical class priors N_i / N.
pub fn empirical_priors(ds: &LabeledPosteriors) -> PriorVector {
    let n = ds.n_samples() as f64;
    PriorVector(ds.class_counts().into_iter().map(|c| c as f64 / n).collect())
}
