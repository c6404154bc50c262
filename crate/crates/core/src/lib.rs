//! Evaluation of probabilistic classifiers with proper scoring rules.
//!
//! The crate covers Bayes decisions under arbitrary cost matrices, expected
//! proper scoring rules (cross-entropy and Brier) and their normalized
//! forms, weighted Bayes-risk curves, post-hoc calibration and the
//! calibration metrics built on it, a synthetic data generator with known
//! optimal posteriors, and bootstrap confidence intervals.

pub mod caltx;
pub mod calmet;
pub mod data;
pub mod decide;
pub mod epsr;
pub mod error;
pub mod metric;
pub mod numeric;
pub mod optim;
pub mod resample;
pub mod synth;

pub use data::{
    empirical_priors, load_dataset, validate_and_normalize, DatasetSource, Domain, LabeledPosteriors, PriorVector,
    DEFAULT_FLOOR,
};
pub use epsr::ScoringRule;
pub use error::{Error, ErrorKind, Result};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");
