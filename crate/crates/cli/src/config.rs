//! Experiment configuration files (TOML).
//!
//! ```toml
//! seed = 20240601
//! reps = 500
//! estimators = ["plug_in_admle", "partially_linear_admle", "aipw"]
//! output = "results.csv"
//!
//! [grid]
//! n = [500, 1000]
//! gammas = [0.5, 2.0]
//! outcome_forms = ["linear"]
//!
//! [basis]
//! dictionary_schedule = [[500, 80], [1000, 400]]
//! ```
//!
//! Every key except `seed` and `grid.n`/`grid.gammas` has a default. Unknown
//! keys are rejected.

use adml::estimators::EstimatorKind;
use adml::nuisance::{NuisanceConfig, DEFAULT_CUTOFF_GRID, DEFAULT_CV_PATIENCE, DEFAULT_PENALTY_RATIOS};
use adml::lasso::{DEFAULT_FOLDS, DEFAULT_LAMBDA_MIN_RATIO, DEFAULT_N_LAMBDA};
use adml::simulation::{OutcomeForm, SimulationConfig, DEFAULT_NOISE_VARIANCE, DICTIONARY_SCHEDULE};
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    #[serde(default = "default_reps")]
    pub reps: usize,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default = "default_estimators")]
    pub estimators: Vec<EstimatorKind>,
    /// Summary CSV path; standard output when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<String>,
    /// Per-replication CSV path.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub replications_output: Option<String>,
    pub grid: GridSection,
    #[serde(default)]
    pub basis: BasisSection,
    #[serde(default)]
    pub nuisance: NuisanceSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSection {
    pub n: Vec<usize>,
    pub gammas: Vec<f64>,
    #[serde(default = "default_forms")]
    pub outcome_forms: Vec<OutcomeForm>,
    /// Apply the local perturbation at each sample size.
    #[serde(default)]
    pub perturbed: bool,
    #[serde(default = "default_noise")]
    pub noise_variance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BasisSection {
    /// Fixed knots per covariate; overrides the schedule.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub knots_per_covariate: Option<usize>,
    #[serde(default = "yes")]
    pub include_linear_terms: bool,
    /// `[n, dictionary size]` pairs.
    #[serde(default = "default_schedule")]
    pub dictionary_schedule: Vec<[usize; 2]>,
}

impl Default for BasisSection {
    fn default() -> Self {
        Self { knots_per_covariate: None, include_linear_terms: true, dictionary_schedule: default_schedule() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NuisanceSection {
    #[serde(default = "default_folds")]
    pub folds: usize,
    #[serde(default = "default_n_lambda")]
    pub n_lambda: usize,
    #[serde(default = "default_lambda_min_ratio")]
    pub lambda_min_ratio: f64,
    /// Early-stop patience of the CV scan; 0 scans the whole grid.
    #[serde(default = "default_patience")]
    pub cv_patience: usize,
    #[serde(default = "default_ratios")]
    pub penalty_ratios: Vec<f64>,
    #[serde(default = "default_cutoffs")]
    pub cutoff_grid: Vec<f64>,
}

impl Default for NuisanceSection {
    fn default() -> Self {
        Self {
            folds: default_folds(),
            n_lambda: default_n_lambda(),
            lambda_min_ratio: default_lambda_min_ratio(),
            cv_patience: default_patience(),
            penalty_ratios: default_ratios(),
            cutoff_grid: default_cutoffs(),
        }
    }
}

fn default_reps() -> usize {
    500
}
fn default_alpha() -> f64 {
    0.05
}
fn default_estimators() -> Vec<EstimatorKind> {
    EstimatorKind::ALL.to_vec()
}
fn default_forms() -> Vec<OutcomeForm> {
    vec![OutcomeForm::Linear]
}
fn default_noise() -> f64 {
    DEFAULT_NOISE_VARIANCE
}
fn yes() -> bool {
    true
}
fn default_schedule() -> Vec<[usize; 2]> {
    DICTIONARY_SCHEDULE.iter().map(|&(n, k)| [n, k]).collect()
}
fn default_folds() -> usize {
    DEFAULT_FOLDS
}
fn default_n_lambda() -> usize {
    DEFAULT_N_LAMBDA
}
fn default_lambda_min_ratio() -> f64 {
    DEFAULT_LAMBDA_MIN_RATIO
}
fn default_patience() -> usize {
    DEFAULT_CV_PATIENCE
}
fn default_ratios() -> Vec<f64> {
    DEFAULT_PENALTY_RATIOS.to_vec()
}
fn default_cutoffs() -> Vec<f64> {
    DEFAULT_CUTOFF_GRID.to_vec()
}

fn invalid(field: &str, msg: impl std::fmt::Display) -> CliError {
    CliError::Usage(format!("config field `{field}`: {msg}"))
}

impl ExperimentConfig {
    /// Parses and validates a config; errors name the line or field.
    pub fn parse(text: &str) -> Result<Self, CliError> {
        let cfg: Self = toml::from_str(text).map_err(|e| CliError::Usage(format!("invalid config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Canonical serialization: every field written out, in declaration order.
    pub fn canonical(&self) -> String {
        toml::to_string(self).expect("config fields are serializable")
    }

    pub fn validate(&self) -> Result<(), CliError> {
        if self.seed > i64::MAX as u64 {
            return Err(invalid("seed", "must be at most 2^63 - 1"));
        }
        if self.reps == 0 {
            return Err(invalid("reps", "must be at least 1"));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(invalid("alpha", "must lie in (0, 1)"));
        }
        if self.estimators.is_empty() {
            return Err(invalid("estimators", "list is empty"));
        }
        let g = &self.grid;
        if g.n.is_empty() || g.n.iter().any(|&n| n < 2) {
            return Err(invalid("grid.n", "needs at least one sample size, each at least 2"));
        }
        if g.gammas.is_empty() || g.gammas.iter().any(|v| !v.is_finite()) {
            return Err(invalid("grid.gammas", "needs at least one finite value"));
        }
        if g.outcome_forms.is_empty() {
            return Err(invalid("grid.outcome_forms", "list is empty"));
        }
        if !(g.noise_variance > 0.0 && g.noise_variance.is_finite()) {
            return Err(invalid("grid.noise_variance", "must be positive"));
        }
        if self.basis.knots_per_covariate.is_none() && self.basis.dictionary_schedule.is_empty() {
            return Err(invalid("basis.dictionary_schedule", "is empty and no knots_per_covariate is set"));
        }
        let nu = &self.nuisance;
        if nu.folds < 2 {
            return Err(invalid("nuisance.folds", "must be at least 2"));
        }
        if nu.n_lambda == 0 {
            return Err(invalid("nuisance.n_lambda", "must be at least 1"));
        }
        if !(nu.lambda_min_ratio > 0.0 && nu.lambda_min_ratio < 1.0) {
            return Err(invalid("nuisance.lambda_min_ratio", "must lie in (0, 1)"));
        }
        if nu.penalty_ratios.is_empty() || nu.penalty_ratios.iter().any(|r| !(*r > 0.0 && r.is_finite())) {
            return Err(invalid("nuisance.penalty_ratios", "needs positive finite values"));
        }
        if nu.cutoff_grid.is_empty() || nu.cutoff_grid.iter().any(|c| !(*c >= 0.0 && *c < 0.5)) {
            return Err(invalid("nuisance.cutoff_grid", "needs values in [0, 0.5)"));
        }
        Ok(())
    }

    pub fn simulation_config(&self) -> SimulationConfig {
        let nu = &self.nuisance;
        let mut nuisance = NuisanceConfig::new(0, self.seed);
        nuisance.include_linear_terms = self.basis.include_linear_terms;
        nuisance.folds = nu.folds;
        nuisance.n_lambda = nu.n_lambda;
        nuisance.lambda_min_ratio = nu.lambda_min_ratio;
        nuisance.cv_patience = (nu.cv_patience > 0).then_some(nu.cv_patience);
        nuisance.penalty_ratios = nu.penalty_ratios.clone();
        nuisance.cutoff_grid = nu.cutoff_grid.clone();
        SimulationConfig {
            alpha: self.alpha,
            knots_per_covariate: self.basis.knots_per_covariate,
            dictionary_schedule: self.basis.dictionary_schedule.iter().map(|&[n, k]| (n, k)).collect(),
            nuisance,
            threads: None,
        }
    }
}
