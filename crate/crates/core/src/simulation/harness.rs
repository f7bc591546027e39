//! Seeded Monte Carlo replications and their summary table.
//!
//! Replication `r` samples its dataset and fits its nuisances from
//! `split_seed(master_seed, r)` alone. Replications run on a rayon pool and are
//! collected in replication order, so the output does not depend on the number
//! of threads or on scheduling.

use std::env;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::dgp::DgpSpec;
use crate::basis::knots_for_dictionary;
use crate::error::{Error, Result};
use crate::estimators::{estimate_all, AteEstimate, EstimatorKind};
use crate::nuisance::{fit_nuisances, NuisanceConfig};
use crate::seed::split_seed;

/// Environment variable capping the replication pool size.
pub const THREADS_ENV: &str = "ADML_THREADS";

/// Hinge dictionary size `k` per sample size.
pub const DICTIONARY_SCHEDULE: [(usize, usize); 6] =
    [(500, 80), (1000, 400), (2000, 608), (3000, 608), (4000, 800), (5000, 800)];

/// Dictionary size of the scheduled sample size nearest to `n` (ties go to the
/// smaller one); `None` for an empty schedule.
pub fn dictionary_size_in(schedule: &[(usize, usize)], n: usize) -> Option<usize> {
    schedule.iter().min_by_key(|(m, _)| (m.abs_diff(n), *m)).map(|&(_, k)| k)
}

pub fn dictionary_size(n: usize) -> usize {
    dictionary_size_in(&DICTIONARY_SCHEDULE, n).expect("schedule is nonempty")
}

/// Knots per covariate for the scheduled dictionary at `n`, split over the
/// control and treatment-interacted blocks.
pub fn knots_for_n(n: usize, dim: usize) -> usize {
    knots_for_dictionary(dictionary_size(n), dim, 2)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimulationConfig {
    pub alpha: f64,
    /// Overrides the scheduled knots per covariate.
    pub knots_per_covariate: Option<usize>,
    /// `(n, dictionary size)` pairs; a sample size uses the nearest entry.
    pub dictionary_schedule: Vec<(usize, usize)>,
    /// Template for the nuisance fits; its seed and knot count are set per replication.
    pub nuisance: NuisanceConfig,
    /// Pool size; falls back to `ADML_THREADS`, then to rayon's default.
    pub threads: Option<usize>,
}

impl Default for SimulationConfig {
    fn default() -> Self {
        Self {
            alpha: 0.05,
            knots_per_covariate: None,
            dictionary_schedule: DICTIONARY_SCHEDULE.to_vec(),
            nuisance: NuisanceConfig::new(0, 0),
            threads: None,
        }
    }
}

/// The part of an estimate kept per replication.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EstimateSummary {
    pub psi: f64,
    pub sigma: f64,
    pub ci_lower: f64,
    pub ci_upper: f64,
    pub model_size: usize,
}

impl From<&AteEstimate> for EstimateSummary {
    fn from(e: &AteEstimate) -> Self {
        Self { psi: e.psi, sigma: e.sigma, ci_lower: e.ci.0, ci_upper: e.ci.1, model_size: e.model_size }
    }
}

impl EstimateSummary {
    pub fn covers(&self, value: f64) -> bool {
        self.ci_lower <= value && value <= self.ci_upper
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReplicationRecord {
    pub index: usize,
    pub seed: u64,
    /// One entry per requested estimator, in request order; failures carry the error message.
    pub estimates: Vec<(EstimatorKind, std::result::Result<EstimateSummary, String>)>,
}

impl ReplicationRecord {
    pub fn get(&self, kind: EstimatorKind) -> Option<&EstimateSummary> {
        self.estimates.iter().find(|(k, _)| *k == kind).and_then(|(_, r)| r.as_ref().ok())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub estimator: EstimatorKind,
    pub n: usize,
    pub gamma: f64,
    pub outcome_form: super::OutcomeForm,
    pub perturbed: bool,
    pub bias: f64,
    /// Standard deviation of the estimates with denominator `R`.
    pub se: f64,
    pub rmse: f64,
    pub coverage: f64,
    pub mean_ci_width: f64,
    /// Successful replications.
    #[serde(rename = "R")]
    pub reps: usize,
    pub failures: usize,
}

impl MetricsRow {
    /// Aggregates successful estimates against `truth`; with no estimates every
    /// metric is NaN.
    pub fn aggregate(
        estimator: EstimatorKind,
        spec: &DgpSpec,
        n: usize,
        truth: f64,
        estimates: &[EstimateSummary],
        failures: usize,
    ) -> Self {
        let r = estimates.len() as f64;
        let mean = estimates.iter().map(|e| e.psi).sum::<f64>() / r;
        let bias = mean - truth;
        let se = (estimates.iter().map(|e| (e.psi - mean).powi(2)).sum::<f64>() / r).sqrt();
        Self {
            estimator,
            n,
            gamma: spec.gamma,
            outcome_form: spec.outcome_form,
            perturbed: spec.perturbed,
            bias,
            se,
            rmse: (bias * bias + se * se).sqrt(),
            coverage: estimates.iter().filter(|e| e.covers(truth)).count() as f64 / r,
            mean_ci_width: estimates.iter().map(|e| e.ci_upper - e.ci_lower).sum::<f64>() / r,
            reps: estimates.len(),
            failures,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricsTable {
    pub rows: Vec<MetricsRow>,
}

impl MetricsTable {
    pub fn row(&self, estimator: EstimatorKind) -> Option<&MetricsRow> {
        self.rows.iter().find(|r| r.estimator == estimator)
    }

    pub fn extend(&mut self, other: MetricsTable) {
        self.rows.extend(other.rows);
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimulationResult {
    pub truth: f64,
    pub table: MetricsTable,
    pub replications: Vec<ReplicationRecord>,
}

impl SimulationResult {
    /// Estimates of one estimator across successful replications, in replication order.
    pub fn estimates(&self, kind: EstimatorKind) -> Vec<EstimateSummary> {
        self.replications.iter().filter_map(|r| r.get(kind)).copied().collect()
    }
}

fn threads_from_env() -> Result<Option<usize>> {
    match env::var(THREADS_ENV) {
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(t) if t >= 1 => Ok(Some(t)),
            _ => Err(Error::InvalidArgument(format!("{THREADS_ENV}={v} is not a positive integer"))),
        },
        Err(_) => Ok(None),
    }
}

/// Runs one replication: samples, fits nuisances, computes every estimator.
pub fn run_replication(
    spec: &DgpSpec,
    n: usize,
    estimators: &[EstimatorKind],
    index: usize,
    master_seed: u64,
    cfg: &SimulationConfig,
) -> ReplicationRecord {
    let seed = split_seed(master_seed, index as u64);
    let data = spec.sample(n, seed);
    let nuisance = NuisanceConfig {
        knots_per_covariate: cfg.knots_per_covariate.unwrap_or_else(|| {
            let size = dictionary_size_in(&cfg.dictionary_schedule, n).unwrap_or_else(|| dictionary_size(n));
            knots_for_dictionary(size, spec.dim(), 2)
        }),
        seed,
        ..cfg.nuisance.clone()
    };
    let estimates = match fit_nuisances(&data, &nuisance) {
        Ok(bundle) => estimators
            .iter()
            .zip(estimate_all(estimators, &data, &bundle, &nuisance, cfg.alpha))
            .map(|(&k, r)| (k, r.map(|e| EstimateSummary::from(&e)).map_err(|e| e.to_string())))
            .collect(),
        Err(e) => estimators.iter().map(|&k| (k, Err(e.to_string()))).collect(),
    };
    ReplicationRecord { index, seed, estimates }
}

/// `reps` seeded replications at sample size `n`, summarized per estimator
/// against the exact ATE of `spec`.
pub fn run_replications(
    spec: &DgpSpec,
    n: usize,
    estimators: &[EstimatorKind],
    reps: usize,
    master_seed: u64,
    cfg: &SimulationConfig,
) -> Result<SimulationResult> {
    if reps == 0 {
        return Err(Error::InvalidArgument("at least one replication is required".into()));
    }
    if n < 2 {
        return Err(Error::InvalidArgument(format!("sample size {n} is below 2")));
    }
    if estimators.is_empty() {
        return Err(Error::InvalidArgument("no estimators requested".into()));
    }
    if !(cfg.alpha > 0.0 && cfg.alpha < 1.0) {
        return Err(Error::InvalidArgument(format!("alpha {} outside (0, 1)", cfg.alpha)));
    }
    if cfg.knots_per_covariate.is_none() && cfg.dictionary_schedule.is_empty() {
        return Err(Error::InvalidArgument("empty dictionary schedule".into()));
    }
    let threads = match cfg.threads {
        Some(t) => Some(t),
        None => threads_from_env()?,
    };
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(t) = threads {
        builder = builder.num_threads(t);
    }
    let pool = builder.build().map_err(|e| Error::InvalidArgument(format!("thread pool: {e}")))?;
    let replications: Vec<ReplicationRecord> = pool.install(|| {
        (0..reps)
            .into_par_iter()
            .map(|r| run_replication(spec, n, estimators, r, master_seed, cfg))
            .collect()
    });
    let truth = spec.ate();
    let mut table = MetricsTable::default();
    for &kind in estimators {
        let ok: Vec<EstimateSummary> = replications.iter().filter_map(|r| r.get(kind)).copied().collect();
        let failures = reps - ok.len();
        if failures > 0 {
            log::warn!("{kind}: {failures} of {reps} replications failed");
        }
        table.rows.push(MetricsRow::aggregate(kind, spec, n, truth, &ok, failures));
    }
    Ok(SimulationResult { truth, table, replications })
}
