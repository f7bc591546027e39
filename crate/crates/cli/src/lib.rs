//! Command-line front end: `simulate`, `estimate`, `oracle` and `sample`.
//!
//! Exit codes: 0 on success, 1 when estimation or a simulation fails at run
//! time, 2 for usage, configuration and input-format errors.

pub mod config;
pub mod csvio;

use std::fmt;
use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use adml::basis::{BasisSpec, Block};
use adml::estimators::{estimate_all, EstimatorKind};
use adml::nuisance::{fit_nuisances, NuisanceConfig};
use adml::projections::{OracleModel, PopulationOracle, DEFAULT_MC_SIZE};
use adml::simulation::{
    apply_local_perturbation, knots_for_n, overlap_constant, run_replications, DgpSpec, MetricsTable,
    OutcomeForm, DEFAULT_NOISE_VARIANCE,
};
use clap::{Args, Parser, Subcommand};

use crate::config::ExperimentConfig;
use crate::csvio::{EstimateRow, OracleRow};

#[derive(Debug, Clone, PartialEq)]
pub enum CliError {
    Usage(String),
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Runtime(_) => 1,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) | CliError::Runtime(m) => f.write_str(m),
        }
    }
}

impl std::error::Error for CliError {}

#[derive(Debug, Parser)]
#[command(name = "adml", version, about = "Adaptive debiased machine learning for the average treatment effect")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run the Monte Carlo experiment described by a config file.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        /// Summary CSV path (overrides `output` in the config).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Overrides `reps` in the config.
        #[arg(long)]
        reps: Option<usize>,
        /// Overrides `seed` in the config.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Estimate the ATE from a CSV with columns W1..Wd,A,Y.
    Estimate {
        #[arg(long)]
        data: PathBuf,
        /// Repeat for several estimators; all four by default.
        #[arg(long)]
        estimator: Vec<EstimatorKind>,
        #[arg(long, default_value_t = 0.05)]
        alpha: f64,
        /// Hinge knots per covariate; 0 leaves only the intercept and treatment
        /// columns. Defaults to the dictionary schedule at the sample size.
        #[arg(long = "knots-per-cov")]
        knots_per_cov: Option<usize>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Known constant propensity score instead of a fitted one.
        #[arg(long)]
        propensity: Option<f64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Population diagnostics under a benchmark process.
    Oracle {
        #[command(flatten)]
        dgp: DgpArgs,
        /// Uniform knots per covariate of the working bases.
        #[arg(long = "knots-per-cov", default_value_t = 1)]
        knots_per_cov: usize,
        /// Uniform knots per covariate of the oracle bases; nonparametric oracle when absent.
        #[arg(long = "oracle-knots")]
        oracle_knots: Option<usize>,
        /// Monte Carlo draws.
        #[arg(long = "mc-size", default_value_t = DEFAULT_MC_SIZE)]
        mc_size: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Draw a dataset from a benchmark process.
    Sample {
        #[command(flatten)]
        dgp: DgpArgs,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Debug, Args)]
pub struct DgpArgs {
    #[arg(long, allow_hyphen_values = true)]
    pub gamma: f64,
    #[arg(long = "outcome-form", default_value = "linear", value_parser = csvio::outcome_form)]
    pub outcome_form: OutcomeForm,
    /// Locally perturbed process at sample size `--n`.
    #[arg(long)]
    pub perturbed: bool,
    /// Sample size (and perturbation scale).
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long = "noise-variance", default_value_t = DEFAULT_NOISE_VARIANCE)]
    pub noise_variance: f64,
}

impl DgpArgs {
    fn spec(&self) -> Result<DgpSpec, CliError> {
        if !self.gamma.is_finite() {
            return Err(CliError::Usage("--gamma must be finite".into()));
        }
        if !(self.noise_variance > 0.0 && self.noise_variance.is_finite()) {
            return Err(CliError::Usage("--noise-variance must be positive".into()));
        }
        let base = DgpSpec { noise_variance: self.noise_variance, ..DgpSpec::new(self.gamma, self.outcome_form) };
        if self.perturbed {
            match self.n {
                Some(n) if n >= 1 => Ok(apply_local_perturbation(&base, n)),
                _ => Err(CliError::Usage("--perturbed needs --n >= 1".into())),
            }
        } else {
            Ok(base)
        }
    }
}

fn create(path: &Path) -> Result<BufWriter<File>, CliError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| CliError::Runtime(format!("cannot create {}: {e}", dir.display())))?;
    }
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| CliError::Runtime(format!("cannot create {}: {e}", path.display())))
}

/// Runs `write` against the file at `path`, or standard output.
fn emit(path: Option<&Path>, write: impl FnOnce(&mut dyn Write) -> Result<(), CliError>) -> Result<(), CliError> {
    match path {
        Some(p) => {
            let mut f = create(p)?;
            write(&mut f)?;
            f.flush().map_err(|e| CliError::Runtime(format!("write failed: {e}")))
        }
        None => {
            let stdout = io::stdout();
            let mut lock = stdout.lock();
            write(&mut lock)
        }
    }
}

pub fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Simulate { config, out, reps, seed } => {
            let mut cfg = load_config(&config)?;
            cfg.reps = reps.unwrap_or(cfg.reps);
            cfg.seed = seed.unwrap_or(cfg.seed);
            cfg.validate()?;
            cmd_simulate(&cfg, out.as_deref()).map(drop)
        }
        Command::Estimate { data, estimator, alpha, knots_per_cov, seed, propensity, out } => {
            let kinds = if estimator.is_empty() { EstimatorKind::ALL.to_vec() } else { estimator };
            let opts = EstimateOptions { alpha, knots_per_cov, seed, propensity };
            let rows = cmd_estimate(&data, &kinds, &opts)?;
            emit(out.as_deref(), |w| csvio::write_estimates(&rows, w))
        }
        Command::Oracle { dgp, knots_per_cov, oracle_knots, mc_size, seed, out } => {
            let rows = cmd_oracle(&dgp.spec()?, knots_per_cov, oracle_knots, mc_size, seed)?;
            emit(out.as_deref(), |w| csvio::write_oracle(&rows, w))
        }
        Command::Sample { dgp, seed, out } => {
            let spec = dgp.spec()?;
            let n = dgp.n.ok_or_else(|| CliError::Usage("sample needs --n".into()))?;
            if n == 0 {
                return Err(CliError::Usage("--n must be at least 1".into()));
            }
            let data = spec.sample(n, seed);
            emit(out.as_deref(), |w| csvio::write_dataset(&data, w))
        }
    }
}

pub fn load_config(path: &Path) -> Result<ExperimentConfig, CliError> {
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
    ExperimentConfig::parse(&text)
}

/// Runs every grid cell of `cfg` and writes the summary (and, when
/// configured, per-replication) CSV. Returns the summary table.
pub fn cmd_simulate(cfg: &ExperimentConfig, out: Option<&Path>) -> Result<MetricsTable, CliError> {
    let sim = cfg.simulation_config();
    let mut table = MetricsTable::default();
    let mut reps_writer = match &cfg.replications_output {
        Some(p) => {
            let mut w = csv::Writer::from_writer(create(Path::new(p))?);
            w.write_record(csvio::REPLICATION_HEADER).map_err(|e| CliError::Runtime(e.to_string()))?;
            Some(w)
        }
        None => None,
    };
    for &form in &cfg.grid.outcome_forms {
        for &gamma in &cfg.grid.gammas {
            for &n in &cfg.grid.n {
                let base = DgpSpec { noise_variance: cfg.grid.noise_variance, ..DgpSpec::new(gamma, form) };
                let spec = if cfg.grid.perturbed { apply_local_perturbation(&base, n) } else { base };
                log::info!("simulating {} gamma={gamma} n={n}", form.as_str());
                let res = run_replications(&spec, n, &cfg.estimators, cfg.reps, cfg.seed, &sim)
                    .map_err(|e| CliError::Runtime(e.to_string()))?;
                if let Some(w) = reps_writer.as_mut() {
                    csvio::write_replications(&res, &res.table.rows[0], w)?;
                }
                table.extend(res.table);
            }
        }
    }
    if let Some(mut w) = reps_writer {
        w.flush().map_err(|e| CliError::Runtime(format!("write failed: {e}")))?;
    }
    let out = out.map(Path::to_path_buf).or_else(|| cfg.output.as_ref().map(PathBuf::from));
    emit(out.as_deref(), |w| csvio::write_metrics(&table, w))?;
    Ok(table)
}

#[derive(Debug, Clone, PartialEq)]
pub struct EstimateOptions {
    pub alpha: f64,
    pub knots_per_cov: Option<usize>,
    pub seed: u64,
    pub propensity: Option<f64>,
}

pub fn cmd_estimate(data: &Path, kinds: &[EstimatorKind], opts: &EstimateOptions) -> Result<Vec<EstimateRow>, CliError> {
    if !(opts.alpha > 0.0 && opts.alpha < 1.0) {
        return Err(CliError::Usage(format!("--alpha {} outside (0, 1)", opts.alpha)));
    }
    if let Some(p) = opts.propensity {
        if !(p > 0.0 && p < 1.0) {
            return Err(CliError::Usage(format!("--propensity {p} outside (0, 1)")));
        }
    }
    let file = File::open(data).map_err(|e| CliError::Usage(format!("cannot read {}: {e}", data.display())))?;
    let data = csvio::read_dataset(file)?;
    let knots = opts
        .knots_per_cov
        .unwrap_or_else(|| knots_for_n(data.n(), data.dim()));
    let mut cfg = NuisanceConfig::new(knots, opts.seed);
    // Without knots the model is the saturated treatment-only regression (1, a).
    cfg.include_linear_terms = knots > 0;
    cfg.known_propensity = opts.propensity;
    let bundle = fit_nuisances(&data, &cfg).map_err(|e| CliError::Runtime(e.to_string()))?;
    let cutoff = bundle.propensity.cutoff;
    estimate_all(kinds, &data, &bundle, &cfg, opts.alpha)
        .into_iter()
        .zip(kinds)
        .map(|(r, kind)| {
            let e = r.map_err(|e| CliError::Runtime(format!("{kind}: {e}")))?;
            Ok(EstimateRow {
                estimator: e.kind,
                psi: e.psi,
                sigma: e.sigma,
                ci_lower: e.ci.0,
                ci_upper: e.ci.1,
                n: e.n,
                model_size: e.model_size,
                truncation_cutoff: cutoff,
            })
        })
        .collect()
}

fn uniform_basis(knots: usize, block: Block, dim: usize) -> BasisSpec {
    BasisSpec::uniform(dim, knots, -1.0, 1.0, block).with_intercept(true).with_linear_terms(true)
}

pub fn cmd_oracle(
    spec: &DgpSpec,
    knots: usize,
    oracle_knots: Option<usize>,
    mc_size: usize,
    seed: u64,
) -> Result<Vec<OracleRow>, CliError> {
    let o = PopulationOracle::new(*spec, mc_size, seed).map_err(|e| CliError::Usage(e.to_string()))?;
    let rt = |e: adml::Error| CliError::Runtime(e.to_string());
    let dim = spec.dim();
    let cate = uniform_basis(knots, Block::CovariateOnly, dim);
    let outcome = uniform_basis(knots, Block::TreatmentInteracted, dim);
    let (cate_oracle, outcome_oracle) = match oracle_knots {
        Some(k) => (
            OracleModel::Span(uniform_basis(k, Block::CovariateOnly, dim)),
            OracleModel::Span(uniform_basis(k, Block::TreatmentInteracted, dim)),
        ),
        None => (OracleModel::Nonparametric, OracleModel::Nonparametric),
    };
    let mut rows = Vec::new();
    let mut push = |q: &str, v: f64, se: Option<f64>| rows.push(OracleRow { quantity: q.into(), value: v, std_error: se });
    push("overlap_constant", overlap_constant(spec), None);
    push("ate_quadrature", spec.ate(), None);
    let t = o.true_ate().map_err(rt)?;
    push("true_ate", t.value, Some(t.std_error));
    let w = o.working_estimand(&cate).map_err(rt)?;
    push("working_estimand_partially_linear", w.value, Some(w.std_error));
    let w0 = o.oracle_estimand(&cate_oracle).map_err(rt)?;
    push("oracle_estimand_partially_linear", w0.value, Some(w0.std_error));
    let b = o.oracle_bias_partially_linear(&cate, &cate_oracle).map_err(rt)?;
    push("oracle_bias_partially_linear", b.bias.value, Some(b.bias.std_error));
    push("bias_bound_partially_linear", b.cauchy_schwarz_bound(), None);
    let w = o.plug_in_working_estimand(&outcome).map_err(rt)?;
    push("working_estimand_plug_in", w.value, Some(w.std_error));
    let w0 = o.plug_in_oracle_estimand(&outcome_oracle).map_err(rt)?;
    push("oracle_estimand_plug_in", w0.value, Some(w0.std_error));
    let b = o.oracle_bias_plug_in(&outcome, &outcome_oracle).map_err(rt)?;
    push("oracle_bias_plug_in", b.bias.value, Some(b.bias.std_error));
    push("bias_bound_plug_in", b.cauchy_schwarz_bound(), None);
    Ok(rows)
}
