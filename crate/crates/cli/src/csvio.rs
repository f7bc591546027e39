//! CSV formats.
//!
//! Floating-point fields are written with 17 significant digits, which
//! reproduces every `f64` exactly when parsed back.

use std::io::{Read, Write};

use adml::estimators::EstimatorKind;
use adml::simulation::{MetricsRow, MetricsTable, OutcomeForm, SimulationResult};
use adml::Dataset;
use nalgebra::{DMatrix, DVector};
use serde::Deserialize;

use crate::CliError;

pub const METRICS_HEADER: [&str; 12] = [
    "estimator",
    "n",
    "gamma",
    "outcome_form",
    "perturbed",
    "bias",
    "se",
    "rmse",
    "coverage",
    "mean_ci_width",
    "R",
    "failures",
];

pub const REPLICATION_HEADER: [&str; 13] = [
    "estimator",
    "n",
    "gamma",
    "outcome_form",
    "perturbed",
    "replication",
    "seed",
    "psi",
    "sigma",
    "ci_lower",
    "ci_upper",
    "model_size",
    "error",
];

pub const ESTIMATE_HEADER: [&str; 8] =
    ["estimator", "psi", "sigma", "ci_lower", "ci_upper", "n", "model_size", "truncation_cutoff"];

pub const ORACLE_HEADER: [&str; 3] = ["quantity", "value", "std_error"];

pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

fn io_err(e: impl std::fmt::Display) -> CliError {
    CliError::Runtime(format!("write failed: {e}"))
}

fn header_names(dim: usize) -> Vec<String> {
    (1..=dim).map(|j| format!("W{j}")).chain(["A".to_string(), "Y".to_string()]).collect()
}

/// Writes `W1..Wd,A,Y`.
pub fn write_dataset(data: &Dataset, out: impl Write) -> Result<(), CliError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(header_names(data.dim())).map_err(io_err)?;
    for i in 0..data.n() {
        let mut rec: Vec<String> = data.w().row(i).iter().map(|&v| fmt_f64(v)).collect();
        rec.push(format!("{}", data.a()[i] as u8));
        rec.push(fmt_f64(data.y()[i]));
        w.write_record(&rec).map_err(io_err)?;
    }
    w.flush().map_err(io_err)
}

/// Reads `W1..Wd,A,Y`; errors name the first offending data row (1-based).
pub fn read_dataset(input: impl Read) -> Result<Dataset, CliError> {
    let mut r = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(input);
    let headers = r.headers().map_err(|e| CliError::Usage(format!("unreadable CSV header: {e}")))?.clone();
    let cols = headers.len();
    if cols < 3 {
        return Err(CliError::Usage(format!("expected columns W1..Wd,A,Y, found {} columns", cols)));
    }
    let dim = cols - 2;
    let expected = header_names(dim);
    if headers.iter().ne(expected.iter().map(String::as_str)) {
        return Err(CliError::Usage(format!(
            "expected header {}, found {}",
            expected.join(","),
            headers.iter().collect::<Vec<_>>().join(",")
        )));
    }
    let (mut w, mut a, mut y) = (Vec::new(), Vec::new(), Vec::new());
    for (k, rec) in r.records().enumerate() {
        let row = k + 1;
        let rec = rec.map_err(|e| CliError::Usage(format!("row {row}: {e}")))?;
        let mut vals = Vec::with_capacity(cols);
        for (j, field) in rec.iter().enumerate() {
            if field.is_empty() {
                return Err(CliError::Usage(format!("row {row}: missing value in column {}", expected[j])));
            }
            let v: f64 = field
                .parse()
                .map_err(|_| CliError::Usage(format!("row {row}: '{field}' in column {} is not a number", expected[j])))?;
            if !v.is_finite() {
                return Err(CliError::Usage(format!("row {row}: non-finite value in column {}", expected[j])));
            }
            vals.push(v);
        }
        if vals[dim] != 0.0 && vals[dim] != 1.0 {
            return Err(CliError::Usage(format!("row {row}: treatment A is {}, expected 0 or 1", vals[dim])));
        }
        w.extend_from_slice(&vals[..dim]);
        a.push(vals[dim]);
        y.push(vals[dim + 1]);
    }
    if a.is_empty() {
        return Err(CliError::Usage("dataset has no rows".into()));
    }
    let n = a.len();
    Dataset::new(DMatrix::from_row_slice(n, dim, &w), DVector::from_vec(a), DVector::from_vec(y))
        .map_err(|e| CliError::Usage(e.to_string()))
}

fn metrics_record(r: &MetricsRow) -> Vec<String> {
    vec![
        r.estimator.to_string(),
        r.n.to_string(),
        fmt_f64(r.gamma),
        r.outcome_form.as_str().to_string(),
        r.perturbed.to_string(),
        fmt_f64(r.bias),
        fmt_f64(r.se),
        fmt_f64(r.rmse),
        fmt_f64(r.coverage),
        fmt_f64(r.mean_ci_width),
        r.reps.to_string(),
        r.failures.to_string(),
    ]
}

pub fn write_metrics(table: &MetricsTable, out: impl Write) -> Result<(), CliError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(METRICS_HEADER).map_err(io_err)?;
    for r in &table.rows {
        w.write_record(metrics_record(r)).map_err(io_err)?;
    }
    w.flush().map_err(io_err)
}

pub fn read_metrics(input: impl Read) -> Result<MetricsTable, CliError> {
    let mut r = csv::Reader::from_reader(input);
    let rows = r
        .deserialize::<MetricsRow>()
        .enumerate()
        .map(|(k, row)| row.map_err(|e| CliError::Usage(format!("row {}: {e}", k + 1))))
        .collect::<Result<_, _>>()?;
    Ok(MetricsTable { rows })
}

/// Per-replication estimates of one simulation cell.
pub fn write_replications(res: &SimulationResult, key: &MetricsRow, w: &mut csv::Writer<impl Write>) -> Result<(), CliError> {
    for rep in &res.replications {
        for (kind, outcome) in &rep.estimates {
            let mut rec = vec![
                kind.to_string(),
                key.n.to_string(),
                fmt_f64(key.gamma),
                key.outcome_form.as_str().to_string(),
                key.perturbed.to_string(),
                rep.index.to_string(),
                rep.seed.to_string(),
            ];
            match outcome {
                Ok(e) => {
                    rec.extend([fmt_f64(e.psi), fmt_f64(e.sigma), fmt_f64(e.ci_lower), fmt_f64(e.ci_upper)]);
                    rec.extend([e.model_size.to_string(), String::new()]);
                }
                Err(msg) => {
                    rec.extend(std::iter::repeat_n(String::new(), 5));
                    rec.push(msg.clone());
                }
            }
            w.write_record(&rec).map_err(io_err)?;
        }
    }
    Ok(())
}

/// One row of the `estimate` report.
#[derive(Debug, Clone, PartialEq, Deserialize)]
pub struct EstimateRow {
    pub estimator: EstimatorKind,
    pub psi: f64,
    pub sigma: f64,
    pub ci_lower: f64,
    pub ci_upper: f64,
    pub n: usize,
    pub model_size: usize,
    pub truncation_cutoff: Option<f64>,
}

pub fn write_estimates(rows: &[EstimateRow], out: impl Write) -> Result<(), CliError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(ESTIMATE_HEADER).map_err(io_err)?;
    for r in rows {
        w.write_record([
            r.estimator.to_string(),
            fmt_f64(r.psi),
            fmt_f64(r.sigma),
            fmt_f64(r.ci_lower),
            fmt_f64(r.ci_upper),
            r.n.to_string(),
            r.model_size.to_string(),
            r.truncation_cutoff.map(fmt_f64).unwrap_or_default(),
        ])
        .map_err(io_err)?;
    }
    w.flush().map_err(io_err)
}

pub fn read_estimates(input: impl Read) -> Result<Vec<EstimateRow>, CliError> {
    let mut r = csv::Reader::from_reader(input);
    r.deserialize::<EstimateRow>()
        .enumerate()
        .map(|(k, row)| row.map_err(|e| CliError::Usage(format!("row {}: {e}", k + 1))))
        .collect()
}

/// One row of the `oracle` diagnostics.
#[derive(Debug, Clone, PartialEq, Deserialize)]
pub struct OracleRow {
    pub quantity: String,
    pub value: f64,
    /// Empty for exact quantities.
    pub std_error: Option<f64>,
}

pub fn write_oracle(rows: &[OracleRow], out: impl Write) -> Result<(), CliError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(ORACLE_HEADER).map_err(io_err)?;
    for r in rows {
        w.write_record([r.quantity.clone(), fmt_f64(r.value), r.std_error.map(fmt_f64).unwrap_or_default()])
            .map_err(io_err)?;
    }
    w.flush().map_err(io_err)
}

pub fn read_oracle(input: impl Read) -> Result<Vec<OracleRow>, CliError> {
    let mut r = csv::Reader::from_reader(input);
    r.deserialize::<OracleRow>()
        .enumerate()
        .map(|(k, row)| row.map_err(|e| CliError::Usage(format!("row {}: {e}", k + 1))))
        .collect()
}

/// Parses an outcome form flag value.
pub fn outcome_form(s: &str) -> Result<OutcomeForm, String> {
    s.parse()
}
