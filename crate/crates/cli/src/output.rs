//! Report and table formats written by the commands.

use std::fs::File;
use std::io::{self, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use kcheck::{FittedModel, ScenarioResult};

use crate::input::term_label;
use crate::CliError;

/// Exact header of the simulation table.
pub const SIMULATION_HEADER: &str =
    "scenario,replicate,method,term,k_selected,mse,p_value,edf_star,refits,seed,ms_elapsed";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TermReport {
    pub term: String,
    pub covariates: Vec<String>,
    pub k: usize,
    pub marginal_k: Option<(usize, usize)>,
    pub lambda: f64,
    pub edf: f64,
    pub coefficients: Vec<f64>,
}

/// JSON report of a single fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub response: String,
    pub n: usize,
    pub criterion: String,
    pub criterion_value: f64,
    pub phi_hat: f64,
    pub rss: f64,
    pub edf_total: f64,
    pub lambda: Vec<f64>,
    pub edf_per_term: Vec<f64>,
    pub intercept: f64,
    pub terms: Vec<TermReport>,
}

impl FitReport {
    pub fn from_model(model: &FittedModel) -> Result<Self, CliError> {
        let terms = model
            .spec
            .terms
            .iter()
            .enumerate()
            .map(|(j, spec)| {
                let coefficients = model
                    .term_coefficients(j)
                    .map_err(|e| CliError::Runtime(e.to_string()))?;
                Ok(TermReport {
                    term: term_label(spec),
                    covariates: spec.covariates.clone(),
                    k: model.blocks[j].realized_k(),
                    marginal_k: (spec.covariates.len() == 2).then(|| spec.marginal_dims()),
                    lambda: model.lambda[j],
                    edf: model.edf_per_term[j],
                    coefficients: coefficients.iter().copied().collect(),
                })
            })
            .collect::<Result<Vec<_>, CliError>>()?;
        Ok(Self {
            response: model.spec.response.clone(),
            n: model.n(),
            criterion: model.spec.criterion.as_str().to_string(),
            criterion_value: model.criterion_value,
            phi_hat: model.phi_hat,
            rss: model.rss(),
            edf_total: model.trace_a,
            lambda: model.lambda.clone(),
            edf_per_term: model.edf_per_term.clone(),
            intercept: model.beta[0],
            terms,
        })
    }
}

/// One row of the `check` table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckRecord {
    pub term: String,
    pub k: usize,
    pub edf: f64,
    pub kappa: Option<f64>,
    pub p_value: Option<f64>,
    pub perms: Option<usize>,
    pub neighbours: Option<usize>,
    pub seed: Option<u64>,
    pub edf_star: Option<f64>,
    pub edf_min: Option<f64>,
    pub alpha: f64,
    pub flagged: bool,
}

/// One row of the simulation table: a (replicate, method, term) triple.
/// Failed runs keep the row with empty `k_selected` and `mse`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationRecord {
    pub scenario: String,
    pub replicate: usize,
    pub method: String,
    pub term: String,
    pub k_selected: Option<usize>,
    pub mse: Option<f64>,
    pub p_value: Option<f64>,
    pub edf_star: Option<f64>,
    pub refits: usize,
    pub seed: u64,
    pub ms_elapsed: f64,
}

pub fn simulation_records(result: &ScenarioResult) -> Vec<SimulationRecord> {
    let labels: Vec<String> = result
        .scenario
        .model_spec(result.scenario.policy.criterion)
        .terms
        .iter()
        .map(term_label)
        .collect();
    result
        .rows
        .iter()
        .flat_map(|row| {
            labels.iter().enumerate().map(move |(j, label)| SimulationRecord {
                scenario: row.scenario.as_str().to_string(),
                replicate: row.replicate,
                method: row.method.as_str().to_string(),
                term: label.clone(),
                k_selected: row.k_selected.get(j).copied(),
                mse: row.mse,
                p_value: row.p_values.get(j).copied().flatten(),
                edf_star: row.edf_star.get(j).copied().flatten(),
                refits: row.refits,
                seed: row.seed,
                ms_elapsed: row.elapsed_ms,
            })
        })
        .collect()
}

/// Opens `path` for writing, or standard output for `None` / `-`.
pub fn open_output(path: Option<&Path>) -> Result<Box<dyn Write>, CliError> {
    match path {
        None => Ok(Box::new(io::stdout().lock())),
        Some(p) if p.as_os_str() == "-" => Ok(Box::new(io::stdout().lock())),
        Some(p) => File::create(p)
            .map(|f| Box::new(io::BufWriter::new(f)) as Box<dyn Write>)
            .map_err(|e| CliError::Input(format!("cannot write {}: {e}", p.display()))),
    }
}

pub fn write_csv<T: Serialize>(out: impl Write, rows: &[T]) -> Result<(), CliError> {
    let mut writer = csv::Writer::from_writer(out);
    for row in rows {
        writer
            .serialize(row)
            .map_err(|e| CliError::Runtime(format!("writing CSV: {e}")))?;
    }
    writer
        .flush()
        .map_err(|e| CliError::Runtime(format!("writing CSV: {e}")))
}

/// Writes the simulation table; the header is written even with no rows.
pub fn write_simulation_csv(mut out: impl Write, rows: &[SimulationRecord]) -> Result<(), CliError> {
    let io_err = |e: io::Error| CliError::Runtime(format!("writing CSV: {e}"));
    writeln!(out, "{SIMULATION_HEADER}").map_err(io_err)?;
    let mut writer = csv::WriterBuilder::new()
        .has_headers(false)
        .from_writer(out);
    for row in rows {
        writer
            .serialize(row)
            .map_err(|e| CliError::Runtime(format!("writing CSV: {e}")))?;
    }
    writer
        .flush()
        .map_err(|e| CliError::Runtime(format!("writing CSV: {e}")))
}

pub fn read_simulation_csv(input: impl io::Read) -> Result<Vec<SimulationRecord>, CliError> {
    let mut reader = csv::Reader::from_reader(input);
    let header = reader
        .headers()
        .map_err(|e| CliError::Input(e.to_string()))?
        .iter()
        .collect::<Vec<_>>()
        .join(",");
    if header != SIMULATION_HEADER {
        return Err(CliError::Input(format!("unexpected simulation header '{header}'")));
    }
    reader
        .deserialize()
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| CliError::Input(e.to_string()))
}

pub fn read_check_csv(input: impl io::Read) -> Result<Vec<CheckRecord>, CliError> {
    csv::Reader::from_reader(input)
        .deserialize()
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| CliError::Input(e.to_string()))
}
