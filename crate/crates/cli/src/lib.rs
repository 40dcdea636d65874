//! Command-line front end: `fit`, `check` and `simulate`.
//!
//! Exit codes: 0 success / no term flagged, 1 some term flagged by `check`,
//! 2 input error, 3 runtime error.

use std::ffi::OsString;
use std::io::Write;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use kcheck::diagnostics::{ResmoothConfig, DEFAULT_ALPHA, DEFAULT_NEIGHBOURS, DEFAULT_PERMUTATIONS, MIN_PERMUTATIONS};
use kcheck::kselect::DEFAULT_MAX_DOUBLINGS;
use kcheck::seed::derive_seed;
use kcheck::simulation::SimulationError;
use kcheck::{
    fit, kappa_test, resmooth_check, BasisSpec, Criterion, FitError, FittedModel, KappaConfig, Method,
    ModelSpec, Scenario, ScenarioId,
};

pub mod input;
pub mod output;

use input::{parse_term, term_label, Table};
use output::{open_output, CheckRecord, FitReport};

pub const EXIT_OK: i32 = 0;
pub const EXIT_FLAGGED: i32 = 1;
pub const EXIT_INPUT: i32 = 2;
pub const EXIT_RUNTIME: i32 = 3;

#[derive(Debug, Clone, PartialEq)]
pub enum CliError {
    Input(String),
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Input(_) => EXIT_INPUT,
            CliError::Runtime(_) => EXIT_RUNTIME,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Input(m) => write!(f, "input error: {m}"),
            CliError::Runtime(m) => write!(f, "error: {m}"),
        }
    }
}

impl std::error::Error for CliError {}

#[derive(Parser, Debug)]
#[command(name = "kcheck", version, about = "Penalized spline additive models with basis-dimension checks")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Fit a model and write a JSON report.
    Fit(FitArgs),
    /// Fit a model and check every term's basis dimension; exits 1 if any term is flagged.
    Check(CheckArgs),
    /// Run a simulation scenario and write one CSV row per replicate, method and term.
    Simulate(SimulateArgs),
}

#[derive(Args, Debug, Clone)]
pub struct ModelArgs {
    /// Headered CSV file.
    #[arg(long)]
    pub input: PathBuf,
    /// Output file; standard output if omitted or "-".
    #[arg(long)]
    pub output: Option<PathBuf>,
    #[arg(long)]
    pub response: String,
    /// Smooth term: name:k, a,b:k (tensor product) or a,b:k1:k2. Repeatable.
    #[arg(long = "term", required = true, value_parser = parse_term)]
    pub terms: Vec<BasisSpec>,
    #[arg(long, default_value = "reml", value_parser = parse_criterion)]
    pub criterion: Criterion,
}

#[derive(Args, Debug, Clone)]
pub struct FitArgs {
    #[command(flatten)]
    pub model: ModelArgs,
}

#[derive(Args, Debug, Clone)]
pub struct CheckArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    /// Checks to run: kappa, resmooth (comma separated or repeated).
    #[arg(long = "method", value_delimiter = ',', default_value = "kappa", value_parser = parse_check)]
    pub methods: Vec<Method>,
    #[arg(long, default_value_t = DEFAULT_ALPHA)]
    pub alpha: f64,
    #[arg(long, default_value_t = DEFAULT_PERMUTATIONS)]
    pub perms: usize,
    #[arg(long, default_value_t = DEFAULT_NEIGHBOURS)]
    pub neighbours: usize,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
}

#[derive(Args, Debug, Clone)]
pub struct SimulateArgs {
    #[arg(long, value_parser = parse_scenario)]
    pub scenario: ScenarioId,
    /// Sample size; the scenario's smaller reference size if omitted.
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long, default_value_t = kcheck::simulation::DEFAULT_REPLICATES)]
    pub replicates: usize,
    /// Methods: kappa, resmooth, gcv, reml (comma separated or repeated); all if omitted.
    #[arg(long = "method", value_delimiter = ',', value_parser = parse_method)]
    pub methods: Vec<Method>,
    /// Smoothing criterion used inside the kappa and resmooth drivers.
    #[arg(long, default_value = "gcv", value_parser = parse_criterion)]
    pub criterion: Criterion,
    #[arg(long, default_value_t = DEFAULT_ALPHA)]
    pub alpha: f64,
    #[arg(long, default_value_t = DEFAULT_PERMUTATIONS)]
    pub perms: usize,
    #[arg(long, default_value_t = DEFAULT_NEIGHBOURS)]
    pub neighbours: usize,
    #[arg(long, default_value_t = DEFAULT_MAX_DOUBLINGS)]
    pub max_doublings: usize,
    #[arg(long, default_value_t = kcheck::simulation::DEFAULT_SIGMA)]
    pub sigma: f64,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    /// Output file; standard output if omitted or "-".
    #[arg(long)]
    pub output: Option<PathBuf>,
}

fn parse_criterion(s: &str) -> Result<Criterion, String> {
    s.parse::<Criterion>().map_err(|e| e.to_string())
}

fn parse_method(s: &str) -> Result<Method, String> {
    s.parse::<Method>().map_err(|e| e.to_string())
}

fn parse_check(s: &str) -> Result<Method, String> {
    match parse_method(s)? {
        m @ (Method::Kappa | Method::Resmooth) => Ok(m),
        _ => Err(format!("'{s}' is not a check (expected kappa or resmooth)")),
    }
}

fn parse_scenario(s: &str) -> Result<ScenarioId, String> {
    s.parse::<ScenarioId>().map_err(|e| e.to_string())
}

fn validate_check_flags(alpha: f64, perms: usize, neighbours: usize) -> Result<(), CliError> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(CliError::Input(format!("--alpha must lie in (0, 1), got {alpha}")));
    }
    if perms < MIN_PERMUTATIONS {
        return Err(CliError::Input(format!(
            "--perms must be at least {MIN_PERMUTATIONS}, got {perms}"
        )));
    }
    if neighbours == 0 {
        return Err(CliError::Input("--neighbours must be at least 1".into()));
    }
    Ok(())
}

fn fit_error(e: FitError) -> CliError {
    match e {
        FitError::MissingColumn(_) | FitError::NoTerms | FitError::DuplicateCovariate(_) => {
            CliError::Input(e.to_string())
        }
        _ => CliError::Runtime(e.to_string()),
    }
}

fn load_and_fit(args: &ModelArgs) -> Result<FittedModel, CliError> {
    let table = Table::read(&args.input)?;
    let mut names: Vec<&str> = vec![args.response.as_str()];
    for term in &args.terms {
        term.validate().map_err(|e| CliError::Input(e.to_string()))?;
        names.extend(term.covariates.iter().map(String::as_str));
    }
    let data = table.dataset(&names)?;
    let spec = ModelSpec::new(args.response.clone(), args.terms.clone(), args.criterion);
    spec.validate().map_err(fit_error)?;
    fit(&spec, &data).map_err(fit_error)
}

pub fn cmd_fit(args: &FitArgs) -> Result<i32, CliError> {
    let model = load_and_fit(&args.model)?;
    let report = FitReport::from_model(&model)?;
    let mut out = open_output(args.model.output.as_deref())?;
    serde_json::to_writer_pretty(&mut out, &report)
        .map_err(|e| CliError::Runtime(format!("writing report: {e}")))?;
    writeln!(out)
        .and_then(|_| out.flush())
        .map_err(|e| CliError::Runtime(format!("writing report: {e}")))?;
    Ok(EXIT_OK)
}

/// Per-term check rows for an already fitted model.
pub fn check_model(model: &FittedModel, args: &CheckArgs) -> Result<Vec<CheckRecord>, CliError> {
    let run_kappa = args.methods.contains(&Method::Kappa);
    let run_resmooth = args.methods.contains(&Method::Resmooth);
    (0..model.n_terms())
        .map(|j| {
            let spec = &model.spec.terms[j];
            let mut record = CheckRecord {
                term: term_label(spec),
                k: model.blocks[j].realized_k(),
                edf: model.edf_per_term[j],
                kappa: None,
                p_value: None,
                perms: None,
                neighbours: None,
                seed: None,
                edf_star: None,
                edf_min: None,
                alpha: args.alpha,
                flagged: false,
            };
            if run_kappa {
                let config = KappaConfig {
                    perms: args.perms,
                    neighbours: args.neighbours,
                    seed: derive_seed(args.seed, &[j as u64]),
                };
                let res = kappa_test(model, j, &config).map_err(|e| CliError::Runtime(e.to_string()))?;
                record.kappa = Some(res.kappa);
                record.p_value = Some(res.p_value);
                record.perms = Some(res.n_perm);
                record.neighbours = Some(res.neighbours);
                record.seed = Some(res.seed);
                record.flagged |= res.p_value < args.alpha;
            }
            if run_resmooth {
                let res = resmooth_check(model, j, &ResmoothConfig::default())
                    .map_err(|e| CliError::Runtime(e.to_string()))?;
                record.edf_star = Some(res.edf_star);
                record.edf_min = Some(res.edf_min);
                record.flagged |= res.flagged;
            }
            Ok(record)
        })
        .collect()
}

pub fn cmd_check(args: &CheckArgs) -> Result<i32, CliError> {
    validate_check_flags(args.alpha, args.perms, args.neighbours)?;
    let model = load_and_fit(&args.model)?;
    let records = check_model(&model, args)?;
    output::write_csv(open_output(args.model.output.as_deref())?, &records)?;
    Ok(if records.iter().any(|r| r.flagged) {
        EXIT_FLAGGED
    } else {
        EXIT_OK
    })
}

pub fn scenario_from_args(args: &SimulateArgs) -> Result<Scenario, CliError> {
    validate_check_flags(args.alpha, args.perms, args.neighbours)?;
    let n = args.n.unwrap_or(args.scenario.reference_sizes()[0]);
    let mut scenario = Scenario::new(args.scenario, n);
    scenario.replicates = args.replicates;
    if !args.methods.is_empty() {
        let mut methods = Vec::new();
        for m in &args.methods {
            if !methods.contains(m) {
                methods.push(*m);
            }
        }
        scenario.methods = methods;
    }
    scenario.sigma = args.sigma;
    scenario.base_seed = args.seed;
    scenario.policy.alpha = args.alpha;
    scenario.policy.perms = args.perms;
    scenario.policy.neighbours = args.neighbours;
    scenario.policy.max_doublings = args.max_doublings;
    scenario.policy.criterion = args.criterion;
    scenario.validate().map_err(|e| CliError::Input(e.to_string()))?;
    Ok(scenario)
}

pub fn cmd_simulate(args: &SimulateArgs) -> Result<i32, CliError> {
    let scenario = scenario_from_args(args)?;
    let result = kcheck::run_experiment(&scenario).map_err(|e| match e {
        SimulationError::TooManyFailures { .. } => CliError::Runtime(e.to_string()),
        other => CliError::Input(other.to_string()),
    })?;
    let records = output::simulation_records(&result);
    output::write_simulation_csv(open_output(args.output.as_deref())?, &records)?;
    Ok(EXIT_OK)
}

pub fn execute(cli: &Cli) -> Result<i32, CliError> {
    match &cli.command {
        Command::Fit(a) => cmd_fit(a),
        Command::Check(a) => cmd_check(a),
        Command::Simulate(a) => cmd_simulate(a),
    }
}

/// Parses arguments, runs the command and returns the process exit code.
/// Messages go to standard error.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_INPUT } else { EXIT_OK };
        }
    };
    match execute(&cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("kcheck: {e}");
            e.exit_code()
        }
    }
}
