//! Command-line driver: argument parsing, config files and report writers.
//!
//! Every subcommand accepts `--config FILE` pointing at a TOML file whose keys
//! mirror the long flags (snake_case). Flags given on the command line win
//! over the file. Reports go to stdout unless `--output` is set.

use std::collections::BTreeSet;
use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use nalgebra::DMatrix;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::data::{pairwise_correlations, read_table, Dataset, Table};
use crate::error::Error;
use crate::iv::{self, ChiSquareTest, IvProblem, KClassEstimate, Method, RobustFlavor};
use crate::lasso::{cv_select, LassoConfig};
use crate::linalg::{hstack, intercept};
use crate::mediation::{
    self, LassoMediatorStrategy, MediationDesign, PathEstimate, Scenario, SelectorKind,
};
use crate::semms::{semms_fit, MixtureParams, SemmsConfig};
use crate::sim::{
    run_iv_study, run_mediation_study, Calibration, IvStudyConfig, MediationSimSpec,
    MediationStudyConfig,
};

/// Process exit codes.
pub mod exit {
    pub const OK: i32 = 0;
    pub const USAGE: i32 = 2;
    pub const DATA: i32 = 3;
    pub const NUMERICAL: i32 = 4;
    /// Selection returned no variables where the command needs at least one.
    pub const EMPTY_SELECTION: i32 = 5;
}

#[derive(Debug, Parser)]
#[command(
    name = "twostage",
    version,
    about = "Variable selection for two-stage IV and mediation models"
)]
struct Cli {
    /// Worker threads for the simulation drivers (0 = all cores). Results do
    /// not depend on this value.
    #[arg(long, global = true, default_value_t = 0)]
    threads: usize,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Select predictors of a response with SEMMS or the cross-validated lasso.
    Select(SelectArgs),
    /// Select instruments, then fit TSLS, LIML and Fuller with diagnostics.
    FitIv(FitIvArgs),
    /// Screen mediators (or exposures) and fit the mediation paths.
    FitMediation(FitMediationArgs),
    /// Monte Carlo study of instrument selection and IV estimation.
    SimulateIv(SimulateIvArgs),
    /// Monte Carlo study of mediator / exposure selection.
    SimulateMediation(SimulateMediationArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
enum Format {
    Csv,
    Json,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
enum Selector {
    Semms,
    Lasso,
}

impl From<Selector> for SelectorKind {
    fn from(s: Selector) -> Self {
        match s {
            Selector::Semms => SelectorKind::Semms,
            Selector::Lasso => SelectorKind::Lasso,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
enum InstrumentSelector {
    Semms,
    Lasso,
    /// Use every candidate instrument.
    All,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
enum Robust {
    Hc0,
    Hc1,
}

impl From<Robust> for RobustFlavor {
    fn from(r: Robust) -> Self {
        match r {
            Robust::Hc0 => RobustFlavor::Hc0,
            Robust::Hc1 => RobustFlavor::Hc1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
enum ScenarioArg {
    MultipleM,
    MultipleX,
}

impl From<ScenarioArg> for Scenario {
    fn from(s: ScenarioArg) -> Self {
        match s {
            ScenarioArg::MultipleM => Scenario::MultipleM,
            ScenarioArg::MultipleX => Scenario::MultipleX,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
enum LassoStrategyArg {
    ExposureAsResponse,
    ExposureAsCandidate,
    MediatorsOnly,
}

impl From<LassoStrategyArg> for LassoMediatorStrategy {
    fn from(s: LassoStrategyArg) -> Self {
        match s {
            LassoStrategyArg::ExposureAsResponse => LassoMediatorStrategy::ExposureAsResponse,
            LassoStrategyArg::ExposureAsCandidate => LassoMediatorStrategy::ExposureAsCandidate,
            LassoStrategyArg::MediatorsOnly => LassoMediatorStrategy::MediatorsOnly,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
enum CalibrationArg {
    Literal,
    SampleScaled,
}

impl From<CalibrationArg> for Calibration {
    fn from(c: CalibrationArg) -> Self {
        match c {
            CalibrationArg::Literal => Calibration::Literal,
            CalibrationArg::SampleScaled => Calibration::SampleScaled,
        }
    }
}

#[derive(Debug, Default, Args, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct SelectArgs {
    /// TOML file with any of these options.
    #[arg(long)]
    #[serde(skip)]
    config: Option<PathBuf>,
    /// Input CSV with a header row.
    #[arg(long)]
    input: Option<PathBuf>,
    /// Response column.
    #[arg(long)]
    response: Option<String>,
    #[arg(long, value_enum)]
    method: Option<Selector>,
    /// Candidate columns (default: all but the response and locked-in columns).
    #[arg(long, value_delimiter = ',')]
    candidates: Vec<String>,
    /// Columns always kept in the model (SEMMS only).
    #[arg(long, value_delimiter = ',')]
    lock_in: Vec<String>,
    #[arg(long)]
    folds: Option<usize>,
    /// Seed of the cross-validation fold assignment.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    lockout_threshold: Option<f64>,
    /// Also write `<PREFIX>_nodes.csv` and `<PREFIX>_edges.csv`.
    #[arg(long, value_name = "PREFIX")]
    graph: Option<PathBuf>,
    #[arg(long, value_enum)]
    format: Option<Format>,
    #[arg(long)]
    output: Option<PathBuf>,
    #[arg(skip)]
    semms: Option<SemmsConfig>,
    #[arg(skip)]
    lasso: Option<LassoConfig>,
}

#[derive(Debug, Default, Args, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct FitIvArgs {
    #[arg(long)]
    #[serde(skip)]
    config: Option<PathBuf>,
    #[arg(long)]
    input: Option<PathBuf>,
    #[arg(long)]
    response: Option<String>,
    /// Endogenous regressor columns.
    #[arg(long, value_delimiter = ',')]
    endogenous: Vec<String>,
    /// Exogenous covariate columns; an intercept is always added.
    #[arg(long, value_delimiter = ',')]
    exogenous: Vec<String>,
    /// Candidate instrument columns (default: every remaining column).
    #[arg(long, value_delimiter = ',')]
    instruments: Vec<String>,
    #[arg(long, value_enum)]
    selector: Option<InstrumentSelector>,
    #[arg(long, value_enum)]
    robust: Option<Robust>,
    #[arg(long)]
    alpha: Option<f64>,
    /// Fuller's constant.
    #[arg(long)]
    fuller_a: Option<f64>,
    /// Null value of the endogenous coefficients for the Anderson-Rubin test.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    beta0: Vec<f64>,
    #[arg(long)]
    folds: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    lockout_threshold: Option<f64>,
    #[arg(long, value_enum)]
    format: Option<Format>,
    #[arg(long)]
    output: Option<PathBuf>,
    #[arg(skip)]
    semms: Option<SemmsConfig>,
    #[arg(skip)]
    lasso: Option<LassoConfig>,
}

#[derive(Debug, Default, Args, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct FitMediationArgs {
    #[arg(long)]
    #[serde(skip)]
    config: Option<PathBuf>,
    #[arg(long)]
    input: Option<PathBuf>,
    #[arg(long)]
    response: Option<String>,
    /// Exposure column(s); one for multiple-m, default all remaining for multiple-x.
    #[arg(long, value_delimiter = ',')]
    exposure: Vec<String>,
    /// Mediator column(s); one for multiple-x, default all remaining for multiple-m.
    #[arg(long, value_delimiter = ',')]
    mediators: Vec<String>,
    #[arg(long, value_enum)]
    scenario: Option<ScenarioArg>,
    #[arg(long, value_enum)]
    selector: Option<Selector>,
    #[arg(long, value_enum)]
    lasso_strategy: Option<LassoStrategyArg>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    folds: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    lockout_threshold: Option<f64>,
    #[arg(long, value_enum)]
    format: Option<Format>,
    #[arg(long)]
    output: Option<PathBuf>,
    #[arg(skip)]
    semms: Option<SemmsConfig>,
    #[arg(skip)]
    lasso: Option<LassoConfig>,
}

#[derive(Debug, Default, Args)]
struct SimulateIvArgs {
    /// TOML file mirroring the study configuration (`[spec]`, `[semms]`, `[lasso]`, ...).
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    p: Option<usize>,
    /// Number of signal instruments.
    #[arg(long)]
    l: Option<usize>,
    /// Concentration parameter.
    #[arg(long)]
    mu2: Option<f64>,
    #[arg(long)]
    beta: Option<f64>,
    #[arg(long)]
    rho: Option<f64>,
    #[arg(long)]
    endog_corr: Option<f64>,
    #[arg(long, value_enum)]
    calibration: Option<CalibrationArg>,
    /// Replications.
    #[arg(long)]
    reps: Option<usize>,
    /// Master seed.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_enum, value_delimiter = ',')]
    selectors: Vec<Selector>,
    #[arg(long, value_enum)]
    robust: Option<Robust>,
    #[arg(long, value_enum)]
    format: Option<Format>,
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Debug, Default, Args)]
struct SimulateMediationArgs {
    /// TOML file mirroring the study configuration (`[spec]`, `[semms]`, `[lasso]`, ...).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Start from the hard multiple-exposure case (setting 4, β1 = β2 = 0.5, ρ = 0.9).
    #[arg(long)]
    hard_case: bool,
    #[arg(long, value_enum)]
    scenario: Option<ScenarioArg>,
    #[arg(long)]
    setting: Option<u8>,
    #[arg(long)]
    beta1: Option<f64>,
    #[arg(long)]
    beta2: Option<f64>,
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    p: Option<usize>,
    #[arg(long)]
    rho: Option<f64>,
    #[arg(long)]
    decoy_sd: Option<f64>,
    #[arg(long)]
    noise_var: Option<f64>,
    #[arg(long)]
    reps: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_enum, value_delimiter = ',')]
    selectors: Vec<Selector>,
    #[arg(long, value_enum)]
    lasso_strategy: Option<LassoStrategyArg>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long, value_enum)]
    format: Option<Format>,
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Debug)]
enum CliError {
    Usage(String),
    Lib(Error),
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Lib(e)
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Lib(e.into())
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        CliError::Lib(e.into())
    }
}

impl CliError {
    fn code(&self) -> i32 {
        match self {
            CliError::Usage(_) => exit::USAGE,
            CliError::Lib(Error::EmptySelection) => exit::EMPTY_SELECTION,
            CliError::Lib(Error::InfeasibleDesign(_)) => exit::USAGE,
            CliError::Lib(e) if e.is_numerical() => exit::NUMERICAL,
            CliError::Lib(_) => exit::DATA,
        }
    }

    fn kind(&self) -> &'static str {
        match self.code() {
            exit::USAGE => "usage",
            exit::NUMERICAL => "numerical",
            exit::EMPTY_SELECTION => "empty_selection",
            _ => "data",
        }
    }

    fn message(&self) -> String {
        match self {
            CliError::Usage(m) => m.clone(),
            CliError::Lib(e) => e.to_string(),
        }
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

/// Text destined for stdout or a file, plus any side files.
struct Rendered {
    body: String,
    output: Option<PathBuf>,
    extra: Vec<(PathBuf, String)>,
}

#[derive(Serialize)]
struct ErrorRecord<'a> {
    error: ErrorBody<'a>,
}

#[derive(Serialize)]
struct ErrorBody<'a> {
    kind: &'a str,
    code: i32,
    message: String,
}

/// Parses `args` (including the program name), runs the command and writes
/// the report. Returns the process exit code.
pub fn run<I, T>(args: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            if e.use_stderr() {
                let _ = write!(stderr, "{}", e.render());
                write_error(stderr, &usage(e.kind().to_string()));
                return exit::USAGE;
            }
            let _ = write!(stdout, "{}", e.render());
            return exit::OK;
        }
    };
    let outcome = rayon::ThreadPoolBuilder::new()
        .num_threads(cli.threads)
        .build()
        .map_err(|e| usage(format!("cannot build thread pool: {e}")))
        .and_then(|pool| pool.install(|| dispatch(cli.command)))
        .and_then(emit_files);
    match outcome {
        Ok(r) => {
            if r.output.is_none() && stdout.write_all(r.body.as_bytes()).is_err() {
                return exit::DATA;
            }
            exit::OK
        }
        Err(e) => {
            write_error(stderr, &e);
            e.code()
        }
    }
}

fn write_error(stderr: &mut dyn Write, e: &CliError) {
    let record = ErrorRecord {
        error: ErrorBody {
            kind: e.kind(),
            code: e.code(),
            message: e.message(),
        },
    };
    let _ = writeln!(stderr, "error: {}", e.message());
    if let Ok(json) = serde_json::to_string(&record) {
        let _ = writeln!(stderr, "{json}");
    }
}

fn write_file(path: &Path, text: &str) -> CliResult<()> {
    std::fs::write(path, text).map_err(|source| {
        CliError::Lib(Error::Io {
            path: path.to_path_buf(),
            source,
        })
    })
}

fn emit_files(r: Rendered) -> CliResult<Rendered> {
    if let Some(path) = &r.output {
        write_file(path, &r.body)?;
    }
    for (path, text) in &r.extra {
        write_file(path, text)?;
    }
    Ok(r)
}

fn dispatch(command: Command) -> CliResult<Rendered> {
    match command {
        Command::Select(a) => cmd_select(a),
        Command::FitIv(a) => cmd_fit_iv(a),
        Command::FitMediation(a) => cmd_fit_mediation(a),
        Command::SimulateIv(a) => cmd_simulate_iv(a),
        Command::SimulateMediation(a) => cmd_simulate_mediation(a),
    }
}

fn load_toml<T: DeserializeOwned + Default>(path: Option<&Path>) -> CliResult<T> {
    let Some(path) = path else {
        return Ok(T::default());
    };
    let text = std::fs::read_to_string(path)
        .map_err(|e| usage(format!("cannot read config {}: {e}", path.display())))?;
    toml::from_str(&text).map_err(|e| usage(format!("invalid config {}: {e}", path.display())))
}

/// Fills unset options of `$dst` from `$src`.
macro_rules! fill {
    ($dst:expr, $src:expr; opt: $($o:ident),*; vec: $($v:ident),*) => {
        $( if $dst.$o.is_none() { $dst.$o = $src.$o.take(); } )*
        $( if $dst.$v.is_empty() { $dst.$v = std::mem::take(&mut $src.$v); } )*
    };
}

fn require<T: Clone>(v: &Option<T>, flag: &str) -> CliResult<T> {
    v.clone()
        .ok_or_else(|| usage(format!("missing required option --{flag}")))
}

#[derive(Serialize)]
struct Meta<'a, C: Serialize> {
    version: &'static str,
    command: &'a str,
    config: &'a C,
}

fn meta<'a, C: Serialize>(command: &'a str, config: &'a C) -> Meta<'a, C> {
    Meta {
        version: env!("CARGO_PKG_VERSION"),
        command,
        config,
    }
}

fn csv_header<C: Serialize>(m: &Meta<C>) -> CliResult<String> {
    Ok(format!(
        "# version: {}\n# command: {}\n# config: {}\n",
        m.version,
        m.command,
        serde_json::to_string(m.config)?
    ))
}

fn csv_body(header: &[&str], rows: Vec<Vec<String>>) -> CliResult<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header)?;
    for r in rows {
        w.write_record(&r)?;
    }
    let bytes = w.into_inner().map_err(|e| usage(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

fn num(v: f64) -> String {
    crate::sim::fmt_num(v)
}

fn opt_num(v: Option<f64>) -> String {
    v.map(num).unwrap_or_default()
}

fn json_pretty<T: Serialize>(v: &T) -> CliResult<String> {
    Ok(serde_json::to_string_pretty(v)? + "\n")
}

fn check_columns(table: &Table, names: &[String]) -> CliResult<()> {
    for n in names {
        table.column_index(n)?;
    }
    Ok(())
}

/// Every column of `table` not listed in `exclude`.
fn remaining(table: &Table, exclude: &[&[String]]) -> Vec<String> {
    table
        .names
        .iter()
        .filter(|n| !exclude.iter().any(|e| e.contains(n)))
        .cloned()
        .collect()
}

fn semms_config(file: Option<SemmsConfig>, lockout: Option<f64>) -> SemmsConfig {
    let mut c = file.unwrap_or_default();
    if let Some(t) = lockout {
        c.lockout_threshold = t;
    }
    c
}

fn lasso_config(file: Option<LassoConfig>, folds: Option<usize>, seed: Option<u64>) -> LassoConfig {
    let mut c = file.unwrap_or_default();
    if let Some(f) = folds {
        c.folds = f;
    }
    if let Some(s) = seed {
        c.cv_seed = s;
    }
    c
}

// ---------------------------------------------------------------- select

#[derive(Serialize)]
struct LockedOutRow {
    variable: String,
    trigger: String,
    correlation: f64,
}

#[derive(Serialize)]
struct CoefRow {
    variable: String,
    estimate: f64,
    se: Option<f64>,
    p_value: Option<f64>,
}

#[derive(Serialize)]
struct SelectReport<'a> {
    meta: Meta<'a, SelectArgs>,
    method: Selector,
    response: String,
    selected: Vec<String>,
    locked_in: Vec<String>,
    locked_out: Vec<LockedOutRow>,
    coefficients: Vec<CoefRow>,
    #[serde(skip_serializing_if = "Option::is_none")]
    lambda: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    mixture: Option<MixtureParams>,
    #[serde(skip_serializing_if = "Option::is_none")]
    converged: Option<bool>,
    warnings: Vec<String>,
}

fn cmd_select(mut a: SelectArgs) -> CliResult<Rendered> {
    let mut file: SelectArgs = load_toml(a.config.as_deref())?;
    fill!(a, file; opt: input, response, method, folds, seed, lockout_threshold, graph, format, output, semms, lasso;
        vec: candidates, lock_in);
    // Resolve defaults up front so the echoed config is complete.
    a.format.get_or_insert(Format::Json);
    match *a.method.get_or_insert(Selector::Semms) {
        Selector::Semms => a.semms = Some(semms_config(a.semms.take(), a.lockout_threshold)),
        Selector::Lasso => a.lasso = Some(lasso_config(a.lasso.take(), a.folds, a.seed)),
    }
    let input = require(&a.input, "input")?;
    let response = require(&a.response, "response")?;
    let method = a.method.unwrap_or(Selector::Semms);
    if method == Selector::Lasso && !a.lock_in.is_empty() {
        return Err(usage("--lock-in is only available with --method semms"));
    }
    let table = read_table(&input)?;
    table.column_index(&response)?;
    check_columns(&table, &a.candidates)?;
    check_columns(&table, &a.lock_in)?;
    let candidates = if a.candidates.is_empty() {
        remaining(&table, &[std::slice::from_ref(&response), &a.lock_in])
    } else {
        a.candidates.clone()
    };
    let mut names = candidates.clone();
    names.extend(a.lock_in.iter().cloned());
    let x = table.columns(&names)?;
    let y = table.column(&response)?;
    let locked: BTreeSet<usize> = (candidates.len()..names.len()).collect();

    let mut report = SelectReport {
        meta: meta("select", &a),
        method,
        response: response.clone(),
        selected: Vec::new(),
        locked_in: a.lock_in.clone(),
        locked_out: Vec::new(),
        coefficients: Vec::new(),
        lambda: None,
        mixture: None,
        converged: None,
        warnings: Vec::new(),
    };
    let signs: Vec<(usize, f64)>;
    let threshold;
    match method {
        Selector::Semms => {
            let cfg = semms_config(a.semms.clone(), a.lockout_threshold);
            threshold = cfg.lockout_threshold;
            let d = Dataset::new(x.clone(), y, names.clone(), locked)?;
            let r = semms_fit(&d, &cfg)?;
            report.selected = r.selected.iter().map(|&j| names[j].clone()).collect();
            report.locked_out = r
                .locked_out
                .iter()
                .map(|l| LockedOutRow {
                    variable: names[l.index].clone(),
                    trigger: names[l.trigger].clone(),
                    correlation: l.correlation,
                })
                .collect();
            let off = r.ols_refit.slope_offset();
            report.coefficients = r
                .refit_columns
                .iter()
                .enumerate()
                .map(|(i, &j)| CoefRow {
                    variable: names[j].clone(),
                    estimate: r.ols_refit.coefficients[off + i],
                    se: Some(r.ols_refit.se[off + i]),
                    p_value: Some(r.ols_refit.p_values[off + i]),
                })
                .collect();
            signs = r.signs.iter().map(|(&j, &s)| (j, f64::from(s))).collect();
            report.mixture = Some(r.mixture);
            report.converged = Some(r.converged);
            report.warnings = r.warnings.clone();
        }
        Selector::Lasso => {
            let cfg = lasso_config(a.lasso.clone(), a.folds, a.seed);
            threshold = a
                .lockout_threshold
                .unwrap_or(SemmsConfig::default().lockout_threshold);
            let fit = cv_select(&x, &y, &cfg)?;
            report.selected = fit.support.iter().map(|&j| names[j].clone()).collect();
            report.coefficients = fit
                .support
                .iter()
                .map(|&j| CoefRow {
                    variable: names[j].clone(),
                    estimate: fit.coefficients[j],
                    se: None,
                    p_value: None,
                })
                .collect();
            signs = fit
                .support
                .iter()
                .map(|&j| (j, fit.coefficients[j].signum()))
                .collect();
            report.lambda = Some(fit.lambda);
        }
    }

    let mut extra = Vec::new();
    if let Some(prefix) = &a.graph {
        let (nodes, edges) = correlation_graph(&x, &names, &report, &signs, threshold)?;
        extra.push((suffixed(prefix, "_nodes.csv"), nodes));
        extra.push((suffixed(prefix, "_edges.csv"), edges));
    }

    let body = match a.format.unwrap_or(Format::Json) {
        Format::Json => json_pretty(&report)?,
        Format::Csv => {
            let mut rows = Vec::new();
            let coef = |v: &str| report.coefficients.iter().find(|c| c.variable == v);
            for v in report.selected.iter().chain(&report.locked_in) {
                let status = if report.locked_in.contains(v) {
                    "locked_in"
                } else {
                    "selected"
                };
                let c = coef(v);
                rows.push(vec![
                    v.clone(),
                    status.to_string(),
                    opt_num(c.map(|c| c.estimate)),
                    opt_num(c.and_then(|c| c.se)),
                    opt_num(c.and_then(|c| c.p_value)),
                    String::new(),
                    String::new(),
                ]);
            }
            for l in &report.locked_out {
                rows.push(vec![
                    l.variable.clone(),
                    "locked_out".into(),
                    String::new(),
                    String::new(),
                    String::new(),
                    l.trigger.clone(),
                    num(l.correlation),
                ]);
            }
            csv_header(&report.meta)?
                + &csv_body(
                    &[
                        "variable",
                        "status",
                        "estimate",
                        "se",
                        "p_value",
                        "trigger",
                        "correlation",
                    ],
                    rows,
                )?
        }
    };
    Ok(Rendered {
        body,
        output: a.output.clone(),
        extra,
    })
}

fn suffixed(prefix: &Path, suffix: &str) -> PathBuf {
    let mut s = prefix.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

/// Node and edge tables of the correlation network around the selection:
/// selected, locked-in and locked-out variables plus any variable whose
/// absolute correlation with a selected one exceeds `threshold`.
fn correlation_graph(
    x: &DMatrix<f64>,
    names: &[String],
    report: &SelectReport,
    signs: &[(usize, f64)],
    threshold: f64,
) -> CliResult<(String, String)> {
    let corr = pairwise_correlations(x)?;
    let index = |v: &str| {
        names
            .iter()
            .position(|n| n == v)
            .expect("reported names exist")
    };
    let selected: Vec<usize> = report.selected.iter().map(|v| index(v)).collect();
    let locked_in: Vec<usize> = report.locked_in.iter().map(|v| index(v)).collect();
    let locked_out: Vec<usize> = report
        .locked_out
        .iter()
        .map(|l| index(&l.variable))
        .collect();
    let mut nodes: BTreeSet<usize> = selected
        .iter()
        .chain(&locked_in)
        .chain(&locked_out)
        .copied()
        .collect();
    for &s in &selected {
        for j in 0..names.len() {
            if j != s && corr.get(s, j).abs() > threshold {
                nodes.insert(j);
            }
        }
    }
    let node_rows = nodes
        .iter()
        .map(|&j| {
            let status = if selected.contains(&j) {
                "selected"
            } else if locked_in.contains(&j) {
                "locked_in"
            } else if locked_out.contains(&j) {
                "locked_out"
            } else {
                "correlated"
            };
            let sign = signs
                .iter()
                .find(|(k, _)| *k == j)
                .map(|(_, s)| *s)
                .unwrap_or(0.0);
            vec![names[j].clone(), status.to_string(), format!("{sign:+}")]
        })
        .collect();
    let list: Vec<usize> = nodes.into_iter().collect();
    let mut edge_rows = Vec::new();
    for (a, &i) in list.iter().enumerate() {
        for &j in &list[a + 1..] {
            let r = corr.get(i, j);
            if r.abs() > threshold {
                edge_rows.push(vec![names[i].clone(), names[j].clone(), num(r)]);
            }
        }
    }
    Ok((
        csv_body(&["variable", "status", "sign"], node_rows)?,
        csv_body(&["source", "target", "correlation"], edge_rows)?,
    ))
}

// ---------------------------------------------------------------- fit-iv

#[derive(Serialize)]
#[serde(untagged)]
enum SarganField {
    Test(ChiSquareTest),
    NotAvailable(&'static str),
}

#[derive(Serialize)]
struct FTestReport {
    stat: f64,
    df1: usize,
    df2: usize,
    p: f64,
}

#[derive(Serialize)]
struct DiagnosticsReport {
    first_stage: FTestReport,
    sargan: SarganField,
    anderson_rubin: FTestReport,
    anderson_rubin_beta0: Vec<f64>,
}

#[derive(Serialize)]
struct CoefficientReport {
    name: String,
    beta: f64,
    se_classical: f64,
    se_robust: f64,
    t_classical: f64,
    t_robust: f64,
    p_classical: f64,
    p_robust: f64,
    ci_low: f64,
    ci_high: f64,
    significant: bool,
}

#[derive(Serialize)]
struct EstimateReport {
    method: Method,
    k: f64,
    df_resid: usize,
    robust: RobustFlavor,
    coefficients: Vec<CoefficientReport>,
}

#[derive(Serialize)]
struct FitIvReport<'a> {
    meta: Meta<'a, FitIvArgs>,
    n: usize,
    selector: InstrumentSelector,
    candidate_instruments: usize,
    selected_instruments: Vec<String>,
    diagnostics: DiagnosticsReport,
    estimates: Vec<EstimateReport>,
}

fn estimate_report(est: &KClassEstimate, names: &[String], alpha: f64) -> EstimateReport {
    EstimateReport {
        method: est.method,
        k: est.k,
        df_resid: est.df_resid,
        robust: est.robust_flavor,
        coefficients: names
            .iter()
            .enumerate()
            .map(|(j, name)| CoefficientReport {
                name: name.clone(),
                beta: est.beta[j],
                se_classical: est.se_classical[j],
                se_robust: est.se_robust[j],
                t_classical: est.t_classical[j],
                t_robust: est.t_robust[j],
                p_classical: est.p_classical[j],
                p_robust: est.p_robust[j],
                ci_low: est.ci_95[j].0,
                ci_high: est.ci_95[j].1,
                significant: est.p_classical[j] < alpha,
            })
            .collect(),
    }
}

fn cmd_fit_iv(mut a: FitIvArgs) -> CliResult<Rendered> {
    let mut file: FitIvArgs = load_toml(a.config.as_deref())?;
    fill!(a, file; opt: input, response, selector, robust, alpha, fuller_a, folds, seed, lockout_threshold, format,
        output, semms, lasso; vec: endogenous, exogenous, instruments, beta0);
    a.format.get_or_insert(Format::Json);
    a.robust.get_or_insert(Robust::Hc0);
    a.alpha.get_or_insert(0.05);
    a.fuller_a.get_or_insert(1.0);
    if a.beta0.is_empty() {
        a.beta0 = vec![0.0; a.endogenous.len()];
    }
    match *a.selector.get_or_insert(InstrumentSelector::Semms) {
        InstrumentSelector::Semms => {
            a.semms = Some(semms_config(a.semms.take(), a.lockout_threshold))
        }
        InstrumentSelector::Lasso => a.lasso = Some(lasso_config(a.lasso.take(), a.folds, a.seed)),
        InstrumentSelector::All => {}
    }
    let input = require(&a.input, "input")?;
    let response = require(&a.response, "response")?;
    if a.endogenous.is_empty() {
        return Err(usage("missing required option --endogenous"));
    }
    let alpha = a.alpha.unwrap_or(0.05);
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(usage("--alpha must lie in (0, 1)"));
    }
    if !a.beta0.is_empty() && a.beta0.len() != a.endogenous.len() {
        return Err(usage("--beta0 needs one value per endogenous column"));
    }
    let selector = a.selector.unwrap_or(InstrumentSelector::Semms);
    let flavor: RobustFlavor = a.robust.unwrap_or(Robust::Hc0).into();

    let table = read_table(&input)?;
    table.column_index(&response)?;
    check_columns(&table, &a.endogenous)?;
    check_columns(&table, &a.exogenous)?;
    check_columns(&table, &a.instruments)?;
    let candidates = if a.instruments.is_empty() {
        remaining(
            &table,
            &[std::slice::from_ref(&response), &a.endogenous, &a.exogenous],
        )
    } else {
        a.instruments.clone()
    };
    if candidates.is_empty() {
        return Err(usage("no candidate instruments"));
    }
    let y = table.column(&response)?;
    let n = y.len();
    let z_all = table.columns(&candidates)?;
    let x_endog = table.columns(&a.endogenous)?;
    let exog_cols = table.columns(&a.exogenous)?;
    let x_exog = hstack(&[&intercept(n), &exog_cols]);

    let m = candidates.len();
    let mut chosen: BTreeSet<usize> = BTreeSet::new();
    match selector {
        InstrumentSelector::All => chosen.extend(0..m),
        InstrumentSelector::Semms => {
            let cfg = semms_config(a.semms.clone(), a.lockout_threshold);
            let predictors = hstack(&[&z_all, &exog_cols]);
            let locked: BTreeSet<usize> = (m..m + exog_cols.ncols()).collect();
            for g in 0..x_endog.ncols() {
                let d = Dataset::unnamed(predictors.clone(), x_endog.column(g).into_owned())?
                    .with_locked_in(locked.clone())?;
                chosen.extend(semms_fit(&d, &cfg)?.selected.into_iter().filter(|&j| j < m));
            }
        }
        InstrumentSelector::Lasso => {
            let cfg = lasso_config(a.lasso.clone(), a.folds, a.seed);
            for g in 0..x_endog.ncols() {
                chosen.extend(cv_select(&z_all, &x_endog.column(g).into_owned(), &cfg)?.support);
            }
        }
    }
    if chosen.is_empty() {
        return Err(CliError::Lib(Error::EmptySelection));
    }
    let chosen: Vec<usize> = chosen.into_iter().collect();
    let problem = IvProblem::new(z_all.select_columns(&chosen), x_endog, x_exog, y)?;
    let fuller_a = a.fuller_a.unwrap_or(1.0);
    let estimates = [
        iv::tsls(&problem, flavor)?,
        iv::liml(&problem, flavor)?,
        iv::fuller(&problem, fuller_a, flavor)?,
    ];
    let beta0 = if a.beta0.is_empty() {
        vec![0.0; a.endogenous.len()]
    } else {
        a.beta0.clone()
    };
    let diag = iv::diagnostics(&problem, &beta0)?;

    let mut coef_names = a.endogenous.clone();
    coef_names.push("(intercept)".into());
    coef_names.extend(a.exogenous.iter().cloned());

    let report = FitIvReport {
        meta: meta("fit-iv", &a),
        n,
        selector,
        candidate_instruments: m,
        selected_instruments: chosen.iter().map(|&j| candidates[j].clone()).collect(),
        diagnostics: DiagnosticsReport {
            first_stage: FTestReport {
                stat: diag.first_stage_f,
                df1: diag.first_stage_df.0,
                df2: diag.first_stage_df.1,
                p: diag.first_stage_p,
            },
            sargan: match diag.sargan {
                Some(t) => SarganField::Test(t),
                None => SarganField::NotAvailable("n/a"),
            },
            anderson_rubin: FTestReport {
                stat: diag.ar_stat,
                df1: diag.ar_df.0,
                df2: diag.ar_df.1,
                p: diag.ar_p,
            },
            anderson_rubin_beta0: beta0,
        },
        estimates: estimates
            .iter()
            .map(|e| estimate_report(e, &coef_names, alpha))
            .collect(),
    };

    let body = match a.format.unwrap_or(Format::Json) {
        Format::Json => json_pretty(&report)?,
        Format::Csv => {
            let d = &report.diagnostics;
            let mut head = csv_header(&report.meta)?;
            head.push_str(&format!(
                "# selected_instruments: {}\n",
                report.selected_instruments.join(";")
            ));
            head.push_str(&format!(
                "# first_stage_F: {} on ({}, {}) df, p = {}\n",
                num(d.first_stage.stat),
                d.first_stage.df1,
                d.first_stage.df2,
                num(d.first_stage.p)
            ));
            match &d.sargan {
                SarganField::Test(t) => head.push_str(&format!(
                    "# sargan: {} on {} df, p = {}\n",
                    num(t.stat),
                    t.df,
                    num(t.p)
                )),
                SarganField::NotAvailable(s) => head.push_str(&format!("# sargan: {s}\n")),
            }
            head.push_str(&format!(
                "# anderson_rubin: {} on ({}, {}) df, p = {}\n",
                num(d.anderson_rubin.stat),
                d.anderson_rubin.df1,
                d.anderson_rubin.df2,
                num(d.anderson_rubin.p)
            ));
            let mut rows = Vec::new();
            for e in &report.estimates {
                for c in &e.coefficients {
                    rows.push(vec![
                        e.method.label().to_string(),
                        num(e.k),
                        c.name.clone(),
                        num(c.beta),
                        num(c.se_classical),
                        num(c.se_robust),
                        num(c.t_classical),
                        num(c.t_robust),
                        num(c.p_classical),
                        num(c.p_robust),
                        num(c.ci_low),
                        num(c.ci_high),
                    ]);
                }
            }
            head + &csv_body(
                &[
                    "method",
                    "k",
                    "coefficient",
                    "beta",
                    "se_classical",
                    "se_robust",
                    "t_classical",
                    "t_robust",
                    "p_classical",
                    "p_robust",
                    "ci_low",
                    "ci_high",
                ],
                rows,
            )?
        }
    };
    Ok(Rendered {
        body,
        output: a.output.clone(),
        extra: Vec::new(),
    })
}

// ---------------------------------------------------------- fit-mediation

#[derive(Serialize)]
struct PathRow {
    path: &'static str,
    variable: String,
    #[serde(flatten)]
    estimate: PathEstimate,
}

#[derive(Serialize)]
struct FitMediationReport<'a> {
    meta: Meta<'a, FitMediationArgs>,
    scenario: Scenario,
    selector: Selector,
    selected: Vec<String>,
    locked_out: Vec<(String, String)>,
    paths: Vec<PathRow>,
    indirect: Vec<(String, f64)>,
    classification: mediation::Classification,
}

fn cmd_fit_mediation(mut a: FitMediationArgs) -> CliResult<Rendered> {
    let mut file: FitMediationArgs = load_toml(a.config.as_deref())?;
    fill!(a, file; opt: input, response, scenario, selector, lasso_strategy, alpha, folds, seed, lockout_threshold,
        format, output, semms, lasso; vec: exposure, mediators);
    a.format.get_or_insert(Format::Json);
    a.scenario.get_or_insert(ScenarioArg::MultipleM);
    a.alpha.get_or_insert(0.05);
    match *a.selector.get_or_insert(Selector::Semms) {
        Selector::Semms => a.semms = Some(semms_config(a.semms.take(), a.lockout_threshold)),
        Selector::Lasso => {
            a.lasso = Some(lasso_config(a.lasso.take(), a.folds, a.seed));
            a.lasso_strategy
                .get_or_insert(LassoStrategyArg::ExposureAsResponse);
        }
    }
    let input = require(&a.input, "input")?;
    let response = require(&a.response, "response")?;
    let scenario: Scenario = a.scenario.unwrap_or(ScenarioArg::MultipleM).into();
    let alpha = a.alpha.unwrap_or(0.05);
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(usage("--alpha must lie in (0, 1)"));
    }
    let selector = a.selector.unwrap_or(Selector::Semms);
    let table = read_table(&input)?;
    table.column_index(&response)?;
    check_columns(&table, &a.exposure)?;
    check_columns(&table, &a.mediators)?;
    let resp = std::slice::from_ref(&response);
    let (exposures, mediators) = match scenario {
        Scenario::MultipleM => {
            if a.exposure.len() != 1 {
                return Err(usage("multiple-m needs exactly one --exposure"));
            }
            let m = if a.mediators.is_empty() {
                remaining(&table, &[resp, &a.exposure])
            } else {
                a.mediators.clone()
            };
            (a.exposure.clone(), m)
        }
        Scenario::MultipleX => {
            if a.mediators.len() != 1 {
                return Err(usage("multiple-x needs exactly one --mediators column"));
            }
            let x = if a.exposure.is_empty() {
                remaining(&table, &[resp, &a.mediators])
            } else {
                a.exposure.clone()
            };
            (x, a.mediators.clone())
        }
    };
    if exposures.is_empty() || mediators.is_empty() {
        return Err(usage("need at least one exposure and one mediator"));
    }
    let mut design = MediationDesign::new(
        table.column(&response)?,
        table.columns(&exposures)?,
        table.columns(&mediators)?,
        scenario,
        selector.into(),
    )?;
    design.semms = semms_config(a.semms.clone(), a.lockout_threshold);
    design.lasso = lasso_config(a.lasso.clone(), a.folds, a.seed);
    if let Some(s) = a.lasso_strategy {
        design.lasso_strategy = s.into();
    }
    let (sel, fit) = mediation::analyze(&design, alpha)?;
    let candidates = match scenario {
        Scenario::MultipleM => &mediators,
        Scenario::MultipleX => &exposures,
    };
    let selected: Vec<String> = sel
        .selected
        .iter()
        .map(|&j| candidates[j].clone())
        .collect();
    let (x_names, m_names) = match scenario {
        Scenario::MultipleM => (exposures.clone(), selected.clone()),
        Scenario::MultipleX => (selected.clone(), mediators.clone()),
    };
    let focal = x_names[fit.focal_exposure].clone();
    let mut paths = vec![PathRow {
        path: "total",
        variable: focal.clone(),
        estimate: fit.total,
    }];
    for (j, e) in fit.a.iter().enumerate() {
        paths.push(PathRow {
            path: "a",
            variable: m_names[j].clone(),
            estimate: *e,
        });
    }
    for (j, e) in fit.b.iter().enumerate() {
        paths.push(PathRow {
            path: "b",
            variable: m_names[j].clone(),
            estimate: *e,
        });
    }
    for (j, e) in fit.c_prime.iter().enumerate() {
        paths.push(PathRow {
            path: "c_prime",
            variable: x_names[j].clone(),
            estimate: *e,
        });
    }
    let report = FitMediationReport {
        meta: meta("fit-mediation", &a),
        scenario,
        selector,
        selected,
        locked_out: sel
            .locked_out
            .iter()
            .map(|&(j, t)| (candidates[j].clone(), candidates[t].clone()))
            .collect(),
        paths,
        indirect: m_names
            .iter()
            .cloned()
            .zip(fit.indirect.iter().copied())
            .collect(),
        classification: fit.classification,
    };
    let body = match a.format.unwrap_or(Format::Json) {
        Format::Json => json_pretty(&report)?,
        Format::Csv => {
            let mut head = csv_header(&report.meta)?;
            head.push_str(&format!("# focal_exposure: {focal}\n"));
            head.push_str(&format!(
                "# classification: {}\n",
                serde_json::to_string(&report.classification)?
            ));
            let mut rows: Vec<Vec<String>> = report
                .paths
                .iter()
                .map(|r| {
                    vec![
                        r.path.to_string(),
                        r.variable.clone(),
                        num(r.estimate.estimate),
                        num(r.estimate.se),
                        num(r.estimate.t),
                        num(r.estimate.p),
                    ]
                })
                .collect();
            for (v, e) in &report.indirect {
                rows.push(vec![
                    "indirect".into(),
                    v.clone(),
                    num(*e),
                    String::new(),
                    String::new(),
                    String::new(),
                ]);
            }
            head + &csv_body(&["path", "variable", "estimate", "se", "t", "p"], rows)?
        }
    };
    Ok(Rendered {
        body,
        output: a.output.clone(),
        extra: Vec::new(),
    })
}

// ---------------------------------------------------------------- simulate

fn cmd_simulate_iv(a: SimulateIvArgs) -> CliResult<Rendered> {
    let mut cfg: IvStudyConfig = load_toml(a.config.as_deref())?;
    let s = &mut cfg.spec;
    macro_rules! set {
        ($($f:ident => $g:ident),*) => { $( if let Some(v) = a.$f { s.$g = v; } )* };
    }
    set!(n => n, p => p, l => l, mu2 => mu2, beta => beta, rho => rho, endog_corr => endog_corr, reps => b,
        seed => master_seed);
    if let Some(c) = a.calibration {
        s.calibration = c.into();
    }
    if !a.selectors.is_empty() {
        cfg.selectors = a.selectors.iter().map(|&s| s.into()).collect();
    }
    if let Some(r) = a.robust {
        cfg.robust = r.into();
    }
    cfg.spec.validate()?;
    let study = run_iv_study(&cfg)?;
    let body = match a.format.unwrap_or(Format::Csv) {
        Format::Csv => study.to_csv()?,
        Format::Json => json_pretty(&study)?,
    };
    Ok(Rendered {
        body,
        output: a.output,
        extra: Vec::new(),
    })
}

fn cmd_simulate_mediation(a: SimulateMediationArgs) -> CliResult<Rendered> {
    let mut cfg: MediationStudyConfig = load_toml(a.config.as_deref())?;
    if a.hard_case {
        cfg.spec = MediationSimSpec {
            b: cfg.spec.b,
            master_seed: cfg.spec.master_seed,
            ..MediationSimSpec::hard_case()
        };
    }
    let s = &mut cfg.spec;
    macro_rules! set {
        ($($f:ident => $g:ident),*) => { $( if let Some(v) = a.$f { s.$g = v; } )* };
    }
    set!(setting => setting, beta1 => beta1, beta2 => beta2, n => n, p => p, rho => rho, noise_var => noise_var,
        reps => b, seed => master_seed);
    if let Some(sc) = a.scenario {
        s.scenario = sc.into();
    }
    if let Some(sd) = a.decoy_sd {
        s.decoy_sd = Some(sd);
    } else if a.rho.is_some() {
        s.decoy_sd = None;
    }
    if !a.selectors.is_empty() {
        cfg.selectors = a.selectors.iter().map(|&s| s.into()).collect();
    }
    if let Some(st) = a.lasso_strategy {
        cfg.lasso_strategy = st.into();
    }
    if let Some(al) = a.alpha {
        cfg.alpha = al;
    }
    let study = run_mediation_study(&cfg)?;
    let body = match a.format.unwrap_or(Format::Csv) {
        Format::Csv => study.to_csv()?,
        Format::Json => json_pretty(&study)?,
    };
    Ok(Rendered {
        body,
        output: a.output,
        extra: Vec::new(),
    })
}

/// Convenience for tests and embedding: runs with captured output.
pub fn run_captured<I, T>(args: I) -> (i32, String, String)
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let (mut out, mut err) = (Vec::new(), Vec::new());
    let code = run(args, &mut out, &mut err);
    (
        code,
        String::from_utf8_lossy(&out).into_owned(),
        String::from_utf8_lossy(&err).into_owned(),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn missing_response_is_usage_error() {
        let (code, _, err) = run_captured(["twostage", "select", "--input", "nowhere.csv"]);
        assert_eq!(code, exit::USAGE);
        assert!(err.contains("\"kind\":\"usage\""));
    }

    #[test]
    fn unknown_subcommand_is_usage_error() {
        let (code, _, _) = run_captured(["twostage", "frobnicate"]);
        assert_eq!(code, exit::USAGE);
    }

    #[test]
    fn help_exits_cleanly() {
        let (code, out, _) = run_captured(["twostage", "--help"]);
        assert_eq!(code, exit::OK);
        assert!(out.contains("simulate-iv"));
    }

    #[test]
    fn error_codes_follow_error_kind() {
        assert_eq!(
            CliError::Lib(Error::EmptySelection).code(),
            exit::EMPTY_SELECTION
        );
        assert_eq!(
            CliError::Lib(Error::RankDeficient { condition: 1e20 }).code(),
            exit::NUMERICAL
        );
        assert_eq!(
            CliError::Lib(Error::MissingColumn("y".into())).code(),
            exit::DATA
        );
        assert_eq!(
            CliError::Lib(Error::InfeasibleDesign("x".into())).code(),
            exit::USAGE
        );
    }

    #[test]
    fn shipped_configs_parse() {
        fn parse<T: DeserializeOwned>(text: &str) -> T {
            toml::from_str(text).unwrap()
        }
        let s: SelectArgs = parse(include_str!("../configs/select.toml"));
        assert_eq!(s.method, Some(Selector::Semms));
        let f: FitIvArgs = parse(include_str!("../configs/fit-iv.toml"));
        assert_eq!(f.endogenous, vec!["x".to_string()]);
        let m: FitMediationArgs = parse(include_str!("../configs/fit-mediation.toml"));
        assert_eq!(m.scenario, Some(ScenarioArg::MultipleM));
        let i: IvStudyConfig = parse(include_str!("../configs/simulate-iv.toml"));
        assert_eq!(i.spec, crate::sim::IvSimSpec::default());
        let ss: IvStudyConfig = parse(include_str!("../configs/simulate-iv-sample-scaled.toml"));
        assert_eq!(ss.spec.calibration, crate::sim::Calibration::SampleScaled);
        assert_eq!(ss.semms.min_gain, 0.0);
        let d: MediationStudyConfig = parse(include_str!("../configs/simulate-mediation.toml"));
        assert_eq!(d.spec.p, MediationSimSpec::default().p);
    }

    #[test]
    fn config_file_rejects_unknown_keys() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.toml");
        std::fs::write(&path, "respons = \"y\"\n").unwrap();
        let (code, _, err) =
            run_captured(["twostage", "select", "--config", path.to_str().unwrap()]);
        assert_eq!(code, exit::USAGE);
        assert!(err.contains("invalid config"));
    }
}
