//! Batch front door: ingest delimited data, run a fitter, the exact
//! enumeration oracle, or a Monte-Carlo experiment, and emit a JSON report.
//!
//! Exit status: 0 on success, 2 on usage errors, 1 on runtime or numerical
//! errors. Every report carries `schema_version`, `algorithm`, `hyper`,
//! `data_shape` and `results`; floats are serialized with 17 significant
//! digits so identical runs produce byte-identical output.

use std::fs;
use std::io::Write;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use ndarray::{Array1, Array2};
use serde_json::{json, Value};

use ssvb::experiments::{
    check_v0_admissible, consistency_experiment, simulate, Algorithm, ExperimentConfig, GridCell,
    ModelKind, TruthSpec, XDist,
};
use ssvb::fit::{FitOptions, FitReport};
use ssvb::math::{validate_dataset, Dataset, ResponseKind, SpikeSlabHyper};
use ssvb::oracle::{enumerate_posterior, OracleModel, QuadratureOptions};

const SCHEMA_VERSION: u64 = 1;

#[derive(Parser)]
#[command(
    name = "ssvb",
    version,
    about = "Spike-and-slab variational Bayes variable selection",
    propagate_version = true
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Fit a model to a delimited data file and report the selection.
    Fit(FitArgs),
    /// Draw a dataset with known truth and write it as CSV.
    Simulate(SimulateArgs),
    /// Exact posterior over all 2^p inclusion vectors.
    Oracle(OracleArgs),
    /// Replicated simulate-then-fit study over a sample-size grid.
    Experiment(ExperimentArgs),
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum FitModel {
    Linear,
    Collapsed,
    Quantile,
    Logistic,
}

impl FitModel {
    fn name(&self) -> &'static str {
        match self {
            FitModel::Linear => "linear",
            FitModel::Collapsed => "collapsed",
            FitModel::Quantile => "quantile",
            FitModel::Logistic => "logistic",
        }
    }
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum DataModel {
    Linear,
    Quantile,
    Logistic,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum OracleKind {
    /// Closed-form marginal with the coefficient prior scaled by the noise variance.
    Collapsed,
    /// Coefficient prior independent of the noise variance (quadrature over it).
    IndependentSlab,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum XDistArg {
    StandardNormal,
    Equicorrelated,
}

#[derive(Args)]
struct HyperArgs {
    /// Spike variance.
    #[arg(long, default_value_t = 0.01)]
    v0: f64,
    /// Slab variance.
    #[arg(long, default_value_t = 100.0)]
    v1: f64,
    /// Inverse-gamma shape on the noise.
    #[arg(long, default_value_t = 0.5)]
    a: f64,
    /// Inverse-gamma scale on the noise.
    #[arg(long, default_value_t = 0.5)]
    b: f64,
    /// Prior inclusion probability.
    #[arg(long, default_value_t = 0.5)]
    rho: f64,
}

impl HyperArgs {
    fn build(&self) -> Result<SpikeSlabHyper, CliError> {
        SpikeSlabHyper::new(self.v0, self.v1, self.a, self.b, self.rho)
            .map_err(|e| CliError::Usage(e.to_string()))
    }
}

#[derive(Args)]
struct InputArgs {
    /// Delimited text file with a header row.
    #[arg(long)]
    input: String,
    /// Name of the response column; every other column becomes a feature.
    #[arg(long)]
    response: String,
    /// Field delimiter.
    #[arg(long, default_value_t = ',')]
    delimiter: char,
    /// Prepend a constant column named "(intercept)".
    #[arg(long)]
    add_intercept: bool,
}

#[derive(Args)]
struct FitArgs {
    #[arg(long, value_enum)]
    model: FitModel,
    #[command(flatten)]
    input: InputArgs,
    /// Quantile level; required by (and only valid with) the quantile model.
    #[arg(long, required_if_eq("model", "quantile"))]
    q_level: Option<f64>,
    #[command(flatten)]
    hyper: HyperArgs,
    /// Convergence threshold on the largest parameter change.
    #[arg(long, default_value_t = 1e-6)]
    tol: f64,
    #[arg(long, default_value_t = 500)]
    max_iter: usize,
    /// Drop the per-iteration change trace from the report.
    #[arg(long)]
    no_trace: bool,
    /// Write the JSON report here instead of stdout.
    #[arg(long)]
    output: Option<String>,
}

#[derive(Args)]
struct SimulateArgs {
    #[arg(long, value_enum)]
    model: DataModel,
    #[arg(long)]
    n: usize,
    /// True coefficients, comma separated (their count sets p).
    #[arg(long)]
    beta0: String,
    #[arg(long, default_value_t = 1.0)]
    sigma0: f64,
    #[arg(long, required_if_eq("model", "quantile"))]
    q_level: Option<f64>,
    #[arg(long, value_enum, default_value_t = XDistArg::StandardNormal)]
    x_dist: XDistArg,
    /// Pairwise correlation for the equicorrelated design.
    #[arg(long, default_value_t = 0.5)]
    corr: f64,
    #[arg(long)]
    seed: u64,
    /// CSV destination for the drawn dataset.
    #[arg(long)]
    output: String,
}

#[derive(Args)]
struct OracleArgs {
    #[arg(long, value_enum)]
    model: OracleKind,
    #[command(flatten)]
    input: InputArgs,
    #[command(flatten)]
    hyper: HyperArgs,
    /// Relative error target for the noise-variance quadrature.
    #[arg(long, default_value_t = 1e-8)]
    rel_tol: f64,
    #[arg(long)]
    output: Option<String>,
}

#[derive(Args)]
struct ExperimentArgs {
    #[arg(long, value_enum)]
    algorithm: FitModel,
    /// Sample sizes, comma separated.
    #[arg(long)]
    n_grid: String,
    #[arg(long)]
    beta0: String,
    #[arg(long, default_value_t = 1.0)]
    sigma0: f64,
    #[arg(long, required_if_eq("algorithm", "quantile"))]
    q_level: Option<f64>,
    #[arg(long, value_enum, default_value_t = XDistArg::StandardNormal)]
    x_dist: XDistArg,
    #[arg(long, default_value_t = 0.5)]
    corr: f64,
    #[arg(long, default_value_t = 200)]
    reps: usize,
    #[arg(long)]
    seed: u64,
    #[command(flatten)]
    hyper: HyperArgs,
    /// Scale the spike variance per cell as v0 = C/sqrt(n) (overrides --v0).
    #[arg(long)]
    v0_invsqrt_n: Option<f64>,
    /// Scale the slab variance per cell as v1 = C*n (overrides --v1).
    #[arg(long)]
    v1_linear_n: Option<f64>,
    /// Check spike-variance admissibility for the smallest signal before running.
    #[arg(long)]
    require_admissible: bool,
    #[arg(long, default_value_t = 1e-6)]
    tol: f64,
    #[arg(long, default_value_t = 500)]
    max_iter: usize,
    #[arg(long)]
    output: Option<String>,
}

enum CliError {
    Usage(String),
    Runtime(String),
}

impl From<ssvb::Error> for CliError {
    fn from(e: ssvb::Error) -> Self {
        CliError::Runtime(e.to_string())
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.cmd {
        Cmd::Fit(args) => run_fit(args),
        Cmd::Simulate(args) => run_simulate(args),
        Cmd::Oracle(args) => run_oracle(args),
        Cmd::Experiment(args) => run_experiment(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(CliError::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
    }
}

// ---------------------------------------------------------------------------
// input handling
// ---------------------------------------------------------------------------

struct LoadedData {
    dataset: Dataset,
    columns: Vec<String>,
    response: String,
}

fn load_table(args: &InputArgs, kind: ResponseKind) -> Result<LoadedData, CliError> {
    if !args.delimiter.is_ascii() {
        return Err(CliError::Usage(format!(
            "delimiter {:?} is not a single ASCII character",
            args.delimiter
        )));
    }
    let mut reader = csv::ReaderBuilder::new()
        .delimiter(args.delimiter as u8)
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(&args.input)
        .map_err(|e| CliError::Runtime(format!("cannot read {}: {e}", args.input)))?;
    let headers: Vec<String> = reader
        .headers()
        .map_err(|e| CliError::Runtime(format!("malformed header in {}: {e}", args.input)))?
        .iter()
        .map(|s| s.to_string())
        .collect();
    let response_idx = headers
        .iter()
        .position(|h| *h == args.response)
        .ok_or_else(|| {
            CliError::Runtime(format!(
                "response column {:?} not found (columns: {})",
                args.response,
                headers.join(", ")
            ))
        })?;
    let feature_idx: Vec<usize> = (0..headers.len()).filter(|i| *i != response_idx).collect();
    if feature_idx.is_empty() && !args.add_intercept {
        return Err(CliError::Runtime(
            "no feature columns remain after removing the response".into(),
        ));
    }

    let mut y = Vec::new();
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (r, record) in reader.records().enumerate() {
        let record =
            record.map_err(|e| CliError::Runtime(format!("malformed row {}: {e}", r + 2)))?;
        if record.len() != headers.len() {
            return Err(CliError::Runtime(format!(
                "row {} has {} fields, expected {}",
                r + 2,
                record.len(),
                headers.len()
            )));
        }
        let parse = |i: usize| -> Result<f64, CliError> {
            record[i].parse::<f64>().map_err(|_| {
                CliError::Runtime(format!(
                    "row {}, column {:?}: cannot parse {:?} as a number",
                    r + 2,
                    headers[i],
                    &record[i]
                ))
            })
        };
        y.push(parse(response_idx)?);
        let mut row = Vec::with_capacity(feature_idx.len() + args.add_intercept as usize);
        if args.add_intercept {
            row.push(1.0);
        }
        for &i in &feature_idx {
            row.push(parse(i)?);
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(CliError::Runtime(format!(
            "{} has no data rows",
            args.input
        )));
    }
    let p = rows[0].len();
    let mut x = Array2::<f64>::zeros((rows.len(), p));
    for (i, row) in rows.iter().enumerate() {
        for (j, v) in row.iter().enumerate() {
            x[[i, j]] = *v;
        }
    }
    let mut columns = Vec::new();
    if args.add_intercept {
        columns.push("(intercept)".to_string());
    }
    for &i in &feature_idx {
        columns.push(headers[i].clone());
    }
    let dataset = validate_dataset(x, Array1::from_vec(y), kind)?;
    Ok(LoadedData {
        dataset,
        columns,
        response: args.response.clone(),
    })
}

fn parse_f64_list(raw: &str, what: &str) -> Result<Vec<f64>, CliError> {
    raw.split(',')
        .map(|tok| {
            tok.trim()
                .parse::<f64>()
                .map_err(|_| CliError::Usage(format!("{what}: cannot parse {tok:?} as a number")))
        })
        .collect()
}

fn parse_usize_list(raw: &str, what: &str) -> Result<Vec<usize>, CliError> {
    raw.split(',')
        .map(|tok| {
            tok.trim()
                .parse::<usize>()
                .map_err(|_| CliError::Usage(format!("{what}: cannot parse {tok:?} as an integer")))
        })
        .collect()
}

fn x_dist_from(arg: XDistArg, corr: f64) -> Result<XDist, CliError> {
    match arg {
        XDistArg::StandardNormal => Ok(XDist::StandardNormal),
        XDistArg::Equicorrelated => {
            if !(0.0..1.0).contains(&corr) {
                return Err(CliError::Usage(format!(
                    "--corr {corr} must lie in [0, 1) for the equicorrelated design"
                )));
            }
            Ok(XDist::Equicorrelated(corr))
        }
    }
}

// ---------------------------------------------------------------------------
// report emission
// ---------------------------------------------------------------------------

/// Serializes every float with 17 significant digits, which round-trips f64
/// exactly and keeps reruns byte-identical.
struct Sig17Formatter;

impl serde_json::ser::Formatter for Sig17Formatter {
    fn write_f64<W>(&mut self, writer: &mut W, value: f64) -> std::io::Result<()>
    where
        W: ?Sized + std::io::Write,
    {
        write!(writer, "{value:.16e}")
    }
}

fn emit(report: &Value, output: Option<&str>) -> Result<(), CliError> {
    let mut buf = Vec::new();
    let mut ser = serde_json::Serializer::with_formatter(&mut buf, Sig17Formatter);
    serde::Serialize::serialize(report, &mut ser)
        .map_err(|e| CliError::Runtime(format!("cannot serialize report: {e}")))?;
    buf.push(b'\n');
    match output {
        Some(path) => fs::write(path, &buf)
            .map_err(|e| CliError::Runtime(format!("cannot write {path}: {e}"))),
        None => {
            let mut stdout = std::io::stdout().lock();
            stdout
                .write_all(&buf)
                .map_err(|e| CliError::Runtime(format!("cannot write report: {e}")))
        }
    }
}

fn hyper_json(hyper: &SpikeSlabHyper, q_level: Option<f64>) -> Value {
    let mut v = json!({
        "v0": hyper.v0,
        "v1": hyper.v1,
        "a": hyper.a,
        "b": hyper.b,
        "rho": hyper.rho,
        "lambda": hyper.lambda,
    });
    if let Some(q) = q_level {
        v["q_level"] = json!(q);
    }
    v
}

fn fit_results_json(report: &FitReport, columns: &[String]) -> Value {
    let selected_columns: Vec<&String> = report.selected.iter().map(|&j| &columns[j]).collect();
    json!({
        "mu": report.mu.to_vec(),
        "w": report.w.to_vec(),
        "tau": report.tau,
        "selected": report.selected,
        "selected_columns": selected_columns,
        "iterations": report.iterations,
        "converged": report.converged,
        "delta_trace": report.delta_trace,
    })
}

// ---------------------------------------------------------------------------
// subcommands
// ---------------------------------------------------------------------------

fn run_fit(args: FitArgs) -> Result<(), CliError> {
    if args.q_level.is_some() && args.model != FitModel::Quantile {
        return Err(CliError::Usage(
            "--q-level is only valid with --model quantile".into(),
        ));
    }
    let hyper = args.hyper.build()?;
    let opts = FitOptions {
        tol: args.tol,
        max_iter: args.max_iter,
        track_trace: !args.no_trace,
    };
    let kind = match args.model {
        FitModel::Logistic => ResponseKind::Binary,
        _ => ResponseKind::Continuous,
    };
    let loaded = load_table(&args.input, kind)?;
    let report = match args.model {
        FitModel::Linear => ssvb::linear::fit_linear(&loaded.dataset, &hyper, &opts)?,
        FitModel::Collapsed => ssvb::collapsed::fit_collapsed(&loaded.dataset, &hyper, &opts)?,
        FitModel::Quantile => {
            let q = args.q_level.expect("enforced by clap");
            ssvb::quantile::fit_quantile(&loaded.dataset, q, &hyper, &opts)?
        }
        FitModel::Logistic => ssvb::logistic::fit_logistic(&loaded.dataset, &hyper, &opts)?,
    };
    let doc = json!({
        "schema_version": SCHEMA_VERSION,
        "algorithm": args.model.name(),
        "hyper": hyper_json(&hyper, args.q_level),
        "data_shape": {
            "n": loaded.dataset.n(),
            "p": loaded.dataset.p(),
            "response": loaded.response,
            "columns": loaded.columns,
            "full_rank": loaded.dataset.full_rank,
        },
        "results": fit_results_json(&report, &loaded.columns),
    });
    emit(&doc, args.output.as_deref())
}

fn run_simulate(args: SimulateArgs) -> Result<(), CliError> {
    if args.q_level.is_some() && args.model != DataModel::Quantile {
        return Err(CliError::Usage(
            "--q-level is only valid with --model quantile".into(),
        ));
    }
    let beta0 = parse_f64_list(&args.beta0, "--beta0")?;
    let x_dist = x_dist_from(args.x_dist, args.corr)?;
    let truth = TruthSpec::new(Array1::from_vec(beta0.clone()), args.sigma0, x_dist)
        .map_err(|e| CliError::Usage(e.to_string()))?;
    let kind = match args.model {
        DataModel::Linear => ModelKind::Linear,
        DataModel::Quantile => ModelKind::Quantile(args.q_level.expect("enforced by clap")),
        DataModel::Logistic => ModelKind::Logistic,
    };
    let data = simulate(kind, &truth, args.n, args.seed)?;

    // dataset as CSV: x1..xp then y
    let mut out = String::new();
    for j in 0..data.p() {
        out.push_str(&format!("x{},", j + 1));
    }
    out.push_str("y\n");
    for i in 0..data.n() {
        for j in 0..data.p() {
            out.push_str(&format!("{:.16e},", data.x[[i, j]]));
        }
        out.push_str(&format!("{:.16e}\n", data.y[i]));
    }
    fs::write(&args.output, out)
        .map_err(|e| CliError::Runtime(format!("cannot write {}: {e}", args.output)))?;

    let model_name = match args.model {
        DataModel::Linear => "linear",
        DataModel::Quantile => "quantile",
        DataModel::Logistic => "logistic",
    };
    let doc = json!({
        "schema_version": SCHEMA_VERSION,
        "algorithm": "simulate",
        "hyper": Value::Null,
        "data_shape": { "n": data.n(), "p": data.p(), "full_rank": data.full_rank },
        "results": {
            "model": model_name,
            "beta0": beta0,
            "sigma0": args.sigma0,
            "q_level": args.q_level,
            "x_dist": match x_dist {
                XDist::StandardNormal => json!("standard-normal"),
                XDist::Equicorrelated(r) => json!({"equicorrelated": r}),
            },
            "seed": args.seed,
            "output": args.output,
        },
    });
    emit(&doc, None)
}

fn run_oracle(args: OracleArgs) -> Result<(), CliError> {
    let hyper = args.hyper.build()?;
    let loaded = load_table(&args.input, ResponseKind::Continuous)?;
    let (model, model_name) = match args.model {
        OracleKind::Collapsed => (OracleModel::Collapsed, "oracle-collapsed"),
        OracleKind::IndependentSlab => (OracleModel::IndependentSlab, "oracle-independent-slab"),
    };
    let quad = QuadratureOptions {
        rel_tol: args.rel_tol,
        ..QuadratureOptions::default()
    };
    let post = enumerate_posterior(&loaded.dataset, &hyper, model, Some(&quad))?;
    let map_model: Vec<u8> = post.map_gamma();
    let median: Vec<usize> = post.median_model();
    let doc = json!({
        "schema_version": SCHEMA_VERSION,
        "algorithm": model_name,
        "hyper": hyper_json(&hyper, None),
        "data_shape": {
            "n": loaded.dataset.n(),
            "p": loaded.dataset.p(),
            "response": loaded.response,
            "columns": loaded.columns,
            "full_rank": loaded.dataset.full_rank,
        },
        "results": {
            "model_count": post.probs.len(),
            "log_weights": post.log_weights,
            "probs": post.probs,
            "inclusion": post.inclusion,
            "map_index": post.map_index,
            "map_model": map_model,
            "median_model": median,
        },
    });
    emit(&doc, args.output.as_deref())
}

fn run_experiment(args: ExperimentArgs) -> Result<(), CliError> {
    if args.q_level.is_some() && args.algorithm != FitModel::Quantile {
        return Err(CliError::Usage(
            "--q-level is only valid with --algorithm quantile".into(),
        ));
    }
    let beta0 = parse_f64_list(&args.beta0, "--beta0")?;
    let ns = parse_usize_list(&args.n_grid, "--n-grid")?;
    if ns.is_empty() {
        return Err(CliError::Usage(
            "--n-grid must list at least one sample size".into(),
        ));
    }
    let x_dist = x_dist_from(args.x_dist, args.corr)?;
    let truth = TruthSpec::new(Array1::from_vec(beta0), args.sigma0, x_dist)
        .map_err(|e| CliError::Usage(e.to_string()))?;
    let algorithm = match args.algorithm {
        FitModel::Linear => Algorithm::Linear,
        FitModel::Collapsed => Algorithm::Collapsed,
        FitModel::Quantile => Algorithm::Quantile(args.q_level.expect("enforced by clap")),
        FitModel::Logistic => Algorithm::Logistic,
    };
    let grid: Vec<GridCell> = ns
        .iter()
        .map(|&n| GridCell {
            n,
            v0: args
                .v0_invsqrt_n
                .map_or(args.hyper.v0, |c| c / (n as f64).sqrt()),
            v1: args.v1_linear_n.map_or(args.hyper.v1, |c| c * n as f64),
        })
        .collect();

    if args.require_admissible {
        let l0 = truth.l0().ok_or_else(|| {
            CliError::Usage("--require-admissible needs at least one nonzero coefficient".into())
        })?;
        for cell in &grid {
            let hyper =
                SpikeSlabHyper::new(cell.v0, cell.v1, args.hyper.a, args.hyper.b, args.hyper.rho)
                    .map_err(|e| CliError::Usage(e.to_string()))?;
            if !check_v0_admissible(&hyper, l0, 0.1) {
                return Err(CliError::Usage(format!(
                    "spike variance {} is not admissible for l0 = {l0} at n = {}",
                    cell.v0, cell.n
                )));
            }
        }
    }

    let p = truth.beta0.len();
    let cfg = ExperimentConfig {
        algorithm,
        truth,
        grid,
        reps: args.reps,
        base_seed: args.seed,
        a: args.hyper.a,
        b: args.hyper.b,
        rho: args.hyper.rho,
        opts: FitOptions {
            tol: args.tol,
            max_iter: args.max_iter,
            track_trace: false,
        },
    };
    let report = consistency_experiment(&cfg)?;
    let cells: Vec<Value> = report
        .cells
        .iter()
        .map(|c| {
            json!({
                "n": c.n,
                "v0": c.v0,
                "v1": c.v1,
                "reps": c.reps,
                "failures": c.failures,
                "exact_recovery_rate": c.exact_recovery_rate,
                "mean_linf_error": c.mean_linf_error,
                "mean_var_error": c.mean_var_error,
                "median_null_w": c.median_null_w,
                "median_signal_w": c.median_signal_w,
                "degraded": c.degraded,
            })
        })
        .collect();
    let doc = json!({
        "schema_version": SCHEMA_VERSION,
        "algorithm": args.algorithm.name(),
        "hyper": {
            "a": args.hyper.a,
            "b": args.hyper.b,
            "rho": args.hyper.rho,
            "v0_per_cell": report.cells.iter().map(|c| c.v0).collect::<Vec<_>>(),
            "v1_per_cell": report.cells.iter().map(|c| c.v1).collect::<Vec<_>>(),
        },
        "data_shape": { "p": p, "n_grid": ns },
        "results": {
            "seed": report.base_seed,
            "cells": cells,
            "recovery_nondecreasing": report.recovery_nondecreasing,
            "linf_error_decreasing": report.linf_error_decreasing,
            "var_error_decreasing": report.var_error_decreasing,
        },
    });
    emit(&doc, args.output.as_deref())
}
