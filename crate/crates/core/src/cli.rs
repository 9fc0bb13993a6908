//! Command-line front end.
//!
//! Every command produces a JSON report with the echoed inputs, the tool
//! version, the seed and the wall-clock time. `curve` can emit CSV instead and
//! `export` emits the polynomial text by default.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Parser, ValueEnum};
use serde::Serialize;
use serde_json::{json, Value};

use crate::acceptance;
use crate::error::{usage, Error, Result};
use crate::likelihood::{fd_gradient, gradient, objective, EvalPoint, FD_STEP};
use crate::matcore::{model_covariance, FactorParams, SampleCovariance};
use crate::polysys::{
    build_symbolic_system, build_system, export_system, j1_generators, j1_residuals, j2_generators,
    j2_residuals, jacobian_rank, DecompositionPoint, ExportFormat, VarLayout, JACOBIAN_STEP,
};
use crate::solver::{cluster_solutions, multi_start, SolveOptions};
use crate::variety::{
    curve_point, embed_curve, feasible_interval, isolated_points, sample_curve, verify_critical,
    witness_covariance, CurvePoint,
};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// Environment variable capping the number of worker threads.
pub const THREADS_ENV: &str = "FARIDGE_THREADS";

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_NUMERICAL: i32 = 3;

pub const DEFAULT_SEED: u64 = 0;

pub const CURVE_CSV_HEADER: &str = "t,beta11,beta12,tau1,tau2,f,grad_inf_norm";

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    Eval,
    GradCheck,
    Curve,
    Isolated,
    Witness,
    BuildSystem,
    Export,
    Solve,
    VerifyDecomp,
    Report,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum OutputFormat {
    Json,
    Csv,
    Text,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Syntax {
    Plain,
    M2,
    Phc,
}

impl From<Syntax> for ExportFormat {
    fn from(s: Syntax) -> Self {
        match s {
            Syntax::Plain => ExportFormat::Plain,
            Syntax::M2 => ExportFormat::M2,
            Syntax::Phc => ExportFormat::Phc,
        }
    }
}

/// Factor-analysis likelihood tools: evaluation, gradient checks, critical
/// curves, polynomial systems and multi-start solves.
#[derive(Debug, Clone, Parser, Serialize)]
#[command(name = "faridge", version)]
pub struct RunConfig {
    #[arg(value_enum)]
    pub command: Command,

    /// Covariance matrix JSON: {"p": n, "entries": [[...], ...]}.
    #[arg(long)]
    pub matrix: Option<PathBuf>,

    /// Parameter JSON: {"p", "q", "tau", "beta": [[...]], "r"}.
    #[arg(long)]
    pub params: Option<PathBuf>,

    #[arg(long)]
    pub p: Option<usize>,

    #[arg(long)]
    pub q: Option<usize>,

    /// Curve parameter; repeat for several values.
    #[arg(long = "t", allow_negative_numbers = true)]
    pub t: Vec<f64>,

    #[arg(long)]
    pub samples: Option<usize>,

    #[arg(long)]
    pub starts: Option<usize>,

    #[arg(long)]
    pub seed: Option<u64>,

    #[arg(long)]
    pub tol: Option<f64>,

    #[arg(long, value_enum)]
    pub format: Option<OutputFormat>,

    #[arg(long, value_enum, default_value = "plain")]
    pub syntax: Syntax,

    #[arg(long)]
    pub out: Option<PathBuf>,

    /// Leave the timing block out of the report.
    #[arg(long)]
    pub no_timing: bool,
}

/// What a command produced: the report, an optional alternative artifact and
/// whether its numerical checks held.
#[derive(Debug, Clone)]
pub struct Outcome {
    pub report: Value,
    pub csv: Option<String>,
    pub text: Option<String>,
    pub pass: bool,
}

impl Outcome {
    fn new(result: Value, pass: bool) -> Self {
        Self {
            report: result,
            csv: None,
            text: None,
            pass,
        }
    }

    pub fn exit_code(&self) -> i32 {
        if self.pass {
            EXIT_OK
        } else {
            EXIT_NUMERICAL
        }
    }
}

pub fn exit_code_for(err: &Error) -> i32 {
    match err {
        Error::Singular { .. } | Error::Infeasible(_) => EXIT_NUMERICAL,
        _ => EXIT_USAGE,
    }
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path, what: &str) -> Result<T> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Usage(format!("cannot read {what} file {}: {e}", path.display())))?;
    serde_json::from_str(&text)
        .map_err(|e| Error::Usage(format!("invalid {what} file {}: {e}", path.display())))
}

fn require_matrix(cfg: &RunConfig) -> Result<SampleCovariance> {
    match &cfg.matrix {
        Some(path) => read_json(path, "matrix"),
        None => usage("--matrix is required for this command"),
    }
}

fn require_params(cfg: &RunConfig) -> Result<FactorParams> {
    match &cfg.params {
        Some(path) => read_json(path, "params"),
        None => usage("--params is required for this command"),
    }
}

fn worked_example() -> SampleCovariance {
    SampleCovariance::from_rows(&[vec![2.0, 1.0], vec![1.0, 2.0]]).expect("constant PD matrix")
}

fn positive_tol(cfg: &RunConfig, default: f64) -> Result<f64> {
    let tol = cfg.tol.unwrap_or(default);
    if !(tol > 0.0 && tol.is_finite()) {
        return usage(format!("--tol must be positive and finite, got {tol}"));
    }
    Ok(tol)
}

fn format_for(cfg: &RunConfig) -> Result<OutputFormat> {
    let default = if cfg.command == Command::Export {
        OutputFormat::Text
    } else {
        OutputFormat::Json
    };
    let fmt = cfg.format.unwrap_or(default);
    match (cfg.command, fmt) {
        (_, OutputFormat::Json) | (Command::Curve, OutputFormat::Csv) | (Command::Export, OutputFormat::Text) => {
            Ok(fmt)
        }
        (cmd, f) => usage(format!(
            "format {} is not available for {}",
            value_name(f),
            value_name(cmd)
        )),
    }
}

fn thread_count() -> Result<Option<usize>> {
    match std::env::var(THREADS_ENV) {
        Err(_) => Ok(None),
        Ok(s) => match s.trim().parse::<usize>() {
            Ok(n) if n > 0 => Ok(Some(n)),
            _ => usage(format!("{THREADS_ENV} must be a positive integer, got '{s}'")),
        },
    }
}

/// Runs `f` on a pool sized by `FARIDGE_THREADS`, or the global pool when unset.
fn with_pool<T: Send>(f: impl FnOnce() -> T + Send) -> Result<T> {
    match thread_count()? {
        None => Ok(f()),
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .map_err(|e| Error::Usage(format!("cannot build thread pool: {e}")))?;
            Ok(pool.install(f))
        }
    }
}

fn cmd_eval(cfg: &RunConfig) -> Result<Outcome> {
    let c = require_matrix(cfg)?;
    let params = require_params(cfg)?;
    let pt = EvalPoint::new(&c, &params)?;
    let f = objective(&pt)?;
    let g = gradient(&pt)?;
    let sigma = model_covariance(&params);
    Ok(Outcome::new(
        json!({
            "f": f,
            "gradient": g,
            "grad_inf_norm": g.inf_norm(),
            "model_covariance": sigma.to_rows(),
            "gamma": 1.0 / sigma.det(),
        }),
        true,
    ))
}

fn cmd_grad_check(cfg: &RunConfig) -> Result<Outcome> {
    let c = require_matrix(cfg)?;
    let params = require_params(cfg)?;
    let tol = positive_tol(cfg, 1e-6)?;
    let pt = EvalPoint::new(&c, &params)?;
    let analytic = gradient(&pt)?;
    let numeric = fd_gradient(&pt, FD_STEP)?;
    let mut max_err = 0.0f64;
    let mut pass = true;
    for (a, n) in analytic.to_vec().iter().zip(numeric.to_vec()) {
        let err = (a - n).abs();
        max_err = max_err.max(err);
        pass &= err <= tol.max(tol * n.abs());
    }
    Ok(Outcome::new(
        json!({
            "analytic": analytic,
            "finite_difference": numeric,
            "step": FD_STEP,
            "max_abs_error": max_err,
            "pass": pass,
        }),
        pass,
    ))
}

fn curve_row(c: &SampleCovariance, cp: &CurvePoint) -> Result<(f64, f64)> {
    let pt = EvalPoint::new(c, &cp.params)?;
    Ok((objective(&pt)?, gradient(&pt)?.inf_norm()))
}

fn cmd_curve(cfg: &RunConfig, format: OutputFormat) -> Result<Outcome> {
    let c = require_matrix(cfg)?;
    let tol = positive_tol(cfg, 1e-8)?;
    let set = feasible_interval(&c)?;
    let points = if cfg.t.is_empty() {
        sample_curve(&c, cfg.samples.unwrap_or(50), false)?
    } else {
        cfg.t.iter().map(|&t| curve_point(&c, t)).collect::<Result<Vec<_>>>()?
    };
    let mut rows = Vec::with_capacity(points.len());
    let mut csv = format!("{CURVE_CSV_HEADER}\n");
    let mut max_grad = 0.0f64;
    for cp in &points {
        let (f, g) = curve_row(&c, cp)?;
        max_grad = max_grad.max(g);
        let fp = &cp.params;
        let vals = [cp.t, fp.beta(0, 0), fp.beta(0, 1), fp.tau()[0], fp.tau()[1], f, g];
        let line: Vec<String> = vals.iter().map(|v| format!("{v:.16e}")).collect();
        let _ = writeln!(csv, "{}", line.join(","));
        rows.push(json!({"t": cp.t, "params": fp, "f": f, "grad_inf_norm": g}));
    }
    let pass = max_grad <= tol;
    let mut out = Outcome::new(
        json!({
            "interval": set,
            "points": rows,
            "max_grad_inf_norm": max_grad,
            "pass": pass,
        }),
        pass,
    );
    if format == OutputFormat::Csv {
        out.csv = Some(csv);
    }
    Ok(out)
}

fn cmd_isolated(cfg: &RunConfig) -> Result<Outcome> {
    let c = require_matrix(cfg)?;
    let tol = positive_tol(cfg, 1e-8)?;
    let mut pass = true;
    let mut points = Vec::new();
    for ip in isolated_points(&c)? {
        let rep = verify_critical(&c, &ip, tol)?;
        pass &= rep.pass;
        points.push(json!({"params": ip, "f": rep.f, "grad_inf_norm": rep.grad_inf, "pass": rep.pass}));
    }
    Ok(Outcome::new(json!({"points": points, "pass": pass}), pass))
}

fn cmd_witness(cfg: &RunConfig) -> Result<Outcome> {
    let (Some(p), Some(q)) = (cfg.p, cfg.q) else {
        return usage("witness needs --p and --q");
    };
    let tol = positive_tol(cfg, 1e-8)?;
    let block = match &cfg.matrix {
        Some(_) => require_matrix(cfg)?,
        None => worked_example(),
    };
    if block.dim() != 2 {
        return usage(format!("witness --matrix must be 2×2, got dimension {}", block.dim()));
    }
    let w = witness_covariance(p, q, block.get(0, 0), block.get(0, 1), block.get(1, 1), &[])?;
    let ts: Vec<f64> = if cfg.t.is_empty() {
        sample_curve(&block, cfg.samples.unwrap_or(20), false)?
            .iter()
            .map(|cp| cp.t)
            .collect()
    } else {
        cfg.t.clone()
    };
    let mut pass = true;
    let mut points = Vec::new();
    for t in ts {
        let params = embed_curve(p, q, &w, t)?;
        let rep = verify_critical(&w, &params, tol)?;
        pass &= rep.pass;
        points.push(json!({"t": t, "params": params, "f": rep.f, "grad_inf_norm": rep.grad_inf, "pass": rep.pass}));
    }
    Ok(Outcome::new(
        json!({"witness": w, "points": points, "pass": pass}),
        pass,
    ))
}

fn cmd_build_system(cfg: &RunConfig) -> Result<Outcome> {
    let c = require_matrix(cfg)?;
    let q = cfg.q.unwrap_or(1);
    let sys = build_system(&c, c.dim(), q)?;
    let polys: Vec<Value> = sys
        .polys
        .iter()
        .map(|p| json!({"degree": p.degree(), "terms": p.num_terms()}))
        .collect();
    let mut result = json!({
        "variables": sys.variables,
        "equations": polys,
    });
    let mut pass = true;
    if cfg.params.is_some() {
        let params = require_params(cfg)?;
        let tol = positive_tol(cfg, 1e-9)?;
        let gamma = 1.0 / model_covariance(&params).det();
        let point = VarLayout::new(c.dim(), q, false).point(&params, gamma, None)?;
        let residuals = sys.evaluate(&point)?;
        let max = residuals.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        pass = max <= tol;
        result["residuals"] = json!(residuals);
        result["max_residual"] = json!(max);
        result["pass"] = json!(pass);
    }
    Ok(Outcome::new(result, pass))
}

fn cmd_export(cfg: &RunConfig, format: OutputFormat) -> Result<Outcome> {
    let sys = match (&cfg.matrix, cfg.p) {
        (Some(_), _) => {
            let c = require_matrix(cfg)?;
            build_system(&c, c.dim(), cfg.q.unwrap_or(1))?
        }
        (None, Some(p)) => build_symbolic_system(p, cfg.q.unwrap_or(1))?,
        (None, None) => return usage("export needs --matrix or --p"),
    };
    let text = export_system(&sys, cfg.syntax.into());
    let mut out = Outcome::new(
        json!({
            "variables": sys.variables,
            "equations": sys.polys.len(),
            "text": text,
        }),
        true,
    );
    if format == OutputFormat::Text {
        out.text = Some(text);
    }
    Ok(out)
}

fn cmd_solve(cfg: &RunConfig) -> Result<Outcome> {
    let c = require_matrix(cfg)?;
    let q = cfg.q.unwrap_or(1);
    let opts = SolveOptions {
        grad_tol: positive_tol(cfg, SolveOptions::default().grad_tol)?,
        ..SolveOptions::default()
    };
    let starts = cfg.starts.unwrap_or(20);
    let seed = cfg.seed.unwrap_or(DEFAULT_SEED);
    let results = with_pool(|| multi_start(&c, q, starts, seed, &opts))??;
    let clusters = cluster_solutions(&results, 1e-3, 1e-8);
    let converged = results.iter().filter(|r| r.converged).count();
    Ok(Outcome::new(
        json!({
            "options": opts,
            "converged": converged,
            "results": results,
            "clusters": clusters,
        }),
        converged > 0,
    ))
}

fn cmd_verify_decomp(cfg: &RunConfig) -> Result<Outcome> {
    let c = match &cfg.matrix {
        Some(_) => require_matrix(cfg)?,
        None => worked_example(),
    };
    let tol = positive_tol(cfg, 1e-9)?;
    let curve = sample_curve(&c, cfg.samples.unwrap_or(10), false)?;
    let (g1, g2) = (j1_generators(), j2_generators());
    let max_abs = |v: &[f64]| v.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    let mut j1_max = 0.0f64;
    let mut j1_ranks = Vec::new();
    for cp in &curve {
        let d = DecompositionPoint::lift(&c, &cp.params)?;
        j1_max = j1_max.max(max_abs(&j1_residuals(&d)));
        j1_ranks.push(jacobian_rank(&g1, &d.to_array(), JACOBIAN_STEP));
    }
    let mut j2_max = 0.0f64;
    let mut j2_ranks = Vec::new();
    for ip in isolated_points(&c)? {
        let d = DecompositionPoint::lift(&c, &ip)?;
        j2_max = j2_max.max(max_abs(&j2_residuals(&d)));
        j2_ranks.push(jacobian_rank(&g2, &d.to_array(), JACOBIAN_STEP));
    }
    let pass = j1_max <= tol
        && j2_max <= tol
        && j1_ranks.iter().all(|&r| r == 7)
        && j2_ranks.iter().all(|&r| r == 8);
    Ok(Outcome::new(
        json!({
            "j1": {"points": curve.len(), "max_residual": j1_max, "ranks": j1_ranks, "dimension": 11 - 7},
            "j2": {"points": 4, "max_residual": j2_max, "ranks": j2_ranks, "dimension": 11 - 8},
            "pass": pass,
        }),
        pass,
    ))
}

fn cmd_report() -> Result<Outcome> {
    let outcomes = with_pool(acceptance::run_all)?;
    let pass = outcomes.iter().all(|o| o.pass);
    let mut table = String::new();
    for o in &outcomes {
        let _ = writeln!(table, "{}", o.line());
    }
    let mut out = Outcome::new(json!({"criteria": outcomes, "pass": pass}), pass);
    out.text = Some(table);
    Ok(out)
}

/// Dispatches one command and wraps its result in the report envelope.
pub fn run(cfg: &RunConfig) -> Result<Outcome> {
    let started = Instant::now();
    let format = format_for(cfg)?;
    let mut out = match cfg.command {
        Command::Eval => cmd_eval(cfg),
        Command::GradCheck => cmd_grad_check(cfg),
        Command::Curve => cmd_curve(cfg, format),
        Command::Isolated => cmd_isolated(cfg),
        Command::Witness => cmd_witness(cfg),
        Command::BuildSystem => cmd_build_system(cfg),
        Command::Export => cmd_export(cfg, format),
        Command::Solve => cmd_solve(cfg),
        Command::VerifyDecomp => cmd_verify_decomp(cfg),
        Command::Report => cmd_report(),
    }?;
    let mut envelope = json!({
        "command": cfg.command,
        "version": VERSION,
        "seed": effective_seed(cfg),
        "inputs": inputs_echo(cfg)?,
        "result": out.report,
    });
    if !cfg.no_timing {
        envelope["timing"] = json!({"elapsed_seconds": started.elapsed().as_secs_f64()});
    }
    out.report = envelope;
    Ok(out)
}

fn effective_seed(cfg: &RunConfig) -> Option<u64> {
    match cfg.command {
        Command::Solve => Some(cfg.seed.unwrap_or(DEFAULT_SEED)),
        _ => cfg.seed,
    }
}

fn inputs_echo(cfg: &RunConfig) -> Result<Value> {
    let mut v = serde_json::to_value(cfg)?;
    if let Some(path) = &cfg.matrix {
        v["matrix_contents"] = serde_json::to_value(read_json::<SampleCovariance>(path, "matrix")?)?;
    }
    if let Some(path) = &cfg.params {
        v["params_contents"] = serde_json::to_value(read_json::<FactorParams>(path, "params")?)?;
    }
    Ok(v)
}

fn write_artifact(out: Option<&Path>, body: &str) -> Result<()> {
    match out {
        Some(path) => std::fs::write(path, body).map_err(|e| {
            Error::Usage(format!("cannot write {}: {e}", path.display()))
        }),
        None => {
            print!("{body}");
            Ok(())
        }
    }
}

fn emit(cfg: &RunConfig, out: &Outcome) -> Result<()> {
    let json = format!("{}\n", serde_json::to_string_pretty(&out.report)?);
    if let Some(csv) = &out.csv {
        return write_artifact(cfg.out.as_deref(), csv);
    }
    if cfg.command == Command::Report {
        // the table always goes to stdout; --out receives the JSON
        print!("{}", out.text.as_deref().unwrap_or(""));
        return match &cfg.out {
            Some(path) => write_artifact(Some(path), &json),
            None => Ok(()),
        };
    }
    if let Some(text) = &out.text {
        return write_artifact(cfg.out.as_deref(), text);
    }
    write_artifact(cfg.out.as_deref(), &json)
}

fn one_line(msg: &str) -> String {
    msg.lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .collect::<Vec<_>>()
        .join(" ")
}

/// Parses `args`, runs the command and returns the process exit status.
pub fn main_with_args<I, S>(args: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    let cfg = match RunConfig::try_parse_from(args) {
        Ok(cfg) => cfg,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                return EXIT_OK;
            }
            let msg = e.to_string();
            let first = msg.lines().next().unwrap_or("invalid arguments");
            eprintln!("faridge: {}", first.trim_start_matches("error: "));
            return EXIT_USAGE;
        }
    };
    let result = run(&cfg).and_then(|out| emit(&cfg, &out).map(|_| out));
    match result {
        Ok(out) => {
            if !out.pass {
                eprintln!("faridge: {}: numerical check failed", value_name(cfg.command));
            }
            out.exit_code()
        }
        Err(e) => {
            eprintln!("faridge: {}", one_line(&e.to_string()));
            exit_code_for(&e)
        }
    }
}

fn value_name<V: ValueEnum>(v: V) -> String {
    v.to_possible_value()
        .map(|v| v.get_name().to_string())
        .unwrap_or_default()
}
