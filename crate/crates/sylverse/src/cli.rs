//! Command-line front end.
//!
//! Reports are written as JSON or CSV to `--out` (standard output by
//! default); diagnostics go to standard error. The process exit code is
//! 0 on success, 2 for invalid input, 3 when an accuracy target is missed
//! and 4 when a certificate or the lower-bound gap check fails.

use std::f64::consts::PI;
use std::fs::File;
use std::io::{self, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::{json, Value};

use crate::costmodel::{
    comparison_table, evaluate_costs, evaluate_costs_timedep, lower_bound_ratio_table, verify_lower_bound_gap,
    write_table_csv, CostReport, Regime, MODEL_LABEL,
};
use crate::error::{Error, Result};
use crate::fermion::{chain_model, relax, to_ode_problem, trajectory_rows, write_trajectory_csv, Dissipation};
use crate::histsolve::{build_system, certify_condition, default_order, default_steps};
use crate::krylov::{run_benchmark, BenchConfig, LatticeDim};
use crate::lchsmodel::compute_l_functionals;
use crate::oracle::{solve_ode, solve_quadrature};
use crate::overlap::{error_budget, estimate_entry, Route};
use crate::problem::{
    load_problem, make_random_instance, AnyProblem, LogNormSign, MatrixOdeProblem, Side, TimeDepProblem,
};
use crate::timedep::{self, certify_condition_timedep, solve_timedep_entry};

/// Environment variable capping the worker pool size.
pub const THREADS_ENV: &str = "SYLVERSE_THREADS";

pub const EXIT_OK: u8 = 0;
pub const EXIT_VALIDATION: u8 = 2;
pub const EXIT_ACCURACY: u8 = 3;
pub const EXIT_CHECK_FAILED: u8 = 4;

#[derive(Debug, Parser)]
#[command(name = "sylverse", version, about = "Entry estimation laboratory for dX/dt = A^H X + X B + C")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Reference solution and history-state entry estimate with its error budget.
    Solve(RunConfig),
    /// Condition-number certificates of both block systems.
    Certify(RunConfig),
    /// Query and gate counts of both routes.
    Cost(RunConfig),
    /// Relaxation of a dissipative fermion chain and the entry cross-check.
    Fermion(RunConfig),
    /// Projected and restarted Krylov baselines on a lattice.
    Bench(RunConfig),
    /// Separating-gap checks on the lower-bound family.
    Lowerbound(RunConfig),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Json,
    Csv,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum RouteArg {
    Ls,
    Lchs,
}

impl From<RouteArg> for Route {
    fn from(r: RouteArg) -> Self {
        match r {
            RouteArg::Ls => Route::LinearSystems,
            RouteArg::Lchs => Route::Lchs,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum RegimeArg {
    Static,
    Timedep,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum LatticeArg {
    #[value(name = "1d")]
    One,
    #[value(name = "2d")]
    Two,
    #[value(name = "3d")]
    Three,
}

impl From<LatticeArg> for LatticeDim {
    fn from(l: LatticeArg) -> Self {
        match l {
            LatticeArg::One => LatticeDim::One,
            LatticeArg::Two => LatticeDim::Two,
            LatticeArg::Three => LatticeDim::Three,
        }
    }
}

/// Options shared by every command.
#[derive(Debug, Clone, Args)]
pub struct RunConfig {
    /// Problem file; a random instance from `--seed` is used when absent.
    #[arg(long)]
    pub problem: Option<PathBuf>,
    /// Report destination, `-` for standard output.
    #[arg(long, default_value = "-")]
    pub out: String,
    #[arg(long, value_enum)]
    pub format: Option<Format>,
    #[arg(long = "M")]
    pub m: Option<usize>,
    #[arg(long = "R")]
    pub r: Option<usize>,
    #[arg(long = "K")]
    pub k: Option<usize>,
    #[arg(long, value_enum, default_value = "lchs")]
    pub route: RouteArg,
    #[arg(long, value_enum, default_value = "static")]
    pub regime: RegimeArg,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Target error; defaults to the instance tolerance.
    #[arg(long)]
    pub tol: Option<f64>,
    #[arg(long, value_enum, default_value = "1d")]
    pub lattice: LatticeArg,
    /// Dimension of generated instances, lattice sites or fermion modes.
    #[arg(long)]
    pub n: Option<usize>,
    /// Krylov dimension; the restarted variant uses half of it.
    #[arg(long = "m", default_value_t = 24)]
    pub m_krylov: usize,
    #[arg(long = "restart-r", default_value_t = 0.25)]
    pub restart_r: f64,
    /// Evolution time for generated workloads.
    #[arg(long)]
    pub time: Option<f64>,
    /// Dissipation rate of the fermion chain.
    #[arg(long, default_value_t = 0.5)]
    pub gamma: f64,
    /// Inverse temperature of the fermion chain.
    #[arg(long, default_value_t = 1.0)]
    pub beta: f64,
}

/// A finished command: the report and whether its checks passed.
struct Outcome {
    body: String,
    code: u8,
}

fn exit_code(err: &Error) -> u8 {
    match err {
        Error::Accuracy { .. } | Error::Stiffness { .. } | Error::Singular { .. } => EXIT_ACCURACY,
        _ => EXIT_VALIDATION,
    }
}

fn configure_threads() -> Result<()> {
    let Ok(raw) = std::env::var(THREADS_ENV) else {
        return Ok(());
    };
    let threads: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|&t| t > 0)
        .ok_or_else(|| Error::validation(THREADS_ENV, format!("expected a positive integer, got {raw:?}")))?;
    // A pool configured earlier in the same process is kept.
    let _ = rayon::ThreadPoolBuilder::new().num_threads(threads).build_global();
    Ok(())
}

impl RunConfig {
    fn validate(&self) -> Result<()> {
        for (field, v) in [("M", self.m), ("R", self.r), ("K", self.k)] {
            if v == Some(0) {
                return Err(Error::validation(field, "must be at least 1"));
            }
        }
        if let Some(k) = self.k {
            if k > crate::histsolve::MAX_ORDER {
                return Err(Error::validation("K", format!("must not exceed {}", crate::histsolve::MAX_ORDER)));
            }
        }
        if let Some(tol) = self.tol {
            if !(tol > 0.0 && tol < 1.0) {
                return Err(Error::validation("tol", format!("must lie in (0, 1), got {tol}")));
            }
        }
        if let Some(t) = self.time {
            if !(t > 0.0 && t.is_finite()) {
                return Err(Error::validation("time", format!("must be positive, got {t}")));
            }
        }
        if !(self.restart_r > 0.0 && self.restart_r.is_finite()) {
            return Err(Error::validation("restart-r", "must be positive"));
        }
        if self.n == Some(0) || self.m_krylov == 0 {
            return Err(Error::validation("n", "sizes must be positive"));
        }
        Ok(())
    }

    fn problem(&self) -> Result<AnyProblem> {
        match &self.problem {
            Some(path) => load_problem(path),
            None => {
                let mut p = make_random_instance(self.n.unwrap_or(4), self.seed, LogNormSign::Zero)?;
                if let Some(t) = self.time {
                    p = p.with_time(t);
                }
                Ok(AnyProblem::Static(p))
            }
        }
    }

    fn steps(&self, defaults: (usize, usize)) -> (usize, usize) {
        (self.m.unwrap_or(defaults.0), self.r.unwrap_or(defaults.1))
    }
}

fn to_json(value: &Value) -> Result<String> {
    Ok(serde_json::to_string_pretty(value)? + "\n")
}

fn passed(ok: bool) -> u8 {
    if ok {
        EXIT_OK
    } else {
        EXIT_CHECK_FAILED
    }
}

fn cmd_solve(cfg: &RunConfig) -> Result<Outcome> {
    match cfg.problem()? {
        AnyProblem::Static(p) => solve_static(cfg, &p),
        AnyProblem::TimeDep(p) => solve_timedep(cfg, &p),
    }
}

fn solve_static(cfg: &RunConfig, p: &MatrixOdeProblem) -> Result<Outcome> {
    let tol = cfg.tol.unwrap_or(p.eps);
    let (m, r) = cfg.steps(default_steps(p));
    let k = cfg.k.unwrap_or_else(|| default_order(p.bounds.c, p.t / m as f64, tol, m, r));
    let reference = solve_quadrature(p, (tol * 1e-3).max(1e-14))?;
    let estimate = estimate_entry(p, m, r, k, cfg.route.into())?;
    let functionals = compute_l_functionals(p, 1e-8)?;
    let budget = error_budget(p, m, r, &functionals);
    let achieved = (estimate.entry - reference.entry).norm();
    let body = to_json(&json!({
        "command": "solve",
        "kind": "static",
        "tol": tol,
        "reference": { "t": reference.t, "entry": reference.entry, "method": reference.method },
        "estimate": estimate,
        "predictedError": estimate.predicted_error(),
        "budget": budget,
        "functionals": functionals,
        "achievedError": achieved,
        "pass": achieved <= tol,
    }))?;
    Ok(Outcome { body, code: if achieved <= tol { EXIT_OK } else { EXIT_ACCURACY } })
}

fn solve_timedep(cfg: &RunConfig, p: &TimeDepProblem) -> Result<Outcome> {
    let tol = cfg.tol.unwrap_or(p.eps);
    let (m, r) = cfg.steps(timedep::default_steps(p));
    let k = cfg.k.unwrap_or(timedep::DEFAULT_ORDER);
    let mut q = p.clone();
    q.eps = tol;
    let reference = solve_ode(&q, (tol * 1e-3).max(1e-12))?;
    let estimate = solve_timedep_entry(&q, m, r, k)?;
    let achieved = (estimate.entry - reference.entry).norm();
    let body = to_json(&json!({
        "command": "solve",
        "kind": "timedep",
        "tol": tol,
        "reference": { "t": reference.t, "entry": reference.entry, "method": reference.method },
        "estimate": estimate,
        "achievedError": achieved,
        "pass": achieved <= tol,
    }))?;
    Ok(Outcome { body, code: if achieved <= tol { EXIT_OK } else { EXIT_ACCURACY } })
}

fn cmd_certify(cfg: &RunConfig) -> Result<Outcome> {
    let certificates = match cfg.problem()? {
        AnyProblem::Static(p) => {
            let (m, r) = cfg.steps(default_steps(&p));
            let k = cfg.k.unwrap_or_else(|| default_order(p.bounds.c, p.t / m as f64, p.eps, m, r));
            [Side::A, Side::B]
                .into_iter()
                .map(|side| certify_condition(&build_system(&p, side, m, r, k)?, &p, side))
                .collect::<Result<Vec<_>>>()?
        }
        AnyProblem::TimeDep(p) => {
            let (m, r) = cfg.steps(timedep::default_steps(&p));
            let k = cfg.k.unwrap_or(timedep::DEFAULT_ORDER);
            [Side::A, Side::B]
                .into_iter()
                .map(|side| certify_condition_timedep(&p, side, m, r, k))
                .collect::<Result<Vec<_>>>()?
        }
    };
    let ok = certificates.iter().all(|c| c.pass);
    let body = to_json(&json!({ "command": "certify", "certificates": certificates, "pass": ok }))?;
    Ok(Outcome { body, code: passed(ok) })
}

fn cmd_cost(cfg: &RunConfig) -> Result<Outcome> {
    let reports: Vec<CostReport> = match cfg.problem()? {
        AnyProblem::Static(p) => {
            let regime = match cfg.regime {
                RegimeArg::Static => Regime::Static,
                RegimeArg::Timedep => Regime::Timedep,
            };
            [Route::LinearSystems, Route::Lchs]
                .into_iter()
                .map(|route| evaluate_costs(&p, route, regime))
                .collect::<Result<_>>()?
        }
        AnyProblem::TimeDep(p) => {
            [Route::LinearSystems, Route::Lchs].into_iter().map(|route| evaluate_costs_timedep(&p, route)).collect()
        }
    };
    let table = comparison_table(&reports[0], &reports[1]);
    let body = match cfg.format.unwrap_or(Format::Json) {
        Format::Csv => {
            let mut buf = Vec::new();
            write_table_csv(&table, &mut buf)?;
            String::from_utf8(buf).expect("csv output is UTF-8")
        }
        Format::Json => to_json(&json!({
            "command": "cost",
            "label": MODEL_LABEL,
            "reports": reports,
            "table": table,
        }))?,
    };
    Ok(Outcome { body, code: EXIT_OK })
}

fn cmd_fermion(cfg: &RunConfig) -> Result<Outcome> {
    let model = chain_model(cfg.n.unwrap_or(4), cfg.gamma, cfg.beta, Dissipation::Uniform)?;
    let gamma = model.gamma_scale();
    if gamma <= 0.0 {
        return Err(Error::validation("gamma", "must be positive for the relaxation run"));
    }
    let horizon = cfg.time.unwrap_or(8.0 / gamma);
    let times: Vec<f64> = (0..=16).map(|i| horizon * i as f64 / 16.0).collect();
    let tol = cfg.tol.unwrap_or(1e-4);
    let samples = relax(&model, &times, 1e-9)?;
    let rows = trajectory_rows(&model, &samples);
    let p = to_ode_problem(&model, horizon, tol)?;
    let (m, r) = cfg.steps(default_steps(&p));
    let k = cfg.k.unwrap_or_else(|| default_order(p.bounds.c, horizon / m as f64, tol, m, r));
    let estimate = estimate_entry(&p, m, r, k, cfg.route.into())?;
    let final_entry = samples.last().expect("nonempty time grid").entry;
    let achieved = (estimate.entry - final_entry).norm();
    let code = if achieved <= tol { EXIT_OK } else { EXIT_ACCURACY };
    let body = match cfg.format.unwrap_or(Format::Json) {
        Format::Csv => {
            let mut buf = Vec::new();
            write_trajectory_csv(&rows, &mut buf)?;
            String::from_utf8(buf).expect("csv output is UTF-8")
        }
        Format::Json => to_json(&json!({
            "command": "fermion",
            "modes": model.ns,
            "gamma": gamma,
            "beta": model.beta,
            "trajectory": rows,
            "estimate": estimate,
            "trajectoryEntry": final_entry,
            "achievedError": achieved,
            "tol": tol,
            "pass": achieved <= tol,
        }))?,
    };
    Ok(Outcome { body, code })
}

fn cmd_bench(cfg: &RunConfig) -> Result<Outcome> {
    let bench = BenchConfig {
        lattice: cfg.lattice.into(),
        n: cfg.n.unwrap_or(128),
        m: cfg.m_krylov,
        m_prime: (cfg.m_krylov / 2).max(1),
        restart_r: cfg.restart_r,
        t: cfg.time.unwrap_or(2.0),
    };
    let rows = run_benchmark(&bench)?;
    let body = match cfg.format.unwrap_or(Format::Csv) {
        Format::Csv => {
            let mut w = csv::Writer::from_writer(Vec::new());
            for row in &rows {
                w.serialize(row)?;
            }
            String::from_utf8(w.into_inner().map_err(|e| Error::Io(e.into_error()))?).expect("csv output is UTF-8")
        }
        Format::Json => to_json(&json!({ "command": "bench", "rows": rows }))?,
    };
    Ok(Outcome { body, code: EXIT_OK })
}

fn cmd_lowerbound(cfg: &RunConfig) -> Result<Outcome> {
    let t_grid = match cfg.time {
        Some(t) => vec![t],
        None => vec![6.0, 12.0, 24.0],
    };
    let deltas = [PI / 16.0, PI / 32.0, PI / 64.0];
    let rows = verify_lower_bound_gap(&t_grid, &deltas)?;
    let ok = rows.iter().all(|r| r.pass());
    let ratios = lower_bound_ratio_table(cfg.n.unwrap_or(3), PI / 32.0, &[6.0, 60.0, 600.0])?;
    let body = match cfg.format.unwrap_or(Format::Json) {
        Format::Csv => {
            let mut w = csv::Writer::from_writer(Vec::new());
            for row in &rows {
                w.serialize(row)?;
            }
            String::from_utf8(w.into_inner().map_err(|e| Error::Io(e.into_error()))?).expect("csv output is UTF-8")
        }
        Format::Json => to_json(&json!({ "command": "lowerbound", "gap": rows, "ratios": ratios, "pass": ok }))?,
    };
    Ok(Outcome { body, code: passed(ok) })
}

fn write_report(out: &str, body: &str) -> Result<()> {
    if out == "-" {
        let mut stdout = io::stdout().lock();
        stdout.write_all(body.as_bytes())?;
        stdout.flush()?;
    } else {
        File::create(out)?.write_all(body.as_bytes())?;
    }
    Ok(())
}

fn dispatch(command: &Command) -> Result<u8> {
    let cfg = match command {
        Command::Solve(c)
        | Command::Certify(c)
        | Command::Cost(c)
        | Command::Fermion(c)
        | Command::Bench(c)
        | Command::Lowerbound(c) => c,
    };
    cfg.validate()?;
    configure_threads()?;
    let outcome = match command {
        Command::Solve(c) => cmd_solve(c)?,
        Command::Certify(c) => cmd_certify(c)?,
        Command::Cost(c) => cmd_cost(c)?,
        Command::Fermion(c) => cmd_fermion(c)?,
        Command::Bench(c) => cmd_bench(c)?,
        Command::Lowerbound(c) => cmd_lowerbound(c)?,
    };
    write_report(&cfg.out, &outcome.body)?;
    Ok(outcome.code)
}

/// Parse `args` and run the selected command, returning the exit code.
pub fn run<I, T>(args: I) -> u8
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_VALIDATION } else { EXIT_OK };
        }
    };
    match dispatch(&cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

/// Entry point of the binary.
pub fn main() -> ExitCode {
    ExitCode::from(run(std::env::args_os()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_documented_flags() {
        let cli = Cli::try_parse_from([
            "sylverse",
            "solve",
            "--problem",
            "p.json",
            "--M",
            "4",
            "--R",
            "2",
            "--K",
            "9",
            "--route",
            "ls",
            "--tol",
            "1e-6",
            "--seed",
            "3",
            "--format",
            "csv",
        ])
        .unwrap();
        let Command::Solve(cfg) = cli.command else { panic!("wrong command") };
        assert_eq!((cfg.m, cfg.r, cfg.k), (Some(4), Some(2), Some(9)));
        assert_eq!(cfg.route, RouteArg::Ls);
        assert_eq!(cfg.format, Some(Format::Csv));
        let bench =
            Cli::try_parse_from(["sylverse", "bench", "--lattice", "2d", "--n", "64", "--restart-r", "0.5"]).unwrap();
        let Command::Bench(cfg) = bench.command else { panic!("wrong command") };
        assert_eq!(cfg.lattice, LatticeArg::Two);
        assert_eq!(cfg.restart_r, 0.5);
    }

    #[test]
    fn invalid_overrides_map_to_validation_code() {
        assert_eq!(run(["sylverse", "solve", "--M", "0", "--out", "/dev/null"]), EXIT_VALIDATION);
        assert_eq!(run(["sylverse", "solve", "--tol", "2", "--out", "/dev/null"]), EXIT_VALIDATION);
        assert_eq!(run(["sylverse", "bogus"]), EXIT_VALIDATION);
        assert_eq!(run(["sylverse", "bench", "--lattice", "2d", "--n", "10", "--out", "/dev/null"]), EXIT_VALIDATION);
    }

    #[test]
    fn error_classes_map_to_exit_codes() {
        assert_eq!(exit_code(&Error::Accuracy { estimate: 1.0 }), EXIT_ACCURACY);
        assert_eq!(exit_code(&Error::Stiffness { t: 1.0 }), EXIT_ACCURACY);
        assert_eq!(exit_code(&Error::Domain("x".into())), EXIT_VALIDATION);
        assert_eq!(exit_code(&Error::Precondition("x".into())), EXIT_VALIDATION);
    }
}
