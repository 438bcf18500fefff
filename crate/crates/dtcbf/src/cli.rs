//! Command-line front end.
//!
//! Exit codes: 0 success (valid, holds, found, converged), 1 I/O or schema
//! error, 2 exact counterexample (or an infeasible safety filter during a
//! rollout), 3 counterexample within tolerance or infeasible synthesis,
//! 4 budget exhausted.

use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use clap::{Args, Parser, Subcommand, ValueEnum};
use dtcbf_core::expr::{parse, ParseContext};
use dtcbf_core::global_opt::{abb_minimize, AbbConfig, GlobalStatus};
use dtcbf_core::problem::{
    closed_loop_margin, degenerate_boundary_point, rollout_filter, Candidate, Problem,
};
use dtcbf_core::synthesis::{synthesize_with, SynthesisConfig, SynthesisStatus};
use dtcbf_core::verifier::{
    check_safe_subset_with, verify_known_with, verify_unknown_with, Executor, SafeVerdict,
    Sequential, Verdict, VerifierConfig,
};
use dtcbf_core::{Env, Error, Func, VarKind, VarRef};
use serde_json::json;

use crate::builtins::resolve;
use crate::exec::Parallel;
use crate::format::{LoadError, ProblemFile};
use crate::report::{self, RunReport};

#[derive(Parser, Debug)]
#[command(
    name = "dtcbf",
    version,
    about = "Verify and synthesize discrete-time control barrier functions"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Check the barrier condition of the problem's candidate over its search box.
    Verify(VerifyArgs),
    /// Search for barrier and policy parameters.
    Synthesize(SynthArgs),
    /// Check that the candidate's zero superlevel set lies in the safe set.
    CheckSafe(CheckSafeArgs),
    /// Global minimization of one derived function with αBB.
    Minimize(MinimizeArgs),
    /// Closed-loop simulation through the minimally invasive safety filter.
    Rollout(RolloutArgs),
}

#[derive(Args, Debug, Clone)]
pub struct Common {
    /// Builtin name (poly2d, linear2d, cartpole) or path to a problem file.
    #[arg(long)]
    pub problem: String,
    #[arg(long)]
    pub budget_iters: Option<usize>,
    #[arg(long)]
    pub budget_seconds: Option<f64>,
    #[arg(long, default_value_t = 1)]
    pub threads: usize,
    /// Force sequential processing whatever `--threads` says.
    #[arg(long)]
    pub deterministic: bool,
    /// Write the JSON report here instead of standard output.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Known,
    Unknown,
}

#[derive(Args, Debug)]
pub struct VerifyArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long, value_enum, default_value = "known")]
    pub mode: Mode,
    #[arg(long, default_value_t = 1e-6)]
    pub eps_f: f64,
    #[arg(long, default_value_t = 1e-6)]
    pub eps_h: f64,
    #[arg(long, default_value_t = 1e-6)]
    pub eps_d: f64,
    /// Approve boxes whose certified bound is at least minus this.
    #[arg(long, default_value_t = 0.0)]
    pub approve_slack: f64,
    /// Write every processed subdomain as JSON.
    #[arg(long)]
    pub cells: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct SynthArgs {
    #[command(flatten)]
    pub common: Common,
    /// Inner tolerance; defaults to the problem file's value.
    #[arg(long)]
    pub eps_f: Option<f64>,
    /// Outer tolerance; defaults to the problem file's value.
    #[arg(long = "eps-F")]
    pub eps_big_f: Option<f64>,
    /// Narrowest parameter box that is still split.
    #[arg(long)]
    pub width_floor: Option<f64>,
}

#[derive(Args, Debug)]
pub struct CheckSafeArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long, default_value_t = 1e-6)]
    pub eps_f: f64,
    #[arg(long, default_value_t = 1e-6)]
    pub eps_h: f64,
    #[arg(long)]
    pub cells: Option<PathBuf>,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
pub enum Target {
    /// Closed-loop barrier margin over `{h ≥ 0}`.
    MarginKnown,
    /// Safe-set function over `{h ≥ 0}`.
    SafeSubset,
    /// The candidate itself, unconstrained.
    Barrier,
}

#[derive(Args, Debug)]
pub struct MinimizeArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long, value_enum, default_value = "margin-known")]
    pub target: Target,
    #[arg(long, default_value_t = 1e-6)]
    pub eps_c: f64,
    #[arg(long, default_value_t = 1e-12)]
    pub eps_feas: f64,
}

#[derive(Args, Debug)]
pub struct RolloutArgs {
    #[command(flatten)]
    pub common: Common,
    /// Initial state, comma separated.
    #[arg(long, allow_hyphen_values = true)]
    pub x0: String,
    #[arg(long, default_value_t = 100)]
    pub steps: usize,
    /// Nominal inputs separated by `;`; defaults to the candidate's policy.
    #[arg(long, allow_hyphen_values = true)]
    pub nominal: Option<String>,
    /// CSV destination; standard output when absent.
    #[arg(long)]
    pub csv: Option<PathBuf>,
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error(transparent)]
    Load(#[from] LoadError),
    #[error(transparent)]
    Core(#[from] Error),
    #[error("{0}")]
    Usage(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

pub struct Finished {
    pub code: u8,
    pub report: RunReport,
}

fn io_err(path: &std::path::Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |source| CliError::Io {
        path: path.display().to_string(),
        source,
    }
}

fn deadline(seconds: Option<f64>) -> impl Fn() -> bool + Sync {
    let end = seconds.map(|s| Instant::now() + Duration::from_secs_f64(s.max(0.0)));
    move || end.is_some_and(|e| Instant::now() >= e)
}

fn candidate(file: &ProblemFile) -> Result<&Candidate, CliError> {
    file.candidate.as_ref().ok_or_else(|| {
        CliError::Usage(format!(
            "problem `{}` has no [candidate] section",
            file.problem.name
        ))
    })
}

/// Runs `f` with the executor the flags ask for.
fn with_executor<T>(c: &Common, f: impl FnOnce(&dyn DynExec) -> T) -> Result<T, CliError> {
    if c.threads > 1 && !c.deterministic {
        let par = Parallel::new(c.threads).map_err(|e| CliError::Usage(e.to_string()))?;
        Ok(f(&par))
    } else {
        Ok(f(&Sequential))
    }
}

/// Object-safe view of the executors so one code path serves both.
trait DynExec {
    fn verify(
        &self,
        mode: Mode,
        p: &Problem,
        c: &Candidate,
        cfg: &VerifierConfig,
        stop: &(dyn Fn() -> bool + Sync),
    ) -> dtcbf_core::Result<dtcbf_core::verifier::VerificationOutcome>;
    fn check_safe(
        &self,
        p: &Problem,
        c: &Candidate,
        cfg: &VerifierConfig,
        stop: &(dyn Fn() -> bool + Sync),
    ) -> dtcbf_core::Result<dtcbf_core::verifier::SafeSubsetOutcome>;
}

impl<E: Executor> DynExec for E {
    fn verify(
        &self,
        mode: Mode,
        p: &Problem,
        c: &Candidate,
        cfg: &VerifierConfig,
        stop: &(dyn Fn() -> bool + Sync),
    ) -> dtcbf_core::Result<dtcbf_core::verifier::VerificationOutcome> {
        match mode {
            Mode::Known => verify_known_with(p, c, cfg, self, stop),
            Mode::Unknown => verify_unknown_with(p, c, cfg, self, stop),
        }
    }

    fn check_safe(
        &self,
        p: &Problem,
        c: &Candidate,
        cfg: &VerifierConfig,
        stop: &(dyn Fn() -> bool + Sync),
    ) -> dtcbf_core::Result<dtcbf_core::verifier::SafeSubsetOutcome> {
        check_safe_subset_with(p, c, cfg, self, stop)
    }
}

fn common_config(c: &Common) -> serde_json::Value {
    json!({
        "problem": c.problem,
        "budget_iters": c.budget_iters,
        "budget_seconds": c.budget_seconds,
        "threads": c.threads,
        "deterministic": c.deterministic || c.threads <= 1,
    })
}

/// Logs a warning when sampling finds a critical point of `h` on its zero level set.
fn warn_flat_boundary(p: &Problem, c: &Candidate) {
    match degenerate_boundary_point(p, c, 2000) {
        Ok(Some(x)) => log::warn!(
            "the gradient of h vanishes on h = 0 near {x:?}; results may not be meaningful there"
        ),
        Ok(None) => {}
        Err(e) => log::warn!("boundary regularity check skipped: {e}"),
    }
}

pub fn run_verify(a: &VerifyArgs, argv: &[String]) -> Result<Finished, CliError> {
    let start = Instant::now();
    let file = resolve(&a.common.problem)?;
    let cand = candidate(&file)?;
    let mut cfg = VerifierConfig {
        eps_f: a.eps_f,
        eps_h: a.eps_h,
        eps_d: a.eps_d,
        approve_slack: a.approve_slack,
        keep_records: a.cells.is_some(),
        ..VerifierConfig::default()
    };
    if let Some(n) = a.common.budget_iters {
        cfg.max_iters = n;
    }
    let stop = deadline(a.common.budget_seconds);
    warn_flat_boundary(&file.problem, cand);
    log::info!("verifying {} in {:?} mode", file.problem.name, a.mode);
    let out = with_executor(&a.common, |e| {
        e.verify(a.mode, &file.problem, cand, &cfg, &stop)
    })??;
    let mut artifacts = Vec::new();
    if let Some(path) = &a.cells {
        report::write_json(path, &report::cells(&out.records)).map_err(io_err(path))?;
        artifacts.push(path.display().to_string());
    }
    let code = match out.verdict {
        Verdict::Valid => 0,
        Verdict::FalsifiedExact(_) => 2,
        Verdict::FalsifiedTolerance(_) => 3,
        Verdict::Budget => 4,
    };
    let mut config = common_config(&a.common);
    config["mode"] = json!(format!("{:?}", a.mode).to_lowercase());
    config["eps_f"] = json!(a.eps_f);
    config["eps_h"] = json!(a.eps_h);
    config["eps_d"] = json!(a.eps_d);
    config["approve_slack"] = json!(a.approve_slack);
    let mut stats = report::verify_stats(&out.stats);
    stats["boxes_by_status"] = report::status_counts(&out.records);
    Ok(Finished {
        code,
        report: RunReport {
            command: argv.to_vec(),
            config,
            outcome: report::verification(&out),
            stats,
            wall_seconds: start.elapsed().as_secs_f64(),
            artifacts,
        },
    })
}

pub fn run_synthesize(a: &SynthArgs, argv: &[String]) -> Result<Finished, CliError> {
    let start = Instant::now();
    let file = resolve(&a.common.problem)?;
    let section = file.synthesis.as_ref().ok_or_else(|| {
        CliError::Usage(format!(
            "problem `{}` has no [synthesis] section",
            file.problem.name
        ))
    })?;
    let mut spec = section.spec.clone();
    if let Some(e) = a.eps_f {
        spec.eps_f = e;
    }
    if let Some(e) = a.eps_big_f {
        spec.eps_big_f = e;
    }
    let mut cfg = SynthesisConfig::default();
    if let Some(w) = a.width_floor.or(section.width_floor) {
        cfg.width_floor = w;
    }
    if let Some(n) = a.common.budget_iters {
        cfg.max_nodes = n;
    }
    if a.common.threads > 1 && !a.common.deterministic {
        log::warn!("synthesis runs sequentially; --threads is ignored");
    }
    let stop = deadline(a.common.budget_seconds);
    log::info!("synthesizing {}", file.problem.name);
    let out = synthesize_with(&spec, &cfg, &stop)?;
    let code = match out.status {
        SynthesisStatus::Found => 0,
        SynthesisStatus::Infeasible => 3,
        SynthesisStatus::Budget => 4,
    };
    let mut config = common_config(&a.common);
    config["eps_f"] = json!(spec.eps_f);
    config["eps_F"] = json!(spec.eps_big_f);
    config["width_floor"] = json!(cfg.width_floor);
    Ok(Finished {
        code,
        report: RunReport {
            command: argv.to_vec(),
            config,
            outcome: report::synthesis(&out),
            stats: report::synthesis_stats(&out),
            wall_seconds: start.elapsed().as_secs_f64(),
            artifacts: Vec::new(),
        },
    })
}

pub fn run_check_safe(a: &CheckSafeArgs, argv: &[String]) -> Result<Finished, CliError> {
    let start = Instant::now();
    let file = resolve(&a.common.problem)?;
    let cand = candidate(&file)?;
    let mut cfg = VerifierConfig {
        eps_f: a.eps_f,
        eps_h: a.eps_h,
        keep_records: a.cells.is_some(),
        ..VerifierConfig::default()
    };
    if let Some(n) = a.common.budget_iters {
        cfg.max_iters = n;
    }
    warn_flat_boundary(&file.problem, cand);
    let stop = deadline(a.common.budget_seconds);
    let out = with_executor(&a.common, |e| {
        e.check_safe(&file.problem, cand, &cfg, &stop)
    })??;
    let mut artifacts = Vec::new();
    if let Some(path) = &a.cells {
        report::write_json(path, &report::cells(&out.records)).map_err(io_err(path))?;
        artifacts.push(path.display().to_string());
    }
    let (code, label, point) = match &out.verdict {
        SafeVerdict::Holds => (0, "holds", None),
        SafeVerdict::Violated(x) => (2, "violated", Some(x.clone())),
        SafeVerdict::ViolatedTolerance(x) => (3, "violated-tolerance", Some(x.clone())),
        SafeVerdict::Budget => (4, "budget", None),
    };
    let mut config = common_config(&a.common);
    config["eps_f"] = json!(a.eps_f);
    config["eps_h"] = json!(a.eps_h);
    Ok(Finished {
        code,
        report: RunReport {
            command: argv.to_vec(),
            config,
            outcome: json!({ "verdict": label, "point": point }),
            stats: report::verify_stats(&out.stats),
            wall_seconds: start.elapsed().as_secs_f64(),
            artifacts,
        },
    })
}

pub fn run_minimize(a: &MinimizeArgs, argv: &[String]) -> Result<Finished, CliError> {
    let start = Instant::now();
    let file = resolve(&a.common.problem)?;
    let cand = candidate(&file)?;
    let p = &file.problem;
    let neg_h = p.project(&-&cand.h)?;
    let (objective, constrained) = match a.target {
        Target::MarginKnown => (closed_loop_margin(p, cand)?, true),
        Target::SafeSubset => {
            let s =
                p.s.clone()
                    .ok_or_else(|| CliError::Usage("problem has no [safe] section".into()))?;
            (s, true)
        }
        Target::Barrier => (cand.h.clone(), false),
    };
    let vars = VarRef::range(VarKind::State, p.search_dim());
    let obj = Func::new(&p.project(&objective)?, &vars, &Env::default())?;
    let con = Func::new(&neg_h, &vars, &Env::default())?;
    let mut cfg = AbbConfig {
        eps_c: a.eps_c,
        eps_feas: a.eps_feas,
        ..AbbConfig::default()
    };
    if let Some(n) = a.common.budget_iters {
        cfg.max_iters = n;
    }
    let r = abb_minimize(&obj, constrained.then_some(&con), &p.search_box, &cfg)?;
    let code = if r.status == GlobalStatus::Budget {
        4
    } else {
        0
    };
    let mut config = common_config(&a.common);
    config["target"] = json!(format!("{:?}", a.target));
    config["eps_c"] = json!(a.eps_c);
    config["eps_feas"] = json!(a.eps_feas);
    let mut outcome = report::global(&r);
    outcome["gap"] = json!(if r.gap().is_finite() {
        Some(r.gap())
    } else {
        None
    });
    Ok(Finished {
        code,
        report: RunReport {
            command: argv.to_vec(),
            config,
            outcome,
            stats: json!({ "iterations": r.iterations }),
            wall_seconds: start.elapsed().as_secs_f64(),
            artifacts: Vec::new(),
        },
    })
}

fn parse_vector(text: &str) -> Result<Vec<f64>, CliError> {
    text.split(',')
        .map(|t| {
            t.trim()
                .parse::<f64>()
                .map_err(|_| CliError::Usage(format!("bad number `{t}` in `{text}`")))
        })
        .collect()
}

pub fn run_rollout(a: &RolloutArgs, argv: &[String]) -> Result<Finished, CliError> {
    let start = Instant::now();
    let file = resolve(&a.common.problem)?;
    let cand = candidate(&file)?;
    let p = &file.problem;
    let x0 = parse_vector(&a.x0)?;
    let nominal = match &a.nominal {
        Some(text) => {
            let ctx = ParseContext::new(p.n, 0, 0, 0);
            text.split(';')
                .map(|e| parse(e, &ctx).map_err(|e| CliError::Usage(format!("nominal input: {e}"))))
                .collect::<Result<Vec<_>, _>>()?
        }
        None => cand.policy.clone().ok_or_else(|| {
            CliError::Usage("no --nominal given and the candidate has no policy".into())
        })?,
    };
    let mut cfg = AbbConfig {
        eps_c: 1e-9,
        ..AbbConfig::default()
    };
    if let Some(n) = a.common.budget_iters {
        cfg.max_iters = n;
    }
    let mut config = common_config(&a.common);
    config["x0"] = json!(x0);
    config["steps"] = json!(a.steps);
    config["nominal"] = json!(a.nominal);
    let (code, outcome) = match rollout_filter(p, cand, &nominal, &x0, a.steps, &cfg) {
        Ok(traj) => {
            match &a.csv {
                Some(path) => {
                    let f = std::fs::File::create(path).map_err(io_err(path))?;
                    report::write_trajectory(f, &traj)
                        .map_err(|e| CliError::Usage(e.to_string()))?;
                }
                None => report::write_trajectory(std::io::stdout().lock(), &traj)
                    .map_err(|e| CliError::Usage(e.to_string()))?,
            }
            let min_h = traj.steps.iter().map(|s| s.h).fold(traj.final_h, f64::min);
            (
                0,
                json!({ "status": "completed", "steps": traj.steps.len(), "min_h": min_h }),
            )
        }
        Err(Error::FilterInfeasible { step, state }) => (
            2,
            json!({ "status": "filter-infeasible", "step": step, "state": state }),
        ),
        Err(e) => return Err(e.into()),
    };
    Ok(Finished {
        code,
        report: RunReport {
            command: argv.to_vec(),
            config,
            outcome,
            stats: json!({}),
            wall_seconds: start.elapsed().as_secs_f64(),
            artifacts: a.csv.iter().map(|p| p.display().to_string()).collect(),
        },
    })
}

pub fn run(cli: &Cli, argv: &[String]) -> Result<Finished, CliError> {
    match &cli.command {
        Command::Verify(a) => run_verify(a, argv),
        Command::Synthesize(a) => run_synthesize(a, argv),
        Command::CheckSafe(a) => run_check_safe(a, argv),
        Command::Minimize(a) => run_minimize(a, argv),
        Command::Rollout(a) => run_rollout(a, argv),
    }
}

fn out_path(cli: &Cli) -> Option<&PathBuf> {
    let c = match &cli.command {
        Command::Verify(a) => &a.common,
        Command::Synthesize(a) => &a.common,
        Command::CheckSafe(a) => &a.common,
        Command::Minimize(a) => &a.common,
        Command::Rollout(a) => &a.common,
    };
    c.out.as_ref()
}

/// Entry point of the binary.
pub fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("DTCBF_LOG", "warn")).init();
    let argv: Vec<String> = std::env::args().collect();
    let cli = Cli::parse();
    let finished = match run(&cli, &argv) {
        Ok(f) => f,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(1);
        }
    };
    let rollout_to_stdout = matches!(&cli.command, Command::Rollout(a) if a.csv.is_none());
    match out_path(&cli) {
        Some(path) => {
            if let Err(e) = report::write_json(path, &finished.report) {
                eprintln!("error: {}: {e}", path.display());
                return ExitCode::from(1);
            }
            let _ = writeln!(std::io::stdout(), "{}", summary(&finished));
        }
        // the CSV already occupies standard output
        None if rollout_to_stdout => eprintln!("{}", summary(&finished)),
        None => match serde_json::to_string_pretty(&finished.report) {
            // a closed pipe downstream is not an error of the run
            Ok(s) => {
                let _ = writeln!(std::io::stdout(), "{s}");
            }
            Err(e) => {
                eprintln!("error: {e}");
                return ExitCode::from(1);
            }
        },
    }
    ExitCode::from(finished.code)
}

fn summary(f: &Finished) -> String {
    let o = &f.report.outcome;
    let what = ["verdict", "status"]
        .iter()
        .find_map(|k| o.get(*k))
        .cloned()
        .unwrap_or_default();
    format!(
        "{} ({:.3} s)",
        what.as_str().unwrap_or("done"),
        f.report.wall_seconds
    )
}
