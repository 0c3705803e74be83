//! Command-line front end. Exit codes: 0 solved to the requested accuracy,
//! 2 budget exhausted or solver failure, 3 configuration error.

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use crate::acgd::{run_acgd, RunOptions};
use crate::acgd_s::{run_acgd_s, SlidingParams};
use crate::domain::Domain;
use crate::error::{Error, Result};
use crate::instances::{InstanceFile, InstanceSpec, NonstrongHardParams, RandomQpParams, StrongHardParams};
use crate::linalg::{self, norm};
use crate::oracle::{CostCounters, ProblemInstance};
use crate::par::{map_batch, Execution};
use crate::search::{iteration_limit, run_search, termination_check, Method, SearchConfig};
use crate::trace::{write_trace_csv, RunTrace, TraceRow};

pub const EXIT_OK: i32 = 0;
pub const EXIT_BUDGET: i32 = 2;
pub const EXIT_CONFIG: i32 = 3;

#[derive(Parser, Debug)]
#[command(name = "acgd-kit", version, about = "Accelerated constrained gradient descent toolkit")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Write an instance file.
    Gen(GenArgs),
    /// Solve an instance file, writing trace.csv and summary.json.
    Solve(SolveArgs),
    /// Run a benchmark suite, writing per-run traces and table.csv.
    Bench(BenchArgs),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
#[value(rename_all = "snake_case")]
pub enum InstanceType {
    NonstrongHard,
    StrongHard,
    RandomQp,
}

#[derive(Args, Debug)]
pub struct GenArgs {
    #[arg(long = "type", value_enum)]
    pub kind: InstanceType,
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long)]
    pub beta: Option<f64>,
    #[arg(long)]
    pub gamma: Option<f64>,
    #[arg(long)]
    pub l: Option<f64>,
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub lbar_g: Option<f64>,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub m: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Replace the domain by the ball of this radius around the origin.
    #[arg(long)]
    pub ball_radius: Option<f64>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Algo {
    Acgd,
    AcgdS,
}

impl From<Algo> for Method {
    fn from(a: Algo) -> Self {
        match a {
            Algo::Acgd => Method::Acgd,
            Algo::AcgdS => Method::AcgdS,
        }
    }
}

/// `--L` value: a fixed constant or `search`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum LChoice {
    Fixed(f64),
    Search,
}

impl FromStr for LChoice {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        if s.eq_ignore_ascii_case("search") {
            return Ok(LChoice::Search);
        }
        s.parse::<f64>()
            .map(LChoice::Fixed)
            .map_err(|_| format!("expected a number or \"search\", got {s:?}"))
    }
}

#[derive(Args, Debug)]
pub struct SolveArgs {
    #[arg(long)]
    pub instance: PathBuf,
    #[arg(long, value_enum, default_value = "acgd")]
    pub algo: Algo,
    #[arg(long, default_value_t = 1e-3)]
    pub eps: f64,
    #[arg(long, default_value_t = 1.0)]
    pub c: f64,
    #[arg(long, default_value_t = 1.0)]
    pub r: f64,
    /// Inner budget scale for acgd-s; defaults by regime.
    #[arg(long)]
    pub delta: Option<f64>,
    #[arg(long = "L", default_value = "search")]
    pub l: LChoice,
    /// Phase count for a fixed-L run.
    #[arg(long, default_value_t = 1000)]
    pub max_phases: usize,
    /// Starting guess for the search.
    #[arg(long, default_value_t = 1.0)]
    pub l0: f64,
    #[arg(long, default_value_t = 30)]
    pub max_doublings: usize,
    /// Multiplier radius for fixed-L acgd-s; defaults to |lambda*| + r.
    #[arg(long)]
    pub r_bar: Option<f64>,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct BenchArgs {
    #[arg(long, default_value = "default")]
    pub suite: String,
    #[arg(long, default_value_t = 1e-3)]
    pub eps: f64,
    #[arg(long)]
    pub out: PathBuf,
}

fn config(msg: impl Into<String>) -> Error {
    Error::InvalidParameter(msg.into())
}

fn need<T>(v: Option<T>, flag: &str) -> Result<T> {
    v.ok_or_else(|| config(format!("--{flag} is required for this instance type")))
}

fn exit_code(e: &Error) -> i32 {
    match e {
        Error::SearchExhausted(_)
        | Error::ToleranceNotReached { .. }
        | Error::InfeasibleStep(_)
        | Error::NonFinite
        | Error::SpanViolation(_)
        | Error::UnboundedSubproblem => EXIT_BUDGET,
        _ => EXIT_CONFIG,
    }
}

/// Parses `args` (program name first) and runs the command.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => EXIT_OK,
                _ => EXIT_CONFIG,
            };
        }
    };
    let res = match &cli.command {
        Command::Gen(a) => cmd_gen(a).map(|_| EXIT_OK),
        Command::Solve(a) => cmd_solve(a).map(|s| if s.success { EXIT_OK } else { EXIT_BUDGET }),
        Command::Bench(a) => cmd_bench(a).map(|_| EXIT_OK),
    };
    match res {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

/// Writes `bytes` next to `path` and renames it into place.
fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let name = path.file_name().ok_or_else(|| config(format!("bad output path {}", path.display())))?;
    let tmp = dir.join(format!(".{}.tmp", name.to_string_lossy()));
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

fn gen_file(a: &GenArgs) -> Result<InstanceFile> {
    let spec = match a.kind {
        InstanceType::NonstrongHard => InstanceSpec::NonstrongHard(NonstrongHardParams {
            k: need(a.k, "k")?,
            beta: need(a.beta, "beta")?,
            gamma: need(a.gamma, "gamma")?,
            l: need(a.l, "l")?,
        }),
        InstanceType::StrongHard => InstanceSpec::StrongHard(StrongHardParams {
            n: need(a.n, "n")?,
            lbar_g: need(a.lbar_g, "lbar-g")?,
            l: need(a.l, "l")?,
            alpha: need(a.alpha, "alpha")?,
        }),
        InstanceType::RandomQp => InstanceSpec::RandomQp(RandomQpParams {
            n: need(a.n, "n")?,
            m: need(a.m, "m")?,
            seed: need(a.seed, "seed")?,
        }),
    };
    let inst = spec.build()?;
    let domain = match a.ball_radius {
        Some(r) => Some(Domain::ball(vec![0.0; inst.dim()], r)?),
        None => None,
    };
    let file = InstanceFile { spec, domain };
    // Build once more so a bad domain is rejected before anything is written.
    file.build()?;
    Ok(file)
}

pub fn cmd_gen(a: &GenArgs) -> Result<()> {
    let file = gen_file(a)?;
    let mut bytes = serde_json::to_vec_pretty(&file)?;
    bytes.push(b'\n');
    write_atomic(&a.out, &bytes)
}

pub fn load_instance(path: &Path) -> Result<ProblemInstance> {
    let text = fs::read_to_string(path)?;
    let file: InstanceFile = serde_json::from_str(&text)?;
    file.build()
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SolveSummary {
    pub algo: String,
    pub doublings: usize,
    pub final_guess: f64,
    pub phases: usize,
    pub oracle_calls: u64,
    pub matvecs: u64,
    pub feas_norm: f64,
    pub gap: f64,
    /// `f_star`, `lower_bound` or `none`.
    pub gap_reference: String,
    pub success: bool,
}

fn validate_solve(a: &SolveArgs) -> Result<()> {
    let pos = |name: &str, v: f64| {
        if v > 0.0 && v.is_finite() {
            Ok(())
        } else {
            Err(config(format!("--{name} must be positive, got {v}")))
        }
    };
    pos("eps", a.eps)?;
    pos("r", a.r)?;
    if !(a.c >= 1.0) {
        return Err(config(format!("--c must be >= 1, got {}", a.c)));
    }
    if let Some(d) = a.delta {
        pos("delta", d)?;
    }
    if let Some(r) = a.r_bar {
        pos("r-bar", r)?;
    }
    match a.l {
        LChoice::Fixed(l) => {
            pos("L", l)?;
            if a.max_phases == 0 {
                return Err(config("--max-phases must be positive"));
            }
        }
        LChoice::Search => pos("l0", a.l0)?,
    }
    Ok(())
}

fn r_bar_for(instance: &ProblemInstance, r: f64, given: Option<f64>) -> Result<f64> {
    if let Some(v) = given {
        return Ok(v);
    }
    match &instance.meta {
        Some(m) => Ok(norm(&m.lambda_star) + r),
        None => Err(config("--r-bar is required when the instance has no reference multiplier")),
    }
}

fn r_hat_for(instance: &ProblemInstance, x0: &[f64]) -> Result<f64> {
    if let Some(m) = &instance.meta {
        let d = linalg::dist_sq(x0, &m.x_star).sqrt();
        if d > 0.0 {
            return Ok(d);
        }
    }
    instance
        .domain
        .diameter()
        .ok_or_else(|| config("cannot pick R_hat: no reference solution and unbounded domain"))
}

fn fixed_run(instance: &ProblemInstance, a: &SolveArgs, l: f64, counters: &mut CostCounters) -> Result<RunTrace> {
    let opts = RunOptions {
        log_every: 1,
        ..RunOptions::default()
    };
    match a.algo {
        Algo::Acgd => run_acgd(instance, l, a.r, a.max_phases, counters, &opts),
        Algo::AcgdS => {
            let x0 = instance.domain.euclidean_project(&vec![0.0; instance.dim()])?;
            let p = SlidingParams {
                l,
                r_bar: r_bar_for(instance, a.r, a.r_bar)?,
                r_hat: r_hat_for(instance, &x0)?,
                delta: a.delta,
            };
            run_acgd_s(instance, &p, a.max_phases, counters, &opts)
        }
    }
}

fn write_outputs(out: &Path, rows: &[TraceRow], summary: &SolveSummary) -> Result<()> {
    fs::create_dir_all(out)?;
    let mut csv_bytes = Vec::new();
    write_trace_csv(rows, &mut csv_bytes)?;
    write_atomic(&out.join("trace.csv"), &csv_bytes)?;
    let mut json = serde_json::to_vec_pretty(summary)?;
    json.push(b'\n');
    write_atomic(&out.join("summary.json"), &json)
}

pub fn cmd_solve(a: &SolveArgs) -> Result<SolveSummary> {
    validate_solve(a)?;
    let instance = load_instance(&a.instance)?;
    let mut counters = CostCounters::new();
    let algo = match a.algo {
        Algo::Acgd => "acgd",
        Algo::AcgdS => "acgd-s",
    }
    .to_string();
    let (rows, summary) = match a.l {
        LChoice::Search => {
            let d_x = instance.domain.diameter().ok_or(Error::UnboundedDomain)?;
            let cfg = SearchConfig {
                eps: a.eps,
                c: a.c,
                r: a.r,
                d_x,
                alpha: instance.reg.alpha,
                initial_guess: a.l0,
                method: a.algo.into(),
                max_doublings: a.max_doublings,
            };
            let (report, success) = match run_search(&instance, &cfg, &mut counters) {
                Ok(r) => (r, true),
                Err(Error::SearchExhausted(r)) => (*r, false),
                Err(e) => return Err(e),
            };
            let s = report.summary();
            let rows = report.rounds.last().map(|r| r.rows.clone()).unwrap_or_default();
            (
                rows,
                SolveSummary {
                    algo,
                    doublings: s.doublings,
                    final_guess: s.final_guess,
                    phases: report.total_phases,
                    oracle_calls: s.oracle_calls,
                    matvecs: s.matvecs,
                    feas_norm: s.feas_norm,
                    gap: s.gap,
                    gap_reference: "lower_bound".into(),
                    success,
                },
            )
        }
        LChoice::Fixed(l) => {
            let trace = fixed_run(&instance, a, l, &mut counters)?;
            let s = instance.peek(&trace.x_bar)?;
            let feas_norm = linalg::pos_norm(&s.g_val);
            let (gap, reference) = match &instance.meta {
                Some(m) => (instance.objective(&s, &trace.x_bar) - m.f_star, "f_star"),
                None if instance.domain.is_bounded() => {
                    let cfg = SearchConfig {
                        eps: a.eps,
                        c: a.c,
                        r: a.r,
                        d_x: instance.domain.diameter().unwrap_or(1.0),
                        alpha: instance.reg.alpha,
                        initial_guess: l,
                        method: a.algo.into(),
                        max_doublings: 0,
                    };
                    let chk = termination_check(&trace.x_bar, &instance, &trace.dual, &cfg, &mut counters)?;
                    (chk.certificate.gap, "lower_bound")
                }
                None => (f64::INFINITY, "none"),
            };
            (
                trace.rows,
                SolveSummary {
                    algo,
                    doublings: 0,
                    final_guess: l,
                    phases: a.max_phases,
                    oracle_calls: counters.oracle_calls,
                    matvecs: counters.matvecs,
                    feas_norm,
                    gap,
                    gap_reference: reference.into(),
                    success: feas_norm <= a.eps / a.c && gap <= a.eps,
                },
            )
        }
    };
    write_outputs(&a.out, &rows, &summary)?;
    Ok(summary)
}

/// One row of the bench table.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BenchRow {
    pub instance: String,
    pub algo: String,
    pub eps: f64,
    /// Phases until `max{|obj_gap|, feas_norm}` stays at or below `eps`.
    pub phases: usize,
    pub oracle_calls: u64,
    pub matvecs: u64,
    pub reached: bool,
    pub wall_ms: u128,
}

/// The default suite: two chain sizes, two strongly convex chain sizes and
/// three random QPs.
pub fn default_suite() -> Vec<InstanceSpec> {
    vec![
        InstanceSpec::NonstrongHard(NonstrongHardParams { k: 5, beta: 1.0, gamma: 1.0, l: 2.0 }),
        InstanceSpec::NonstrongHard(NonstrongHardParams { k: 10, beta: 1.0, gamma: 1.0, l: 2.0 }),
        InstanceSpec::StrongHard(StrongHardParams { n: 50, lbar_g: 1.0, l: 1.0, alpha: 0.25 }),
        InstanceSpec::StrongHard(StrongHardParams { n: 200, lbar_g: 1.0, l: 1.0, alpha: 0.25 }),
        InstanceSpec::RandomQp(RandomQpParams { n: 5, m: 3, seed: 1 }),
        InstanceSpec::RandomQp(RandomQpParams { n: 5, m: 3, seed: 2 }),
        InstanceSpec::RandomQp(RandomQpParams { n: 5, m: 3, seed: 3 }),
    ]
}

/// Aggregate smoothness `L_f + (|lambda*| + r) Lbar_g` and `r_bar` from metadata.
pub fn reference_constants(instance: &ProblemInstance, r: f64) -> Result<(f64, f64)> {
    let m = instance
        .meta
        .as_ref()
        .ok_or_else(|| config("benchmarks need instances with reference solutions"))?;
    let r_bar = norm(&m.lambda_star) + r;
    Ok((m.l_f + r_bar * m.lbar_g, r_bar))
}

/// Index of the first logged row after which the error stays within `eps`.
pub fn settled_row(rows: &[TraceRow], eps: f64) -> Option<usize> {
    let err = |r: &TraceRow| r.obj_gap.map_or(f64::INFINITY, f64::abs).max(r.feas_norm);
    match rows.iter().rposition(|r| err(r) > eps) {
        None if !rows.is_empty() => Some(0),
        None => None,
        Some(i) if i + 1 < rows.len() => Some(i + 1),
        Some(_) => None,
    }
}

/// Runs one algorithm with its reference constants for enough phases to
/// reach `eps` and reports the settled counters. The phase count is twice
/// the theoretical requirement.
pub fn bench_one(spec: &InstanceSpec, algo: Algo, eps: f64) -> Result<(BenchRow, Vec<TraceRow>)> {
    let start = Instant::now();
    let instance = spec.build()?;
    let (l, r_bar) = reference_constants(&instance, 1.0)?;
    let x0 = instance.domain.euclidean_project(&vec![0.0; instance.dim()])?;
    let r_hat = r_hat_for(&instance, &x0)?;
    let alpha = instance.reg.alpha;
    let method: Method = algo.into();
    let cfg = SearchConfig {
        eps,
        c: 1.0,
        r: 1.0,
        d_x: r_hat,
        alpha,
        initial_guess: l,
        method,
        max_doublings: 0,
    };
    let guess = if method == Method::AcgdS { l.max(r_bar) } else { l };
    let n = iteration_limit(guess, &cfg).saturating_mul(2);
    let opts = RunOptions {
        log_every: 1,
        ..RunOptions::default()
    };
    let mut counters = CostCounters::new();
    let trace = match algo {
        Algo::Acgd => run_acgd(&instance, l, 1.0, n, &mut counters, &opts)?,
        Algo::AcgdS => {
            let p = SlidingParams { l, r_bar, r_hat, delta: None };
            run_acgd_s(&instance, &p, n, &mut counters, &opts)?
        }
    };
    let settled = settled_row(&trace.rows, eps);
    let row = match settled {
        Some(i) => &trace.rows[i],
        None => trace.rows.last().ok_or_else(|| config("empty trace"))?,
    };
    let out = BenchRow {
        instance: spec.label(),
        algo: match algo {
            Algo::Acgd => "acgd".into(),
            Algo::AcgdS => "acgd-s".into(),
        },
        eps,
        phases: row.t,
        oracle_calls: row.oracle_calls,
        matvecs: row.matvecs,
        reached: settled.is_some(),
        wall_ms: start.elapsed().as_millis(),
    };
    Ok((out, trace.rows))
}

/// Runs every (instance, algorithm) pair of the suite at `eps` and `eps / 2`.
pub fn run_suite(specs: &[InstanceSpec], eps: f64, exec: Execution) -> Vec<Result<(BenchRow, Vec<TraceRow>)>> {
    let mut jobs = Vec::new();
    for spec in specs {
        for algo in [Algo::Acgd, Algo::AcgdS] {
            for e in [eps, eps / 2.0] {
                jobs.push((*spec, algo, e));
            }
        }
    }
    map_batch(exec, &jobs, |(spec, algo, e)| bench_one(spec, *algo, *e))
}

pub fn cmd_bench(a: &BenchArgs) -> Result<Vec<BenchRow>> {
    if a.suite != "default" {
        return Err(config(format!("unknown suite {:?}", a.suite)));
    }
    if !(a.eps > 0.0 && a.eps.is_finite()) {
        return Err(config(format!("--eps must be positive, got {}", a.eps)));
    }
    let exec = Execution::from_env()?;
    fs::create_dir_all(&a.out)?;
    let results = run_suite(&default_suite(), a.eps, exec);
    let mut table = Vec::new();
    for res in results {
        let (row, rows) = res?;
        let mut bytes = Vec::new();
        write_trace_csv(&rows, &mut bytes)?;
        let name = format!("trace_{}_{}_{:e}.csv", row.instance, row.algo, row.eps);
        write_atomic(&a.out.join(name), &bytes)?;
        table.push(row);
    }
    let mut w = csv::Writer::from_writer(Vec::new());
    for row in &table {
        w.serialize(row)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
    write_atomic(&a.out.join("table.csv"), &bytes)?;
    Ok(table)
}
