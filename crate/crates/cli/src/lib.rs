//! Command-line front end for the split-tree percolation experiments.
//!
//! Settings are resolved with the precedence flags, then environment
//! (`SPLITPERC_SEED`, `SPLITPERC_THREADS`), then a `--config` file of
//! `key = value` lines whose keys are the long flag names.
//!
//! Exit codes: 0 success, 1 runtime failure (numerics or I/O), 2 usage or
//! validation error, 3 budget overrun, 4 failed `--check`.

use std::collections::HashMap;
use std::io::Write;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use splitperc::harness::{report_checks, run_experiment, ExperimentConfig, ExperimentKind, OutputFormat};
use splitperc::{Error, Executor};

pub const EXIT_OK: i32 = 0;
pub const EXIT_RUNTIME: i32 = 1;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_BUDGET: i32 = 3;
pub const EXIT_CHECK: i32 = 4;

/// Upper bound on `--threads`.
pub const MAX_THREADS: usize = 1024;

#[derive(Debug, Parser)]
#[command(name = "splitperc", version, about = "Bond percolation on random split trees and complete b-ary trees")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Root-cluster fraction and second-largest cluster across an n grid.
    Lln(Flags),
    /// Fluctuations of the root cluster against the 1-stable limit.
    Fluct(Flags),
    /// Root-cluster mean against the mean of p^depth of a uniform ball.
    Identity(Flags),
    /// Root cluster of a complete b-ary tree of height h.
    Regular(Flags),
    /// Exponential renewal function by branching random walk exploration.
    Renewal(Flags),
    /// Ball and vertex depth moments.
    Depth(Flags),
    /// Heavy right tail of the fluctuation statistic.
    #[command(name = "levy_tail", alias = "levy-tail")]
    LevyTail(Flags),
}

#[derive(Debug, Args, Default)]
struct Flags {
    /// Split family: bst, spacings:B, deterministic:B or dirichlet:B:A.
    #[arg(long)]
    family: Option<String>,
    /// Branch factor (split trees) or regular-tree branch factor.
    #[arg(long)]
    b: Option<usize>,
    /// Vertex capacity s.
    #[arg(long)]
    s: Option<usize>,
    /// Balls held by every internal vertex.
    #[arg(long)]
    s0: Option<usize>,
    /// Balls sent to each child before splitting.
    #[arg(long)]
    s1: Option<usize>,
    /// Comma-separated ball counts; `2^k` is accepted.
    #[arg(long)]
    n: Option<String>,
    /// Comma-separated regular-tree heights.
    #[arg(long)]
    h: Option<String>,
    /// Percolation constant c.
    #[arg(long)]
    c: Option<f64>,
    /// Replicas per grid point.
    #[arg(long)]
    reps: Option<u64>,
    /// Master seed (env SPLITPERC_SEED).
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads, 0 for all cores (env SPLITPERC_THREADS).
    #[arg(long)]
    threads: Option<usize>,
    /// Report path; the report goes to stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Report format: json or csv.
    #[arg(long)]
    format: Option<String>,
    /// Keep per-replica samples in the JSON report.
    #[arg(long)]
    emit_samples: bool,
    /// Flat key = value file with defaults for any of these flags.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Largest renewal threshold.
    #[arg(long)]
    z_max: Option<f64>,
    /// Renewal grid step.
    #[arg(long)]
    z_step: Option<f64>,
    /// Limit-law evaluation accuracy.
    #[arg(long)]
    tol: Option<f64>,
    /// Record wall-clock runtime in the report.
    #[arg(long)]
    timing: bool,
    /// Evaluate the experiment's built-in checks; exit 4 if any fails.
    #[arg(long)]
    check: bool,
}

/// A resolved invocation.
#[derive(Debug, Clone, PartialEq)]
pub struct Invocation {
    pub config: ExperimentConfig,
    pub out: Option<PathBuf>,
    pub format: OutputFormat,
    pub check: bool,
}

#[derive(Debug)]
enum Failure {
    Usage(String),
    Lib(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Lib(e)
    }
}

fn usage(msg: impl Into<String>) -> Failure {
    Failure::Usage(msg.into())
}

fn parse_u64_term(s: &str) -> Option<u64> {
    let s = s.trim();
    match s.split_once('^') {
        Some((base, exp)) => {
            let base: u64 = base.trim().parse().ok()?;
            let exp: u32 = exp.trim().parse().ok()?;
            base.checked_pow(exp)
        }
        None => s.parse().ok(),
    }
}

fn parse_grid<T: TryFrom<u64>>(key: &str, s: &str) -> Result<Vec<T>, Failure> {
    s.split(',')
        .map(|t| {
            parse_u64_term(t)
                .and_then(|v| T::try_from(v).ok())
                .ok_or_else(|| usage(format!("bad value `{}` in --{key}", t.trim())))
        })
        .collect()
}

fn parse_value<T: std::str::FromStr>(key: &str, s: &str) -> Result<T, Failure> {
    s.trim().parse().map_err(|_| usage(format!("bad value `{}` for {key}", s.trim())))
}

fn parse_bool(key: &str, s: &str) -> Result<bool, Failure> {
    match s.trim() {
        "1" | "true" | "yes" | "on" => Ok(true),
        "0" | "false" | "no" | "off" => Ok(false),
        other => Err(usage(format!("bad boolean `{other}` for {key}"))),
    }
}

/// Reads a flat `key = value` file; `#` starts a comment.
fn read_config_file(path: &PathBuf) -> Result<Vec<(String, String)>, Failure> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| usage(format!("cannot read config file {}: {e}", path.display())))?;
    let mut pairs = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| usage(format!("{}:{}: expected key = value", path.display(), lineno + 1)))?;
        pairs.push((k.trim().replace('_', "-"), v.trim().to_string()));
    }
    Ok(pairs)
}

/// Fills unset flags from `key = value` pairs.
fn apply_pairs(flags: &mut Flags, pairs: &[(String, String)], source: &str) -> Result<(), Failure> {
    for (k, v) in pairs {
        match k.as_str() {
            "family" => set(&mut flags.family, v.clone()),
            "b" => set(&mut flags.b, parse_value(k, v)?),
            "s" => set(&mut flags.s, parse_value(k, v)?),
            "s0" => set(&mut flags.s0, parse_value(k, v)?),
            "s1" => set(&mut flags.s1, parse_value(k, v)?),
            "n" => set(&mut flags.n, v.clone()),
            "h" => set(&mut flags.h, v.clone()),
            "c" => set(&mut flags.c, parse_value(k, v)?),
            "reps" => set(&mut flags.reps, parse_value(k, v)?),
            "seed" => set(&mut flags.seed, parse_value(k, v)?),
            "threads" => set(&mut flags.threads, parse_value(k, v)?),
            "out" => set(&mut flags.out, PathBuf::from(v)),
            "format" => set(&mut flags.format, v.clone()),
            "z-max" => set(&mut flags.z_max, parse_value(k, v)?),
            "z-step" => set(&mut flags.z_step, parse_value(k, v)?),
            "tol" => set(&mut flags.tol, parse_value(k, v)?),
            "emit-samples" => flags.emit_samples |= parse_bool(k, v)?,
            "timing" => flags.timing |= parse_bool(k, v)?,
            "check" => flags.check |= parse_bool(k, v)?,
            other => return Err(usage(format!("unknown key `{other}` in {source}"))),
        }
    }
    Ok(())
}

fn set<T>(slot: &mut Option<T>, v: T) {
    if slot.is_none() {
        *slot = Some(v);
    }
}

fn resolve(kind: ExperimentKind, mut flags: Flags, env: &HashMap<String, String>) -> Result<Invocation, Failure> {
    if let Some(v) = env.get("SPLITPERC_SEED") {
        set(&mut flags.seed, parse_value("SPLITPERC_SEED", v)?);
    }
    if let Some(v) = env.get("SPLITPERC_THREADS") {
        set(&mut flags.threads, parse_value("SPLITPERC_THREADS", v)?);
    }
    if let Some(path) = flags.config.clone() {
        let pairs = read_config_file(&path)?;
        apply_pairs(&mut flags, &pairs, &path.display().to_string())?;
    }
    let mut config = ExperimentConfig::new(kind);
    if let Some(f) = flags.family {
        config.family = f;
    }
    config.b = flags.b;
    config.s = flags.s;
    config.s0 = flags.s0;
    config.s1 = flags.s1;
    if let Some(n) = &flags.n {
        config.n_grid = parse_grid("n", n)?;
    }
    if let Some(h) = &flags.h {
        config.h_grid = parse_grid("h", h)?;
    }
    if let Some(c) = flags.c {
        config.c = c;
    }
    if let Some(r) = flags.reps {
        config.replicas = r;
    }
    if let Some(s) = flags.seed {
        config.seed = s;
    }
    config.threads = flags.threads.unwrap_or(1);
    if config.threads > MAX_THREADS {
        return Err(usage(format!("--threads {} exceeds {MAX_THREADS}", config.threads)));
    }
    if let Some(z) = flags.z_max {
        config.z_max = z;
    }
    if let Some(z) = flags.z_step {
        config.z_step = z;
    }
    if let Some(t) = flags.tol {
        config.tol = t;
    }
    config.emit_samples = flags.emit_samples;
    config.timing = flags.timing;
    let format = match flags.format {
        Some(f) => f.parse::<OutputFormat>()?,
        None => OutputFormat::Json,
    };
    config.validate()?;
    Ok(Invocation { config, out: flags.out, format, check: flags.check })
}

/// Parses `argv` (program name first) against `env` without running anything.
pub fn parse_invocation(argv: &[String], env: &HashMap<String, String>) -> Result<Invocation, String> {
    let cli = Cli::try_parse_from(argv).map_err(|e| e.to_string())?;
    let (kind, flags) = split(cli.command);
    resolve(kind, flags, env).map_err(|f| match f {
        Failure::Usage(m) => m,
        Failure::Lib(e) => e.to_string(),
    })
}

fn split(cmd: Command) -> (ExperimentKind, Flags) {
    match cmd {
        Command::Lln(f) => (ExperimentKind::Lln, f),
        Command::Fluct(f) => (ExperimentKind::Fluct, f),
        Command::Identity(f) => (ExperimentKind::Identity, f),
        Command::Regular(f) => (ExperimentKind::Regular, f),
        Command::Renewal(f) => (ExperimentKind::Renewal, f),
        Command::Depth(f) => (ExperimentKind::Depth, f),
        Command::LevyTail(f) => (ExperimentKind::LevyTail, f),
    }
}

fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Budget(_) => EXIT_BUDGET,
        Error::Params(_) | Error::Family(_) | Error::Domain(_) | Error::MethodUnavailable { .. } => EXIT_USAGE,
        Error::NoConvergence { .. } | Error::Io(_) => EXIT_RUNTIME,
    }
}

/// Runs one invocation, writing the report (or its path) to `out` and
/// diagnostics to `err`. Returns the process exit code.
pub fn parse_and_run(
    argv: &[String],
    env: &HashMap<String, String>,
    out: &mut dyn Write,
    err: &mut dyn Write,
) -> i32 {
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    let _ = write!(out, "{}", e.render());
                    EXIT_OK
                }
                _ => {
                    let _ = write!(err, "{}", e.render());
                    EXIT_USAGE
                }
            };
        }
    };
    let (kind, flags) = split(cli.command);
    let inv = match resolve(kind, flags, env) {
        Ok(inv) => inv,
        Err(Failure::Usage(m)) => {
            let _ = writeln!(err, "error: {m}");
            return EXIT_USAGE;
        }
        Err(Failure::Lib(e)) => {
            let _ = writeln!(err, "error: {e}");
            return exit_code(&e);
        }
    };
    match execute(&inv, out) {
        Ok(code) => {
            if code == EXIT_CHECK {
                let _ = writeln!(err, "error: one or more checks failed");
            }
            code
        }
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            exit_code(&e)
        }
    }
}

fn execute(inv: &Invocation, out: &mut dyn Write) -> Result<i32, Error> {
    let exec = Executor::new(inv.config.threads);
    let result = run_experiment(&inv.config, &exec)?;
    let text = result.render(inv.format)?;
    match &inv.out {
        Some(path) => {
            std::fs::write(path, text.as_bytes())?;
            writeln!(out, "{}", path.display())?;
        }
        None if text.ends_with('\n') => write!(out, "{text}")?,
        None => writeln!(out, "{text}")?,
    }
    if !inv.check {
        return Ok(EXIT_OK);
    }
    let checks = report_checks(&result.report);
    let mut all = true;
    for c in &checks {
        all &= c.passed;
        writeln!(out, "{} {}: {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail)?;
    }
    Ok(if all { EXIT_OK } else { EXIT_CHECK })
}
