//! Command-line runner for the clutter, BPM and loopy experiments.
//!
//! Exit codes: 0 on success, 1 on a validation or input error, 2 when
//! `oracle-check` finds a disagreement.

use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use ep_core::harness::{
    oracle_check, parse_schedule, parse_seed_range, run_experiment, write_outputs, write_rows, BpmParams, ClutterParams,
    ExperimentConfig, LoopyParams, ModelConfig, OracleCheckOptions,
};

#[derive(Parser)]
#[command(name = "ep-harness", version, about = "Run expectation propagation experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Clutter problem: ADF, EP and importance sampling against the exact posterior.
    Clutter(RunArgs),
    /// Bayes point machine: ADF and EP against an importance-sampled Bayes point.
    Bpm(RunArgs),
    /// Discrete networks: BK-ADF and loopy EP against enumeration.
    Loopy(RunArgs),
    /// Analytic moment matching versus quadrature and enumeration.
    OracleCheck(CheckArgs),
}

#[derive(Args)]
struct RunArgs {
    /// JSON experiment config; desk-scale defaults when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Result CSV; sidecars are written next to it. Prints to stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Seeds as `a..b` (inclusive).
    #[arg(long)]
    seed_range: Option<String>,
    #[arg(long)]
    tolerance: Option<f64>,
    #[arg(long)]
    max_sweeps: Option<usize>,
    #[arg(long)]
    damping: Option<f64>,
    /// `sequential`, `random`, `random:<seed>` or a permutation like `2,0,1`.
    #[arg(long)]
    schedule: Option<String>,
}

#[derive(Args)]
struct CheckArgs {
    /// Seeds as `a..b`; each seed runs the full battery.
    #[arg(long)]
    seed_range: Option<String>,
    /// Required analytic/quadrature agreement.
    #[arg(long)]
    tolerance: Option<f64>,
    /// Random cases per battery.
    #[arg(long, default_value_t = 200)]
    cases: usize,
}

fn run(args: RunArgs, default: ModelConfig) -> ep_core::Result<()> {
    let mut config = match &args.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::defaults(default.clone()),
    };
    if config.model.name() != default.name() {
        return Err(ep_core::Error::Config(format!(
            "config describes a {} experiment, not {}",
            config.model.name(),
            default.name()
        )));
    }
    if let Some(r) = &args.seed_range {
        config.seeds = parse_seed_range(r)?;
    }
    if let Some(t) = args.tolerance {
        config.ep.tolerance = t;
    }
    if let Some(m) = args.max_sweeps {
        config.ep.max_sweeps = m;
    }
    if let Some(g) = args.damping {
        config.ep.damping = g;
    }
    if let Some(s) = &args.schedule {
        config.ep.schedule = parse_schedule(s)?;
    }
    if let Some(out) = args.out {
        config.output = Some(out);
    }
    let rows = run_experiment(&config)?;
    match &config.output {
        Some(out) => write_outputs(&config, &rows, out),
        None => write_rows(&rows, std::io::stdout().lock()),
    }
}

fn check(args: CheckArgs) -> ep_core::Result<bool> {
    let seeds = match &args.seed_range {
        Some(r) => parse_seed_range(r)?,
        None => vec![0],
    };
    let mut opts = OracleCheckOptions { cases: args.cases, ..Default::default() };
    if let Some(t) = args.tolerance {
        opts.tolerance = t;
    }
    let mut all = true;
    let mut out = std::io::stdout().lock();
    writeln!(out, "{:<36} {:>6} {:>6} {:>12} {:>10}  result", "check", "seed", "cases", "max error", "tolerance")?;
    for seed in seeds {
        opts.seed = seed;
        for row in oracle_check(&opts)? {
            all &= row.passed;
            writeln!(
                out,
                "{:<36} {:>6} {:>6} {:>12.3e} {:>10.1e}  {}",
                row.name,
                seed,
                row.cases,
                row.max_error,
                row.tolerance,
                if row.passed { "PASS" } else { "FAIL" }
            )?;
        }
    }
    Ok(all)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let outcome = match cli.command {
        Command::Clutter(a) => run(a, ModelConfig::Clutter(ClutterParams::default())).map(|_| true),
        Command::Bpm(a) => run(a, ModelConfig::Bpm(BpmParams::default())).map(|_| true),
        Command::Loopy(a) => run(a, ModelConfig::Loopy(LoopyParams::default())).map(|_| true),
        Command::OracleCheck(a) => check(a),
    };
    match outcome {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
