use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use lrrt::check::run_checks;
use lrrt::harness::{run_study, write_outputs, ExperimentConfig, ResultRow, StudyKind};
use lrrt::sampling::Executor;

/// Low-rank Monte Carlo studies for slab radiative transfer.
#[derive(Parser, Debug)]
#[command(name = "lrrt", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Full-rank Monte Carlo reference solution.
    Reference(StudyArgs),
    /// Bias and MC error of the low-rank MC estimator over grids, ranks and N.
    McStudy(StudyArgs),
    /// Control-variate pipeline against plain fine-rank MC.
    CvStudy(StudyArgs),
    /// Optimal control-variate weights from pilot pairs.
    AlphaTable(StudyArgs),
    /// Fast invariant checks.
    Check,
}

#[derive(Args, Debug)]
struct StudyArgs {
    /// TOML study description.
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads; also read from LRRT_WORKERS.
    #[arg(long)]
    workers: Option<usize>,
    /// Results CSV; sidecar files are written next to it.
    #[arg(long)]
    output: Option<PathBuf>,
}

const USAGE: u8 = 1;
const RUNTIME: u8 = 2;

fn load_config(kind: StudyKind, args: &StudyArgs) -> Result<(ExperimentConfig, usize), String> {
    let mut cfg = ExperimentConfig::load(&args.config).map_err(|e| e.to_string())?;
    if cfg.study != kind {
        eprintln!("note: config declares study `{}`, running `{kind}`", cfg.study);
        cfg.study = kind;
    }
    if let Some(seed) = args.seed {
        cfg.master_seed = seed;
    }
    if let Some(out) = &args.output {
        cfg.output = out.clone();
    }
    let env_workers = match std::env::var("LRRT_WORKERS") {
        Ok(v) => Some(
            v.trim()
                .parse::<usize>()
                .map_err(|_| format!("LRRT_WORKERS must be a positive integer, got `{v}`"))?,
        ),
        Err(_) => None,
    };
    if let Some(w) = args.workers.or(env_workers) {
        cfg.workers = Some(w);
    }
    cfg.validate().map_err(|e| e.to_string())?;
    let workers = cfg
        .workers
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
    Ok((cfg, workers))
}

fn log_row(row: &ResultRow) {
    let opt = |v: Option<usize>| v.map_or_else(|| "-".to_string(), |v| v.to_string());
    let f = |v: Option<f64>| v.map_or_else(|| "-".to_string(), |v| format!("{v:.4e}"));
    match &row.error {
        Some(msg) => eprintln!("{} m={} r={} s={} N={}: {msg}", row.study, row.m, opt(row.r), opt(row.s), opt(row.n_samples)),
        None => eprintln!(
            "{} m={} r={} s={} N={} bias={} mc_error={} alpha={} t={}s",
            row.study,
            row.m,
            opt(row.r),
            opt(row.s),
            opt(row.n_samples),
            f(row.bias),
            f(row.mc_error),
            f(row.alpha),
            row.wall_time_s.map_or_else(|| "-".to_string(), |t| format!("{t:.3}")),
        ),
    }
}

fn study(kind: StudyKind, args: &StudyArgs) -> ExitCode {
    let (cfg, workers) = match load_config(kind, args) {
        Ok(c) => c,
        Err(msg) => {
            eprintln!("error: {msg}");
            return ExitCode::from(USAGE);
        }
    };
    let exec = match Executor::new(workers) {
        Ok(e) => e,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(RUNTIME);
        }
    };
    let result = run_study(&cfg, &exec, &mut log_row).and_then(|out| {
        write_outputs(&cfg, &out)?;
        Ok(out)
    });
    match result {
        Ok(out) => {
            let failed = out.rows.iter().filter(|r| r.is_error()).count();
            if failed > 0 {
                eprintln!("{failed} of {} cells failed", out.rows.len());
            }
            println!("{}", cfg.output.display());
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(RUNTIME)
        }
    }
}

fn check() -> ExitCode {
    let mut ok = true;
    for c in run_checks() {
        println!("{} {}: {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail);
        ok &= c.passed;
    }
    if ok {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(RUNTIME)
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { USAGE } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match &cli.command {
        Command::Reference(a) => study(StudyKind::Reference, a),
        Command::McStudy(a) => study(StudyKind::McStudy, a),
        Command::CvStudy(a) => study(StudyKind::CvStudy, a),
        Command::AlphaTable(a) => study(StudyKind::AlphaTable, a),
        Command::Check => check(),
    }
}
