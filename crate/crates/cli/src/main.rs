mod bench;
mod chart;
mod config;
mod runner;

use anyhow::{anyhow, Context, Result};
use clap::{Args, Parser, Subcommand};
use config::{load_json, resolve, sort_keys, RunConfig};
use infproj::diagnostics::{run_suite, CheckOptions, Fault, Suite};
use infproj::trace::{timing_csv, trace_csv};
use serde_json::{json, Value};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

const EXIT_FAILED_CHECK: u8 = 1;
const EXIT_CONFIG: u8 = 2;
const EXIT_SOLVER: u8 = 3;

#[derive(Parser)]
#[command(
    name = "infproj",
    version,
    about = "Stochastic solvers for inf-projection problems"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one solver from a JSON config and write trace, timing and summary files.
    Run(RunArgs),
    /// Run several solvers on the same data and write a long CSV and an SVG chart.
    Bench(BenchArgs),
    /// Run the self-check suites; exits 0 iff every check passes.
    Check(CheckArgs),
    /// Parse a libsvm file and print dataset statistics.
    Parse(ParseArgs),
    /// Render the SVG chart for an existing bench CSV.
    Chart(ChartArgs),
}

#[derive(Args)]
struct ChartArgs {
    csv: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    log_x: bool,
}

#[derive(Args)]
struct Common {
    #[arg(long)]
    config: PathBuf,
    /// Output directory (overrides the config's `out_dir`).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Seed (overrides the config).
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    log_every: Option<usize>,
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    common: Common,
    /// Also write per-inner-iteration St-SPG records.
    #[arg(long)]
    dense_trace: bool,
}

#[derive(Args)]
struct BenchArgs {
    #[command(flatten)]
    common: Common,
    /// Run solvers concurrently; CPU times are then not comparable.
    #[arg(long)]
    parallel: bool,
    /// Logarithmic CPU-time axis.
    #[arg(long)]
    log_x: bool,
}

#[derive(Args)]
struct CheckArgs {
    #[arg(long, default_value = "all")]
    suite: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Also write the report CSV into this directory.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, hide = true)]
    inject_fault: Option<String>,
}

#[derive(Args)]
struct ParseArgs {
    path: PathBuf,
    #[arg(long)]
    dim: Option<usize>,
    /// Check that writing and re-reading the data reproduces it.
    #[arg(long)]
    roundtrip: bool,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    if let Some(n) = infproj::par::thread_cap() {
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
        {
            log::warn!("could not size the thread pool: {e}");
        }
    }
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run(a) => cmd_run(a),
        Command::Bench(a) => bench::cmd_bench(
            &a.common.config,
            a.common.out,
            a.common.seed,
            a.common.log_every,
            a.parallel,
            a.log_x,
        ),
        Command::Check(a) => cmd_check(a),
        Command::Parse(a) => cmd_parse(a),
        Command::Chart(a) => cmd_chart(a),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(EXIT_CONFIG)
        }
    }
}

pub fn config_dir(path: &Path) -> PathBuf {
    path.parent().map(Path::to_path_buf).unwrap_or_default()
}

pub fn out_dir(cli: Option<PathBuf>, from_config: Option<&Path>, base: &Path) -> Result<PathBuf> {
    let dir = match (cli, from_config) {
        (Some(d), _) => d,
        (None, Some(d)) => resolve(base, d),
        (None, None) => PathBuf::from("."),
    };
    std::fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    Ok(dir)
}

fn write(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn cmd_run(args: RunArgs) -> Result<ExitCode> {
    let wall = Instant::now();
    let mut cfg: RunConfig = load_json(&args.common.config)?;
    if let Some(s) = args.common.seed {
        cfg.seed = s;
    }
    if let Some(k) = args.common.log_every {
        cfg.log_every = k;
    }
    let base = config_dir(&args.common.config);
    let out = out_dir(args.common.out, cfg.out_dir.as_deref(), &base)?;
    let data = runner::load_data(&cfg.data, &base)?;
    let problem = runner::build_problem(&data.train, &cfg.problem)?;
    let outcome = runner::execute(
        &cfg.spec(),
        &problem,
        &data,
        cfg.seed,
        cfg.log_every,
        args.dense_trace,
    )?;
    for w in &outcome.warnings {
        eprintln!("warning: {w}");
    }

    write(&out.join(&cfg.outputs.trace), &trace_csv(&outcome.records))?;
    write(
        &out.join(&cfg.outputs.timing),
        &timing_csv(&outcome.records),
    )?;
    if args.dense_trace {
        let mut s = String::from("stage,t,dist_to_center\n");
        for r in &outcome.inner {
            let _ = writeln!(
                s,
                "{},{},{}",
                r.stage,
                r.t,
                infproj::trace::fmt_f64(r.dist_to_center)
            );
        }
        write(&out.join(&cfg.outputs.inner), &s)?;
    }

    let mut summary = json!({
        "status": outcome.status(),
        "solver": cfg.solver.name(),
        "seed": cfg.seed,
        "n_train": data.train.n(),
        "n_test": data.test.as_ref().map_or(0, |t| t.n()),
        "dim": data.train.dim(),
        "records": outcome.records.len(),
        "cpu_seconds": outcome.records.last().map_or(0.0, |r| r.cpu_seconds),
        "warnings": outcome.warnings,
        "details": Value::Object(outcome.details.clone()),
        "config": sort_keys(&config::echo(&cfg)),
    });
    if let Some(e) = &outcome.error {
        summary["error"] = json!(e.to_string());
    }
    if let Some(x) = &outcome.model {
        summary["final"] = runner::final_metrics(&problem, &data, x)?;
        summary["model"] = json!(x);
    }
    for key in ["x_tau_next", "x_tau"] {
        if let Some(v) = outcome.details.get(key) {
            let x: Vec<f64> = serde_json::from_value(v.clone())?;
            summary[format!("{key}_metrics")] = runner::final_metrics(&problem, &data, &x)?;
        }
    }
    summary["wall_seconds"] = json!(wall.elapsed().as_secs_f64());
    write(
        &out.join(&cfg.outputs.summary),
        &serde_json::to_string_pretty(&summary)?,
    )?;

    match &outcome.error {
        None => {
            if let Some(f) = summary.get("final") {
                println!(
                    "{} finished: F = {}, |grad F| = {}, train error = {}, test error = {}",
                    cfg.solver.name(),
                    f["objective_F"],
                    f["grad_norm"],
                    f["train_error"],
                    f["test_error"]
                );
            }
            Ok(ExitCode::SUCCESS)
        }
        Some(e) => {
            eprintln!(
                "error: {} {}: {e} (partial trace kept in {})",
                cfg.solver.name(),
                outcome.status(),
                out.display()
            );
            Ok(ExitCode::from(if outcome.is_config_error() {
                EXIT_CONFIG
            } else {
                EXIT_SOLVER
            }))
        }
    }
}

fn cmd_check(args: CheckArgs) -> Result<ExitCode> {
    let suite: Suite = args.suite.parse()?;
    let fault = match args.inject_fault.as_deref() {
        None => None,
        Some("wrong-sign-gradient") => Some(Fault::WrongSignGradient),
        Some(other) => return Err(anyhow!("unknown fault {other:?}")),
    };
    let opts = CheckOptions {
        seed: args.seed,
        fault,
        ..CheckOptions::default()
    };
    let report = run_suite(suite, &opts);
    print!("{}", report.to_kv());
    println!("--- csv ---");
    print!("{}", report.to_csv());
    println!("--- end ---");
    if let Some(dir) = args.out {
        std::fs::create_dir_all(&dir)?;
        write(&dir.join("check.csv"), &report.to_csv())?;
    }
    let failures: Vec<&str> = report.failures().map(|e| e.name.as_str()).collect();
    println!("checks={} failed={}", report.entries.len(), failures.len());
    if failures.is_empty() {
        println!("status=pass");
        Ok(ExitCode::SUCCESS)
    } else {
        println!("failures={}", failures.join(","));
        println!("status=fail");
        Ok(ExitCode::from(EXIT_FAILED_CHECK))
    }
}

fn cmd_parse(args: ParseArgs) -> Result<ExitCode> {
    let data = infproj::data::read_libsvm(&args.path, args.dim)
        .with_context(|| format!("parsing {}", args.path.display()))?;
    let pos = data.labels().iter().filter(|&&l| l > 0.0).count();
    let neg = data.n() - pos;
    println!("path={}", args.path.display());
    println!("n={}", data.n());
    println!("dim={}", data.dim());
    println!("nnz={}", data.nnz());
    println!(
        "density={:.6}",
        data.nnz() as f64 / (data.n() as f64 * data.dim().max(1) as f64)
    );
    println!("positive={pos}");
    println!("negative={neg}");
    println!("pos_neg_ratio={:.4}", pos as f64 / neg.max(1) as f64);
    println!("max_row_norm={:.6}", data.max_row_norm());
    if args.roundtrip {
        let again = infproj::data::parse_libsvm_str(&data.to_libsvm(), Some(data.dim()))?;
        let same = again == data;
        println!("roundtrip={}", if same { "ok" } else { "mismatch" });
        if !same {
            return Ok(ExitCode::from(EXIT_FAILED_CHECK));
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_chart(args: ChartArgs) -> Result<ExitCode> {
    let text = std::fs::read_to_string(&args.csv)
        .with_context(|| format!("reading {}", args.csv.display()))?;
    write(&args.out, &bench::chart_from_csv(&text, args.log_x)?)?;
    Ok(ExitCode::SUCCESS)
}
