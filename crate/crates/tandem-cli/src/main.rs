//! `tandem` command-line interface: run sessions over a benchmark, recompute
//! reports from stored verdicts, and replay traces.
//!
//! Configuration precedence is flags > config file > environment > defaults.
//! The API credential is always read from `TANDEM_API_KEY`.

use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Duration;

use clap::{Args, Parser, Subcommand};
use serde::Deserialize;

use tandem::eval::ReportFormat;
use tandem::problem::PublicTestPolicy;
use tandem::runner::{eval_verdicts, replay_trace, run_benchmark, BackendChoice, RunOptions};
use tandem::session::SessionConfig;

const EXIT_INFRA: u8 = 1;
const EXIT_CONFIG: u8 = 2;

#[derive(Parser)]
#[command(
    name = "tandem",
    version,
    about = "Two-agent plan-and-repair code generation harness"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run sessions over a benchmark and write traces, verdicts, and reports
    Run(Box<RunArgs>),
    /// Recompute a report from a stored verdicts.jsonl
    Eval {
        /// Path to verdicts.jsonl
        #[arg(long)]
        verdicts: PathBuf,
        /// Output format: text or json
        #[arg(long, default_value = "text")]
        format: String,
    },
    /// Print a human-readable narrative of a stored trace
    Replay {
        /// Path to a trace .jsonl file
        trace: PathBuf,
    },
}

#[derive(Args, Debug, Default)]
struct RunArgs {
    /// JSONL benchmark file
    #[arg(long)]
    benchmark: Option<PathBuf>,
    /// TOML config file (any flag can live here instead)
    #[arg(long)]
    config: Option<PathBuf>,
    /// Backend kind: scripted or live
    #[arg(long)]
    backend: Option<String>,
    /// Fixture file for the scripted backend
    #[arg(long)]
    fixture: Option<PathBuf>,
    /// Template directory overriding the built-in prompts
    #[arg(long)]
    templates: Option<PathBuf>,
    /// Language profile registry (JSON)
    #[arg(long)]
    profiles: Option<PathBuf>,
    /// Run directory for traces, verdicts, and reports
    #[arg(long)]
    out: Option<PathBuf>,
    /// Trace directory (default: <out>/traces)
    #[arg(long)]
    trace_dir: Option<PathBuf>,
    /// Seed for all randomness (clustering)
    #[arg(long)]
    seed: Option<u64>,
    /// Maximum iterations per session (r)
    #[arg(long)]
    max_iters: Option<usize>,
    /// Plans to sample per session (n)
    #[arg(long)]
    plans: Option<usize>,
    /// Cluster count (k)
    #[arg(long)]
    clusters: Option<usize>,
    /// Plans requested per sampling batch
    #[arg(long)]
    batch_size: Option<usize>,
    /// Temperature for plan sampling
    #[arg(long)]
    plan_temperature: Option<f64>,
    /// Per-case time limit in seconds (overrides problem limits)
    #[arg(long)]
    time_limit: Option<f64>,
    /// Concurrent sessions
    #[arg(long)]
    parallelism: Option<usize>,
    /// Public-test derivation: explicit, first_private, or first_n:<n>
    #[arg(long)]
    public_test_policy: Option<String>,
    /// Chat endpoint base URL (live backend)
    #[arg(long)]
    endpoint: Option<String>,
    /// Chat model name (live backend)
    #[arg(long)]
    model: Option<String>,
    /// Embedding model name (live backend)
    #[arg(long)]
    embedding_model: Option<String>,
    /// Acknowledge that model-generated code will be executed
    #[arg(long)]
    allow_exec: bool,
}

/// config-file counterpart of [`RunArgs`]; unknown keys are rejected.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileConfig {
    benchmark: Option<PathBuf>,
    backend: Option<String>,
    fixture: Option<PathBuf>,
    templates: Option<PathBuf>,
    profiles: Option<PathBuf>,
    out: Option<PathBuf>,
    trace_dir: Option<PathBuf>,
    seed: Option<u64>,
    max_iters: Option<usize>,
    plans: Option<usize>,
    clusters: Option<usize>,
    batch_size: Option<usize>,
    plan_temperature: Option<f64>,
    time_limit: Option<f64>,
    parallelism: Option<usize>,
    public_test_policy: Option<String>,
    endpoint: Option<String>,
    model: Option<String>,
    embedding_model: Option<String>,
    allow_exec: Option<bool>,
}

fn env_string(key: &str) -> Option<String> {
    std::env::var(key).ok().filter(|v| !v.is_empty())
}

fn resolve_options(args: RunArgs) -> Result<RunOptions, String> {
    let file: FileConfig = match &args.config {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| format!("cannot read config {}: {e}", path.display()))?;
            toml::from_str(&text).map_err(|e| format!("bad config {}: {e}", path.display()))?
        }
        None => FileConfig::default(),
    };

    let benchmark_path = args
        .benchmark
        .or(file.benchmark)
        .ok_or("missing --benchmark")?;

    let defaults = SessionConfig::default();
    let session = SessionConfig {
        max_iterations: args
            .max_iters
            .or(file.max_iters)
            .unwrap_or(defaults.max_iterations),
        plans_to_sample: args
            .plans
            .or(file.plans)
            .unwrap_or(defaults.plans_to_sample),
        clusters: args.clusters.or(file.clusters).unwrap_or(defaults.clusters),
        batch_size: args
            .batch_size
            .or(file.batch_size)
            .unwrap_or(defaults.batch_size),
        plan_temperature: args
            .plan_temperature
            .or(file.plan_temperature)
            .unwrap_or(defaults.plan_temperature),
        seed: args.seed.or(file.seed).unwrap_or(defaults.seed),
        time_limit: args
            .time_limit
            .or(file.time_limit)
            .map(Duration::from_secs_f64),
    };

    let backend_kind = args
        .backend
        .or(file.backend)
        .or_else(|| env_string("TANDEM_BACKEND"))
        .unwrap_or_else(|| "scripted".to_string());
    let backend = match backend_kind.as_str() {
        "scripted" => {
            let fixture = args
                .fixture
                .or(file.fixture)
                .ok_or("scripted backend requires --fixture")?;
            BackendChoice::Scripted { fixture }
        }
        "live" => BackendChoice::Live {
            endpoint: args
                .endpoint
                .or(file.endpoint)
                .or_else(|| env_string("TANDEM_ENDPOINT"))
                .ok_or("live backend requires --endpoint (or TANDEM_ENDPOINT)")?,
            model: args
                .model
                .or(file.model)
                .or_else(|| env_string("TANDEM_MODEL"))
                .ok_or("live backend requires --model (or TANDEM_MODEL)")?,
            embedding_model: args
                .embedding_model
                .or(file.embedding_model)
                .or_else(|| env_string("TANDEM_EMBEDDING_MODEL"))
                .ok_or("live backend requires --embedding-model (or TANDEM_EMBEDDING_MODEL)")?,
        },
        other => {
            return Err(format!(
                "unknown backend {other:?} (expected scripted or live)"
            ))
        }
    };

    let public_test_policy = match args.public_test_policy.or(file.public_test_policy) {
        Some(text) => text.parse::<PublicTestPolicy>()?,
        None => PublicTestPolicy::Explicit,
    };

    Ok(RunOptions {
        benchmark_path,
        backend,
        session,
        public_test_policy,
        template_dir: args.templates.or(file.templates),
        profile_registry_path: args.profiles.or(file.profiles),
        out_dir: args
            .out
            .or(file.out)
            .unwrap_or_else(|| PathBuf::from("tandem-out")),
        trace_dir: args.trace_dir.or(file.trace_dir),
        parallelism: args.parallelism.or(file.parallelism).unwrap_or(4),
        allow_exec: args.allow_exec || file.allow_exec.unwrap_or(false),
    })
}

fn run(args: RunArgs) -> ExitCode {
    let options = match resolve_options(args) {
        Ok(options) => options,
        Err(message) => {
            eprintln!("error: {message}");
            return ExitCode::from(EXIT_CONFIG);
        }
    };
    match run_benchmark(&options) {
        Ok(summary) => {
            println!(
                "{} problems, {} solved (pass@1 {:.2})",
                summary.report.problems,
                summary.solved,
                tandem::eval::round2(summary.report.pass_at_1)
            );
            println!("run directory: {}", summary.out_dir.display());
            ExitCode::SUCCESS
        }
        Err(error) => {
            eprintln!("error: {error}");
            if error.is_config() {
                ExitCode::from(EXIT_CONFIG)
            } else {
                ExitCode::from(EXIT_INFRA)
            }
        }
    }
}

fn eval(verdicts: PathBuf, format: String) -> ExitCode {
    let format = match format.parse::<ReportFormat>() {
        Ok(format) => format,
        Err(message) => {
            eprintln!("error: {message}");
            return ExitCode::from(EXIT_CONFIG);
        }
    };
    match eval_verdicts(&verdicts, format) {
        Ok(rendered) => {
            println!("{rendered}");
            ExitCode::SUCCESS
        }
        Err(error) => {
            eprintln!("error: {error}");
            ExitCode::from(EXIT_INFRA)
        }
    }
}

fn replay(trace: PathBuf) -> ExitCode {
    match replay_trace(&trace) {
        Ok(narrative) => {
            print!("{narrative}");
            ExitCode::SUCCESS
        }
        Err(error) => {
            eprintln!("error: {error}");
            ExitCode::from(EXIT_INFRA)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match Cli::parse().command {
        Command::Run(args) => run(*args),
        Command::Eval { verdicts, format } => eval(verdicts, format),
        Command::Replay { trace } => replay(trace),
    }
}
