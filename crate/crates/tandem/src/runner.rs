//! Benchmark runner: wires a backend, prompt library, and sandbox profile
//! into parallel sessions over a benchmark and writes the run directory
//! (`traces/*.jsonl`, `verdicts.jsonl`, `report.{json,txt}`).

use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};

use thiserror::Error;

use crate::eval::{
    aggregate, judge, render_report, write_verdicts, BenchmarkReport, EvalError, ProblemVerdict,
    ReportFormat, SessionStats,
};
use crate::gateway::live::{LiveBackend, LiveConfig};
use crate::gateway::scripted::ScriptedBackend;
use crate::gateway::{Gateway, GatewayError};
use crate::problem::{
    derive_public_tests, load_benchmark, Problem, ProblemError, PublicTestPolicy,
};
use crate::prompts::{PromptError, PromptLibrary};
use crate::sandbox::{ProfileRegistry, SandboxError};
use crate::session::{run_session, SessionConfig, SessionError};
use crate::trace::{SessionTrace, TraceError};

#[derive(Debug, Error)]
pub enum RunnerError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error(transparent)]
    Problem(#[from] ProblemError),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error(transparent)]
    Session(#[from] SessionError),
    #[error(transparent)]
    Sandbox(#[from] SandboxError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Trace(#[from] TraceError),
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

impl RunnerError {
    /// Configuration problems exit 2, infrastructure failures 1.
    pub fn is_config(&self) -> bool {
        matches!(self, RunnerError::Config(_))
    }
}

/// Which backend serves the sessions.
#[derive(Debug, Clone)]
pub enum BackendChoice {
    Scripted {
        fixture: PathBuf,
    },
    Live {
        endpoint: String,
        model: String,
        embedding_model: String,
    },
}

/// Everything `run` needs, resolved from flags, config file, environment,
/// and defaults by the CLI.
#[derive(Debug, Clone)]
pub struct RunOptions {
    pub benchmark_path: PathBuf,
    pub backend: BackendChoice,
    pub session: SessionConfig,
    pub public_test_policy: PublicTestPolicy,
    pub template_dir: Option<PathBuf>,
    pub profile_registry_path: Option<PathBuf>,
    pub out_dir: PathBuf,
    /// Trace directory; defaults to `<out_dir>/traces`.
    pub trace_dir: Option<PathBuf>,
    pub parallelism: usize,
    /// Physical request attempts per model call; `None` keeps the default.
    pub max_attempts: Option<usize>,
    /// Model-generated code only runs when this gate is set.
    pub allow_exec: bool,
}

/// Summary returned by [`run_benchmark`].
#[derive(Debug, Clone)]
pub struct RunSummary {
    pub report: BenchmarkReport,
    pub verdicts: Vec<ProblemVerdict>,
    pub out_dir: PathBuf,
    pub solved: usize,
}

/// Replaces anything outside `[A-Za-z0-9._-]` so problem ids become safe
/// file names.
pub fn sanitize_id(id: &str) -> String {
    id.chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || matches!(c, '.' | '_' | '-') {
                c
            } else {
                '_'
            }
        })
        .collect()
}

fn build_gateway(options: &RunOptions) -> Result<Gateway, RunnerError> {
    let gateway = match &options.backend {
        BackendChoice::Scripted { fixture } => {
            Gateway::new(Arc::new(ScriptedBackend::from_path(fixture)?))
        }
        BackendChoice::Live {
            endpoint,
            model,
            embedding_model,
        } => {
            let config = LiveConfig::from_env(endpoint, model, embedding_model)
                .map_err(|e| RunnerError::Config(e.to_string()))?;
            Gateway::new(Arc::new(
                LiveBackend::new(config).map_err(|e| RunnerError::Config(e.to_string()))?,
            ))
        }
    };
    Ok(match options.max_attempts {
        Some(max_attempts) => gateway.with_retry(RetryConfig {
            max_attempts,
            ..RetryConfig::default()
        }),
        None => gateway,
    })
}

/// Runs every problem in the benchmark through a session, judges the final
/// programs on private tests, and writes traces, verdicts, and reports.
///
/// Candidate-program failures never fail the run; only infrastructure or
/// configuration errors do.
pub fn run_benchmark(options: &RunOptions) -> Result<RunSummary, RunnerError> {
    if !options.allow_exec {
        return Err(RunnerError::Config(
            "executing model-generated code requires --allow-exec; generated programs run as \
             normal subprocesses with only temp-dir/env isolation"
                .into(),
        ));
    }
    options.session.validate()?;

    let benchmark = load_benchmark(&options.benchmark_path)?;
    let problems: Vec<Problem> = benchmark
        .problems
        .into_iter()
        .map(|p| derive_public_tests(p, options.public_test_policy))
        .collect::<Result<_, _>>()?;
    for problem in &problems {
        problem.validate()?;
    }

    let library = match &options.template_dir {
        Some(dir) => PromptLibrary::from_dir(dir)?,
        None => PromptLibrary::builtin(),
    };
    let registry = match &options.profile_registry_path {
        Some(path) => ProfileRegistry::from_path(path)?,
        None => ProfileRegistry::default(),
    };
    let gateway = build_gateway(&options.backend)?;

    let trace_dir = options
        .trace_dir
        .clone()
        .unwrap_or_else(|| options.out_dir.join("traces"));
    std::fs::create_dir_all(&options.out_dir)?;
    std::fs::create_dir_all(&trace_dir)?;

    let next_index = AtomicUsize::new(0);
    let results: Mutex<Vec<Option<Result<ProblemVerdict, RunnerError>>>> =
        Mutex::new((0..problems.len()).map(|_| None).collect());
    let workers = options.parallelism.max(1).min(problems.len().max(1));

    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let index = next_index.fetch_add(1, Ordering::SeqCst);
                if index >= problems.len() {
                    break;
                }
                let outcome = run_one(
                    &problems[index],
                    &gateway,
                    &options.session,
                    &library,
                    &registry,
                    &trace_dir,
                );
                results.lock().expect("results lock")[index] = Some(outcome);
            });
        }
    });

    let mut verdicts = Vec::with_capacity(problems.len());
    for slot in results.into_inner().expect("results lock") {
        verdicts.push(slot.expect("every problem was claimed")?);
    }

    let report = aggregate(&verdicts)?;
    write_verdicts(&verdicts, &options.out_dir.join("verdicts.jsonl"))?;
    std::fs::write(
        options.out_dir.join("report.json"),
        render_report(&report, ReportFormat::Json),
    )?;
    std::fs::write(
        options.out_dir.join("report.txt"),
        render_report(&report, ReportFormat::TextTable),
    )?;

    let solved = verdicts.iter().filter(|v| v.passed_private).count();
    Ok(RunSummary {
        report,
        verdicts,
        out_dir: options.out_dir.clone(),
        solved,
    })
}

fn run_one(
    problem: &Problem,
    gateway: &Gateway,
    config: &SessionConfig,
    library: &PromptLibrary,
    registry: &ProfileRegistry,
    trace_dir: &Path,
) -> Result<ProblemVerdict, RunnerError> {
    let profile = registry.get(&problem.language_profile_id)?;
    let mut session_gateway = gateway.session();
    let result = run_session(problem, &mut session_gateway, config, library, profile)?;

    let trace_path = trace_dir.join(format!("{}.jsonl", sanitize_id(&problem.id)));
    std::fs::write(&trace_path, result.trace.to_jsonl())?;

    let stats = SessionStats::from_result(&result);
    let time_limit = config.time_limit.unwrap_or(problem.time_limit);
    Ok(judge(
        problem,
        &result.final_code,
        profile,
        time_limit,
        &stats,
    )?)
}

/// Renders a stored trace as a human-readable narrative.
pub fn replay_trace(path: &Path) -> Result<String, TraceError> {
    Ok(SessionTrace::load(path)?.narrative())
}

/// Recomputes a report from stored verdicts without re-executing anything.
pub fn eval_verdicts(path: &Path, format: ReportFormat) -> Result<String, EvalError> {
    let verdicts = read_verdicts_checked(path)?;
    let report = aggregate(&verdicts)?;
    Ok(render_report(&report, format))
}

fn read_verdicts_checked(path: &Path) -> Result<Vec<ProblemVerdict>, EvalError> {
    crate::eval::read_verdicts(path)
}
