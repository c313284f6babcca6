//! Isolated execution of candidate programs against test suites.
//!
//! Every test case runs in a fresh child process inside a per-invocation
//! temp directory, with the parent environment filtered to an allowlist and
//! a hard kill at the per-case time limit. The aggregate outcome is
//! classified into one of four feedback kinds with the fixed precedence
//! RuntimeError > WrongAnswer > TimeLimitExceeded > Pass.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::Path;
use std::process::{Command, Stdio};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::problem::{TestCase, TestMode};

/// Per-field truncation limit for captured outputs and error messages,
/// keeping repair prompts within a 16K-token context window.
pub const MAX_FIELD_CHARS: usize = 2000;

/// Extra wall time allowed beyond the limit before a case must be dead.
pub const KILL_GRACE: Duration = Duration::from_secs(1);

/// Environment variables the child process inherits.
const ENV_ALLOWLIST: &[&str] = &["PATH", "LANG", "LC_ALL", "TMPDIR"];

#[derive(Debug, Error)]
pub enum SandboxError {
    #[error("sandbox setup failed: {0}")]
    Setup(String),
}

/// How to run a source file for one language.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LanguageProfile {
    pub id: String,
    /// Command template with exactly one `{source}` placeholder.
    pub run_command: String,
    pub file_extension: String,
    pub version_note: String,
}

impl LanguageProfile {
    pub fn python3() -> Self {
        Self {
            id: "python3".into(),
            run_command: "python3 {source}".into(),
            file_extension: "py".into(),
            version_note: "CPython 3.x (reference environment: Python 3.9)".into(),
        }
    }

    /// Human-readable language label used in prompts.
    pub fn language_label(&self) -> &str {
        match self.id.as_str() {
            "python3" => "Python 3",
            other => other,
        }
    }

    fn validate(&self) -> Result<(), SandboxError> {
        if self.run_command.matches("{source}").count() != 1 {
            return Err(SandboxError::Setup(format!(
                "run command {:?} must contain exactly one {{source}} placeholder",
                self.run_command
            )));
        }
        Ok(())
    }
}

/// Registry mapping profile ids to language profiles.
#[derive(Debug, Clone)]
pub struct ProfileRegistry {
    profiles: BTreeMap<String, LanguageProfile>,
}

impl Default for ProfileRegistry {
    fn default() -> Self {
        let mut profiles = BTreeMap::new();
        let python = LanguageProfile::python3();
        profiles.insert(python.id.clone(), python);
        Self { profiles }
    }
}

impl ProfileRegistry {
    /// Loads `id -> {run_command, file_extension, version_note}` from a JSON
    /// file, layered over the defaults.
    pub fn from_path(path: &Path) -> Result<Self, SandboxError> {
        let bytes =
            fs::read(path).map_err(|e| SandboxError::Setup(format!("{}: {e}", path.display())))?;
        let raw: BTreeMap<String, LanguageProfile> = serde_json::from_slice(&bytes)
            .map_err(|e| SandboxError::Setup(format!("{}: {e}", path.display())))?;
        let mut registry = Self::default();
        for (id, mut profile) in raw {
            profile.id = id.clone();
            profile.validate()?;
            registry.profiles.insert(id, profile);
        }
        Ok(registry)
    }

    pub fn get(&self, id: &str) -> Result<&LanguageProfile, SandboxError> {
        self.profiles
            .get(id)
            .ok_or_else(|| SandboxError::Setup(format!("unknown language profile {id:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CaseStatus {
    Ok,
    WrongOutput,
    RuntimeError,
    Timeout,
}

/// Outcome of one test case.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CaseResult {
    pub case_index: usize,
    pub status: CaseStatus,
    pub input: String,
    pub expected_output: Option<String>,
    pub actual_output: String,
    pub error_message: String,
    pub wall_time: Duration,
}

/// The four aggregate feedback kinds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FeedbackKind {
    Pass,
    RuntimeError,
    WrongAnswer,
    TimeLimitExceeded,
}

impl std::fmt::Display for FeedbackKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let label = match self {
            FeedbackKind::Pass => "Pass",
            FeedbackKind::RuntimeError => "Runtime Error",
            FeedbackKind::WrongAnswer => "Wrong Answer",
            FeedbackKind::TimeLimitExceeded => "Time Limit Exceeded",
        };
        f.write_str(label)
    }
}

/// Classified execution outcome over a whole suite.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Feedback {
    pub kind: FeedbackKind,
    pub cases: Vec<CaseResult>,
    /// Stable digest over (kind, case statuses, normalized outputs or error
    /// classes); wall times excluded.
    pub fingerprint: String,
}

impl Feedback {
    pub fn from_cases(cases: Vec<CaseResult>) -> Self {
        let kind = aggregate_kind(cases.iter().map(|c| c.status));
        let fingerprint = fingerprint_cases(kind, &cases);
        Self {
            kind,
            cases,
            fingerprint,
        }
    }

    pub fn failing_cases(&self) -> impl Iterator<Item = &CaseResult> {
        self.cases.iter().filter(|c| c.status != CaseStatus::Ok)
    }
}

/// Precedence rule: any runtime error wins, then any wrong output, then any
/// timeout; otherwise the suite passed. Pure in the multiset of statuses.
pub fn aggregate_kind(statuses: impl Iterator<Item = CaseStatus>) -> FeedbackKind {
    let mut kind = FeedbackKind::Pass;
    for status in statuses {
        let case_kind = match status {
            CaseStatus::RuntimeError => FeedbackKind::RuntimeError,
            CaseStatus::WrongOutput => FeedbackKind::WrongAnswer,
            CaseStatus::Timeout => FeedbackKind::TimeLimitExceeded,
            CaseStatus::Ok => FeedbackKind::Pass,
        };
        if severity(case_kind) > severity(kind) {
            kind = case_kind;
        }
    }
    kind
}

fn severity(kind: FeedbackKind) -> u8 {
    match kind {
        FeedbackKind::Pass => 0,
        FeedbackKind::TimeLimitExceeded => 1,
        FeedbackKind::WrongAnswer => 2,
        FeedbackKind::RuntimeError => 3,
    }
}

/// Extracts the exception class from an error dump: the prefix of the last
/// non-empty line up to the first colon. Memory addresses and other noise
/// after the class name do not affect fingerprints.
pub fn error_class(message: &str) -> String {
    let last = message
        .lines()
        .rev()
        .find(|l| !l.trim().is_empty())
        .unwrap_or("")
        .trim();
    last.split(':').next().unwrap_or("").trim().to_string()
}

fn fingerprint_cases(kind: FeedbackKind, cases: &[CaseResult]) -> String {
    let mut items: Vec<(usize, CaseStatus, String)> = cases
        .iter()
        .map(|c| {
            let detail = match c.status {
                CaseStatus::RuntimeError => error_class(&c.error_message),
                _ => normalize_output(&c.actual_output),
            };
            (c.case_index, c.status, detail)
        })
        .collect();
    items.sort();
    let mut hasher = Sha256::new();
    hasher.update(format!("{kind:?}"));
    for (index, status, detail) in items {
        hasher.update(format!("\x1f{index}\x1f{status:?}\x1f{detail}"));
    }
    hex_digest(hasher)
}

fn hex_digest(hasher: Sha256) -> String {
    let digest = hasher.finalize();
    let mut out = String::with_capacity(16);
    for byte in &digest[..8] {
        out.push_str(&format!("{byte:02x}"));
    }
    out
}

/// Line-based output normalization: CRLF folded to LF, trailing whitespace
/// stripped per line, trailing blank lines dropped.
pub fn normalize_output(raw: &str) -> String {
    let mut lines: Vec<&str> = raw
        .split('\n')
        .map(|l| l.strip_suffix('\r').unwrap_or(l).trim_end())
        .collect();
    while lines.last().is_some_and(|l| l.is_empty()) {
        lines.pop();
    }
    lines.join("\n")
}

/// Truncates to at most `max_chars` characters on a char boundary.
pub fn truncate_text(text: &str, max_chars: usize) -> String {
    if text.chars().count() <= max_chars {
        return text.to_string();
    }
    text.chars().take(max_chars).collect()
}

/// Runs `code` against every test case and classifies the aggregate outcome.
///
/// All cases execute even after failures so repair prompts see complete
/// detail, capped by a whole-suite budget of `time_limit x cases` plus
/// spawn allowance; cases past the budget are recorded as timeouts.
pub fn run_tests(
    code: &str,
    tests: &[TestCase],
    profile: &LanguageProfile,
    time_limit: Duration,
) -> Result<Feedback, SandboxError> {
    profile.validate()?;
    if tests.is_empty() {
        return Err(SandboxError::Setup("test suite is empty".into()));
    }
    let workdir = tempfile::Builder::new()
        .prefix("tandem-run-")
        .tempdir()
        .map_err(|e| SandboxError::Setup(format!("cannot create temp dir: {e}")))?;

    let suite_budget = time_limit * tests.len() as u32
        + KILL_GRACE
        + Duration::from_millis(25) * tests.len() as u32;
    let suite_start = Instant::now();

    let mut cases = Vec::with_capacity(tests.len());
    for (index, test) in tests.iter().enumerate() {
        if suite_start.elapsed() >= suite_budget {
            cases.push(CaseResult {
                case_index: index,
                status: CaseStatus::Timeout,
                input: truncate_text(&test.input, MAX_FIELD_CHARS),
                expected_output: test
                    .expected_output
                    .as_deref()
                    .map(|e| truncate_text(e, MAX_FIELD_CHARS)),
                actual_output: String::new(),
                error_message: String::new(),
                wall_time: time_limit,
            });
            continue;
        }
        cases.push(run_case(
            code,
            test,
            index,
            profile,
            time_limit,
            workdir.path(),
        )?);
    }
    Ok(Feedback::from_cases(cases))
}

fn run_case(
    code: &str,
    test: &TestCase,
    index: usize,
    profile: &LanguageProfile,
    time_limit: Duration,
    workdir: &Path,
) -> Result<CaseResult, SandboxError> {
    let source = match test.mode {
        TestMode::Stdio => code.to_string(),
        TestMode::Assertion => format!("{code}\n\n{}\n", test.input),
    };
    let source_path = workdir.join(format!("case_{index}.{}", profile.file_extension));
    fs::write(&source_path, source)
        .map_err(|e| SandboxError::Setup(format!("cannot write source file: {e}")))?;

    let mut tokens = profile.run_command.split_whitespace().map(|t| {
        if t == "{source}" {
            source_path.to_string_lossy().into_owned()
        } else {
            t.to_string()
        }
    });
    let program = tokens.next().expect("validated run command is non-empty");

    let mut command = Command::new(&program);
    command
        .args(tokens)
        .current_dir(workdir)
        .env_clear()
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .stderr(Stdio::piped());
    for key in ENV_ALLOWLIST {
        if let Ok(value) = std::env::var(key) {
            command.env(key, value);
        }
    }
    // Interpreter hygiene: no bytecode litter, stable hashing, UTF-8 pipes.
    command
        .env("PYTHONDONTWRITEBYTECODE", "1")
        .env("PYTHONHASHSEED", "0")
        .env("PYTHONIOENCODING", "utf-8");

    let start = Instant::now();
    let mut child = command
        .spawn()
        .map_err(|e| SandboxError::Setup(format!("cannot spawn {program:?}: {e}")))?;

    let stdin_payload = match test.mode {
        TestMode::Stdio => test.input.clone(),
        TestMode::Assertion => String::new(),
    };
    let mut stdin = child.stdin.take().expect("stdin piped");
    let writer = std::thread::spawn(move || {
        let _ = stdin.write_all(stdin_payload.as_bytes());
        // dropping stdin closes the pipe
    });
    let stdout_reader = spawn_reader(child.stdout.take().expect("stdout piped"));
    let stderr_reader = spawn_reader(child.stderr.take().expect("stderr piped"));

    let mut timed_out = false;
    loop {
        match child.try_wait() {
            Ok(Some(_)) => break,
            Ok(None) => {
                if start.elapsed() >= time_limit {
                    let _ = child.kill();
                    let _ = child.wait();
                    timed_out = true;
                    break;
                }
                std::thread::sleep(Duration::from_millis(2));
            }
            Err(e) => return Err(SandboxError::Setup(format!("wait failed: {e}"))),
        }
    }
    let wall_time = start.elapsed();
    let _ = writer.join();
    let stdout = stdout_reader.join().unwrap_or_default();
    let stderr = stderr_reader.join().unwrap_or_default();
    let exit_ok = if timed_out {
        false
    } else {
        child.wait().map(|s| s.success()).unwrap_or(false)
    };

    let actual_output = truncate_text(&stdout, MAX_FIELD_CHARS);
    let error_message = truncate_text(&stderr, MAX_FIELD_CHARS);
    let status = if timed_out {
        CaseStatus::Timeout
    } else if exit_ok {
        match test.mode {
            TestMode::Stdio => {
                let expected = test.expected_output.as_deref().unwrap_or("");
                if normalize_output(&stdout) == normalize_output(expected) {
                    CaseStatus::Ok
                } else {
                    CaseStatus::WrongOutput
                }
            }
            TestMode::Assertion => CaseStatus::Ok,
        }
    } else {
        // A failed assertion is a wrong answer; anything else that kills the
        // process is a candidate crash.
        if test.mode == TestMode::Assertion && stderr.contains("AssertionError") {
            CaseStatus::WrongOutput
        } else {
            CaseStatus::RuntimeError
        }
    };

    Ok(CaseResult {
        case_index: index,
        status,
        input: truncate_text(&test.input, MAX_FIELD_CHARS),
        expected_output: test
            .expected_output
            .as_deref()
            .map(|e| truncate_text(e, MAX_FIELD_CHARS)),
        actual_output,
        error_message: if status == CaseStatus::Ok {
            String::new()
        } else {
            error_message
        },
        wall_time,
    })
}

fn spawn_reader<R: std::io::Read + Send + 'static>(
    mut source: R,
) -> std::thread::JoinHandle<String> {
    std::thread::spawn(move || {
        let mut buf = Vec::new();
        let _ = source.read_to_end(&mut buf);
        String::from_utf8_lossy(&buf).into_owned()
    })
}
