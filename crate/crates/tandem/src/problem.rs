//! Problems, test cases, and benchmark ingestion.
//!
//! A benchmark is a JSONL file with one problem record per line. Each record
//! carries the natural-language description, the visible (public) tests that
//! drive the feedback loop, and the hidden (private) tests used only for
//! final judging.

use std::fs;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Default per-case time limit in seconds.
pub const DEFAULT_TIME_LIMIT_SECS: f64 = 3.0;

/// Default language profile for problems that do not name one.
pub const DEFAULT_LANGUAGE_PROFILE: &str = "python3";

#[derive(Debug, Error)]
pub enum ProblemError {
    #[error("failed to read benchmark: {0}")]
    Io(#[from] std::io::Error),
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("duplicate problem id {0:?}")]
    DuplicateId(String),
    #[error("benchmark contains no problems")]
    NonEmptyRequired,
    #[error("problem {id:?}: policy needs {needed} private tests, found {available}")]
    InsufficientTests {
        id: String,
        needed: usize,
        available: usize,
    },
    #[error("problem {id:?}: {message}")]
    Invalid { id: String, message: String },
}

/// How test cases are run against a candidate program.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TestMode {
    /// Pipe `input` to stdin and compare stdout with `expected_output`.
    Stdio,
    /// Append `input` (a check expression) to the program and run it; the
    /// check calls the problem's entry point.
    Assertion,
}

/// A single test case.
///
/// In stdio mode `input` is the stdin payload and `expected_output` the
/// required stdout. In assertion mode `input` holds the executable check
/// expression and `expected_output` is unused.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TestCase {
    pub input: String,
    pub expected_output: Option<String>,
    pub mode: TestMode,
}

impl TestCase {
    fn validate(&self) -> Result<(), String> {
        match self.mode {
            TestMode::Stdio => {
                if self.expected_output.is_none() {
                    return Err("stdio test case lacks expected_output".into());
                }
            }
            TestMode::Assertion => {
                if self.input.trim().is_empty() {
                    return Err("assertion test case has an empty check expression".into());
                }
            }
        }
        Ok(())
    }
}

/// One programming task.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Problem {
    pub id: String,
    pub description: String,
    pub entry_point: Option<String>,
    pub public_tests: Vec<TestCase>,
    pub private_tests: Vec<TestCase>,
    pub language_profile_id: String,
    pub time_limit: Duration,
}

impl Problem {
    /// Mode shared by all of this problem's tests.
    pub fn mode(&self) -> TestMode {
        self.public_tests
            .first()
            .or_else(|| self.private_tests.first())
            .map(|t| t.mode)
            .unwrap_or(TestMode::Stdio)
    }

    /// Checks the invariants a problem must satisfy before a session runs it.
    pub fn validate(&self) -> Result<(), ProblemError> {
        let invalid = |message: String| ProblemError::Invalid {
            id: self.id.clone(),
            message,
        };
        if self.public_tests.is_empty() {
            return Err(invalid("no public tests after derivation".into()));
        }
        if self.time_limit <= Duration::ZERO {
            return Err(invalid("time limit must be positive".into()));
        }
        let mode = self.mode();
        for test in self.public_tests.iter().chain(&self.private_tests) {
            if test.mode != mode {
                return Err(invalid(
                    "public and private tests mix stdio and assertion".into(),
                ));
            }
            test.validate().map_err(invalid)?;
        }
        Ok(())
    }
}

/// An ordered collection of problems.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Benchmark {
    pub name: String,
    pub problems: Vec<Problem>,
}

/// Policy for deriving the public test set of each problem.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PublicTestPolicy {
    /// Keep the public tests exactly as provided.
    Explicit,
    /// Use the first private test as the only public test.
    FirstPrivate,
    /// Use the first `n` private tests as public tests.
    FirstNPrivate(usize),
}

impl std::str::FromStr for PublicTestPolicy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "explicit" => Ok(Self::Explicit),
            "first_private" => Ok(Self::FirstPrivate),
            other => {
                if let Some(n) = other.strip_prefix("first_n:") {
                    let n: usize = n
                        .parse()
                        .map_err(|_| format!("bad count in public test policy {other:?}"))?;
                    if n == 0 {
                        return Err("first_n policy needs n >= 1".into());
                    }
                    Ok(Self::FirstNPrivate(n))
                } else {
                    Err(format!(
                        "unknown public test policy {other:?} (expected explicit, first_private or first_n:<n>)"
                    ))
                }
            }
        }
    }
}

/// Replaces the public tests of `problem` according to `policy`.
///
/// Private tests are never modified; `first_private` and `first_n:<n>` copy a
/// prefix of them into the public slot. Idempotent under `explicit`.
pub fn derive_public_tests(
    mut problem: Problem,
    policy: PublicTestPolicy,
) -> Result<Problem, ProblemError> {
    let take = match policy {
        PublicTestPolicy::Explicit => {
            return Ok(problem);
        }
        PublicTestPolicy::FirstPrivate => 1,
        PublicTestPolicy::FirstNPrivate(n) => n,
    };
    if problem.private_tests.len() < take {
        return Err(ProblemError::InsufficientTests {
            id: problem.id,
            needed: take,
            available: problem.private_tests.len(),
        });
    }
    problem.public_tests = problem.private_tests[..take].to_vec();
    Ok(problem)
}

#[derive(Debug, Serialize, Deserialize)]
struct TestCaseRecord {
    input: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    expected_output: Option<String>,
}

/// One JSONL benchmark record. Unknown fields are ignored on load.
#[derive(Debug, Serialize, Deserialize)]
struct ProblemRecord {
    id: String,
    description: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    entry_point: Option<String>,
    mode: TestMode,
    #[serde(default)]
    public_tests: Vec<TestCaseRecord>,
    #[serde(default)]
    private_tests: Vec<TestCaseRecord>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    time_limit_s: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    language_profile_id: Option<String>,
}

fn cases_from_records(records: Vec<TestCaseRecord>, mode: TestMode) -> Vec<TestCase> {
    records
        .into_iter()
        .map(|r| TestCase {
            input: r.input,
            expected_output: r.expected_output,
            mode,
        })
        .collect()
}

fn cases_to_records(cases: &[TestCase]) -> Vec<TestCaseRecord> {
    cases
        .iter()
        .map(|c| TestCaseRecord {
            input: c.input.clone(),
            expected_output: c.expected_output.clone(),
        })
        .collect()
}

impl ProblemRecord {
    fn into_problem(self, line: usize) -> Result<Problem, ProblemError> {
        let secs = self.time_limit_s.unwrap_or(DEFAULT_TIME_LIMIT_SECS);
        if !secs.is_finite() || secs <= 0.0 {
            return Err(ProblemError::Parse {
                line,
                message: format!("time_limit_s must be a positive number, got {secs}"),
            });
        }
        Ok(Problem {
            id: self.id,
            description: self.description,
            entry_point: self.entry_point,
            public_tests: cases_from_records(self.public_tests, self.mode),
            private_tests: cases_from_records(self.private_tests, self.mode),
            language_profile_id: self
                .language_profile_id
                .unwrap_or_else(|| DEFAULT_LANGUAGE_PROFILE.to_string()),
            time_limit: Duration::from_secs_f64(secs),
        })
    }

    fn from_problem(problem: &Problem) -> Self {
        ProblemRecord {
            id: problem.id.clone(),
            description: problem.description.clone(),
            entry_point: problem.entry_point.clone(),
            mode: problem.mode(),
            public_tests: cases_to_records(&problem.public_tests),
            private_tests: cases_to_records(&problem.private_tests),
            time_limit_s: Some(problem.time_limit.as_secs_f64()),
            language_profile_id: Some(problem.language_profile_id.clone()),
        }
    }
}

/// Loads a JSONL benchmark from a file. The benchmark name is the file stem.
pub fn load_benchmark(path: &Path) -> Result<Benchmark, ProblemError> {
    let file = fs::File::open(path)?;
    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "benchmark".to_string());
    parse_benchmark(&name, BufReader::new(file))
}

/// Parses JSONL benchmark records from a reader, preserving file order.
pub fn parse_benchmark<R: Read>(
    name: &str,
    reader: BufReader<R>,
) -> Result<Benchmark, ProblemError> {
    let mut problems: Vec<Problem> = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let record: ProblemRecord =
            serde_json::from_str(&line).map_err(|e| ProblemError::Parse {
                line: line_no,
                message: e.to_string(),
            })?;
        let problem = record.into_problem(line_no)?;
        if problems.iter().any(|p| p.id == problem.id) {
            return Err(ProblemError::DuplicateId(problem.id));
        }
        problems.push(problem);
    }
    if problems.is_empty() {
        return Err(ProblemError::NonEmptyRequired);
    }
    Ok(Benchmark {
        name: name.to_string(),
        problems,
    })
}

/// Writes a benchmark back out as JSONL, one record per line.
pub fn save_benchmark(benchmark: &Benchmark, path: &Path) -> Result<(), ProblemError> {
    let mut out = fs::File::create(path)?;
    for problem in &benchmark.problems {
        let record = ProblemRecord::from_problem(problem);
        let json = serde_json::to_string(&record).expect("problem record serializes");
        writeln!(out, "{json}")?;
    }
    Ok(())
}
