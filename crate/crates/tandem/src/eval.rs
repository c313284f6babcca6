//! Scoring and reporting: judge final programs on private tests, aggregate
//! greedy pass@1 plus error-type shares, and render reports.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::problem::Problem;
use crate::sandbox::{run_tests, FeedbackKind, LanguageProfile, SandboxError};
use crate::session::SessionResult;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("no verdicts to aggregate")]
    EmptyInput,
    #[error(transparent)]
    Sandbox(#[from] SandboxError),
    #[error("failed to read verdicts: {0}")]
    Io(#[from] std::io::Error),
    #[error("verdicts line {line}: {message}")]
    Parse { line: usize, message: String },
}

/// Session-side statistics carried into the verdict.
#[derive(Debug, Clone, Default)]
pub struct SessionStats {
    pub passed_public: bool,
    pub iterations_used: usize,
    pub plans_attempted: usize,
    pub api_calls: u64,
    pub tokens_in: u64,
    pub tokens_out: u64,
}

impl SessionStats {
    pub fn from_result(result: &SessionResult) -> Self {
        let ledger = result
            .trace
            .footer()
            .map(|f| f.ledger.clone())
            .unwrap_or_default();
        Self {
            passed_public: result.solved_public,
            iterations_used: result.iterations_used,
            plans_attempted: result.plans_attempted,
            api_calls: ledger.api_calls,
            tokens_in: ledger.input_tokens,
            tokens_out: ledger.output_tokens,
        }
    }
}

/// Outcome of one problem: public result from the session, private result
/// from judging, and cost counters.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ProblemVerdict {
    pub problem_id: String,
    pub passed_public: bool,
    pub passed_private: bool,
    /// Present iff the private run failed.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub private_feedback_kind: Option<FeedbackKind>,
    pub iterations_used: usize,
    pub plans_attempted: usize,
    pub api_calls: u64,
    pub tokens_in: u64,
    pub tokens_out: u64,
}

/// Runs `final_code` on the problem's private tests, reusing the session's
/// executor semantics and time limit. A problem with no private tests is
/// vacuously passed.
pub fn judge(
    problem: &Problem,
    final_code: &str,
    profile: &LanguageProfile,
    time_limit: Duration,
    stats: &SessionStats,
) -> Result<ProblemVerdict, EvalError> {
    let (passed_private, kind) = if problem.private_tests.is_empty() {
        (true, None)
    } else {
        let feedback = run_tests(final_code, &problem.private_tests, profile, time_limit)?;
        match feedback.kind {
            FeedbackKind::Pass => (true, None),
            failing => (false, Some(failing)),
        }
    };
    Ok(ProblemVerdict {
        problem_id: problem.id.clone(),
        passed_public: stats.passed_public,
        passed_private,
        private_feedback_kind: kind,
        iterations_used: stats.iterations_used,
        plans_attempted: stats.plans_attempted,
        api_calls: stats.api_calls,
        tokens_in: stats.tokens_in,
        tokens_out: stats.tokens_out,
    })
}

/// Benchmark-level report. Percentages are stored at full precision and
/// rounded half-up to two decimals only for display.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkReport {
    pub problems: usize,
    pub pass_at_1: f64,
    pub pass_public_rate: f64,
    /// Share of public-test passers that also pass the private tests.
    pub conditional_private_rate: f64,
    /// Failure share per kind, measured over all problems.
    pub error_shares: BTreeMap<String, f64>,
    pub avg_api_calls: f64,
    pub avg_kilotokens: f64,
}

fn kind_key(kind: FeedbackKind) -> &'static str {
    match kind {
        FeedbackKind::Pass => "pass",
        FeedbackKind::RuntimeError => "runtime_error",
        FeedbackKind::WrongAnswer => "wrong_answer",
        FeedbackKind::TimeLimitExceeded => "time_limit_exceeded",
    }
}

/// Aggregates verdicts into a report; permutation-invariant.
pub fn aggregate(verdicts: &[ProblemVerdict]) -> Result<BenchmarkReport, EvalError> {
    if verdicts.is_empty() {
        return Err(EvalError::EmptyInput);
    }
    let n = verdicts.len() as f64;
    let passed_private = verdicts.iter().filter(|v| v.passed_private).count() as f64;
    let passed_public = verdicts.iter().filter(|v| v.passed_public).count() as f64;
    let mut error_shares = BTreeMap::new();
    for kind in [
        FeedbackKind::RuntimeError,
        FeedbackKind::WrongAnswer,
        FeedbackKind::TimeLimitExceeded,
    ] {
        let count = verdicts
            .iter()
            .filter(|v| v.private_feedback_kind == Some(kind))
            .count() as f64;
        error_shares.insert(kind_key(kind).to_string(), 100.0 * count / n);
    }
    let total_tokens: u64 = verdicts.iter().map(|v| v.tokens_in + v.tokens_out).sum();
    Ok(BenchmarkReport {
        problems: verdicts.len(),
        pass_at_1: 100.0 * passed_private / n,
        pass_public_rate: 100.0 * passed_public / n,
        conditional_private_rate: if passed_public > 0.0 {
            100.0 * passed_private / passed_public
        } else {
            0.0
        },
        error_shares,
        avg_api_calls: verdicts.iter().map(|v| v.api_calls).sum::<u64>() as f64 / n,
        avg_kilotokens: total_tokens as f64 / n / 1000.0,
    })
}

/// Half-up rounding to two decimals, the display convention.
pub fn round2(value: f64) -> f64 {
    (value * 100.0).round() / 100.0
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    TextTable,
    Json,
}

impl std::str::FromStr for ReportFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "text" | "text_table" => Ok(Self::TextTable),
            "json" => Ok(Self::Json),
            other => Err(format!(
                "unknown report format {other:?} (expected text or json)"
            )),
        }
    }
}

/// Renders a report as a fixed-column text table or machine-readable JSON.
pub fn render_report(report: &BenchmarkReport, format: ReportFormat) -> String {
    match format {
        ReportFormat::Json => serde_json::to_string_pretty(report).expect("report serializes"),
        ReportFormat::TextTable => {
            let share = |key: &str| round2(*report.error_shares.get(key).unwrap_or(&0.0));
            let mut out = String::new();
            out.push_str(&format!(
                "benchmark report ({} problems)\n\n",
                report.problems
            ));
            out.push_str(&format!(
                "  {:<34}{:>8.2}\n",
                "pass@1 (private tests)",
                round2(report.pass_at_1)
            ));
            out.push_str(&format!(
                "  {:<34}{:>8.2}\n",
                "public test pass rate",
                round2(report.pass_public_rate)
            ));
            out.push_str(&format!(
                "  {:<34}{:>8.2}\n\n",
                "conditional private pass rate",
                round2(report.conditional_private_rate)
            ));
            out.push_str("  error shares over all problems\n");
            out.push_str(&format!(
                "    {:<32}{:>8.2}\n",
                "runtime error",
                share("runtime_error")
            ));
            out.push_str(&format!(
                "    {:<32}{:>8.2}\n",
                "wrong answer",
                share("wrong_answer")
            ));
            out.push_str(&format!(
                "    {:<32}{:>8.2}\n\n",
                "time limit exceeded",
                share("time_limit_exceeded")
            ));
            out.push_str(&format!(
                "  {:<34}{:>8.2}\n",
                "avg api calls per problem",
                round2(report.avg_api_calls)
            ));
            out.push_str(&format!(
                "  {:<34}{:>8.2}\n",
                "avg tokens per problem (k)",
                round2(report.avg_kilotokens)
            ));
            out
        }
    }
}

/// Writes verdicts as line-delimited JSON.
pub fn write_verdicts(verdicts: &[ProblemVerdict], path: &Path) -> Result<(), EvalError> {
    let mut out = std::fs::File::create(path)?;
    for verdict in verdicts {
        let json = serde_json::to_string(verdict).expect("verdict serializes");
        writeln!(out, "{json}")?;
    }
    Ok(())
}

/// Reads verdicts back from line-delimited JSON.
pub fn read_verdicts(path: &Path) -> Result<Vec<ProblemVerdict>, EvalError> {
    let text = std::fs::read_to_string(path)?;
    let mut verdicts = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let verdict: ProblemVerdict = serde_json::from_str(line).map_err(|e| EvalError::Parse {
            line: idx + 1,
            message: e.to_string(),
        })?;
        verdicts.push(verdict);
    }
    Ok(verdicts)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problem::{TestCase, TestMode};

    fn verdict(
        id: usize,
        public: bool,
        private: bool,
        kind: Option<FeedbackKind>,
    ) -> ProblemVerdict {
        ProblemVerdict {
            problem_id: format!("p{id}"),
            passed_public: public,
            passed_private: private,
            private_feedback_kind: kind,
            iterations_used: 1,
            plans_attempted: 1,
            api_calls: 4,
            tokens_in: 900,
            tokens_out: 100,
        }
    }

    fn synthetic(passed: usize, total: usize) -> Vec<ProblemVerdict> {
        (0..total)
            .map(|i| {
                if i < passed {
                    verdict(i, true, true, None)
                } else {
                    verdict(i, false, false, Some(FeedbackKind::WrongAnswer))
                }
            })
            .collect()
    }

    #[test]
    fn published_pass_ratios_reproduce() {
        for (passed, total, expected) in [(144, 164, 87.80), (403, 500, 80.60), (25, 165, 15.15)] {
            let report = aggregate(&synthetic(passed, total)).unwrap();
            assert_eq!(round2(report.pass_at_1), expected);
        }
    }

    #[test]
    fn error_shares_and_conditional_rate() {
        // 165 problems: 35 pass public, 25 of those pass private; failures
        // split RE=27, WA=99, TLE=14 across all 140 non-passing problems
        let mut verdicts = Vec::new();
        for i in 0..25 {
            verdicts.push(verdict(i, true, true, None));
        }
        let mut kinds = Vec::new();
        kinds.extend(std::iter::repeat_n(FeedbackKind::RuntimeError, 27));
        kinds.extend(std::iter::repeat_n(FeedbackKind::WrongAnswer, 99));
        kinds.extend(std::iter::repeat_n(FeedbackKind::TimeLimitExceeded, 14));
        for (i, kind) in kinds.into_iter().enumerate() {
            let passed_public = i < 10; // 25 + 10 = 35 public passers
            verdicts.push(verdict(25 + i, passed_public, false, Some(kind)));
        }
        assert_eq!(verdicts.len(), 165);

        let report = aggregate(&verdicts).unwrap();
        assert_eq!(round2(report.pass_at_1), 15.15);
        assert_eq!(round2(report.pass_public_rate), 21.21);
        assert_eq!(round2(report.conditional_private_rate), 71.43);
        assert_eq!(round2(report.error_shares["runtime_error"]), 16.36);
        assert_eq!(round2(report.error_shares["wrong_answer"]), 60.00);
        assert_eq!(round2(report.error_shares["time_limit_exceeded"]), 8.48);

        let text = render_report(&report, ReportFormat::TextTable);
        assert!(text.contains("pass@1"));
        for value in ["15.15", "21.21", "71.43", "16.36", "60.00", "8.48"] {
            assert!(text.contains(value), "missing {value} in:\n{text}");
        }
    }

    #[test]
    fn degenerate_all_failures() {
        let verdicts: Vec<ProblemVerdict> = (0..10)
            .map(|i| verdict(i, false, false, Some(FeedbackKind::WrongAnswer)))
            .collect();
        let report = aggregate(&verdicts).unwrap();
        assert_eq!(report.pass_at_1, 0.0);
        let share_sum: f64 = report.error_shares.values().sum();
        assert!((share_sum - 100.0).abs() < 1e-9);
    }

    #[test]
    fn aggregation_is_permutation_invariant() {
        let mut verdicts = synthetic(3, 10);
        let forward = aggregate(&verdicts).unwrap();
        verdicts.reverse();
        let backward = aggregate(&verdicts).unwrap();
        assert_eq!(forward, backward);
    }

    #[test]
    fn empty_verdicts_error() {
        assert!(matches!(aggregate(&[]), Err(EvalError::EmptyInput)));
    }

    #[test]
    fn json_report_round_trips() {
        let report = aggregate(&synthetic(7, 9)).unwrap();
        let json = render_report(&report, ReportFormat::Json);
        let back: BenchmarkReport = serde_json::from_str(&json).unwrap();
        assert_eq!(back, report);
    }

    #[test]
    fn verdicts_file_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("verdicts.jsonl");
        let verdicts = synthetic(2, 5);
        write_verdicts(&verdicts, &path).unwrap();
        let back = read_verdicts(&path).unwrap();
        assert_eq!(
            serde_json::to_string(&verdicts).unwrap(),
            serde_json::to_string(&back).unwrap()
        );
    }

    fn stdio_problem(expected: &str) -> Problem {
        Problem {
            id: "judge-me".into(),
            description: "echo a constant".into(),
            entry_point: None,
            public_tests: vec![TestCase {
                input: String::new(),
                expected_output: Some(expected.into()),
                mode: TestMode::Stdio,
            }],
            private_tests: vec![
                TestCase {
                    input: String::new(),
                    expected_output: Some(expected.into()),
                    mode: TestMode::Stdio,
                },
                TestCase {
                    input: "edge".into(),
                    expected_output: Some("edge-case".into()),
                    mode: TestMode::Stdio,
                },
            ],
            language_profile_id: "python3".into(),
            time_limit: Duration::from_secs(3),
        }
    }

    proptest::proptest! {
        // whenever private passes imply public passes (sessions stop on a
        // public pass), pass@1 never exceeds the public pass rate
        #[test]
        fn pass_at_1_bounded_by_public_rate(flags in proptest::collection::vec(0u8..3, 1..40)) {
            let verdicts: Vec<ProblemVerdict> = flags
                .iter()
                .enumerate()
                .map(|(i, f)| {
                    let (public, private) = match f {
                        0 => (false, false),
                        1 => (true, false),
                        _ => (true, true),
                    };
                    verdict(i, public, private, (!private).then_some(FeedbackKind::WrongAnswer))
                })
                .collect();
            let report = aggregate(&verdicts).unwrap();
            proptest::prop_assert!(report.pass_at_1 <= report.pass_public_rate + 1e-9);
        }
    }

    #[test]
    fn judge_detects_private_edge_case_failures() {
        let problem = stdio_problem("42");
        let profile = LanguageProfile::python3();
        let stats = SessionStats {
            passed_public: true,
            ..Default::default()
        };

        // passes public, fails the private edge case
        let verdict = judge(&problem, "print(42)", &profile, problem.time_limit, &stats).unwrap();
        assert!(verdict.passed_public);
        assert!(!verdict.passed_private);
        assert_eq!(
            verdict.private_feedback_kind,
            Some(FeedbackKind::WrongAnswer)
        );

        // handles the edge case too
        let code =
            "import sys\ns = sys.stdin.read().strip()\nprint('edge-case' if s == 'edge' else 42)";
        let verdict = judge(&problem, code, &profile, problem.time_limit, &stats).unwrap();
        assert!(verdict.passed_private);
        assert!(verdict.private_feedback_kind.is_none());
    }
}
