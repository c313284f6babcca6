//! The navigator-driver session loop for one problem.
//!
//! One session: reflect once, sample and cluster plans once, then iterate up
//! to `r` times. Each iteration either selects a fresh plan (first
//! iteration, or when the latest code or feedback already occurred under the
//! current plan) or repairs the current code under a generated strategy,
//! then runs the public tests and stops on a pass.

use std::collections::{BTreeMap, HashSet};
use std::time::Duration;

use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::cluster::{cluster_plans, ClusterError};
use crate::gateway::{GatewayError, SessionGateway};
use crate::plan::{attach_embeddings, sample_plans, CandidatePool, PlanError};
use crate::problem::{Problem, ProblemError};
use crate::prompts::{extract_code, parse_selection, CodeContext, PromptError, PromptLibrary};
use crate::sandbox::{run_tests, Feedback, FeedbackKind, LanguageProfile, SandboxError};
use crate::trace::{
    ActionKind, IterationRecord, PlanSummary, SessionTrace, SetupRecord, StepDigest, TraceFooter,
    TraceHeader, TraceRecord,
};

#[derive(Debug, Error)]
pub enum SessionError {
    #[error("invalid session config: {0}")]
    Config(String),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error(transparent)]
    Sandbox(#[from] SandboxError),
    #[error(transparent)]
    Plan(#[from] PlanError),
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error(transparent)]
    Cluster(#[from] ClusterError),
    #[error(transparent)]
    Problem(#[from] ProblemError),
}

/// Session hyperparameters. Defaults: r=10 iterations, n=15 sampled plans in
/// batches of 5, k=3 clusters, plan temperature 0.8.
#[derive(Debug, Clone)]
pub struct SessionConfig {
    pub max_iterations: usize,
    pub plans_to_sample: usize,
    pub clusters: usize,
    pub batch_size: usize,
    pub plan_temperature: f64,
    pub seed: u64,
    /// Per-case time limit; `None` uses the problem's own limit.
    pub time_limit: Option<Duration>,
}

impl Default for SessionConfig {
    fn default() -> Self {
        Self {
            max_iterations: 10,
            plans_to_sample: 15,
            clusters: 3,
            batch_size: 5,
            plan_temperature: 0.8,
            seed: 0,
            time_limit: None,
        }
    }
}

impl SessionConfig {
    pub fn validate(&self) -> Result<(), SessionError> {
        if self.max_iterations < 1 {
            return Err(SessionError::Config("max_iterations must be >= 1".into()));
        }
        if self.clusters < 1 || self.clusters > self.plans_to_sample {
            return Err(SessionError::Config(
                "clusters must satisfy 1 <= k <= n".into(),
            ));
        }
        if self.batch_size < 1 || self.batch_size > self.plans_to_sample {
            return Err(SessionError::Config(
                "batch_size must satisfy 1 <= batch_size <= n".into(),
            ));
        }
        Ok(())
    }
}

/// Per-plan history of code and feedback fingerprints. Cleared whenever a
/// new plan is selected.
#[derive(Debug, Clone, Default)]
pub struct MemoryStore {
    code_history: HashSet<String>,
    feedback_history: HashSet<String>,
}

impl MemoryStore {
    pub fn clear(&mut self) {
        self.code_history.clear();
        self.feedback_history.clear();
    }

    pub fn remember(&mut self, code_fingerprint: String, feedback_fingerprint: String) {
        self.code_history.insert(code_fingerprint);
        self.feedback_history.insert(feedback_fingerprint);
    }

    pub fn contains_code(&self, fingerprint: &str) -> bool {
        self.code_history.contains(fingerprint)
    }

    pub fn contains_feedback(&self, fingerprint: &str) -> bool {
        self.feedback_history.contains(fingerprint)
    }

    pub fn code_entries(&self) -> usize {
        self.code_history.len()
    }

    pub fn feedback_entries(&self) -> usize {
        self.feedback_history.len()
    }
}

/// The two iteration directions.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    NewPlan,
    Repair,
}

/// Stable digest of code, insensitive to trailing whitespace and blank
/// lines.
pub fn fingerprint_code(code: &str) -> String {
    let normalized: Vec<&str> = code
        .lines()
        .map(str::trim_end)
        .filter(|l| !l.is_empty())
        .collect();
    let mut hasher = Sha256::new();
    hasher.update(normalized.join("\n").as_bytes());
    let digest = hasher.finalize();
    digest[..8].iter().map(|b| format!("{b:02x}")).collect()
}

/// Stable digest of execution feedback; wall times are excluded by
/// construction (see [`Feedback::from_cases`]).
pub fn fingerprint_feedback(feedback: &Feedback) -> String {
    feedback.fingerprint.clone()
}

/// Chooses the next direction: a new plan on the first iteration or when
/// the current code or feedback already occurred under this plan, except
/// that an exhausted pool always degrades to repair.
pub fn decide_direction(
    iteration: usize,
    code: Option<&str>,
    feedback: Option<&Feedback>,
    memory: &MemoryStore,
    pool: &CandidatePool,
) -> Direction {
    debug_assert!(iteration >= 1);
    if pool.is_exhausted() {
        return Direction::Repair;
    }
    let repeated_code = code.is_some_and(|c| memory.contains_code(&fingerprint_code(c)));
    let repeated_feedback =
        feedback.is_some_and(|f| memory.contains_feedback(&fingerprint_feedback(f)));
    if iteration == 1 || repeated_code || repeated_feedback {
        Direction::NewPlan
    } else {
        Direction::Repair
    }
}

/// Result of one session.
#[derive(Debug, Clone)]
pub struct SessionResult {
    pub final_code: String,
    pub solved_public: bool,
    pub iterations_used: usize,
    pub plans_attempted: usize,
    pub trace: SessionTrace,
}

fn extract_code_or_empty(model_output: &str) -> String {
    match extract_code(model_output) {
        Ok(code) => code,
        Err(_) => {
            // an empty program fails the public tests and the loop recovers
            log::warn!("no code found in model output; substituting an empty program");
            String::new()
        }
    }
}

/// Runs the full session loop for `problem`.
pub fn run_session(
    problem: &Problem,
    gateway: &mut SessionGateway,
    config: &SessionConfig,
    library: &PromptLibrary,
    profile: &LanguageProfile,
) -> Result<SessionResult, SessionError> {
    config.validate()?;
    problem.validate()?;
    let time_limit = config.time_limit.unwrap_or(problem.time_limit);
    let code_context = CodeContext {
        language: profile.language_label().to_string(),
        mode: problem.mode(),
        entry_point: problem.entry_point.clone(),
    };
    let ledger = gateway.ledger();
    let setup_start = ledger.snapshot();

    let mut records = vec![TraceRecord::Header(TraceHeader {
        problem_id: problem.id.clone(),
        seed: config.seed,
        max_iterations: config.max_iterations,
        plans_to_sample: config.plans_to_sample,
        clusters: config.clusters,
        batch_size: config.batch_size,
        plan_temperature: config.plan_temperature,
        time_limit_s: time_limit.as_secs_f64(),
    })];

    // reflect on the problem, once per session
    let reflect_request = library.render_reflect(&problem.description)?;
    let reflect_response = gateway.complete(&reflect_request)?;
    let reflection = reflect_response.text.clone();
    let reflect_digest = StepDigest::new(&reflect_request.rendered_text(), &reflection);

    // brainstorm plans, once per session
    let mut plans = sample_plans(
        gateway,
        library,
        &problem.description,
        &reflection,
        config.plans_to_sample,
        config.batch_size,
        config.plan_temperature,
    )?;

    // reduce to k centroid-nearest representatives; when every surviving
    // plan already fits in k clusters, embedding would be a wasted call
    let representatives = if plans.len() <= config.clusters {
        plans.clone()
    } else {
        attach_embeddings(gateway, &mut plans)?;
        cluster_plans(&plans, config.clusters, config.seed)?
    };
    let mut pool = CandidatePool::new(representatives);

    records.push(TraceRecord::Setup(SetupRecord {
        reflect: reflect_digest,
        plans: plans
            .iter()
            .map(|p| PlanSummary {
                id: p.id,
                text_sha: crate::trace::short_digest(&p.text),
            })
            .collect(),
        representative_ids: pool.remaining().iter().map(|p| p.id).collect(),
        ledger_delta: ledger.snapshot().delta_since(&setup_start),
    }));

    let mut memory = MemoryStore::default();
    let mut code: Option<String> = None;
    let mut feedback: Option<Feedback> = None;
    let mut current_plan_id: u32 = 0;
    let mut solved = false;
    let mut iterations_used = 0;

    for iteration in 1..=config.max_iterations {
        let iteration_start = ledger.snapshot();
        let mut steps: BTreeMap<String, StepDigest> = BTreeMap::new();
        let direction = decide_direction(
            iteration,
            code.as_deref(),
            feedback.as_ref(),
            &memory,
            &pool,
        );

        let action = match direction {
            Direction::NewPlan => {
                let plan = if pool.remaining().len() == 1 {
                    // the choice is forced; skip the selection call
                    pool.select_nth(1)?
                } else {
                    let candidates: Vec<String> =
                        pool.remaining().iter().map(|p| p.text.clone()).collect();
                    let request =
                        library.render_select(&problem.description, &reflection, &candidates)?;
                    let response = gateway.complete(&request)?;
                    steps.insert(
                        "select".into(),
                        StepDigest::new(&request.rendered_text(), &response.text),
                    );
                    let index =
                        parse_selection(&response.text, candidates.len()).unwrap_or_else(|_| {
                            log::warn!(
                                "unparsable plan selection {:?}; falling back to candidate 1",
                                response.text
                            );
                            1
                        });
                    pool.select_nth(index)?
                };
                current_plan_id = plan.id;
                memory.clear();

                let request =
                    library.render_code(&problem.description, &plan.text, &code_context)?;
                let response = gateway.complete(&request)?;
                steps.insert(
                    "code".into(),
                    StepDigest::new(&request.rendered_text(), &response.text),
                );
                code = Some(extract_code_or_empty(&response.text));
                ActionKind::NewPlan
            }
            Direction::Repair => {
                let current_code = code.as_deref().expect("repair requires prior code");
                let current_feedback = feedback.as_ref().expect("repair requires prior feedback");
                memory.remember(
                    fingerprint_code(current_code),
                    fingerprint_feedback(current_feedback),
                );

                let request =
                    library.render_analyze(&problem.description, current_code, current_feedback)?;
                let response = gateway.complete(&request)?;
                steps.insert(
                    "analyze".into(),
                    StepDigest::new(&request.rendered_text(), &response.text),
                );
                let strategy = if response.text.trim().is_empty() {
                    log::warn!("empty repair strategy; substituting a generic directive");
                    "Re-examine the execution feedback and fix the code accordingly.".to_string()
                } else {
                    response.text
                };

                let request = library.render_repair(
                    &problem.description,
                    current_code,
                    current_feedback,
                    &strategy,
                    &code_context,
                )?;
                let response = gateway.complete(&request)?;
                steps.insert(
                    "repair".into(),
                    StepDigest::new(&request.rendered_text(), &response.text),
                );
                code = Some(extract_code_or_empty(&response.text));
                ActionKind::Repair
            }
        };

        let current_code = code.as_deref().expect("code generated this iteration");
        let new_feedback = run_tests(current_code, &problem.public_tests, profile, time_limit)?;

        records.push(TraceRecord::Iteration(IterationRecord {
            index: iteration,
            action,
            plan_id: current_plan_id,
            steps,
            code_fingerprint: fingerprint_code(current_code),
            feedback_kind: new_feedback.kind,
            feedback_fingerprint: new_feedback.fingerprint.clone(),
            memory_code_entries: memory.code_entries(),
            memory_feedback_entries: memory.feedback_entries(),
            pool_remaining: pool.remaining().len(),
            ledger_delta: ledger.snapshot().delta_since(&iteration_start),
        }));
        iterations_used = iteration;
        let passed = new_feedback.kind == FeedbackKind::Pass;
        feedback = Some(new_feedback);
        if passed {
            solved = true;
            break;
        }
    }

    let final_code = code.unwrap_or_default();
    let plans_attempted = pool.attempted().len();
    records.push(TraceRecord::Footer(TraceFooter {
        solved_public: solved,
        iterations_used,
        plans_attempted,
        final_code: final_code.clone(),
        ledger: ledger.snapshot(),
    }));

    Ok(SessionResult {
        final_code,
        solved_public: solved,
        iterations_used,
        plans_attempted,
        trace: SessionTrace { records },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::plan::Plan;
    use crate::sandbox::{CaseResult, CaseStatus};
    use std::time::Duration;

    fn pool_with(n: usize) -> CandidatePool {
        CandidatePool::new(
            (1..=n as u32)
                .map(|id| Plan {
                    id,
                    text: format!("plan {id}"),
                    embedding: None,
                })
                .collect(),
        )
    }

    fn empty_pool() -> CandidatePool {
        let mut pool = pool_with(1);
        pool.select(1).unwrap();
        pool
    }

    fn feedback_with_output(output: &str) -> Feedback {
        Feedback::from_cases(vec![CaseResult {
            case_index: 0,
            status: CaseStatus::WrongOutput,
            input: "in".into(),
            expected_output: Some("right".into()),
            actual_output: output.into(),
            error_message: String::new(),
            wall_time: Duration::ZERO,
        }])
    }

    #[test]
    fn fingerprint_code_ignores_whitespace_noise() {
        assert_eq!(fingerprint_code("x=1\n"), fingerprint_code("x=1   \n\n"));
        assert_ne!(fingerprint_code("x=1"), fingerprint_code("x=2"));
        assert_eq!(fingerprint_code("x=1"), fingerprint_code("x=1"));
    }

    #[test]
    fn direction_truth_table() {
        let fresh_memory = MemoryStore::default();
        let mut seen_memory = MemoryStore::default();
        seen_memory.remember(
            fingerprint_code("old code"),
            feedback_with_output("2").fingerprint,
        );

        let code = "old code";
        let fresh_code = "new code";
        let feedback = feedback_with_output("2");
        let fresh_feedback = feedback_with_output("3");

        let nonempty = pool_with(2);
        let empty = empty_pool();

        // j = 1
        assert_eq!(
            decide_direction(1, None, None, &fresh_memory, &nonempty),
            Direction::NewPlan
        );
        assert_eq!(
            decide_direction(1, None, None, &fresh_memory, &empty),
            Direction::Repair
        );
        // repeated code
        assert_eq!(
            decide_direction(
                4,
                Some(code),
                Some(&fresh_feedback),
                &seen_memory,
                &nonempty
            ),
            Direction::NewPlan
        );
        assert_eq!(
            decide_direction(4, Some(code), Some(&fresh_feedback), &seen_memory, &empty),
            Direction::Repair
        );
        // repeated feedback
        assert_eq!(
            decide_direction(
                3,
                Some(fresh_code),
                Some(&feedback),
                &seen_memory,
                &nonempty
            ),
            Direction::NewPlan
        );
        assert_eq!(
            decide_direction(3, Some(fresh_code), Some(&feedback), &seen_memory, &empty),
            Direction::Repair
        );
        // fresh artifacts
        assert_eq!(
            decide_direction(
                4,
                Some(fresh_code),
                Some(&fresh_feedback),
                &seen_memory,
                &nonempty
            ),
            Direction::Repair
        );
        assert_eq!(
            decide_direction(
                4,
                Some(fresh_code),
                Some(&fresh_feedback),
                &seen_memory,
                &empty
            ),
            Direction::Repair
        );
    }

    #[test]
    fn memory_lifecycle() {
        let mut memory = MemoryStore::default();
        memory.remember("c1".into(), "f1".into());
        memory.remember("c2".into(), "f2".into());
        assert_eq!(memory.code_entries(), 2);
        assert!(memory.contains_code("c1"));
        memory.clear();
        assert_eq!(memory.code_entries(), 0);
        assert_eq!(memory.feedback_entries(), 0);
        // set semantics: repeats grow the store by at most one entry each
        memory.remember("c3".into(), "f3".into());
        memory.remember("c3".into(), "f3".into());
        assert_eq!(memory.code_entries(), 1);
        assert_eq!(memory.feedback_entries(), 1);
    }

    #[test]
    fn config_validation() {
        assert!(SessionConfig::default().validate().is_ok());
        let bad = SessionConfig {
            clusters: 20,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        let bad = SessionConfig {
            max_iterations: 0,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
    }
}
