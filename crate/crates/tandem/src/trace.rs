//! Session traces: line-delimited JSON with one header, one setup record,
//! one record per iteration, and one footer. Traces are deterministic for
//! scripted runs (no wall-clock fields), so replays are byte-identical.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::gateway::{LedgerDelta, LedgerSnapshot};
use crate::sandbox::FeedbackKind;

#[derive(Debug, Error)]
pub enum TraceError {
    #[error("failed to read trace: {0}")]
    Io(#[from] std::io::Error),
    #[error("trace parse error at byte {offset}: {message}")]
    Parse { offset: u64, message: String },
    #[error("malformed trace: {0}")]
    Structure(String),
}

/// 16-hex-char digest used for prompt/response/code summaries in traces.
pub fn short_digest(text: &str) -> String {
    let mut hasher = Sha256::new();
    hasher.update(text.as_bytes());
    let digest = hasher.finalize();
    digest[..8].iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StepDigest {
    pub prompt_sha: String,
    pub response_sha: String,
}

impl StepDigest {
    pub fn new(prompt: &str, response: &str) -> Self {
        Self {
            prompt_sha: short_digest(prompt),
            response_sha: short_digest(response),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceHeader {
    pub problem_id: String,
    pub seed: u64,
    pub max_iterations: usize,
    pub plans_to_sample: usize,
    pub clusters: usize,
    pub batch_size: usize,
    pub plan_temperature: f64,
    pub time_limit_s: f64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlanSummary {
    pub id: u32,
    pub text_sha: String,
}

/// The pre-loop work: reflection, plan sampling, clustering.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SetupRecord {
    pub reflect: StepDigest,
    pub plans: Vec<PlanSummary>,
    pub representative_ids: Vec<u32>,
    pub ledger_delta: LedgerDelta,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActionKind {
    NewPlan,
    Repair,
}

impl std::fmt::Display for ActionKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ActionKind::NewPlan => f.write_str("new plan"),
            ActionKind::Repair => f.write_str("repair"),
        }
    }
}

/// One pass of the iteration loop.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub index: usize,
    pub action: ActionKind,
    pub plan_id: u32,
    /// Prompt/response digests keyed by step tag (select, code, analyze,
    /// repair).
    pub steps: BTreeMap<String, StepDigest>,
    pub code_fingerprint: String,
    pub feedback_kind: FeedbackKind,
    pub feedback_fingerprint: String,
    pub memory_code_entries: usize,
    pub memory_feedback_entries: usize,
    pub pool_remaining: usize,
    pub ledger_delta: LedgerDelta,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceFooter {
    pub solved_public: bool,
    pub iterations_used: usize,
    pub plans_attempted: usize,
    pub final_code: String,
    pub ledger: LedgerSnapshot,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "record", rename_all = "snake_case")]
pub enum TraceRecord {
    Header(TraceHeader),
    Setup(SetupRecord),
    Iteration(IterationRecord),
    Footer(TraceFooter),
}

/// A complete session trace.
#[derive(Debug, Clone, PartialEq)]
pub struct SessionTrace {
    pub records: Vec<TraceRecord>,
}

impl SessionTrace {
    pub fn header(&self) -> Option<&TraceHeader> {
        self.records.iter().find_map(|r| match r {
            TraceRecord::Header(h) => Some(h),
            _ => None,
        })
    }

    pub fn setup(&self) -> Option<&SetupRecord> {
        self.records.iter().find_map(|r| match r {
            TraceRecord::Setup(s) => Some(s),
            _ => None,
        })
    }

    pub fn iterations(&self) -> impl Iterator<Item = &IterationRecord> {
        self.records.iter().filter_map(|r| match r {
            TraceRecord::Iteration(i) => Some(i),
            _ => None,
        })
    }

    pub fn footer(&self) -> Option<&TraceFooter> {
        self.records.iter().find_map(|r| match r {
            TraceRecord::Footer(f) => Some(f),
            _ => None,
        })
    }

    /// Serializes to line-delimited JSON.
    pub fn write_to<W: Write>(&self, mut out: W) -> Result<(), TraceError> {
        for record in &self.records {
            let json = serde_json::to_string(record).expect("trace records serialize");
            writeln!(out, "{json}")?;
        }
        Ok(())
    }

    pub fn to_jsonl(&self) -> String {
        let mut buf = Vec::new();
        self.write_to(&mut buf).expect("in-memory write");
        String::from_utf8(buf).expect("trace JSON is UTF-8")
    }

    /// Parses a trace, reporting the byte offset of the first malformed
    /// record. Requires a header and a footer.
    pub fn parse(bytes: &[u8]) -> Result<Self, TraceError> {
        let text = String::from_utf8_lossy(bytes);
        let mut records = Vec::new();
        let mut offset: u64 = 0;
        for line in text.split_inclusive('\n') {
            let body = line.trim_end_matches('\n');
            if !body.trim().is_empty() {
                let record: TraceRecord =
                    serde_json::from_str(body).map_err(|e| TraceError::Parse {
                        offset: offset + e.column().saturating_sub(1) as u64,
                        message: e.to_string(),
                    })?;
                records.push(record);
            }
            offset += line.len() as u64;
        }
        let trace = Self { records };
        if trace.header().is_none() {
            return Err(TraceError::Structure("missing header record".into()));
        }
        if trace.footer().is_none() {
            return Err(TraceError::Structure("missing footer record".into()));
        }
        Ok(trace)
    }

    pub fn load(path: &Path) -> Result<Self, TraceError> {
        let bytes = std::fs::read(path)?;
        Self::parse(&bytes)
    }

    /// Human-readable iteration-by-iteration narrative.
    pub fn narrative(&self) -> String {
        let mut out = String::new();
        if let Some(header) = self.header() {
            out.push_str(&format!(
                "problem {} (seed {}, r={}, n={}, k={})\n",
                header.problem_id,
                header.seed,
                header.max_iterations,
                header.plans_to_sample,
                header.clusters
            ));
        }
        if let Some(setup) = self.setup() {
            out.push_str(&format!(
                "setup: {} plans sampled, {} candidate(s): {:?}\n",
                setup.plans.len(),
                setup.representative_ids.len(),
                setup.representative_ids
            ));
        }
        for it in self.iterations() {
            out.push_str(&format!(
                "iter {}: {} -> plan {}; feedback {}; memory {}/{}; pool remaining {}\n",
                it.index,
                it.action,
                it.plan_id,
                it.feedback_kind,
                it.memory_code_entries,
                it.memory_feedback_entries,
                it.pool_remaining
            ));
        }
        if let Some(footer) = self.footer() {
            out.push_str(&format!(
                "result: {} after {} iteration(s), {} plan(s) attempted, {} api call(s)\n",
                if footer.solved_public {
                    "public tests passed"
                } else {
                    "public tests not passed"
                },
                footer.iterations_used,
                footer.plans_attempted,
                footer.ledger.api_calls
            ));
        }
        out
    }
}
