//! Plan sampling, deduplication, and the candidate pool.
//!
//! Plans are brainstormed in batches at a diversity temperature, parsed from
//! numbered lists, and deduplicated by whitespace-normalized text (first
//! occurrence wins, so surviving ids stay strictly increasing). The pool
//! holds the un-attempted representatives; selecting a plan removes it for
//! good.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gateway::{EmbeddingVector, GatewayError, SessionGateway};
use crate::prompts::{parse_plans, PromptError, PromptLibrary};

#[derive(Debug, Error)]
pub enum PlanError {
    #[error("plan {0} is not in the remaining pool")]
    NotInPool(u32),
    #[error("no plans parsed after sampling and one re-sample round")]
    NoPlansFound,
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error(transparent)]
    Prompt(#[from] PromptError),
}

/// A natural-language solution plan. `id` is the sampling order, unique
/// within a session.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Plan {
    pub id: u32,
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub embedding: Option<EmbeddingVector>,
}

/// The un-attempted representatives, in cluster order. A plan moves from
/// remaining to attempted exactly once and never back.
#[derive(Debug, Clone, Default)]
pub struct CandidatePool {
    remaining: Vec<Plan>,
    attempted: Vec<Plan>,
}

impl CandidatePool {
    pub fn new(representatives: Vec<Plan>) -> Self {
        Self {
            remaining: representatives,
            attempted: Vec::new(),
        }
    }

    pub fn remaining(&self) -> &[Plan] {
        &self.remaining
    }

    pub fn attempted(&self) -> &[Plan] {
        &self.attempted
    }

    pub fn is_exhausted(&self) -> bool {
        self.remaining.is_empty()
    }

    /// Moves the plan with `plan_id` from remaining to attempted and returns
    /// it.
    pub fn select(&mut self, plan_id: u32) -> Result<Plan, PlanError> {
        let index = self
            .remaining
            .iter()
            .position(|p| p.id == plan_id)
            .ok_or(PlanError::NotInPool(plan_id))?;
        let plan = self.remaining.remove(index);
        self.attempted.push(plan.clone());
        Ok(plan)
    }

    /// Selects the remaining plan at 1-based `index` (the selection-prompt
    /// numbering).
    pub fn select_nth(&mut self, index: usize) -> Result<Plan, PlanError> {
        let id = self
            .remaining
            .get(index.saturating_sub(1))
            .map(|p| p.id)
            .ok_or(PlanError::NotInPool(index as u32))?;
        self.select(id)
    }
}

fn normalize_plan_text(text: &str) -> String {
    text.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Deduplicates plan texts (whitespace-normalized, first occurrence wins)
/// and assigns ids in sampling order.
pub fn dedup_plans(texts: Vec<String>) -> Vec<Plan> {
    let mut seen: Vec<String> = Vec::new();
    let mut plans = Vec::new();
    for (i, text) in texts.into_iter().enumerate() {
        let normalized = normalize_plan_text(&text);
        if normalized.is_empty() || seen.contains(&normalized) {
            continue;
        }
        seen.push(normalized);
        plans.push(Plan {
            id: i as u32 + 1,
            text,
            embedding: None,
        });
    }
    plans
}

/// Samples up to `n` diverse plans in `ceil(n / batch_size)` batched
/// requests at `temperature`. If no batch parses to any plan, one full
/// re-sample round is attempted before giving up.
pub fn sample_plans(
    gateway: &mut SessionGateway,
    library: &PromptLibrary,
    description: &str,
    reflection: &str,
    n: usize,
    batch_size: usize,
    temperature: f64,
) -> Result<Vec<Plan>, PlanError> {
    debug_assert!(n >= 1 && (1..=n).contains(&batch_size));
    let batches = n.div_ceil(batch_size);
    let mut texts: Vec<String> = Vec::new();
    for round in 0..2 {
        for _ in 0..batches {
            let mut request = library.render_plan(description, reflection, batch_size)?;
            request.temperature = temperature;
            let response = gateway.complete(&request)?;
            if let Ok(items) = parse_plans(&response.text) {
                texts.extend(items);
            }
        }
        if !texts.is_empty() {
            break;
        }
        if round == 0 {
            log::warn!("no plans parsed from {batches} batches; re-sampling once");
        }
    }
    let mut plans = dedup_plans(texts);
    plans.truncate(n);
    if plans.is_empty() {
        return Err(PlanError::NoPlansFound);
    }
    Ok(plans)
}

/// Fetches embeddings for all plan texts in one batch and attaches them.
pub fn attach_embeddings(
    gateway: &mut SessionGateway,
    plans: &mut [Plan],
) -> Result<(), PlanError> {
    let texts: Vec<String> = plans.iter().map(|p| p.text.clone()).collect();
    let vectors = gateway.embed(&texts)?;
    for (plan, vector) in plans.iter_mut().zip(vectors) {
        plan.embedding = Some(vector);
    }
    Ok(())
}
