//! Two-agent plan-and-repair code generation.
//!
//! A navigator agent reflects on a programming problem, brainstorms diverse
//! solution plans, clusters them and keeps the centroid-nearest
//! representatives, then steers each iteration: pick a fresh plan, or repair
//! the current code under a feedback-specific strategy. A driver agent turns
//! plans into programs and fixes them. Execution feedback from a sandboxed
//! test runner closes the loop, and a per-plan memory of code and feedback
//! fingerprints decides when a plan has stopped making progress.
//!
//! The crate is organized along that pipeline:
//!
//! - [`problem`]: benchmarks, problems, test cases, public-test derivation
//! - [`gateway`]: chat/embedding backends (live HTTP or scripted fixtures),
//!   retry, cost ledger
//! - [`prompts`]: step templates, rendering, and model-output parsing
//! - [`plan`] / [`cluster`]: plan sampling, dedup, k-means++ representatives
//! - [`sandbox`]: isolated test execution and feedback classification
//! - [`session`]: the navigator-driver iteration loop
//! - [`eval`]: private-test judging, pass@1 aggregation, reports
//! - [`runner`]: benchmark-level orchestration for the CLI
//! - [`trace`]: deterministic session traces and replay

#![forbid(unsafe_code)]

pub mod cluster;
pub mod eval;
pub mod gateway;
pub mod plan;
pub mod problem;
pub mod prompts;
pub mod runner;
pub mod sandbox;
pub mod session;
pub mod trace;
