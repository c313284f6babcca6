//! Prompt templates and model-output parsing.
//!
//! Six step templates ship with the crate under `templates/` and can be
//! overridden per file from a directory. Rendering is pure single-pass slot
//! substitution: slot contents are inserted verbatim and never rescanned,
//! so braces in problem descriptions cannot inject further slots.

mod parse;

pub use parse::{extract_code, parse_plans, parse_selection};

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use thiserror::Error;

use crate::gateway::{ChatRequest, Message, Role, StepTag};
use crate::problem::TestMode;
use crate::sandbox::{CaseStatus, Feedback, FeedbackKind};

/// Default completion budget per request.
pub const DEFAULT_MAX_TOKENS: u32 = 2048;

/// Sampling temperature for plan brainstorming; all other steps decode
/// greedily at 0.
pub const PLAN_TEMPERATURE: f64 = 0.8;

/// Failing cases shown in analyze/repair prompts.
pub const MAX_PROMPT_CASES: usize = 3;

#[derive(Debug, Error)]
pub enum PromptError {
    #[error("input text is empty")]
    EmptyInput,
    #[error("candidate list is empty")]
    EmptyCandidates,
    #[error("no plans found in model output")]
    NoPlansFound,
    #[error("no plan index in 1..={0} found in model output")]
    SelectionUnparsable(usize),
    #[error("feedback kind {0} cannot drive this step")]
    InvalidFeedbackKind(String),
    #[error("repair strategy is empty")]
    EmptyStrategy,
    #[error("no code found in model output")]
    NoCodeFound,
    #[error("template {name}: {message}")]
    Template { name: String, message: String },
}

/// One template per step; analyze has a variant per failing feedback kind.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum TemplateId {
    Reflect,
    Plan,
    Select,
    AnalyzeRuntimeError,
    AnalyzeWrongAnswer,
    AnalyzeTimeLimit,
    Code,
    Repair,
}

impl TemplateId {
    pub const ALL: [TemplateId; 8] = [
        TemplateId::Reflect,
        TemplateId::Plan,
        TemplateId::Select,
        TemplateId::AnalyzeRuntimeError,
        TemplateId::AnalyzeWrongAnswer,
        TemplateId::AnalyzeTimeLimit,
        TemplateId::Code,
        TemplateId::Repair,
    ];

    pub fn file_name(self) -> &'static str {
        match self {
            TemplateId::Reflect => "reflect.txt",
            TemplateId::Plan => "plan.txt",
            TemplateId::Select => "select.txt",
            TemplateId::AnalyzeRuntimeError => "analyze_runtime_error.txt",
            TemplateId::AnalyzeWrongAnswer => "analyze_wrong_answer.txt",
            TemplateId::AnalyzeTimeLimit => "analyze_time_limit.txt",
            TemplateId::Code => "code.txt",
            TemplateId::Repair => "repair.txt",
        }
    }

    fn builtin(self) -> &'static str {
        match self {
            TemplateId::Reflect => include_str!("../../templates/reflect.txt"),
            TemplateId::Plan => include_str!("../../templates/plan.txt"),
            TemplateId::Select => include_str!("../../templates/select.txt"),
            TemplateId::AnalyzeRuntimeError => {
                include_str!("../../templates/analyze_runtime_error.txt")
            }
            TemplateId::AnalyzeWrongAnswer => {
                include_str!("../../templates/analyze_wrong_answer.txt")
            }
            TemplateId::AnalyzeTimeLimit => {
                include_str!("../../templates/analyze_time_limit.txt")
            }
            TemplateId::Code => include_str!("../../templates/code.txt"),
            TemplateId::Repair => include_str!("../../templates/repair.txt"),
        }
    }

    fn required_slots(self) -> &'static [&'static str] {
        match self {
            TemplateId::Reflect => &["description"],
            TemplateId::Plan => &["description", "reflection", "batch_size"],
            TemplateId::Select => &["description", "reflection", "candidates", "count"],
            TemplateId::AnalyzeRuntimeError
            | TemplateId::AnalyzeWrongAnswer
            | TemplateId::AnalyzeTimeLimit => &["description", "code", "feedback"],
            TemplateId::Code => &["description", "plan", "language", "io_instructions"],
            TemplateId::Repair => &[
                "description",
                "code",
                "feedback",
                "strategy",
                "language",
                "io_instructions",
            ],
        }
    }
}

/// Language and test-mode context the driver templates need.
#[derive(Debug, Clone)]
pub struct CodeContext {
    pub language: String,
    pub mode: TestMode,
    pub entry_point: Option<String>,
}

impl CodeContext {
    fn io_instructions(&self) -> String {
        match self.mode {
            TestMode::Stdio => {
                "The program reads its input from standard input and writes the answer to standard output.".to_string()
            }
            TestMode::Assertion => match &self.entry_point {
                Some(name) => format!(
                    "Define the function `{name}` with exactly the name and signature the problem specifies; tests call it directly."
                ),
                None => "Expose the function described in the problem statement so tests can call it directly.".to_string(),
            },
        }
    }
}

/// Loaded, validated templates for all steps.
#[derive(Debug, Clone)]
pub struct PromptLibrary {
    templates: BTreeMap<TemplateId, String>,
}

impl Default for PromptLibrary {
    fn default() -> Self {
        Self::builtin()
    }
}

impl PromptLibrary {
    /// The templates shipped with the crate.
    pub fn builtin() -> Self {
        let templates = TemplateId::ALL
            .into_iter()
            .map(|id| (id, id.builtin().to_string()))
            .collect();
        Self { templates }
    }

    /// Replaces one template body, validating its required slots.
    pub fn with_template(mut self, id: TemplateId, body: String) -> Result<Self, PromptError> {
        self.templates.insert(id, body);
        self.validate()?;
        Ok(self)
    }

    /// Builtin templates with per-file overrides from `dir`.
    pub fn from_dir(dir: &Path) -> Result<Self, PromptError> {
        let mut library = Self::builtin();
        for id in TemplateId::ALL {
            let path = dir.join(id.file_name());
            if path.exists() {
                let body = std::fs::read_to_string(&path).map_err(|e| PromptError::Template {
                    name: id.file_name().into(),
                    message: e.to_string(),
                })?;
                library.templates.insert(id, body);
            }
        }
        library.validate()?;
        Ok(library)
    }

    fn validate(&self) -> Result<(), PromptError> {
        for (id, body) in &self.templates {
            for slot in id.required_slots() {
                if !body.contains(&format!("{{{slot}}}")) {
                    return Err(PromptError::Template {
                        name: id.file_name().into(),
                        message: format!("missing required slot {{{slot}}}"),
                    });
                }
            }
        }
        Ok(())
    }

    fn render(&self, id: TemplateId, slots: &[(&str, &str)]) -> String {
        fill_slots(&self.templates[&id], slots)
    }

    fn user_request(text: String, temperature: f64, tag: StepTag) -> ChatRequest {
        ChatRequest {
            messages: vec![Message {
                role: Role::User,
                content: text,
            }],
            temperature,
            max_tokens: DEFAULT_MAX_TOKENS,
            tag,
        }
    }

    /// Navigator reflection on the problem description.
    pub fn render_reflect(&self, description: &str) -> Result<ChatRequest, PromptError> {
        if description.trim().is_empty() {
            return Err(PromptError::EmptyInput);
        }
        let text = self.render(TemplateId::Reflect, &[("description", description)]);
        Ok(Self::user_request(text, 0.0, StepTag::Reflect))
    }

    /// Batched plan brainstorming; asks for exactly `batch_size` plans.
    pub fn render_plan(
        &self,
        description: &str,
        reflection: &str,
        batch_size: usize,
    ) -> Result<ChatRequest, PromptError> {
        if batch_size == 0 {
            return Err(PromptError::EmptyInput);
        }
        let batch = batch_size.to_string();
        let text = self.render(
            TemplateId::Plan,
            &[
                ("description", description),
                ("reflection", reflection),
                ("batch_size", &batch),
            ],
        );
        Ok(Self::user_request(text, PLAN_TEMPERATURE, StepTag::Plan))
    }

    /// Plan selection over the remaining candidates, indexed 1..k.
    pub fn render_select(
        &self,
        description: &str,
        reflection: &str,
        candidates: &[String],
    ) -> Result<ChatRequest, PromptError> {
        if candidates.is_empty() {
            return Err(PromptError::EmptyCandidates);
        }
        let mut listing = String::new();
        for (i, candidate) in candidates.iter().enumerate() {
            let _ = writeln!(listing, "{}. {}", i + 1, candidate);
        }
        let count = candidates.len().to_string();
        let text = self.render(
            TemplateId::Select,
            &[
                ("description", description),
                ("reflection", reflection),
                ("candidates", listing.trim_end()),
                ("count", &count),
            ],
        );
        Ok(Self::user_request(text, 0.0, StepTag::Select))
    }

    /// Repair-strategy generation, customized per failing feedback kind.
    pub fn render_analyze(
        &self,
        description: &str,
        code: &str,
        feedback: &Feedback,
    ) -> Result<ChatRequest, PromptError> {
        let id = match feedback.kind {
            FeedbackKind::Pass => {
                return Err(PromptError::InvalidFeedbackKind(feedback.kind.to_string()))
            }
            FeedbackKind::RuntimeError => TemplateId::AnalyzeRuntimeError,
            FeedbackKind::WrongAnswer => TemplateId::AnalyzeWrongAnswer,
            FeedbackKind::TimeLimitExceeded => TemplateId::AnalyzeTimeLimit,
        };
        let feedback_text = format_feedback(feedback, MAX_PROMPT_CASES);
        let text = self.render(
            id,
            &[
                ("description", description),
                ("code", code),
                ("feedback", &feedback_text),
            ],
        );
        Ok(Self::user_request(text, 0.0, StepTag::Analyze))
    }

    /// Initial code generation from a chosen plan.
    pub fn render_code(
        &self,
        description: &str,
        plan: &str,
        context: &CodeContext,
    ) -> Result<ChatRequest, PromptError> {
        if description.trim().is_empty() || plan.trim().is_empty() {
            return Err(PromptError::EmptyInput);
        }
        let io = context.io_instructions();
        let text = self.render(
            TemplateId::Code,
            &[
                ("description", description),
                ("plan", plan),
                ("language", &context.language),
                ("io_instructions", &io),
            ],
        );
        Ok(Self::user_request(text, 0.0, StepTag::Code))
    }

    /// Code repair under a given strategy.
    pub fn render_repair(
        &self,
        description: &str,
        code: &str,
        feedback: &Feedback,
        strategy: &str,
        context: &CodeContext,
    ) -> Result<ChatRequest, PromptError> {
        if feedback.kind == FeedbackKind::Pass {
            return Err(PromptError::InvalidFeedbackKind(feedback.kind.to_string()));
        }
        if strategy.trim().is_empty() {
            return Err(PromptError::EmptyStrategy);
        }
        let feedback_text = format_feedback(feedback, MAX_PROMPT_CASES);
        let io = context.io_instructions();
        let text = self.render(
            TemplateId::Repair,
            &[
                ("description", description),
                ("code", code),
                ("feedback", &feedback_text),
                ("strategy", strategy),
                ("language", &context.language),
                ("io_instructions", &io),
            ],
        );
        Ok(Self::user_request(text, 0.0, StepTag::Repair))
    }
}

/// Renders execution feedback for analyze/repair prompts: the error type and
/// up to `max_cases` failing cases with inputs, expected vs. actual outputs,
/// or the error message.
pub fn format_feedback(feedback: &Feedback, max_cases: usize) -> String {
    let mut out = format!("Error type: {}", feedback.kind);
    let failing: Vec<_> = feedback.failing_cases().collect();
    let shown = failing.len().min(max_cases);
    for case in &failing[..shown] {
        let _ = write!(out, "\nFailing test case {}:", case.case_index + 1);
        let _ = write!(out, "\n  input: {}", case.input);
        match case.status {
            CaseStatus::WrongOutput => {
                if let Some(expected) = &case.expected_output {
                    let _ = write!(out, "\n  expected output: {expected}");
                }
                let _ = write!(out, "\n  actual output: {}", case.actual_output);
            }
            CaseStatus::RuntimeError => {
                let _ = write!(out, "\n  error: {}", case.error_message.trim_end());
            }
            CaseStatus::Timeout => {
                let _ = write!(
                    out,
                    "\n  no output within the time limit ({:.1} s)",
                    case.wall_time.as_secs_f64()
                );
            }
            CaseStatus::Ok => {}
        }
    }
    if failing.len() > shown {
        let _ = write!(
            out,
            "\n({} more failing cases omitted)",
            failing.len() - shown
        );
    }
    out
}

/// Single-pass `{slot}` substitution. Unknown markers and all substituted
/// content pass through verbatim.
fn fill_slots(template: &str, slots: &[(&str, &str)]) -> String {
    let mut out = String::with_capacity(template.len());
    let bytes = template.as_bytes();
    let mut i = 0;
    'outer: while i < bytes.len() {
        if bytes[i] == b'{' {
            for (name, value) in slots {
                let marker_len = name.len() + 2;
                if template.get(i + 1..i + 1 + name.len()) == Some(*name)
                    && bytes.get(i + marker_len - 1) == Some(&b'}')
                {
                    out.push_str(value);
                    i += marker_len;
                    continue 'outer;
                }
            }
        }
        // advance one full character
        let ch_len = template[i..].chars().next().map_or(1, char::len_utf8);
        out.push_str(&template[i..i + ch_len]);
        i += ch_len;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sandbox::CaseResult;
    use std::time::Duration;

    fn wrong_answer_feedback() -> Feedback {
        Feedback::from_cases(vec![CaseResult {
            case_index: 0,
            status: CaseStatus::WrongOutput,
            input: "1 3 4".into(),
            expected_output: Some("1".into()),
            actual_output: "2".into(),
            error_message: String::new(),
            wall_time: Duration::from_millis(8),
        }])
    }

    fn stdio_context() -> CodeContext {
        CodeContext {
            language: "Python 3".into(),
            mode: TestMode::Stdio,
            entry_point: None,
        }
    }

    #[test]
    fn reflect_embeds_description_verbatim() {
        let lib = PromptLibrary::builtin();
        let description = "Given {n} numbers with 100% weird %s braces {}, sort them.";
        let req = lib.render_reflect(description).unwrap();
        assert!(req.rendered_text().contains(description));
        assert_eq!(req.temperature, 0.0);
        assert_eq!(req.tag, StepTag::Reflect);
    }

    #[test]
    fn reflect_rejects_empty_description() {
        let lib = PromptLibrary::builtin();
        assert!(matches!(
            lib.render_reflect("  \n"),
            Err(PromptError::EmptyInput)
        ));
    }

    #[test]
    fn plan_requests_exact_batch_size() {
        let lib = PromptLibrary::builtin();
        let req = lib.render_plan("desc", "thoughts", 5).unwrap();
        let text = req.rendered_text();
        assert!(text.contains("exactly 5 different solution plans"));
        assert!((req.temperature - PLAN_TEMPERATURE).abs() < 1e-12);
        assert_eq!(req.tag, StepTag::Plan);

        let single = lib.render_plan("desc", "", 1).unwrap();
        assert!(single
            .rendered_text()
            .contains("exactly 1 different solution plans"));
    }

    #[test]
    fn select_enumerates_candidates_with_stable_indices() {
        let lib = PromptLibrary::builtin();
        let candidates = vec![
            "Plan A".to_string(),
            "Plan B".to_string(),
            "Plan C".to_string(),
        ];
        let req = lib.render_select("desc", "refl", &candidates).unwrap();
        let text = req.rendered_text();
        assert!(text.contains("1. Plan A"));
        assert!(text.contains("2. Plan B"));
        assert!(text.contains("3. Plan C"));
        assert!(text.contains("(1-3)"));
        assert_eq!(req.temperature, 0.0);

        assert!(matches!(
            lib.render_select("desc", "refl", &[]),
            Err(PromptError::EmptyCandidates)
        ));
    }

    #[test]
    fn analyze_picks_variant_and_embeds_case_details() {
        let lib = PromptLibrary::builtin();
        let feedback = wrong_answer_feedback();
        let req = lib.render_analyze("desc", "code body", &feedback).unwrap();
        let text = req.rendered_text();
        for needle in [
            "1 3 4",
            "expected output: 1",
            "actual output: 2",
            "logic error",
        ] {
            assert!(text.contains(needle), "missing {needle:?}");
        }
        assert_eq!(req.tag, StepTag::Analyze);

        let tle = Feedback::from_cases(vec![CaseResult {
            case_index: 0,
            status: CaseStatus::Timeout,
            input: "big".into(),
            expected_output: Some("42".into()),
            actual_output: String::new(),
            error_message: String::new(),
            wall_time: Duration::from_secs(3),
        }]);
        let req = lib.render_analyze("desc", "code", &tle).unwrap();
        assert!(req
            .rendered_text()
            .contains("optimizations to improve performance"));

        let pass = Feedback::from_cases(vec![]);
        assert!(matches!(
            lib.render_analyze("desc", "code", &pass),
            Err(PromptError::InvalidFeedbackKind(_))
        ));
    }

    #[test]
    fn code_prompt_mentions_stdio_for_stdio_problems() {
        let lib = PromptLibrary::builtin();
        let req = lib
            .render_code("desc", "the plan", &stdio_context())
            .unwrap();
        let text = req.rendered_text();
        assert!(text.contains("standard input"));
        assert!(text.contains("standard output"));
        assert!(text.contains("the plan"));
        assert_eq!(req.tag, StepTag::Code);
    }

    #[test]
    fn code_prompt_names_entry_point_for_assertion_problems() {
        let lib = PromptLibrary::builtin();
        let ctx = CodeContext {
            language: "Python 3".into(),
            mode: TestMode::Assertion,
            entry_point: Some("min_insertions".into()),
        };
        let req = lib.render_code("desc", "plan", &ctx).unwrap();
        assert!(req.rendered_text().contains("`min_insertions`"));
    }

    #[test]
    fn repair_prompt_contains_all_four_sections() {
        let lib = PromptLibrary::builtin();
        let feedback = wrong_answer_feedback();
        let req = lib
            .render_repair(
                "the desc",
                "the buggy code",
                &feedback,
                "the strategy",
                &stdio_context(),
            )
            .unwrap();
        let text = req.rendered_text();
        for needle in [
            "the desc",
            "the buggy code",
            "actual output: 2",
            "the strategy",
        ] {
            assert!(text.contains(needle), "missing {needle:?}");
        }
        assert_eq!(req.tag, StepTag::Repair);

        assert!(matches!(
            lib.render_repair("d", "c", &feedback, "  ", &stdio_context()),
            Err(PromptError::EmptyStrategy)
        ));
    }

    #[test]
    fn repair_prompt_shows_exception_text() {
        let lib = PromptLibrary::builtin();
        let feedback = Feedback::from_cases(vec![CaseResult {
            case_index: 0,
            status: CaseStatus::RuntimeError,
            input: "7".into(),
            expected_output: Some("x".into()),
            actual_output: String::new(),
            error_message:
                "Traceback (most recent call last):\nIndexError: list index out of range".into(),
            wall_time: Duration::from_millis(5),
        }]);
        let req = lib
            .render_repair("d", "c", &feedback, "guard the index", &stdio_context())
            .unwrap();
        assert!(req
            .rendered_text()
            .contains("IndexError: list index out of range"));
    }

    #[test]
    fn feedback_formatting_truncates_to_three_cases() {
        let cases: Vec<CaseResult> = (0..5)
            .map(|i| CaseResult {
                case_index: i,
                status: CaseStatus::WrongOutput,
                input: format!("in{i}"),
                expected_output: Some("e".into()),
                actual_output: "a".into(),
                error_message: String::new(),
                wall_time: Duration::ZERO,
            })
            .collect();
        let text = format_feedback(&Feedback::from_cases(cases), MAX_PROMPT_CASES);
        assert!(text.contains("in0") && text.contains("in2"));
        assert!(!text.contains("in3"));
        assert!(text.contains("2 more failing cases omitted"));
    }

    #[test]
    fn rendering_is_pure() {
        let lib = PromptLibrary::builtin();
        let a = lib.render_plan("d", "r", 5).unwrap();
        let b = lib.render_plan("d", "r", 5).unwrap();
        assert_eq!(a.rendered_text(), b.rendered_text());
    }

    #[test]
    fn slot_content_is_never_rescanned() {
        let filled = fill_slots("A {x} B", &[("x", "{y}"), ("y", "BAD")]);
        assert_eq!(filled, "A {y} B");
        let unknown = fill_slots("keep {unknown} and {x}", &[("x", "ok")]);
        assert_eq!(unknown, "keep {unknown} and ok");
    }

    #[test]
    fn non_ascii_templates_render_safely() {
        let lib = PromptLibrary::builtin()
            .with_template(TemplateId::Reflect, "préfixe {é} {description} ✓{d".into())
            .unwrap();
        let req = lib.render_reflect("désc").unwrap();
        assert_eq!(req.rendered_text(), "préfixe {é} désc ✓{d");
    }

    #[test]
    fn template_dir_override_and_validation() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("reflect.txt"), "custom: {description}").unwrap();
        let lib = PromptLibrary::from_dir(dir.path()).unwrap();
        let req = lib.render_reflect("hello").unwrap();
        assert_eq!(req.rendered_text(), "custom: hello");

        std::fs::write(dir.path().join("reflect.txt"), "no slot here").unwrap();
        assert!(matches!(
            PromptLibrary::from_dir(dir.path()),
            Err(PromptError::Template { .. })
        ));
    }
}
