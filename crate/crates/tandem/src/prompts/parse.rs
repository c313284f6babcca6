//! Parsers for structured model output: numbered plan lists, plan-index
//! selections, and code blocks. These accept arbitrary untrusted text and
//! must never panic.

use super::PromptError;

/// Splits a numbered list into trimmed item texts, preserving order.
///
/// Items may be introduced as `1.`, `1)`, or `Plan 1:`. Prose before the
/// first item is discarded and items with empty bodies are dropped.
pub fn parse_plans(model_output: &str) -> Result<Vec<String>, PromptError> {
    let mut plans: Vec<String> = Vec::new();
    let mut current: Option<String> = None;
    for line in model_output.lines() {
        if let Some(rest) = item_start(line) {
            if let Some(done) = current.take() {
                push_plan(&mut plans, done);
            }
            current = Some(rest.to_string());
        } else if let Some(body) = current.as_mut() {
            body.push('\n');
            body.push_str(line);
        }
    }
    if let Some(done) = current.take() {
        push_plan(&mut plans, done);
    }
    if plans.is_empty() {
        return Err(PromptError::NoPlansFound);
    }
    Ok(plans)
}

fn push_plan(plans: &mut Vec<String>, body: String) {
    let trimmed = body.trim();
    if !trimmed.is_empty() {
        plans.push(trimmed.to_string());
    }
}

/// Returns the item body when `line` starts a numbered item.
fn item_start(line: &str) -> Option<&str> {
    let trimmed = line.trim_start();
    // "Plan 1:" style
    let lower = trimmed.to_ascii_lowercase();
    if let Some(after) = lower.strip_prefix("plan ") {
        let digits = after.chars().take_while(|c| c.is_ascii_digit()).count();
        if digits > 0 {
            let after_digits = &after[digits..];
            if let Some(stripped) = after_digits.strip_prefix(':') {
                let offset = trimmed.len() - stripped.len();
                return Some(trimmed[offset..].trim_start());
            }
        }
        return None;
    }
    // "1." / "1)" styles
    let digits = trimmed.chars().take_while(|c| c.is_ascii_digit()).count();
    if digits == 0 {
        return None;
    }
    let rest = &trimmed[digits..];
    let mut chars = rest.chars();
    match chars.next() {
        Some('.') | Some(')') => {
            let body = chars.as_str();
            if body.is_empty() || body.starts_with(char::is_whitespace) {
                Some(body.trim_start())
            } else {
                // "3.14" is a number, not a list item
                None
            }
        }
        _ => None,
    }
}

/// Extracts the first integer in `1..=k` from the output.
pub fn parse_selection(model_output: &str, k: usize) -> Result<usize, PromptError> {
    debug_assert!(k >= 1);
    let mut digits = String::new();
    for ch in model_output.chars().chain(std::iter::once(' ')) {
        if ch.is_ascii_digit() {
            digits.push(ch);
            continue;
        }
        if !digits.is_empty() {
            if let Ok(value) = digits.parse::<usize>() {
                if (1..=k).contains(&value) {
                    return Ok(value);
                }
            }
            digits.clear();
        }
    }
    Err(PromptError::SelectionUnparsable(k))
}

/// Returns the body of the first fenced code block; without fences, falls
/// back to the longest contiguous run of code-looking lines.
pub fn extract_code(model_output: &str) -> Result<String, PromptError> {
    if let Some(block) = first_fenced_block(model_output) {
        let trimmed = trim_blank_edges(&block);
        if !trimmed.is_empty() {
            return Ok(trimmed);
        }
    }
    longest_code_run(model_output).ok_or(PromptError::NoCodeFound)
}

fn first_fenced_block(text: &str) -> Option<String> {
    let mut lines = text.lines();
    loop {
        let line = lines.next()?;
        if line.trim_start().starts_with("```") {
            // remainder of the opening line is a language tag; skip it
            let mut body = Vec::new();
            for inner in lines.by_ref() {
                if inner.trim_start().starts_with("```") {
                    return Some(body.join("\n"));
                }
                body.push(inner);
            }
            // unterminated fence: models often truncate the closer
            return Some(body.join("\n"));
        }
    }
}

const CODE_KEYWORDS: &[&str] = &[
    "def", "class", "import", "from", "return", "if", "elif", "else", "for", "while", "try",
    "except", "finally", "with", "print", "assert", "lambda", "pass", "break", "continue", "raise",
    "global", "yield", "fn", "let", "const", "var", "function", "#include", "using",
];

fn looks_like_code(line: &str) -> bool {
    if line.starts_with("    ") || line.starts_with('\t') {
        return true;
    }
    let trimmed = line.trim_start();
    let first = trimmed
        .split(|c: char| c.is_whitespace() || c == '(' || c == ':')
        .next()
        .unwrap_or("");
    if CODE_KEYWORDS.contains(&first) {
        return true;
    }
    // bare ':' endings are excluded: block openers carry keywords anyway and
    // prose sentences introduce lists with colons all the time
    trimmed.contains(" = ")
        || trimmed.contains("+=")
        || trimmed.contains("-=")
        || trimmed.ends_with(';')
        || trimmed.ends_with('{')
        || trimmed.ends_with('}')
}

fn longest_code_run(text: &str) -> Option<String> {
    let lines: Vec<&str> = text.lines().collect();
    let mut best: Option<(usize, usize, usize)> = None; // (code_lines, start, end)
    let mut start = None;
    let mut code_lines = 0;
    for (i, line) in lines.iter().enumerate() {
        let blank = line.trim().is_empty();
        if !blank && looks_like_code(line) {
            if start.is_none() {
                start = Some(i);
                code_lines = 0;
            }
            code_lines += 1;
        } else if !blank {
            if let Some(s) = start.take() {
                if best.is_none_or(|(n, _, _)| code_lines > n) {
                    best = Some((code_lines, s, i));
                }
            }
        }
        // blank lines neither extend nor break a run
    }
    if let Some(s) = start {
        if best.is_none_or(|(n, _, _)| code_lines > n) {
            best = Some((code_lines, s, lines.len()));
        }
    }
    best.map(|(_, s, e)| trim_blank_edges(&lines[s..e].join("\n")))
}

fn trim_blank_edges(text: &str) -> String {
    let lines: Vec<&str> = text.lines().collect();
    let start = lines
        .iter()
        .position(|l| !l.trim().is_empty())
        .unwrap_or(lines.len());
    let end = lines
        .iter()
        .rposition(|l| !l.trim().is_empty())
        .map_or(start, |i| i + 1);
    lines[start..end].join("\n")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_item_list_parses() {
        let plans =
            parse_plans("1. Greedy scan over the input.\n2. Brute force all options.").unwrap();
        assert_eq!(plans.len(), 2);
        assert_eq!(plans[0], "Greedy scan over the input.");
        assert_eq!(plans[1], "Brute force all options.");
    }

    #[test]
    fn preamble_is_discarded_and_bodies_span_lines() {
        let output = "Sure! Here are my plans:\n\n1. First plan\n   with details.\n2) Second plan.\nPlan 3: Third plan.";
        let plans = parse_plans(output).unwrap();
        assert_eq!(plans.len(), 3);
        assert_eq!(plans[0], "First plan\n   with details.");
        assert_eq!(plans[1], "Second plan.");
        assert_eq!(plans[2], "Third plan.");
    }

    #[test]
    fn prose_without_numbering_is_no_plans() {
        assert!(matches!(
            parse_plans("I would probably sort the list and scan it."),
            Err(PromptError::NoPlansFound)
        ));
        assert!(matches!(parse_plans(""), Err(PromptError::NoPlansFound)));
    }

    #[test]
    fn empty_bodies_are_dropped() {
        let plans = parse_plans("1.\n2. Real plan").unwrap();
        assert_eq!(plans, vec!["Real plan".to_string()]);
    }

    #[test]
    fn decimal_numbers_do_not_start_items() {
        assert!(parse_plans("pi is 3.14 and that is all").is_err());
    }

    #[test]
    fn selection_finds_first_in_range_integer() {
        assert_eq!(
            parse_selection("The best plan is Plan 2 because...", 3).unwrap(),
            2
        );
        assert_eq!(parse_selection("2) it is simplest", 2).unwrap(), 2);
        assert_eq!(parse_selection("I pick 10, not 3", 3).unwrap(), 3);
    }

    #[test]
    fn selection_out_of_range_is_unparsable() {
        assert!(matches!(
            parse_selection("4", 3),
            Err(PromptError::SelectionUnparsable(3))
        ));
        assert!(parse_selection("none of them", 3).is_err());
        assert!(parse_selection("0", 3).is_err());
        // absurdly long digit runs must not overflow
        assert!(parse_selection(&"9".repeat(100), 3).is_err());
    }

    #[test]
    fn first_fenced_block_wins() {
        let output =
            "Here you go:\n```python\nprint(1)\n```\nAnd another:\n```python\nprint(2)\n```";
        assert_eq!(extract_code(output).unwrap(), "print(1)");
    }

    #[test]
    fn unterminated_fence_takes_rest() {
        let output = "```python\nx = 1\nprint(x)";
        assert_eq!(extract_code(output).unwrap(), "x = 1\nprint(x)");
    }

    #[test]
    fn heuristic_recovers_unfenced_code() {
        let output = "Here is the program:\n\nimport sys\nnums = [int(x) for x in sys.stdin.read().split()]\nprint(max(nums))\n\nHope this helps!";
        let code = extract_code(output).unwrap();
        assert!(code.starts_with("import sys"));
        assert!(code.ends_with("print(max(nums))"));
        assert!(!code.contains("Hope"));
    }

    #[test]
    fn pure_prose_is_no_code() {
        assert!(matches!(
            extract_code("I am not able to solve this problem right now."),
            Err(PromptError::NoCodeFound)
        ));
    }

    #[test]
    fn blank_edges_are_trimmed() {
        let output = "```\n\n\nprint(1)\n\n```";
        assert_eq!(extract_code(output).unwrap(), "print(1)");
    }

    proptest::proptest! {
        // round-trip: a synthetic numbered list of plan texts (no embedded
        // numbering of their own) parses back to exactly those texts
        #[test]
        fn numbered_list_round_trips(
            texts in proptest::collection::vec("[a-zA-Z][a-zA-Z ,;]{0,40}[a-zA-Z]", 1..6)
        ) {
            let rendered: String = texts
                .iter()
                .enumerate()
                .map(|(i, t)| format!("{}. {t}", i + 1))
                .collect::<Vec<_>>()
                .join("\n");
            let parsed = parse_plans(&rendered).unwrap();
            proptest::prop_assert_eq!(parsed, texts);
        }
    }
}
