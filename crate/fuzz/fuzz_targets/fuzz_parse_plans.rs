//! Model output is untrusted text; the numbered-list parser must never
//! panic, and parsed plans must be non-empty.

#![no_main]

use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &str| {
    if let Ok(plans) = tandem::prompts::parse_plans(data) {
        assert!(!plans.is_empty());
        assert!(plans.iter().all(|p| !p.trim().is_empty()));
    }
});
