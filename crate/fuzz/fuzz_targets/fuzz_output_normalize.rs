#![no_main]

use libfuzzer_sys::fuzz_target;
use tandem::sandbox::{error_class, normalize_output, truncate_text};

fuzz_target!(|data: &str| {
    let normalized = normalize_output(data);
    // idempotent
    assert_eq!(normalize_output(&normalized), normalized);
    let _ = error_class(data);
    let truncated = truncate_text(data, 2000);
    assert!(truncated.chars().count() <= 2000);
});
