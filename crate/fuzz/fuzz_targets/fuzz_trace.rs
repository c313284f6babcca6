//! Replay reads trace files that may be truncated or hand-edited.

#![no_main]

use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if data.len() > 1 << 20 {
        return;
    }
    if let Ok(trace) = tandem::trace::SessionTrace::parse(data) {
        // anything that parses must render a narrative without panicking
        let _ = trace.narrative();
    }
});
