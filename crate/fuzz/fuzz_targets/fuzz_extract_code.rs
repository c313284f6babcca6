#![no_main]

use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &str| {
    if data.len() > 1 << 20 {
        return;
    }
    if let Ok(code) = tandem::prompts::extract_code(data) {
        // extracted code never carries leading/trailing blank lines
        assert_eq!(code.trim_matches('\n'), code);
    }
});
