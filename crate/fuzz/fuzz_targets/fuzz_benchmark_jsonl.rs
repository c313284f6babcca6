//! Benchmark files arrive from outside the trust boundary; parsing must
//! reject garbage without panicking.

#![no_main]

use libfuzzer_sys::fuzz_target;
use std::io::BufReader;

fuzz_target!(|data: &[u8]| {
    if data.len() > 1 << 20 {
        return;
    }
    let _ = tandem::problem::parse_benchmark("fuzz", BufReader::new(data));
});
