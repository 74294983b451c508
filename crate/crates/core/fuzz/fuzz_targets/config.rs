#![no_main]

use clr_impute::config::{parse_config, to_args};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        if let Ok(pairs) = parse_config(text) {
            let _ = to_args(&pairs);
        }
    }
});
