#![no_main]

use clr_impute::split::parse_split_lines;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let _ = parse_split_lines(data);
});
