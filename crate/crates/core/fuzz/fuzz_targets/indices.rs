#![no_main]

use clr_impute::tensor::{load_indices, Dims};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let _ = load_indices(data, Dims::new(8, 8, 8).unwrap());
});
