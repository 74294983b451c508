#![no_main]

use clr_impute::tensor::{load_coo, load_coo_infer_dims, Dims};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(t) = load_coo_infer_dims(data) {
        let d = t.dims();
        assert!(t.entries().iter().all(|e| d.contains(e.idx)));
        let mut out = Vec::new();
        t.write_coo(&mut out).unwrap();
        let back = load_coo(&out[..], d).unwrap();
        assert_eq!(back.len(), t.len());
    }
    let _ = load_coo(data, Dims::new(4, 4, 4).unwrap());
});
