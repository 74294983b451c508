#![no_main]

use clr_impute::checkpoint::Checkpoint;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(c) = Checkpoint::read(data) {
        let mut out = Vec::new();
        c.write(&mut out).unwrap();
        let back = Checkpoint::read(&out[..]).unwrap();
        assert_eq!(back.model.dims(), c.model.dims());
    }
});
