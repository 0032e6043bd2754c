#![no_main]

use libfuzzer_sys::fuzz_target;
use reliakit::ingest::{parse_str, Dataset};
use reliakit::metrics::{pass_at_k, pass_hat_k};

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    let (records, _) = parse_str(text);
    let Ok(dataset) = Dataset::from_records(records, 1.0) else { return };
    for m in dataset.matrices.values() {
        for k in 1..=m.n().min(4) {
            let hat = pass_hat_k(m, k).unwrap();
            let at = pass_at_k(m, k).unwrap();
            assert!((0.0..=1.0).contains(&hat) && (0.0..=1.0).contains(&at) && hat <= at + 1e-12);
        }
    }
});
