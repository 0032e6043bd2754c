#![no_main]

use libfuzzer_sys::fuzz_target;
use reliakit::parse_k_list;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(ks) = parse_k_list(text) {
        assert!(!ks.is_empty());
        assert!(ks.windows(2).all(|w| w[0] < w[1]));
        assert!(ks[0] >= 1);
    }
});
