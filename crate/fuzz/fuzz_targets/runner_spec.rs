#![no_main]

use libfuzzer_sys::fuzz_target;
use reliakit::harness::stub::RunnerSpec;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(spec) = text.parse::<RunnerSpec>() {
        assert_eq!(spec.to_string().parse::<RunnerSpec>(), Ok(spec));
    }
});
