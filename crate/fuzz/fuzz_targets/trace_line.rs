#![no_main]

use libfuzzer_sys::fuzz_target;
use reliakit::ingest::{parse_line, parse_str};

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    let (records, diagnostics) = parse_str(text);
    let non_blank = text.lines().filter(|l| !l.trim().is_empty()).count();
    assert_eq!(records.len() + diagnostics.len(), non_blank);
    for r in records {
        let again = parse_line(&r.to_json_line()).expect("written records parse");
        assert_eq!(again, r);
    }
});
