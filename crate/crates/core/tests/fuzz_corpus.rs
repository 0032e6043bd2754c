//! Replays the checked-in fuzz corpus through the same checks as the fuzz
//! targets, so the seeds stay meaningful on stable toolchains.

use std::path::PathBuf;

use reliakit::harness::stub::RunnerSpec;
use reliakit::ingest::{parse_line, parse_str, Dataset};
use reliakit::report::parse_csv_metrics;
use reliakit::{parse_k_list, pass_at_k, pass_hat_k};

fn seeds(target: &str) -> Vec<(String, String)> {
    let dir = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fuzz/corpus").join(target);
    let mut out: Vec<(String, String)> = std::fs::read_dir(&dir)
        .unwrap_or_else(|e| panic!("{}: {e}", dir.display()))
        .map(|entry| {
            let path = entry.unwrap().path();
            let text = String::from_utf8(std::fs::read(&path).unwrap()).unwrap();
            (path.file_name().unwrap().to_string_lossy().into_owned(), text)
        })
        .collect();
    out.sort();
    assert!(!out.is_empty(), "no seeds for {target}");
    out
}

#[test]
fn trace_line_seeds() {
    for (name, text) in seeds("trace_line") {
        let (records, diagnostics) = parse_str(&text);
        let non_blank = text.lines().filter(|l| !l.trim().is_empty()).count();
        assert_eq!(records.len() + diagnostics.len(), non_blank, "{name}");
        for r in records {
            assert_eq!(parse_line(&r.to_json_line()).unwrap(), r, "{name}");
        }
    }
}

#[test]
fn ingest_dataset_seeds() {
    let mut built = 0;
    for (name, text) in seeds("ingest_dataset") {
        let (records, _) = parse_str(&text);
        let Ok(dataset) = Dataset::from_records(records, 1.0) else { continue };
        built += 1;
        for m in dataset.matrices.values() {
            for k in 1..=m.n().min(4) {
                let hat = pass_hat_k(m, k).unwrap();
                let at = pass_at_k(m, k).unwrap();
                assert!(hat <= at + 1e-12, "{name}");
            }
        }
    }
    assert!(built > 0);
}

#[test]
fn report_csv_seeds() {
    let results: Vec<bool> = seeds("report_csv")
        .iter()
        .map(|(_, text)| parse_csv_metrics(text).is_ok())
        .collect();
    assert!(results.contains(&true) && results.contains(&false));
}

#[test]
fn runner_spec_seeds() {
    for (name, text) in seeds("runner_spec") {
        if let Ok(spec) = text.parse::<RunnerSpec>() {
            assert_eq!(spec.to_string().parse::<RunnerSpec>(), Ok(spec), "{name}");
        }
    }
}

#[test]
fn k_list_seeds() {
    for (name, text) in seeds("k_list") {
        if let Ok(ks) = parse_k_list(&text) {
            assert!(ks.windows(2).all(|w| w[0] < w[1]) && ks[0] >= 1, "{name}");
        }
    }
}
