//! Acceptance checks. Each criterion prints one PASS/FAIL line; the process
//! exits non-zero if any criterion fails.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::Instant;

use num::{BigInt, BigRational, Zero};
use reliakit::harness::{select_feedback_mode, AttemptResult, EpisodeRecord, FeedbackDecision, BINARY_RETRY_SIGNAL};
use reliakit::metrics::{pass_at_k_exact, pass_hat_k_exact};
use reliakit::paired::{mcnemar, wilcoxon, Discordance, McNemarMethod, WilcoxonMethod};
use reliakit::report::parse_csv_metrics;
use reliakit::rng::CounterRng;
use reliakit::simlab::{self, CalibrationConfig, RetryExperimentConfig, UnbiasednessConfig};
use reliakit::{pass_at_k, pass_hat_k, OutcomeMatrix, SettingLabel, TaskId};

struct Outcome {
    pass: bool,
    detail: String,
}

fn check(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn uniform_below(rng: &mut CounterRng, bound: u64) -> u64 {
    rng.next_u64() % bound
}

// 1 ---------------------------------------------------------------------------

/// Average over all k-subsets of a task's runs of "every run in the subset
/// succeeded", averaged over tasks; exact rationals.
fn subset_oracle(rows: &[Vec<bool>], k: usize, any: bool) -> BigRational {
    let n = rows[0].len();
    let mut total = BigRational::zero();
    for row in rows {
        let mut hits = 0u64;
        let mut subsets = 0u64;
        for mask in 0u32..(1 << n) {
            if mask.count_ones() as usize != k {
                continue;
            }
            subsets += 1;
            let picked = (0..n).filter(|&j| mask >> j & 1 == 1);
            let ok = if any {
                picked.clone().any(|j| row[j])
            } else {
                picked.clone().all(|j| row[j])
            };
            hits += u64::from(ok);
        }
        total += BigRational::new(BigInt::from(hits), BigInt::from(subsets));
    }
    total / BigRational::from_integer(BigInt::from(rows.len()))
}

fn criterion_1() -> Outcome {
    let start = Instant::now();
    let mut rng = CounterRng::new(0xACCE_0001);
    let mut mismatches = Vec::new();
    let mut worst_float = 0.0f64;
    for case in 0..500 {
        let tasks = 1 + uniform_below(&mut rng, 50) as usize;
        let n = 1 + uniform_below(&mut rng, 8) as usize;
        let density = rng.next_f64();
        let rows: Vec<Vec<bool>> = (0..tasks)
            .map(|_| (0..n).map(|_| rng.next_f64() < density).collect())
            .collect();
        let matrix = OutcomeMatrix::from_rows(
            SettingLabel::new("s").unwrap(),
            rows.iter()
                .enumerate()
                .map(|(i, r)| (TaskId::new(format!("t{i}")).unwrap(), r.clone())),
        )
        .unwrap();
        for k in 1..=n {
            let want_hat = subset_oracle(&rows, k, false);
            let want_at = subset_oracle(&rows, k, true);
            if pass_hat_k_exact(&matrix, k).unwrap() != want_hat || pass_at_k_exact(&matrix, k).unwrap() != want_at {
                mismatches.push(format!("case {case} k={k}"));
            }
            let to_f = |r: &BigRational| num::ToPrimitive::to_f64(r).unwrap();
            worst_float = worst_float
                .max((pass_hat_k(&matrix, k).unwrap() - to_f(&want_hat)).abs())
                .max((pass_at_k(&matrix, k).unwrap() - to_f(&want_at)).abs());
        }
    }
    let secs = start.elapsed().as_secs_f64();
    check(
        mismatches.is_empty() && worst_float <= 1e-12 && secs < 5.0,
        format!(
            "500 matrices, exact mismatches={}, max float error={worst_float:.2e}, {secs:.2}s",
            mismatches.len()
        ),
    )
}

// 2 ---------------------------------------------------------------------------

fn criterion_2() -> Outcome {
    let start = Instant::now();
    let checks = simlab::unbiasedness_experiment(&UnbiasednessConfig::standard(20240601)).unwrap();
    let secs = start.elapsed().as_secs_f64();
    let worst = checks.iter().map(|c| c.z()).fold(0.0, f64::max);
    let summary: Vec<String> = checks
        .iter()
        .map(|c| format!("{}@{} z={:.2}", c.metric, c.k, c.z()))
        .collect();
    check(
        checks.len() == 6 && worst < 3.0 && secs < 60.0,
        format!("{} ({secs:.1}s)", summary.join(", ")),
    )
}

// 3 ---------------------------------------------------------------------------

/// Q(1/2, x/2) from the lower incomplete gamma series; shares no code with
/// the library's erfc path.
fn chi2_1_sf_oracle(x: f64) -> f64 {
    let h = x / 2.0;
    let mut term = 2.0 / std::f64::consts::PI.sqrt();
    let mut sum = 0.0;
    for j in 0..500 {
        sum += term;
        term *= h / (1.5 + j as f64);
    }
    1.0 - h.sqrt() * (-h).exp() * sum
}

fn criterion_3() -> Outcome {
    let disc = |b, c| Discordance {
        b,
        c,
        concordant_11: 0,
        concordant_00: 0,
    };
    let r = mcnemar(&disc(20, 5), 0.05, McNemarMethod::ChiSquare).unwrap();
    let chi = r.chi_square.unwrap();
    let oracle = chi2_1_sf_oracle(9.0);
    let symmetric = [(0, 0), (5, 5), (12, 12), (40, 40)]
        .iter()
        .all(|&(b, c)| mcnemar(&disc(b, c), 0.05, McNemarMethod::ChiSquare).unwrap().p_value == 1.0);
    check(
        chi == 9.0 && (r.p_value - 0.0027).abs() <= 1e-4 && (r.p_value - oracle).abs() <= 1e-12 && symmetric,
        format!("chi2={chi}, p={:.6} (oracle {oracle:.6}), b=c gives p=1: {symmetric}", r.p_value),
    )
}

// 4 ---------------------------------------------------------------------------

/// Two-sided p by listing all 2^m sign assignments.
fn enumeration_p(diffs: &[i64]) -> f64 {
    let nz: Vec<i64> = diffs.iter().copied().filter(|&d| d != 0).collect();
    let m = nz.len();
    if m == 0 {
        return 1.0;
    }
    let mut mags: Vec<i64> = nz.iter().map(|d| d.abs()).collect();
    mags.sort_unstable();
    let rank_of = |v: i64| {
        let lo = mags.iter().position(|&x| x == v).unwrap() + 1;
        let hi = mags.iter().rposition(|&x| x == v).unwrap() + 1;
        (lo + hi) as f64 / 2.0
    };
    let ranks: Vec<f64> = nz.iter().map(|d| rank_of(d.abs())).collect();
    let mu = ranks.iter().sum::<f64>() / 2.0;
    let w: f64 = ranks.iter().zip(&nz).filter(|(_, d)| **d > 0).map(|(r, _)| r).sum();
    let mut hits = 0u64;
    for mask in 0u64..(1 << m) {
        let w2: f64 = (0..m).filter(|&i| mask >> i & 1 == 1).map(|i| ranks[i]).sum();
        if (w2 - mu).abs() >= (w - mu).abs() {
            hits += 1;
        }
    }
    hits as f64 / (1u64 << m) as f64
}

fn random_diffs(rng: &mut CounterRng, nonzero: usize, zeros: usize) -> Vec<i64> {
    let mut v: Vec<i64> = (0..nonzero)
        .map(|_| {
            let mag = 1 + uniform_below(rng, 3) as i64;
            if rng.next_u64() & 1 == 0 {
                mag
            } else {
                -mag
            }
        })
        .collect();
    v.extend(std::iter::repeat_n(0, zeros));
    // Fisher-Yates so zeros are interleaved.
    for i in (1..v.len()).rev() {
        let j = uniform_below(rng, i as u64 + 1) as usize;
        v.swap(i, j);
    }
    v
}

fn criterion_4() -> Outcome {
    let mut rng = CounterRng::new(0xACCE_0004);
    let mut exact_mismatch = 0;
    for _ in 0..1000 {
        let m = uniform_below(&mut rng, 13) as usize;
        let zeros = uniform_below(&mut rng, 5) as usize;
        let diffs = random_diffs(&mut rng, m, zeros);
        let p = wilcoxon(&diffs, 0.05, WilcoxonMethod::Exact).unwrap().p_value;
        if p.to_bits() != enumeration_p(&diffs).to_bits() {
            exact_mismatch += 1;
        }
    }

    let mut over = 0;
    let mut worst = 0.0f64;
    for _ in 0..200 {
        let m = 15 + uniform_below(&mut rng, 16) as usize;
        let zeros = uniform_below(&mut rng, 5) as usize;
        let diffs = random_diffs(&mut rng, m, zeros);
        let e = wilcoxon(&diffs, 0.05, WilcoxonMethod::Exact).unwrap().p_value;
        let a = wilcoxon(&diffs, 0.05, WilcoxonMethod::NormalApprox).unwrap().p_value;
        let gap = (e - a).abs();
        worst = worst.max(gap);
        over += usize::from(gap > 0.01);
    }
    check(
        exact_mismatch == 0 && over == 0,
        format!(
            "m<=12: {exact_mismatch}/1000 bitwise mismatches; m in [15,30] with |d| in 1..=3: \
             {over}/200 cases over 0.01, worst gap {worst:.4}"
        ),
    )
}

// 5 ---------------------------------------------------------------------------

fn criterion_5() -> Outcome {
    let start = Instant::now();
    let r = simlab::calibration_experiment(&CalibrationConfig::new(100, 3, 10_000, 0.05, 20240605)).unwrap();
    let secs = start.elapsed().as_secs_f64();
    check(
        (0.03..=0.07).contains(&r.wilcoxon.rate) && r.mcnemar.rate <= 0.07 && secs < 600.0,
        format!(
            "wilcoxon {:.4} (se {:.4}), mcnemar {:.4} (se {:.4}), {secs:.1}s",
            r.wilcoxon.rate, r.wilcoxon.se, r.mcnemar.rate, r.mcnemar.se
        ),
    )
}

// 6 ---------------------------------------------------------------------------

fn criterion_6() -> Outcome {
    let curve = simlab::divergence_curve(10, 7).unwrap();
    let last = curve.last().unwrap();
    let gap = last.pass_at - last.pass_hat;
    let at_up = curve.windows(2).all(|w| w[1].pass_at >= w[0].pass_at);
    let hat_down = curve.windows(2).all(|w| w[1].pass_hat <= w[0].pass_hat);
    check(
        curve.len() == 10 && gap >= 0.30 && at_up && hat_down,
        format!(
            "pass@10={:.3}, pass^10={:.3}, gap={gap:.3}, pass@k nondecreasing={at_up}, pass^k nonincreasing={hat_down}",
            last.pass_at, last.pass_hat
        ),
    )
}

// 7 ---------------------------------------------------------------------------

fn criterion_7() -> Outcome {
    let r = simlab::retry_experiment(&RetryExperimentConfig::standard(20240607)).unwrap();
    let analytic = 1.0 - 0.7 * 0.4f64.powi(5);
    let se = (analytic * (1.0 - analytic) / r.episodes as f64).sqrt();
    let literal = "Your previous attempt did not succeed. The task is not complete. Please try again.";
    let ok = r.episodes == 100_000
        && (r.analytic - 0.992832).abs() < 1e-12
        && (r.empirical - analytic).abs() < 3.0 * se
        && r.shape_violations == 0
        && r.signal_mismatches == 0
        && BINARY_RETRY_SIGNAL == literal;
    check(
        ok,
        format!(
            "empirical {:.5} vs {analytic:.6} ({:.2} se), shape violations {}, signal mismatches {}",
            r.empirical,
            (r.empirical - analytic).abs() / se,
            r.shape_violations,
            r.signal_mismatches
        ),
    )
}

// 8 ---------------------------------------------------------------------------

fn criterion_8() -> Outcome {
    let episode = |success: bool| EpisodeRecord {
        task: TaskId::new("t").unwrap(),
        setting: SettingLabel::new("s").unwrap(),
        run_index: 0,
        attempts: vec![AttemptResult {
            attempt_index: 0,
            success,
            trajectory_summary: String::new(),
        }],
        feedback_injected: vec![],
        final_success: success,
        meta: BTreeMap::new(),
    };
    let mut cases = 0;
    let mut mismatches = 0;
    for n in 1..=4usize {
        for pattern in 0u32..(1 << n) {
            let rollouts: Vec<EpisodeRecord> = (0..n).map(|i| episode(pattern >> i & 1 == 1)).collect();
            let s = pattern.count_ones() as usize;
            for historical in [false, true] {
                let want = match (s, historical) {
                    (s, _) if s == n => FeedbackDecision::NoFeedbackAllSuccess,
                    (0, true) => FeedbackDecision::ExtractAllFailHistorical,
                    (0, false) => FeedbackDecision::ExtractAllFailPartial,
                    _ => FeedbackDecision::ExtractMixed,
                };
                cases += 1;
                mismatches += usize::from(select_feedback_mode(&rollouts, historical).unwrap() != want);
            }
        }
    }
    check(mismatches == 0, format!("{cases} patterns, {mismatches} mismatches"))
}

// 9 ---------------------------------------------------------------------------

fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_reliakit")
}

fn run(args: &[&str]) -> Vec<u8> {
    let out = Command::new(bin()).args(args).output().expect("spawn reliakit");
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    out.stdout
}

fn pipeline(dir: &Path, tag: &str) -> (Vec<u8>, Vec<u8>, Vec<u8>) {
    let base = dir.join(format!("base-{tag}.jsonl"));
    let new = dir.join(format!("new-{tag}.jsonl"));
    let p = |x: &PathBuf| x.to_str().unwrap().to_string();
    let common = ["--tasks", "40", "--n", "3", "--seed", "99", "--runner", "spread:lo=0.05,hi=0.95,uplift=0.4"];
    let mut a = vec!["harness", "run", "--protocol", "none", "--setting", "base", "--out"];
    let bp = p(&base);
    a.push(&bp);
    a.extend(common);
    run(&a);
    let mut a = vec!["harness", "run", "--protocol", "retry-binary", "--budget", "2", "--setting", "new", "--out"];
    let np = p(&new);
    a.push(&np);
    a.extend(common);
    run(&a);
    let mut traces = std::fs::read(&base).unwrap();
    traces.extend(std::fs::read(&new).unwrap());
    let all = dir.join(format!("all-{tag}.jsonl"));
    std::fs::write(&all, &traces).unwrap();
    let ap = p(&all);
    let table = run(&["compare", "--traces", &ap, "--base", "base", "--new", "new"]);
    let csv = run(&["compare", "--traces", &ap, "--base", "base", "--new", "new", "--format", "csv"]);
    let swapped = run(&["compare", "--traces", &ap, "--base", "new", "--new", "base", "--format", "csv"]);
    let mut report = table;
    report.extend(&csv);
    (traces, report, swapped)
}

fn criterion_9() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let (traces_a, report_a, swapped) = pipeline(dir.path(), "a");
    let (traces_b, report_b, _) = pipeline(dir.path(), "b");
    let same_traces = traces_a == traces_b;
    let same_report = report_a == report_b;

    let csv_start = report_a.windows(7).position(|w| w == b"record,").unwrap();
    let fwd = parse_csv_metrics(std::str::from_utf8(&report_a[csv_start..]).unwrap()).unwrap();
    let rev = parse_csv_metrics(std::str::from_utf8(&swapped).unwrap()).unwrap();
    let get = |rows: &[reliakit::report::MetricRow], metric: &str| {
        rows.iter()
            .find(|r| r.record == "comparison" && r.metric == metric)
            .and_then(|r| r.value_f64())
            .unwrap()
    };
    let negated = |m: &str| get(&fwd, m) == -get(&rev, m);
    let equal = |m: &str| get(&fwd, m) == get(&rev, m);
    let swap_ok = negated("b_minus_c")
        && negated("delta_cx_raw")
        && negated("delta_cx_normalized")
        && equal("mcnemar_p")
        && equal("wilcoxon_p");
    check(
        same_traces && same_report && swap_ok && get(&fwd, "b_minus_c") != 0.0,
        format!(
            "traces identical={same_traces}, reports identical={same_report}, swap: b-c {} -> {}, p-values unchanged={}",
            get(&fwd, "b_minus_c"),
            get(&rev, "b_minus_c"),
            equal("mcnemar_p") && equal("wilcoxon_p")
        ),
    )
}

// 10 --------------------------------------------------------------------------

fn criterion_10() -> Outcome {
    let fixtures = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures");
    let expected: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(fixtures.join("table_361_expected.json")).unwrap()).unwrap();
    let traces = fixtures.join("table_361.jsonl");
    let out = run(&[
        "compare",
        "--traces",
        traces.to_str().unwrap(),
        "--base",
        "baseline",
        "--new",
        "perturbed",
        "--new",
        "retry",
        "--new",
        "noisy",
        "--new",
        "shifted",
        "--k",
        "1,3",
        "--format",
        "table",
    ]);
    let text = String::from_utf8(out).unwrap();
    let rows: BTreeMap<&str, Vec<&str>> = text
        .lines()
        .take_while(|l| !l.is_empty())
        .skip(1)
        .map(|l| {
            let cells: Vec<&str> = l.split_whitespace().collect();
            (cells[0], cells[1..].to_vec())
        })
        .collect();

    let mut problems = Vec::new();
    let settings = expected["settings"].as_object().unwrap();
    for (name, want) in settings {
        let Some(got) = rows.get(name.as_str()) else {
            problems.push(format!("missing row {name}"));
            continue;
        };
        for (i, key) in ["pass_hat_1", "pass_hat_3"].iter().enumerate() {
            if got[i] != want[key].as_str().unwrap() {
                problems.push(format!("{name} {key}: {} vs {}", got[i], want[key]));
            }
        }
    }
    if rows.get("baseline").map(|r| &r[2..]) != Some(&["--", "--"][..]) {
        problems.push("baseline row must show -- for b-c and Δc_x".into());
    }
    for cmp in expected["comparisons"].as_array().unwrap() {
        let name = cmp["new"].as_str().unwrap();
        let Some(got) = rows.get(name) else { continue };
        let star = |flag: &serde_json::Value| if flag.as_bool().unwrap() { "*" } else { "" };
        let want_bc = format!("{}{}", cmp["b_minus_c"], star(&cmp["mcnemar_star"]));
        let want_dc = format!("{}{}", cmp["delta_cx"].as_str().unwrap(), star(&cmp["wilcoxon_star"]));
        if got[2] != want_bc {
            problems.push(format!("{name} b-c: {} vs {want_bc}", got[2]));
        }
        if got[3] != want_dc {
            problems.push(format!("{name} Δc_x: {} vs {want_dc}", got[3]));
        }
    }
    check(
        problems.is_empty(),
        if problems.is_empty() {
            format!("{} rows match to 3 decimals with stars", settings.len())
        } else {
            problems.join("; ")
        },
    )
}

type Criterion = (&'static str, fn() -> Outcome);

fn main() {
    let criteria: [Criterion; 10] = [
        ("1 pass^k oracle equivalence", criterion_1),
        ("2 estimator unbiasedness", criterion_2),
        ("3 McNemar numeric anchor", criterion_3),
        ("4 Wilcoxon exactness and normal agreement", criterion_4),
        ("5 null calibration", criterion_5),
        ("6 pass@k / pass^k divergence", criterion_6),
        ("7 retry protocol mechanics", criterion_7),
        ("8 feedback-mode state machine", criterion_8),
        ("9 end-to-end determinism", criterion_9),
        ("10 361-task table fixture", criterion_10),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for (name, f) in criteria {
        if !filter.is_empty() && !filter.iter().any(|p| name.contains(p.as_str())) {
            continue;
        }
        let outcome = f();
        let tag = if outcome.pass { "PASS" } else { "FAIL" };
        println!("criterion {name}: {tag} ({})", outcome.detail);
        failed += usize::from(!outcome.pass);
    }
    if failed > 0 {
        println!("{failed} criterion/criteria failed");
        std::process::exit(1);
    }
}
