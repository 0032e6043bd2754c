//! Report rendering: a fixed-width table in the usual reliability-table
//! layout, a lossless CSV metric block, and JSON lines.
//!
//! Table cells are rounded to 3 decimals. Stars are placed from the stored
//! `significant` flags, never from rounded values: `*` on `b-c` when McNemar
//! rejects, `*` on the mean count change when Wilcoxon rejects.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::str::FromStr;

use serde::Serialize;
use thiserror::Error;

use crate::metrics::SettingSummary;
use crate::outcome::ReliabilityCategory;
use crate::paired::ComparisonReport;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ReportError {
    #[error("unsupported report format '{0}' (expected table, csv or json-lines)")]
    UnsupportedFormat(String),
    #[error("malformed CSV report: {0}")]
    MalformedCsv(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ReportFormat {
    #[default]
    PlainTable,
    Csv,
    JsonLines,
}

impl FromStr for ReportFormat {
    type Err = ReportError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "table" => Ok(Self::PlainTable),
            "csv" => Ok(Self::Csv),
            "json-lines" | "jsonl" => Ok(Self::JsonLines),
            other => Err(ReportError::UnsupportedFormat(other.to_string())),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ReportDocument {
    pub summaries: Vec<SettingSummary>,
    pub comparisons: Vec<ComparisonReport>,
    /// Free-form lines printed under the table (threshold, assumptions).
    pub notes: Vec<String>,
    pub format: ReportFormat,
}

pub fn render_report(doc: &ReportDocument) -> Vec<u8> {
    match doc.format {
        ReportFormat::PlainTable => render_table(doc).into_bytes(),
        ReportFormat::Csv => render_csv(doc),
        ReportFormat::JsonLines => render_json_lines(doc).into_bytes(),
    }
}

/// Fixed 3-decimal rendering that never prints `-0.000`.
pub fn fmt3(v: f64) -> String {
    let s = format!("{v:.3}");
    if s == "-0.000" {
        "0.000".to_string()
    } else {
        s
    }
}

fn star(flag: bool) -> &'static str {
    if flag {
        "*"
    } else {
        ""
    }
}

fn layout(rows: &[Vec<String>]) -> String {
    let cols = rows.iter().map(Vec::len).max().unwrap_or(0);
    let widths: Vec<usize> = (0..cols)
        .map(|c| rows.iter().filter_map(|r| r.get(c)).map(|s| s.chars().count()).max().unwrap_or(0))
        .collect();
    let mut out = String::new();
    for row in rows {
        let mut line = String::new();
        for (c, cell) in row.iter().enumerate() {
            if c > 0 {
                line.push_str("  ");
            }
            line.push_str(cell);
            if c + 1 < row.len() {
                line.extend(std::iter::repeat_n(' ', widths[c] - cell.chars().count()));
            }
        }
        out.push_str(line.trim_end());
        out.push('\n');
    }
    out
}

fn union_ks<'a>(summaries: impl Iterator<Item = &'a SettingSummary>) -> Vec<usize> {
    summaries
        .flat_map(|s| s.pass_hat.keys().copied())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect()
}

fn metric_cell(map: &std::collections::BTreeMap<usize, f64>, k: usize) -> String {
    map.get(&k).map_or_else(|| "--".to_string(), |v| fmt3(*v))
}

fn render_table(doc: &ReportDocument) -> String {
    let mut out = String::new();

    if !doc.summaries.is_empty() {
        let ks = union_ks(doc.summaries.iter());
        let mut header = vec!["Setting".to_string(), "n".into(), "tasks".into()];
        header.extend(ks.iter().map(|k| format!("pass^{k}")));
        header.extend(ks.iter().map(|k| format!("pass@{k}")));
        header.extend(ReliabilityCategory::ALL.iter().map(|c| c.as_str().to_string()));
        let mut rows = vec![header];
        for s in &doc.summaries {
            let mut row = vec![s.setting.name.clone(), s.n.to_string(), s.task_count.to_string()];
            row.extend(ks.iter().map(|&k| metric_cell(&s.pass_hat, k)));
            row.extend(ks.iter().map(|&k| metric_cell(&s.pass_at, k)));
            row.extend(
                ReliabilityCategory::ALL
                    .iter()
                    .map(|c| s.category_counts.get(c).copied().unwrap_or(0).to_string()),
            );
            rows.push(row);
        }
        out.push_str(&layout(&rows));
    }

    if !doc.comparisons.is_empty() {
        if !out.is_empty() {
            out.push('\n');
        }
        let ks = union_ks(doc.comparisons.iter().flat_map(|c| [&c.base_summary, &c.new_summary]));
        let mut header = vec!["Setting".to_string()];
        header.extend(ks.iter().map(|k| format!("pass^{k}")));
        header.push("b-c".into());
        header.push("Δc_x".into());
        let mut rows = vec![header];
        let mut last_base: Option<&str> = None;
        for cmp in &doc.comparisons {
            if last_base != Some(cmp.base.name.as_str()) {
                let mut row = vec![cmp.base.name.clone()];
                row.extend(ks.iter().map(|&k| metric_cell(&cmp.base_summary.pass_hat, k)));
                row.push("--".into());
                row.push("--".into());
                rows.push(row);
                last_base = Some(cmp.base.name.as_str());
            }
            let mut row = vec![cmp.new.name.clone()];
            row.extend(ks.iter().map(|&k| metric_cell(&cmp.new_summary.pass_hat, k)));
            row.push(format!("{}{}", cmp.mcnemar.b_minus_c, star(cmp.mcnemar.significant)));
            row.push(format!("{}{}", fmt3(cmp.mean_diff.normalized), star(cmp.wilcoxon.significant)));
            rows.push(row);
        }
        out.push_str(&layout(&rows));
        out.push('\n');
        for cmp in &doc.comparisons {
            let chi = cmp
                .mcnemar
                .chi_square
                .map_or_else(|| "undefined".to_string(), |x| format!("{x:.4}"));
            let _ = writeln!(
                out,
                "# {} vs {}: McNemar {} b={} c={} chi2={} p={:.4}; Wilcoxon {} W={} m={} p={:.4}; mean count change {:.3} (per run {:.3}); alpha={}",
                cmp.new.name,
                cmp.base.name,
                cmp.mcnemar.mode.as_str(),
                cmp.discordance.b,
                cmp.discordance.c,
                chi,
                cmp.mcnemar.p_value,
                cmp.wilcoxon.mode.as_str(),
                cmp.wilcoxon.w_statistic,
                cmp.wilcoxon.nonzero_count,
                cmp.wilcoxon.p_value,
                cmp.mean_diff.raw,
                cmp.mean_diff.normalized,
                cmp.alpha,
            );
        }
        let _ = writeln!(out, "# * p < alpha (b-c: McNemar; Δc_x: Wilcoxon signed-rank), two-sided");
    }

    for note in &doc.notes {
        let _ = writeln!(out, "# {note}");
    }
    out
}

/// One row of the CSV metric block.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, serde::Deserialize)]
pub struct MetricRow {
    /// `summary` or `comparison`.
    pub record: String,
    pub setting: String,
    /// Base setting for comparison rows, empty otherwise.
    pub base: String,
    pub metric: String,
    /// Set for `pass_hat` / `pass_at` rows.
    pub k: Option<usize>,
    pub value: String,
}

impl MetricRow {
    pub fn value_f64(&self) -> Option<f64> {
        self.value.parse().ok()
    }
}

fn summary_rows(s: &SettingSummary, rows: &mut Vec<MetricRow>) {
    let row = |metric: &str, k: Option<usize>, value: String| MetricRow {
        record: "summary".into(),
        setting: s.setting.name.clone(),
        base: String::new(),
        metric: metric.into(),
        k,
        value,
    };
    rows.push(row("n", None, s.n.to_string()));
    rows.push(row("task_count", None, s.task_count.to_string()));
    for (&k, v) in &s.pass_hat {
        rows.push(row("pass_hat", Some(k), v.to_string()));
    }
    for (&k, v) in &s.pass_at {
        rows.push(row("pass_at", Some(k), v.to_string()));
    }
    for c in ReliabilityCategory::ALL {
        rows.push(row(c.as_str(), None, s.category_counts.get(&c).copied().unwrap_or(0).to_string()));
    }
}

fn comparison_rows(c: &ComparisonReport, rows: &mut Vec<MetricRow>) {
    let row = |metric: &str, value: String| MetricRow {
        record: "comparison".into(),
        setting: c.new.name.clone(),
        base: c.base.name.clone(),
        metric: metric.into(),
        k: None,
        value,
    };
    let d = &c.discordance;
    rows.push(row("b", d.b.to_string()));
    rows.push(row("c", d.c.to_string()));
    rows.push(row("concordant_11", d.concordant_11.to_string()));
    rows.push(row("concordant_00", d.concordant_00.to_string()));
    rows.push(row("b_minus_c", c.mcnemar.b_minus_c.to_string()));
    rows.push(row(
        "mcnemar_chi_square",
        c.mcnemar.chi_square.map(|x| x.to_string()).unwrap_or_default(),
    ));
    rows.push(row("mcnemar_p", c.mcnemar.p_value.to_string()));
    rows.push(row("mcnemar_mode", c.mcnemar.mode.as_str().into()));
    rows.push(row("mcnemar_significant", c.mcnemar.significant.to_string()));
    rows.push(row("wilcoxon_w", c.wilcoxon.w_statistic.to_string()));
    rows.push(row("wilcoxon_m", c.wilcoxon.nonzero_count.to_string()));
    rows.push(row("wilcoxon_p", c.wilcoxon.p_value.to_string()));
    rows.push(row("wilcoxon_mode", c.wilcoxon.mode.as_str().into()));
    rows.push(row("wilcoxon_significant", c.wilcoxon.significant.to_string()));
    rows.push(row("delta_cx_raw", c.mean_diff.raw.to_string()));
    rows.push(row("delta_cx_normalized", c.mean_diff.normalized.to_string()));
    rows.push(row("alpha", c.alpha.to_string()));
}

/// All metric rows of a document, summaries first. Settings that appear only
/// inside comparisons get their summary rows too.
pub fn metric_rows(doc: &ReportDocument) -> Vec<MetricRow> {
    let mut rows = Vec::new();
    let mut seen = BTreeSet::new();
    let all_summaries = doc
        .summaries
        .iter()
        .chain(doc.comparisons.iter().flat_map(|c| [&c.base_summary, &c.new_summary]));
    for s in all_summaries {
        if seen.insert(s.setting.name.clone()) {
            summary_rows(s, &mut rows);
        }
    }
    for c in &doc.comparisons {
        comparison_rows(c, &mut rows);
    }
    rows
}

fn render_csv(doc: &ReportDocument) -> Vec<u8> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for row in metric_rows(doc) {
        w.serialize(row).expect("in-memory CSV write");
    }
    w.into_inner().expect("in-memory CSV flush")
}

/// Reads back a CSV metric block written by [`render_report`].
pub fn parse_csv_metrics(text: &str) -> Result<Vec<MetricRow>, ReportError> {
    let mut reader = csv::Reader::from_reader(text.as_bytes());
    let headers = reader
        .headers()
        .map_err(|e| ReportError::MalformedCsv(e.to_string()))?
        .clone();
    let expected = ["record", "setting", "base", "metric", "k", "value"];
    if headers.iter().ne(expected.iter().copied()) {
        return Err(ReportError::MalformedCsv(format!(
            "header must be {}",
            expected.join(",")
        )));
    }
    let mut rows = Vec::new();
    for (i, rec) in reader.deserialize::<MetricRow>().enumerate() {
        let row = rec.map_err(|e| ReportError::MalformedCsv(format!("row {}: {e}", i + 2)))?;
        if row.record != "summary" && row.record != "comparison" {
            return Err(ReportError::MalformedCsv(format!(
                "row {}: unknown record kind '{}'",
                i + 2,
                row.record
            )));
        }
        rows.push(row);
    }
    Ok(rows)
}

#[derive(Serialize)]
#[serde(tag = "type", rename_all = "snake_case")]
enum JsonLine<'a> {
    Summary(&'a SettingSummary),
    Comparison(&'a ComparisonReport),
    Note { text: &'a str },
}

fn render_json_lines(doc: &ReportDocument) -> String {
    let mut out = String::new();
    let lines = doc
        .summaries
        .iter()
        .map(JsonLine::Summary)
        .chain(doc.comparisons.iter().map(JsonLine::Comparison))
        .chain(doc.notes.iter().map(|n| JsonLine::Note { text: n }));
    for line in lines {
        out.push_str(&serde_json::to_string(&line).expect("report serializes"));
        out.push('\n');
    }
    out
}
