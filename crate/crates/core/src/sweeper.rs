//! Accuracy-vs-n capacity sweeps, the 1%-drop capacity rule, summary-table
//! arithmetic, graph-data emission, and the external-evaluator bridge.
//!
//! A sweep embeds the same payload (same seed) at every `n` in the range,
//! re-imports the store, and re-evaluates on the identical test set, so the
//! curves differ only in `n`. The capacity rule is first-crossing: `n*` is
//! the largest swept `n` such that every `m <= n` stays within the accuracy
//! threshold of the `n = 0` baseline.
//!
//! Capacity totals print in decimal units (KB = 1000 B, MB = 10^6 B) at two
//! decimals, computed in integer arithmetic so decimal ties round half-up
//! rather than drifting through binary floats.

use std::fmt;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use crate::corpus::Dataset;
use crate::models::{evaluate, import_weights, ModelError, ModelKind};
use crate::stegocodec::{embed_fill, BitPlan, CodecError};
use crate::weightstore::{count_selected, Selector, StoreError, WeightStore};

/// Accuracy-drop threshold of the capacity rule, in absolute accuracy
/// points.
pub const DEFAULT_THRESHOLD: f64 = 0.01;

#[derive(Debug)]
pub enum SweepError {
    Store(StoreError),
    Codec(CodecError),
    Model(ModelError),
    Io(io::Error),
    BadRange(String),
    BadRows(String),
    BadCsv(String),
    /// An import or evaluation failed mid-sweep; `n` names the offender.
    EvalFailed { n: u8, detail: String },
}

impl fmt::Display for SweepError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Store(e) => write!(f, "{e}"),
            Self::Codec(e) => write!(f, "{e}"),
            Self::Model(e) => write!(f, "{e}"),
            Self::Io(e) => write!(f, "i/o error: {e}"),
            Self::BadRange(msg) => write!(f, "bad sweep range: {msg}"),
            Self::BadRows(msg) => write!(f, "bad sweep rows: {msg}"),
            Self::BadCsv(msg) => write!(f, "bad csv: {msg}"),
            Self::EvalFailed { n, detail } => write!(f, "evaluation failed at n={n}: {detail}"),
        }
    }
}

impl std::error::Error for SweepError {}

impl From<StoreError> for SweepError {
    fn from(e: StoreError) -> Self {
        SweepError::Store(e)
    }
}

impl From<CodecError> for SweepError {
    fn from(e: CodecError) -> Self {
        SweepError::Codec(e)
    }
}

impl From<ModelError> for SweepError {
    fn from(e: ModelError) -> Self {
        SweepError::Model(e)
    }
}

impl From<io::Error> for SweepError {
    fn from(e: io::Error) -> Self {
        SweepError::Io(e)
    }
}

/// One point of a capacity graph.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub n: u8,
    pub accuracy: f64,
    /// `n x selected weights / 8`, the cumulative payload at this depth.
    pub cumulative_capacity_bytes: f64,
}

/// All rows of one sweep, sorted by `n`, always including the baseline.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepResult {
    pub selector_desc: String,
    pub weight_count: u64,
    pub rows: Vec<SweepRow>,
}

impl SweepResult {
    pub fn new(
        selector_desc: String,
        weight_count: u64,
        mut rows: Vec<SweepRow>,
    ) -> Result<Self, SweepError> {
        rows.sort_by_key(|r| r.n);
        if rows.first().map(|r| r.n) != Some(0) {
            return Err(SweepError::BadRows("rows must include n = 0".into()));
        }
        if rows.windows(2).any(|w| w[0].n == w[1].n) {
            return Err(SweepError::BadRows("duplicate n values".into()));
        }
        if rows.iter().any(|r| r.n > 32) {
            return Err(SweepError::BadRows("n outside [0, 32]".into()));
        }
        Ok(SweepResult {
            selector_desc,
            weight_count,
            rows,
        })
    }

    pub fn baseline(&self) -> f64 {
        self.rows[0].accuracy
    }

    pub fn accuracy_at(&self, n: u8) -> Option<f64> {
        self.rows.iter().find(|r| r.n == n).map(|r| r.accuracy)
    }
}

/// One summary-table row: the capacity of a model (or layer group) in bits,
/// bytes, and human units. `bits_per_weight` is `None` for mixed-rate
/// aggregates summed over layer groups.
#[derive(Debug, Clone, PartialEq)]
pub struct CapacityReport {
    pub layers: String,
    pub bits_per_weight: Option<u8>,
    pub weight_count: u64,
    pub total_bits: u64,
    pub total_bytes: f64,
    pub human: String,
}

impl CapacityReport {
    /// Largest safe n of a sweep-derived report.
    pub fn n_star(&self) -> Option<u8> {
        self.bits_per_weight
    }
}

/// Formats a bit total as `X.YZ KB` or `X.YZ MB` (decimal units, two
/// decimals, ties round half-up). 0.01 KB is 80 bits; 0.01 MB is 80,000.
pub fn format_capacity(total_bits: u64) -> String {
    let total_bytes = total_bits / 8;
    if total_bytes >= 1_000_000 {
        let hundredths = (total_bits + 40_000) / 80_000;
        format!("{}.{:02} MB", hundredths / 100, hundredths % 100)
    } else {
        let hundredths = (total_bits + 40) / 80;
        format!("{}.{:02} KB", hundredths / 100, hundredths % 100)
    }
}

/// Digit grouping for the summary table, e.g. `34148 -> "34,148"`.
pub fn group_thousands(value: u64) -> String {
    let digits = value.to_string();
    let mut out = String::with_capacity(digits.len() + digits.len() / 3);
    for (i, c) in digits.chars().enumerate() {
        if i > 0 && (digits.len() - i) % 3 == 0 {
            out.push(',');
        }
        out.push(c);
    }
    out
}

fn report_from_parts(layers: String, parts: &[(u8, u64)]) -> CapacityReport {
    let total_bits: u64 = parts.iter().map(|&(b, w)| b as u64 * w).sum();
    let weight_count: u64 = parts.iter().map(|&(_, w)| w).sum();
    let uniform = match parts {
        [] => None,
        [(b, _), rest @ ..] => rest.iter().all(|(b2, _)| b2 == b).then_some(*b),
    };
    CapacityReport {
        layers,
        bits_per_weight: uniform,
        weight_count,
        total_bits,
        total_bytes: total_bits as f64 / 8.0,
        human: format_capacity(total_bits),
    }
}

/// Pure Table-style capacity arithmetic for a uniform per-weight rate.
pub fn capacity_arithmetic(bits_per_weight: u8, weight_count: u64) -> CapacityReport {
    report_from_parts("all".into(), &[(bits_per_weight, weight_count)])
}

/// Capacity summed over layer groups with possibly different per-weight
/// rates, e.g. trained plus pre-trained weights.
pub fn capacity_sum(layers: &str, parts: &[(u8, u64)]) -> CapacityReport {
    report_from_parts(layers.into(), parts)
}

/// Applies the first-crossing capacity rule: `n*` is the largest swept `n`
/// whose entire prefix stays within `threshold` of the baseline. A sweep
/// whose very first nonzero point crosses reports `n* = 0`.
pub fn capacity_from_sweep(result: &SweepResult, threshold: f64) -> CapacityReport {
    let floor = result.baseline() - threshold;
    let mut n_star = 0u8;
    for row in &result.rows[1..] {
        if row.accuracy >= floor {
            n_star = row.n;
        } else {
            break;
        }
    }
    report_from_parts(
        result.selector_desc.clone(),
        &[(n_star, result.weight_count)],
    )
}

fn validate_range(n_range: &[u8]) -> Result<Vec<u8>, SweepError> {
    let mut range = n_range.to_vec();
    range.sort_unstable();
    range.dedup();
    if range.len() != n_range.len() {
        return Err(SweepError::BadRange("duplicate n values".into()));
    }
    if range.first() != Some(&0) {
        return Err(SweepError::BadRange("range must include 0".into()));
    }
    if *range.last().unwrap() > 32 {
        return Err(SweepError::BadRange("n outside [0, 32]".into()));
    }
    Ok(range)
}

/// Runs the capacity sweep: for each `n`, fill-embed with the same payload
/// and seed, re-import, and evaluate on the identical test set. Rows for
/// distinct `n` are independent and evaluated in parallel.
pub fn run_sweep(
    store: &WeightStore,
    sel: &Selector,
    kind: ModelKind,
    test_set: &Dataset,
    payload: &[u8],
    seed: u64,
    n_range: &[u8],
) -> Result<SweepResult, SweepError> {
    let range = validate_range(n_range)?;
    let weight_count = count_selected(store, sel)?;
    let rows = range
        .par_iter()
        .map(|&n| -> Result<SweepRow, SweepError> {
            let plan = BitPlan::fill(n, seed).expect("validated range");
            let embedded = embed_fill(store, sel, &plan, payload)?;
            let model = import_weights(kind, &embedded).map_err(|e| SweepError::EvalFailed {
                n,
                detail: e.to_string(),
            })?;
            let report = evaluate(&model, test_set).map_err(|e| SweepError::EvalFailed {
                n,
                detail: e.to_string(),
            })?;
            Ok(SweepRow {
                n,
                accuracy: report.accuracy,
                cumulative_capacity_bytes: n as f64 * weight_count as f64 / 8.0,
            })
        })
        .collect::<Result<Vec<_>, _>>()?;
    SweepResult::new(sel.describe(), weight_count, rows)
}

/// Writes the graph CSV (`n,accuracy,capacity_kb`) preceded by a comment
/// line carrying the selector and weight count. Returns bytes written.
/// Accuracy prints in shortest-roundtrip form; capacity in fixed six
/// decimals (exact, since byte counts step in eighths).
pub fn emit_graph_csv(result: &SweepResult, sink: &mut dyn Write) -> Result<u64, SweepError> {
    let mut text = format!(
        "# selector={} weights={}\nn,accuracy,capacity_kb\n",
        result.selector_desc, result.weight_count
    );
    for row in &result.rows {
        text.push_str(&format!(
            "{},{},{:.6}\n",
            row.n,
            row.accuracy,
            row.cumulative_capacity_bytes / 1000.0
        ));
    }
    sink.write_all(text.as_bytes())?;
    Ok(text.len() as u64)
}

/// Parses a graph CSV produced by [`emit_graph_csv`] back into the same
/// rows. The `weights=` comment lets capacities be recomputed exactly
/// instead of re-deriving them from the printed KB values.
pub fn parse_graph_csv(text: &str) -> Result<SweepResult, SweepError> {
    let mut selector_desc = String::from("all");
    let mut weight_count: Option<u64> = None;
    let mut rows = Vec::new();
    let mut saw_header = false;
    for line in text.lines() {
        let line = line.trim_end();
        if line.is_empty() {
            continue;
        }
        if let Some(comment) = line.strip_prefix('#') {
            for token in comment.split_whitespace() {
                if let Some(v) = token.strip_prefix("weights=") {
                    weight_count = Some(
                        v.parse()
                            .map_err(|_| SweepError::BadCsv(format!("bad weights= in {line:?}")))?,
                    );
                } else if let Some(v) = token.strip_prefix("selector=") {
                    selector_desc = v.to_string();
                }
            }
            continue;
        }
        if !saw_header {
            if line != "n,accuracy,capacity_kb" {
                return Err(SweepError::BadCsv(format!("unexpected header {line:?}")));
            }
            saw_header = true;
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 3 {
            return Err(SweepError::BadCsv(format!("bad row {line:?}")));
        }
        let n: u8 = fields[0]
            .parse()
            .map_err(|_| SweepError::BadCsv(format!("bad n in {line:?}")))?;
        let accuracy: f64 = fields[1]
            .parse()
            .map_err(|_| SweepError::BadCsv(format!("bad accuracy in {line:?}")))?;
        let capacity_kb: f64 = fields[2]
            .parse()
            .map_err(|_| SweepError::BadCsv(format!("bad capacity in {line:?}")))?;
        let cumulative_capacity_bytes = match weight_count {
            Some(w) => n as f64 * w as f64 / 8.0,
            None => capacity_kb * 1000.0,
        };
        rows.push(SweepRow {
            n,
            accuracy,
            cumulative_capacity_bytes,
        });
    }
    let weight_count =
        weight_count.ok_or_else(|| SweepError::BadCsv("missing weights= comment".into()))?;
    SweepResult::new(selector_desc, weight_count, rows)
}

/// Renders the aligned summary table (label, layers, weights, bits/weight,
/// total). An empty list renders the header only.
pub fn emit_summary(
    reports: &[(String, CapacityReport)],
    sink: &mut dyn Write,
) -> Result<(), SweepError> {
    let header = ["model", "layers", "weights", "bits/weight", "total"];
    let mut rows: Vec<[String; 5]> = Vec::with_capacity(reports.len());
    for (label, report) in reports {
        rows.push([
            label.clone(),
            report.layers.clone(),
            group_thousands(report.weight_count),
            report
                .bits_per_weight
                .map_or_else(|| "-".into(), |b| b.to_string()),
            report.human.clone(),
        ]);
    }
    let mut widths = header.map(str::len);
    for row in &rows {
        for (w, cell) in widths.iter_mut().zip(row) {
            *w = (*w).max(cell.len());
        }
    }
    let mut render = |cells: [&str; 5]| -> String {
        let mut line = String::new();
        for (i, (cell, width)) in cells.iter().zip(widths).enumerate() {
            if i > 0 {
                line.push_str("  ");
            }
            line.push_str(cell);
            if i + 1 < cells.len() {
                for _ in cell.len()..width {
                    line.push(' ');
                }
            }
        }
        line.push('\n');
        line
    };
    let mut text = render(header);
    for row in &rows {
        text.push_str(&render([
            &row[0], &row[1], &row[2], &row[3], &row[4],
        ]));
    }
    sink.write_all(text.as_bytes())?;
    Ok(())
}

/// Writes one fill-embedded WSTG file per `n` plus a `manifest.csv`
/// (`n,path`) for an external evaluator to score. Returns the `(n, path)`
/// pairs in range order.
pub fn export_sweep_stores(
    store: &WeightStore,
    sel: &Selector,
    payload: &[u8],
    seed: u64,
    n_range: &[u8],
    out_dir: &Path,
) -> Result<Vec<(u8, PathBuf)>, SweepError> {
    let range = validate_range(n_range)?;
    std::fs::create_dir_all(out_dir)?;
    let mut entries = Vec::with_capacity(range.len());
    let mut manifest = String::from("n,path\n");
    for &n in &range {
        let plan = BitPlan::fill(n, seed).expect("validated range");
        let embedded = embed_fill(store, sel, &plan, payload)?;
        let file_name = format!("n{n:02}.wstg");
        let path = out_dir.join(&file_name);
        embedded.write_file(&path)?;
        manifest.push_str(&format!("{n},{file_name}\n"));
        entries.push((n, path));
    }
    std::fs::write(out_dir.join("manifest.csv"), manifest)?;
    Ok(entries)
}

/// Parses an external evaluator's `results.csv` (`n,accuracy` rows, header
/// and `#` comments optional).
pub fn read_results_csv(text: &str) -> Result<Vec<(u8, f64)>, SweepError> {
    let mut rows = Vec::new();
    for line in text.lines() {
        let line = line.trim_end();
        if line.is_empty() || line.starts_with('#') || line == "n,accuracy" {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 2 {
            return Err(SweepError::BadCsv(format!("bad row {line:?}")));
        }
        let n: u8 = fields[0]
            .parse()
            .map_err(|_| SweepError::BadCsv(format!("bad n in {line:?}")))?;
        let accuracy: f64 = fields[1]
            .parse()
            .map_err(|_| SweepError::BadCsv(format!("bad accuracy in {line:?}")))?;
        if !(0.0..=1.0).contains(&accuracy) {
            return Err(SweepError::BadCsv(format!(
                "accuracy {accuracy} outside [0, 1]"
            )));
        }
        rows.push((n, accuracy));
    }
    Ok(rows)
}

/// Builds a sweep result from externally evaluated `(n, accuracy)` rows,
/// recomputing capacities from the known selection size.
pub fn result_from_external(
    selector_desc: &str,
    weight_count: u64,
    rows: &[(u8, f64)],
) -> Result<SweepResult, SweepError> {
    let rows = rows
        .iter()
        .map(|&(n, accuracy)| SweepRow {
            n,
            accuracy,
            cumulative_capacity_bytes: n as f64 * weight_count as f64 / 8.0,
        })
        .collect();
    SweepResult::new(selector_desc.to_string(), weight_count, rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn result_with(accuracies: &[f64], weight_count: u64) -> SweepResult {
        let rows = accuracies
            .iter()
            .enumerate()
            .map(|(n, &accuracy)| SweepRow {
                n: n as u8,
                accuracy,
                cumulative_capacity_bytes: n as f64 * weight_count as f64 / 8.0,
            })
            .collect();
        SweepResult::new("all".into(), weight_count, rows).unwrap()
    }

    #[test]
    fn first_crossing_rule() {
        let result = result_with(&[0.90, 0.90, 0.895, 0.80], 100);
        let report = capacity_from_sweep(&result, 0.01);
        assert_eq!(report.n_star(), Some(2));
        assert_eq!(report.total_bits, 200);
    }

    #[test]
    fn flat_curve_reaches_the_top_of_the_sweep() {
        let result = result_with(&[0.9; 33], 10);
        assert_eq!(capacity_from_sweep(&result, 0.01).n_star(), Some(32));
    }

    #[test]
    fn immediate_crossing_reports_zero() {
        let result = result_with(&[0.90, 0.10, 0.10], 10);
        let report = capacity_from_sweep(&result, 0.01);
        assert_eq!(report.n_star(), Some(0));
        assert_eq!(report.total_bits, 0);
    }

    #[test]
    fn recovery_after_a_dip_does_not_extend_n_star() {
        let result = result_with(&[0.90, 0.90, 0.70, 0.90], 10);
        assert_eq!(capacity_from_sweep(&result, 0.01).n_star(), Some(1));
    }

    #[test]
    fn threshold_monotonicity() {
        let mut accuracies = vec![0.9];
        let mut state = 11u64;
        for _ in 0..32 {
            // Cheap deterministic pseudo-noise wander downward.
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1);
            let step = (state >> 33) as f64 / (1u64 << 31) as f64; // [0, 1)
            let last = *accuracies.last().unwrap();
            accuracies.push((last - 0.03 * step).max(0.05));
        }
        let result = result_with(&accuracies, 99);
        let mut prev = None;
        for threshold in [0.001, 0.005, 0.01, 0.02, 0.05, 0.2] {
            let n_star = capacity_from_sweep(&result, threshold).n_star().unwrap();
            if let Some(p) = prev {
                assert!(n_star >= p, "threshold {threshold}: {n_star} < {p}");
            }
            prev = Some(n_star);
        }
    }

    #[test]
    fn lr_paper_numbers() {
        let result = result_with(
            &{
                let mut acc = vec![0.8652; 23]; // n = 0..=22 flat
                acc.extend([0.8480, 0.79, 0.61, 0.52, 0.32, 0.28, 0.25, 0.19, 0.19, 0.08]);
                acc
            },
            2560,
        );
        let report = capacity_from_sweep(&result, 0.01);
        assert_eq!(report.n_star(), Some(22));
        assert_eq!(report.total_bits, 56_320);
        assert_abs_diff_eq!(report.total_bytes, 7040.0);
        assert_eq!(report.human, "7.04 KB");
    }

    #[test]
    fn summary_table_arithmetic_rows() {
        let mlp = capacity_arithmetic(19, 34_148);
        assert_eq!(mlp.human, "81.10 KB");
        assert_eq!(group_thousands(mlp.weight_count), "34,148");
        let lstm = capacity_arithmetic(24, 1_119_626);
        assert_eq!(lstm.human, "3.36 MB");
        assert_eq!(group_thousands(lstm.weight_count), "1,119,626");
    }

    #[test]
    fn capacity_sum_mixes_rates() {
        let report = capacity_sum("all", &[(14, 21_802_784), (25, 2_107_392)]);
        assert_eq!(report.total_bits, 357_923_776);
        assert_eq!(report.bits_per_weight, None);
        assert_eq!(report.human, "44.74 MB");
        let uniform = capacity_sum("all", &[(20, 100), (20, 50)]);
        assert_eq!(uniform.bits_per_weight, Some(20));
    }

    #[test]
    fn emit_summary_is_aligned_and_complete() {
        let rows = vec![
            ("MLP".to_string(), capacity_arithmetic(19, 34_148)),
            ("LSTM".to_string(), capacity_arithmetic(24, 1_119_626)),
        ];
        let mut out = Vec::new();
        emit_summary(&rows, &mut out).unwrap();
        let text = String::from_utf8(out).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 3);
        assert!(lines[0].starts_with("model"));
        assert!(lines[1].contains("34,148") && lines[1].contains("19") && lines[1].contains("81.10 KB"));
        assert!(
            lines[2].contains("1,119,626")
                && lines[2].contains("24")
                && lines[2].contains("3.36 MB")
        );

        let mut out = Vec::new();
        emit_summary(&[], &mut out).unwrap();
        assert_eq!(String::from_utf8(out).unwrap().lines().count(), 1);
    }

    #[test]
    fn graph_csv_roundtrips_exactly() {
        let result = result_with(&[0.8652, 0.8652, 0.8613, 0.2201], 26_703);
        let mut out = Vec::new();
        let bytes = emit_graph_csv(&result, &mut out).unwrap();
        assert_eq!(bytes, out.len() as u64);
        let text = String::from_utf8(out).unwrap();
        assert!(text.contains("n,accuracy,capacity_kb"));
        assert!(text.contains("0,0.8652,0.000000"));
        assert!(text.contains("1,0.8652,3.337875"));
        let back = parse_graph_csv(&text).unwrap();
        assert_eq!(back, result);
    }

    #[test]
    fn graph_csv_prints_the_lr_capacity_axis() {
        let rows = (0..=22)
            .map(|n| SweepRow {
                n,
                accuracy: 0.8652,
                cumulative_capacity_bytes: n as f64 * 2560.0 / 8.0,
            })
            .collect();
        let result = SweepResult::new("all".into(), 2560, rows).unwrap();
        let mut out = Vec::new();
        emit_graph_csv(&result, &mut out).unwrap();
        let text = String::from_utf8(out).unwrap();
        assert!(text.lines().last().unwrap().ends_with("7.040000"));
    }

    #[test]
    fn results_csv_parsing() {
        let rows =
            read_results_csv("# stub evaluator\nn,accuracy\n0,0.9\n8,0.89\n32,0.1\n").unwrap();
        assert_eq!(rows, vec![(0, 0.9), (8, 0.89), (32, 0.1)]);
        assert!(read_results_csv("0,1.5\n").is_err());
        assert!(read_results_csv("0,0.5,9\n").is_err());
        let result = result_from_external("all", 80, &rows).unwrap();
        assert_eq!(result.rows[1].cumulative_capacity_bytes, 80.0);
        assert_eq!(
            capacity_from_sweep(&result, 0.01).n_star(),
            Some(8),
            "stub curve crosses after n=8"
        );
    }

    #[test]
    fn sweep_result_validation() {
        let no_zero = SweepResult::new(
            "all".into(),
            1,
            vec![SweepRow {
                n: 1,
                accuracy: 0.5,
                cumulative_capacity_bytes: 0.125,
            }],
        );
        assert!(matches!(no_zero, Err(SweepError::BadRows(_))));
        assert!(validate_range(&[0, 1, 1]).is_err());
        assert!(validate_range(&[1, 2]).is_err());
        assert!(validate_range(&[0, 33]).is_err());
        assert_eq!(validate_range(&[0, 8, 4]).unwrap(), vec![0, 4, 8]);
    }
}
