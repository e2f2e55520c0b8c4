use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::memory;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GridKind {
    Train,
    Posttrain,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CellStatus {
    /// Ran within budget.
    Ok,
    /// Budget unreachable; ran at the nearest available size.
    Nearest,
    /// Budget unreachable; not run.
    Skipped,
    Failed,
}

/// One (method, budget) cell of a benchmark grid, as written to JSON lines.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellReport {
    pub grid: GridKind,
    pub method: String,
    pub budget: f64,
    pub status: CellStatus,
    /// Achieved size as a percentage of the baseline, e.g. `"25.0%"`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub achieved_percent: Option<String>,
    #[serde(default)]
    pub metrics: BTreeMap<String, f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Value::is_null")]
    pub details: Value,
    #[serde(default, skip_serializing_if = "Value::is_null")]
    pub config: Value,
    #[serde(default)]
    pub version: String,
}

impl CellReport {
    /// Copy with every field whose name ends in `seconds` removed, at any
    /// depth. What remains is reproducible bit for bit.
    pub fn without_timing(&self) -> Self {
        let mut out = self.clone();
        out.metrics.retain(|k, _| !k.ends_with("seconds"));
        strip_timing(&mut out.details);
        out
    }
}

fn strip_timing(v: &mut Value) {
    match v {
        Value::Object(map) => {
            map.retain(|k, _| !k.ends_with("seconds"));
            map.values_mut().for_each(strip_timing);
        }
        Value::Array(items) => items.iter_mut().for_each(strip_timing),
        _ => {}
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RenderOptions {
    pub include_timing: bool,
}

impl Default for RenderOptions {
    fn default() -> Self {
        Self {
            include_timing: true,
        }
    }
}

enum Format {
    Fixed4,
    PercentOfBaseline(&'static str),
    Seconds,
    Millis,
}

struct Row {
    label: &'static str,
    key: &'static str,
    format: Format,
    timing: bool,
}

fn rows(kind: GridKind) -> Vec<Row> {
    let row = |label, key, format, timing| Row {
        label,
        key,
        format,
        timing,
    };
    match kind {
        GridKind::Train => vec![
            row("AUC", "auc", Format::Fixed4, false),
            row(
                "TrainMem",
                "training_bytes",
                Format::PercentOfBaseline("baseline_bytes"),
                false,
            ),
            row("TrainTime", "train_seconds", Format::Seconds, true),
            row("Latency", "latency_seconds", Format::Millis, true),
        ],
        GridKind::Posttrain => vec![
            row("Recall", "recall", Format::Fixed4, false),
            row("Time", "compress_seconds", Format::Seconds, true),
            row("Latency", "latency_seconds", Format::Millis, true),
        ],
    }
}

/// `0.5 -> "50%"`, `0.001 -> "0.1%"`.
pub fn format_budget(fraction: f64) -> String {
    let pct = fraction * 100.0;
    let mut s = format!("{pct:.4}");
    while s.ends_with('0') {
        s.pop();
    }
    if s.ends_with('.') {
        s.pop();
    }
    format!("{s}%")
}

fn cell_text(cell: &CellReport, row: &Row, first: bool) -> String {
    match cell.status {
        CellStatus::Skipped => return "/".into(),
        CellStatus::Failed => return "error".into(),
        _ => {}
    }
    let get = |k: &str| cell.metrics.get(k).copied();
    let mut text = match (&row.format, get(row.key)) {
        (_, None) => "-".to_string(),
        (Format::Fixed4, Some(v)) => format!("{v:.4}"),
        (Format::PercentOfBaseline(base), Some(v)) => match get(base) {
            Some(b) => memory::percent_of(v as usize, b as usize),
            None => "-".to_string(),
        },
        (Format::Seconds, Some(v)) => format!("{v:.2}s"),
        (Format::Millis, Some(v)) => format!("{:.3}ms", v * 1e3),
    };
    if first && cell.status == CellStatus::Nearest {
        if let Some(p) = &cell.achieved_percent {
            let _ = write!(text, " ({p})");
        }
    }
    text
}

/// Rows of `[method, metric, cell per budget]`. Methods and budgets keep the
/// order of their first appearance; later duplicates of a cell win.
fn table(cells: &[CellReport], opts: RenderOptions) -> Vec<Vec<String>> {
    let mut out = Vec::new();
    for kind in [GridKind::Train, GridKind::Posttrain] {
        let mine: Vec<&CellReport> = cells.iter().filter(|c| c.grid == kind).collect();
        if mine.is_empty() {
            continue;
        }
        let mut methods: Vec<&str> = Vec::new();
        let mut budgets: Vec<u64> = Vec::new();
        let mut lookup: BTreeMap<(usize, usize), &CellReport> = BTreeMap::new();
        for c in &mine {
            let m = match methods.iter().position(|&x| x == c.method) {
                Some(i) => i,
                None => {
                    methods.push(&c.method);
                    methods.len() - 1
                }
            };
            let bits = c.budget.to_bits();
            let b = match budgets.iter().position(|&x| x == bits) {
                Some(i) => i,
                None => {
                    budgets.push(bits);
                    budgets.len() - 1
                }
            };
            lookup.insert((m, b), c);
        }
        let mut header = vec!["Method".to_string(), "Metric".to_string()];
        header.extend(budgets.iter().map(|&b| format_budget(f64::from_bits(b))));
        out.push(header);
        let rows = rows(kind);
        for (mi, method) in methods.iter().enumerate() {
            for (ri, row) in rows.iter().enumerate() {
                if row.timing && !opts.include_timing {
                    continue;
                }
                let mut line = vec![method.to_string(), row.label.to_string()];
                for bi in 0..budgets.len() {
                    line.push(match lookup.get(&(mi, bi)) {
                        Some(c) => cell_text(c, row, ri == 0),
                        None => String::new(),
                    });
                }
                out.push(line);
            }
        }
    }
    out
}

/// Aligned text grid; one block per grid kind present in `cells`.
pub fn render_text(cells: &[CellReport], opts: RenderOptions) -> String {
    let t = table(cells, opts);
    let width = t.iter().map(Vec::len).max().unwrap_or(0);
    let mut widths = vec![0; width];
    for line in &t {
        for (w, s) in widths.iter_mut().zip(line) {
            *w = (*w).max(s.chars().count());
        }
    }
    let mut out = String::new();
    for line in &t {
        let padded: Vec<String> = line
            .iter()
            .zip(&widths)
            .map(|(s, &w)| format!("{s:<w$}"))
            .collect();
        out.push_str(padded.join("  ").trim_end());
        out.push('\n');
    }
    out
}

pub fn render_csv(cells: &[CellReport], opts: RenderOptions) -> String {
    let mut w = csv::WriterBuilder::new().flexible(true).from_writer(Vec::new());
    for line in table(cells, opts) {
        w.write_record(&line).expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8 input")
}
