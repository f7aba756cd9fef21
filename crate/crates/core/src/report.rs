//! Comparison tables: one row per learner and generator with cross-validated
//! performance and odds-ratio estimates.

use std::fmt::Write as _;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::effect::EffectEstimate;
use crate::error::{Error, Result};

/// Placeholder for cells with no value.
pub const EMPTY_CELL: &str = "—";

pub const COLUMNS: [&str; 7] = [
    "Model",
    "Generator",
    "Baseline AUC/ICI",
    "Augmented AUC/ICI",
    "Original OR",
    "Baseline OR",
    "Augmented OR",
];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Perf {
    pub auc: f64,
    pub ici: f64,
}

impl Perf {
    pub fn cell(&self) -> String {
        format!("{:.2}/{:.2}", self.auc, self.ici)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OrCell {
    #[serde(rename = "or")]
    pub point: f64,
    pub ci_low: f64,
    pub ci_high: f64,
}

impl OrCell {
    pub fn cell(&self) -> String {
        format!("{:.1} ({:.1}, {:.1})", self.point, self.ci_low, self.ci_high)
    }
}

impl From<&EffectEstimate> for OrCell {
    fn from(e: &EffectEstimate) -> Self {
        OrCell {
            point: e.or_point,
            ci_low: e.ci_low,
            ci_high: e.ci_high,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub outcome: String,
    pub learner: String,
    pub generator: Option<String>,
    pub baseline: Option<Perf>,
    pub augmented: Option<Perf>,
    pub reference_or: Option<OrCell>,
    pub baseline_or: Option<OrCell>,
    pub augmented_or: Option<OrCell>,
}

fn opt_cell<T>(v: &Option<T>, f: impl Fn(&T) -> String) -> String {
    v.as_ref().map_or_else(|| EMPTY_CELL.to_string(), f)
}

impl ReportRow {
    /// Formatted cells in [`COLUMNS`] order.
    pub fn cells(&self) -> Vec<String> {
        vec![
            self.learner.clone(),
            self.generator.clone().filter(|g| !g.is_empty()).unwrap_or_else(|| EMPTY_CELL.to_string()),
            opt_cell(&self.baseline, Perf::cell),
            opt_cell(&self.augmented, Perf::cell),
            opt_cell(&self.reference_or, OrCell::cell),
            opt_cell(&self.baseline_or, OrCell::cell),
            opt_cell(&self.augmented_or, OrCell::cell),
        ]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TableFormat {
    Csv,
    Markdown,
    Json,
}

impl TableFormat {
    pub const ALL: [TableFormat; 3] = [TableFormat::Csv, TableFormat::Markdown, TableFormat::Json];

    pub fn extension(self) -> &'static str {
        match self {
            TableFormat::Csv => "csv",
            TableFormat::Markdown => "md",
            TableFormat::Json => "json",
        }
    }
}

impl FromStr for TableFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(TableFormat::Csv),
            "markdown" | "md" => Ok(TableFormat::Markdown),
            "json" => Ok(TableFormat::Json),
            _ => Err(Error::InvalidArgument(format!("unknown table format {s:?}"))),
        }
    }
}

#[derive(Serialize)]
struct JsonTable<'a> {
    columns: &'a [&'a str],
    rows: Vec<Vec<String>>,
}

/// Render `rows` as a table. Cell text is identical across formats.
pub fn emit_table(rows: &[ReportRow], format: TableFormat) -> Result<String> {
    if rows.is_empty() {
        return Err(Error::InvalidArgument("report has no rows".into()));
    }
    let cells: Vec<Vec<String>> = rows.iter().map(ReportRow::cells).collect();
    match format {
        TableFormat::Csv => {
            let mut w = csv::Writer::from_writer(Vec::new());
            w.write_record(COLUMNS)?;
            for r in &cells {
                w.write_record(r)?;
            }
            let bytes = w.into_inner().map_err(|e| Error::InvalidArgument(e.to_string()))?;
            Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
        }
        TableFormat::Markdown => {
            let mut out = String::new();
            let _ = writeln!(out, "| {} |", COLUMNS.join(" | "));
            let _ = writeln!(out, "|{}", "---|".repeat(COLUMNS.len()));
            for r in &cells {
                let _ = writeln!(out, "| {} |", r.join(" | "));
            }
            Ok(out)
        }
        TableFormat::Json => {
            let mut s = serde_json::to_string_pretty(&JsonTable {
                columns: &COLUMNS,
                rows: cells,
            })?;
            s.push('\n');
            Ok(s)
        }
    }
}
