use std::collections::BTreeSet;

use serde::Serialize;

use super::RunArchive;
use crate::diag::{Code, Diagnostic};
use crate::sim::format_cell;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ComparisonColumn {
    pub metric: String,
    pub run: String,
    /// One cell per entry of [`Comparison::ticks`]; `None` where the run has
    /// no row for that tick or the cell is null.
    pub values: Vec<Option<f64>>,
}

impl ComparisonColumn {
    pub fn header(&self) -> String {
        format!("{}[{}]", self.metric, self.run)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SummaryRow {
    pub metric: String,
    pub run: String,
    /// Value in the last collected row.
    pub final_value: Option<f64>,
    /// Mean over collected ticks, nulls ignored.
    pub mean: Option<f64>,
}

/// Shared metrics of several runs aligned on tick.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Comparison {
    pub metrics: Vec<String>,
    pub runs: Vec<String>,
    pub ticks: Vec<u64>,
    /// Grouped by metric, then in run order.
    pub columns: Vec<ComparisonColumn>,
    pub summary: Vec<SummaryRow>,
}

/// Aligns the metrics every archive has (in the first archive's column
/// order) on the union of collected ticks.
pub fn compare_runs(archives: &[RunArchive]) -> Result<Comparison, Diagnostic> {
    if archives.len() < 2 {
        return Err(Diagnostic::bare(Code::TooFewRuns, format!("need at least two runs, got {}", archives.len())));
    }
    let metrics: Vec<String> = archives[0]
        .table
        .names
        .iter()
        .filter(|m| archives[1..].iter().all(|a| a.table.names.contains(m)))
        .cloned()
        .collect();
    if metrics.is_empty() {
        return Err(Diagnostic::bare(Code::NoSharedMetrics, "the runs have no metric in common"));
    }
    let ticks: Vec<u64> =
        archives.iter().flat_map(|a| a.table.ticks()).collect::<BTreeSet<_>>().into_iter().collect();
    let runs: Vec<String> = archives.iter().map(|a| a.run_id().to_string()).collect();

    let mut columns = Vec::new();
    let mut summary = Vec::new();
    for m in &metrics {
        for a in archives {
            let col = a.table.column(m).expect("shared metric");
            let own_ticks = a.table.ticks();
            let values = ticks
                .iter()
                .map(|t| own_ticks.iter().position(|x| x == t).and_then(|i| col[i]))
                .collect();
            let present: Vec<f64> = col.iter().flatten().copied().collect();
            summary.push(SummaryRow {
                metric: m.clone(),
                run: a.run_id().to_string(),
                final_value: col.last().copied().flatten(),
                mean: (!present.is_empty()).then(|| present.iter().sum::<f64>() / present.len() as f64),
            });
            columns.push(ComparisonColumn { metric: m.clone(), run: a.run_id().to_string(), values });
        }
    }
    Ok(Comparison { metrics, runs, ticks, columns, summary })
}

impl Comparison {
    /// `tick,<metric>[<run>],...`
    pub fn table_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        let header = std::iter::once("tick".to_string()).chain(self.columns.iter().map(ComparisonColumn::header));
        w.write_record(header).expect("in-memory write");
        for (i, t) in self.ticks.iter().enumerate() {
            let row = std::iter::once(t.to_string()).chain(self.columns.iter().map(|c| format_cell(c.values[i])));
            w.write_record(row).expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8")
    }

    /// `metric,run,final,mean`
    pub fn summary_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["metric", "run", "final", "mean"]).expect("in-memory write");
        for s in &self.summary {
            w.write_record([s.metric.clone(), s.run.clone(), format_cell(s.final_value), format_cell(s.mean)])
                .expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8")
    }

    pub fn summary_for(&self, metric: &str, run: &str) -> Option<&SummaryRow> {
        self.summary.iter().find(|s| s.metric == metric && s.run == run)
    }
}
