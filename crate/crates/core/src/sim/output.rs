//! Metric series as CSV.

use std::io::Write;

use super::EpochMetrics;
use crate::error::{invalid, Result};

/// Every column [`write_metrics_csv`] can emit.
pub const METRIC_COLUMNS: [&str; 15] = [
    "step",
    "empirical_z",
    "trade_ratio",
    "mean_budget",
    "total_wealth",
    "q05",
    "q25",
    "q50",
    "q75",
    "q95",
    "matches",
    "trades",
    "bid0",
    "bidk",
    "loans_paid",
];

pub const DEFAULT_RECORD: [&str; 10] = [
    "step",
    "empirical_z",
    "trade_ratio",
    "mean_budget",
    "total_wealth",
    "q05",
    "q25",
    "q50",
    "q75",
    "q95",
];

fn float(x: f64) -> String {
    // steps without matches leave the ratio columns empty
    if x.is_finite() {
        format!("{x}")
    } else {
        String::new()
    }
}

fn cell(m: &EpochMetrics, col: &str) -> String {
    match col {
        "step" => m.step.to_string(),
        "empirical_z" => float(m.empirical_z),
        "trade_ratio" => float(m.trade_ratio),
        "mean_budget" => float(m.mean_budget),
        "total_wealth" => float(m.total_wealth),
        "q05" => float(m.budget_quantiles[0]),
        "q25" => float(m.budget_quantiles[1]),
        "q50" => float(m.budget_quantiles[2]),
        "q75" => float(m.budget_quantiles[3]),
        "q95" => float(m.budget_quantiles[4]),
        "matches" => m.matches.to_string(),
        "trades" => m.trades.to_string(),
        "bid0" => m.bid_histogram[0].to_string(),
        "bidk" => m.bid_histogram[1].to_string(),
        "loans_paid" => float(m.loans_outstanding_paid),
        _ => unreachable!("column checked by caller"),
    }
}

/// Writes one header line and one row per step, columns in `record` order.
pub fn write_metrics_csv<W: Write>(metrics: &[EpochMetrics], record: &[String], mut w: W) -> Result<()> {
    if let Some(bad) = record.iter().find(|c| !METRIC_COLUMNS.contains(&c.as_str())) {
        return Err(invalid("record", format!("unknown metric `{bad}`")));
    }
    if record.is_empty() {
        return Err(invalid("record", "no columns selected"));
    }
    writeln!(w, "{}", record.join(","))?;
    for m in metrics {
        let row: Vec<String> = record.iter().map(|c| cell(m, c)).collect();
        writeln!(w, "{}", row.join(","))?;
    }
    w.flush()?;
    Ok(())
}
