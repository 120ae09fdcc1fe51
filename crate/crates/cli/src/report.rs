//! Result tables: one CSV row per model, RMSE/MAE/WMAPE per mode group.

use flowcast::dataflow::Mode;
use flowcast::training::MetricsReport;

/// A model row; `Err` keeps the failure message of a run that did not
/// finish.
pub struct ModelRow {
    pub name: String,
    pub result: Result<MetricsReport, String>,
}

const GROUPS: [&str; 4] = ["subway", "taxi", "bus", "all"];

/// `model,subway_rmse,subway_mae,subway_wmape,...,all_wmape,status`.
/// WMAPE is a fraction.
pub fn table_csv(rows: &[ModelRow]) -> String {
    let mut out = String::from("model");
    for g in GROUPS {
        out.push_str(&format!(",{g}_rmse,{g}_mae,{g}_wmape"));
    }
    out.push_str(",status\n");
    for row in rows {
        out.push_str(&row.name);
        match &row.result {
            Ok(report) => {
                for r in &report.rows {
                    out.push_str(&format!(",{},{},{}", r.rmse, r.mae, r.wmape));
                }
                out.push_str(",ok\n");
            }
            Err(why) => {
                out.push_str(&",NaN".repeat(12));
                out.push_str(&format!(",failed: {}\n", why.replace([',', '\n'], ";")));
            }
        }
    }
    out
}

/// Fixed-width table for the terminal. With `percent`, WMAPE is shown as a
/// percentage; files always hold the fraction.
pub fn table_text(rows: &[ModelRow], percent: bool) -> String {
    let mut out = format!("{:<18}", "model");
    for m in Mode::ALL.iter().map(|m| m.label()).chain(["ALL"]) {
        out.push_str(&format!(" | {:>9} {:>9} {:>8}", format!("{m} RMSE"), "MAE", "WMAPE"));
    }
    out.push('\n');
    for row in rows {
        out.push_str(&format!("{:<18}", row.name));
        match &row.result {
            Ok(report) => {
                for r in &report.rows {
                    let w = if percent {
                        format!("{:.2}%", r.wmape * 100.0)
                    } else {
                        format!("{:.4}", r.wmape)
                    };
                    out.push_str(&format!(" | {:>9.2} {:>9.2} {:>8}", r.rmse, r.mae, w));
                }
            }
            Err(why) => out.push_str(&format!(" | failed: {why}")),
        }
        out.push('\n');
    }
    out
}

/// Element-wise mean of reports with the same row layout.
pub fn mean_report(reports: &[MetricsReport]) -> MetricsReport {
    let mut mean = reports[0].clone();
    let n = reports.len() as f64;
    for (i, row) in mean.rows.iter_mut().enumerate() {
        row.rmse = reports.iter().map(|r| r.rows[i].rmse).sum::<f64>() / n;
        row.mae = reports.iter().map(|r| r.rows[i].mae).sum::<f64>() / n;
        row.wmape = reports.iter().map(|r| r.rows[i].wmape).sum::<f64>() / n;
    }
    mean
}
