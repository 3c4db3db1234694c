//! Metrics and reports.

mod metrics;
mod report;

pub use metrics::{
    accuracy, is_wellformed, lcs_len, refusal_rate, rouge_l, strip_pad, wellformed_rate,
    Accuracy, RougeScore,
};
pub use report::{
    compare_reports, diff_reports, evaluate_model, metric_row, predict_items, read_report,
    report_for_items, report_split, write_report, EvalReport, MetricRow, ReportFormat,
    CSV_HEADER,
};
