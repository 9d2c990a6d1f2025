//! Experiment harness: per-episode metrics against the exact solution,
//! final-policy verdicts, and CSV / JSON / SVG output.

pub mod metrics;
pub mod report;
pub mod train;

pub use metrics::{
    check_final_policy, compute_metrics, cv_from_rows, verdict_from_values, MetricsAccumulator,
    RunHeader, RunRecord, RunRow, Verdict, STRICT_TOL,
};
pub use report::{
    csv_string, emit_report, line_chart_svg, parse_csv, read_csv, PolicyComponent, PolicyFile,
    ReportError, Summary, CSV_COLUMNS,
};
pub use train::{train, TrainError, TrainOptions, TrainOutput};
