//! Evaluation metrics, the noise-sweep runner and report artifacts.

mod curve;
mod metrics;
mod report;
mod sweep;

pub use curve::{coefficient_curve, curve_grid, CoefficientCurve, CurveSeries, DEFAULT_CURVE_RHOS};
pub use metrics::{eval_reward, evaluate_policy, expected_reward, win_rate, PolicyEvaluation};
pub use report::{
    cells_csv, emit_report, noise_plot_data, read_report, render_table, report_json, summary_csv, ReportFiles,
    CELL_HEADER, SUMMARY_HEADER,
};
pub use sweep::{
    judge_table, run_noise_sweep, CellOutcome, CellTiming, ExperimentConfig, MeanStderr, MethodSpec, SummaryRow, SweepTimings,
    TaskSpec, TrainSettings,
};
