use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use super::sweep::{ExperimentReport, MeanStderr, SweepTimings};
use crate::error::{Error, Result};
use crate::trainer::atomic_write;

pub const CELL_HEADER: &str = "method,rho,alpha,seed,status,win_rate,eval_reward,judge_win_rate,expected_reward,final_loss,error";
pub const SUMMARY_HEADER: &str = "method,rho,alpha,n_ok,win_rate_mean,win_rate_stderr,eval_reward_mean,eval_reward_stderr,judge_win_rate_mean,judge_win_rate_stderr";

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

fn pair(m: Option<MeanStderr>) -> String {
    match m {
        Some(m) => format!("{},{}", m.mean, m.stderr),
        None => ",".into(),
    }
}

/// One row per cell.
pub fn cells_csv(report: &ExperimentReport) -> String {
    let mut out = String::from(CELL_HEADER);
    out.push('\n');
    for c in &report.cells {
        let e = c.evaluation.as_ref();
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{}",
            csv_field(&c.method),
            opt(c.rho),
            c.alpha,
            c.seed,
            if c.error.is_some() { "failed" } else { "ok" },
            opt(e.map(|e| e.win_rate)),
            opt(e.map(|e| e.eval_reward)),
            opt(e.map(|e| e.judge_win_rate)),
            opt(e.map(|e| e.expected_reward)),
            opt(c.final_loss),
            csv_field(c.error.as_deref().unwrap_or("")),
        );
    }
    out
}

pub fn summary_csv(report: &ExperimentReport) -> String {
    let mut out = String::from(SUMMARY_HEADER);
    out.push('\n');
    for r in &report.summary {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{}",
            csv_field(&r.method),
            opt(r.rho),
            r.alpha,
            r.n_ok,
            pair(r.win_rate),
            pair(r.eval_reward),
            pair(r.judge_win_rate),
        );
    }
    out
}

/// Methods × noise grid in the layout of a results table, `mean ± stderr`.
pub fn render_table(report: &ExperimentReport) -> String {
    let mut alphas: Vec<f64> = report.summary.iter().map(|r| r.alpha).collect();
    alphas.sort_by(f64::total_cmp);
    alphas.dedup();
    let mut methods: Vec<&str> = Vec::new();
    for r in &report.summary {
        if !methods.contains(&r.method.as_str()) {
            methods.push(&r.method);
        }
    }
    let mut out = String::new();
    for (title, pick) in [
        ("win rate", (|r| r.win_rate) as fn(&super::sweep::SummaryRow) -> Option<MeanStderr>),
        ("eval reward", |r| r.eval_reward),
        ("judge win rate", |r| r.judge_win_rate),
    ] {
        let _ = write!(out, "{title:<20}");
        for a in &alphas {
            let _ = write!(out, "{:>20}", format!("alpha={a}"));
        }
        out.push('\n');
        for m in &methods {
            let _ = write!(out, "{m:<20}");
            for a in &alphas {
                let cell = report
                    .summary_row(m, *a)
                    .and_then(pick)
                    .map(|v| format!("{:.4} ± {:.4}", v.mean, v.stderr))
                    .unwrap_or_else(|| "n/a".into());
                let _ = write!(out, "{cell:>20}");
            }
            out.push('\n');
        }
        out.push('\n');
    }
    out
}

/// Long-format plot data: one line per (series, x).
pub fn noise_plot_data(report: &ExperimentReport) -> String {
    let mut out = String::from("series,alpha,metric,mean,stderr\n");
    for r in &report.summary {
        for (metric, v) in [
            ("win_rate", r.win_rate),
            ("eval_reward", r.eval_reward),
            ("judge_win_rate", r.judge_win_rate),
        ] {
            if let Some(v) = v {
                let _ = writeln!(out, "{},{},{metric},{},{}", csv_field(&r.method), r.alpha, v.mean, v.stderr);
            }
        }
    }
    out
}

pub fn report_json(report: &ExperimentReport) -> String {
    let mut s = serde_json::to_string_pretty(report).expect("report serializes");
    s.push('\n');
    s
}

pub fn read_report(path: &Path) -> Result<ExperimentReport> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReportFiles {
    pub cells_csv: PathBuf,
    pub summary_csv: PathBuf,
    pub report_json: PathBuf,
    pub plot_data: PathBuf,
    pub table: PathBuf,
    pub timings_json: Option<PathBuf>,
}

/// Writes every report artifact under `dir`. Everything except
/// `timings.json` is a function of the report alone.
pub fn emit_report(report: &ExperimentReport, timings: Option<&SweepTimings>, dir: &Path) -> Result<ReportFiles> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let files = ReportFiles {
        cells_csv: dir.join("report.csv"),
        summary_csv: dir.join("summary.csv"),
        report_json: dir.join("report.json"),
        plot_data: dir.join("plot_noise.csv"),
        table: dir.join("table.txt"),
        timings_json: timings.map(|_| dir.join("timings.json")),
    };
    atomic_write(&files.cells_csv, cells_csv(report).as_bytes())?;
    atomic_write(&files.summary_csv, summary_csv(report).as_bytes())?;
    atomic_write(&files.report_json, report_json(report).as_bytes())?;
    atomic_write(&files.plot_data, noise_plot_data(report).as_bytes())?;
    atomic_write(&files.table, render_table(report).as_bytes())?;
    if let (Some(t), Some(path)) = (timings, &files.timings_json) {
        let json = serde_json::to_string_pretty(t).expect("timings serialize");
        atomic_write(path, json.as_bytes())?;
    }
    Ok(files)
}
