use std::fmt::Write as _;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use ndarray::Array3;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::metrics::{RunHeader, RunRecord, RunRow, Verdict};
use crate::learner::LearnerConfig;
use crate::model::{MixturePolicy, ModelError, Policy};

pub const CSV_COLUMNS: [&str; 8] = [
    "k",
    "v_r_true",
    "v_c_true",
    "regret_cum",
    "cv_cum",
    "lambda_mean",
    "model_updates_cum",
    "wall_ms",
];

#[derive(Debug, Error)]
pub enum ReportError {
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error("run.csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("run.csv: {0}")]
    Format(String),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Floats in scientific notation with 17 significant digits, which
/// round-trips every `f64` exactly.
fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

/// Renders the run rows as CSV. The `interpolated` column is only present
/// when `eval_every > 1`.
pub fn csv_string(record: &RunRecord) -> String {
    let flagged = record.header.eval_every > 1;
    let mut out = CSV_COLUMNS.join(",");
    if flagged {
        out.push_str(",interpolated");
    }
    out.push('\n');
    for r in &record.rows {
        let _ = write!(
            out,
            "{},{},{},{},{},{},{},{}",
            r.k,
            fmt_f64(r.v_r_true),
            fmt_f64(r.v_c_true),
            fmt_f64(r.regret_cum),
            fmt_f64(r.cv_cum),
            fmt_f64(r.lambda_mean),
            r.model_updates_cum,
            r.wall_ms
        );
        if flagged {
            out.push_str(if r.interpolated { ",1" } else { ",0" });
        }
        out.push('\n');
    }
    out
}

/// Parses rows written by [`csv_string`].
pub fn parse_csv(text: &str) -> Result<Vec<RunRow>, ReportError> {
    let mut reader = csv::Reader::from_reader(text.as_bytes());
    let headers = reader.headers()?.clone();
    let names: Vec<&str> = headers.iter().collect();
    let flagged = match names.as_slice() {
        n if n == CSV_COLUMNS => false,
        [head @ .., "interpolated"] if *head == CSV_COLUMNS => true,
        _ => return Err(ReportError::Format(format!("unexpected header {names:?}"))),
    };
    let mut rows = Vec::new();
    for rec in reader.records() {
        let rec = rec?;
        let f = |i: usize| -> Result<f64, ReportError> {
            rec[i]
                .parse()
                .map_err(|e| ReportError::Format(format!("column {}: {e}", CSV_COLUMNS[i])))
        };
        let u = |i: usize| -> Result<u64, ReportError> {
            rec[i]
                .parse()
                .map_err(|e| ReportError::Format(format!("column {}: {e}", CSV_COLUMNS[i])))
        };
        rows.push(RunRow {
            k: u(0)?,
            v_r_true: f(1)?,
            v_c_true: f(2)?,
            regret_cum: f(3)?,
            cv_cum: f(4)?,
            lambda_mean: f(5)?,
            model_updates_cum: u(6)?,
            wall_ms: u(7)?,
            interpolated: flagged && &rec[8] == "1",
        });
    }
    Ok(rows)
}

pub fn read_csv(path: impl AsRef<Path>) -> Result<Vec<RunRow>, ReportError> {
    parse_csv(&fs::read_to_string(path)?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub instance_hash: String,
    pub seed: u64,
    pub config: Option<LearnerConfig>,
    pub zeta: f64,
    pub optimal_value: f64,
    pub budget: f64,
    pub episodes: usize,
    pub regret_total: f64,
    pub cv_total: f64,
    pub model_updates: u64,
    pub verdicts: Vec<Verdict>,
    pub all_passed: bool,
}

impl Summary {
    pub fn new(record: &RunRecord, verdicts: Vec<Verdict>) -> Self {
        let RunHeader {
            config,
            seed,
            instance_hash,
            zeta,
            optimal_value,
            budget,
            ..
        } = record.header.clone();
        Self {
            instance_hash,
            seed,
            config,
            zeta,
            optimal_value,
            budget,
            episodes: record.rows.len(),
            regret_total: record.regret_total(),
            cv_total: record.cv_total(),
            model_updates: record.rows.last().map_or(0, |r| r.model_updates_cum),
            all_passed: verdicts.iter().all(|v| v.passed),
            verdicts,
        }
    }
}

/// Line chart of `ys` against `xs` as a standalone SVG document.
pub fn line_chart_svg(title: &str, y_label: &str, xs: &[f64], ys: &[f64]) -> String {
    const W: f64 = 640.0;
    const H: f64 = 400.0;
    const ML: f64 = 70.0;
    const MR: f64 = 20.0;
    const MT: f64 = 40.0;
    const MB: f64 = 50.0;
    let range = |v: &[f64]| {
        let lo = v.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        match (lo.is_finite(), hi > lo) {
            (false, _) => (0.0, 1.0),
            (true, true) => (lo, hi),
            (true, false) => (lo - 0.5, lo + 0.5),
        }
    };
    let (x0, x1) = range(xs);
    let (y0, y1) = range(ys);
    let px = |x: f64| ML + (x - x0) / (x1 - x0) * (W - ML - MR);
    let py = |y: f64| H - MB - (y - y0) / (y1 - y0) * (H - MT - MB);

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let _ = writeln!(s, r#"<text x="{}" y="24" text-anchor="middle" font-size="15">{}</text>"#, W / 2.0, escape(title));
    let _ = writeln!(
        s,
        r#"<line x1="{ML}" y1="{}" x2="{}" y2="{}" stroke="black"/><line x1="{ML}" y1="{MT}" x2="{ML}" y2="{}" stroke="black"/>"#,
        H - MB,
        W - MR,
        H - MB,
        H - MB
    );
    for (v, y) in [(y0, py(y0)), (y1, py(y1))] {
        let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="end">{}</text>"#, ML - 6.0, y + 4.0, tick(v));
    }
    for (v, x) in [(x0, px(x0)), (x1, px(x1))] {
        let _ = writeln!(s, r#"<text x="{x}" y="{}" text-anchor="middle">{}</text>"#, H - MB + 16.0, tick(v));
    }
    let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle">episode</text>"#, (ML + W - MR) / 2.0, H - 12.0);
    let _ = writeln!(
        s,
        r#"<text x="16" y="{}" text-anchor="middle" transform="rotate(-90 16 {})">{}</text>"#,
        (MT + H - MB) / 2.0,
        (MT + H - MB) / 2.0,
        escape(y_label)
    );
    let mut points = String::new();
    for (&x, &y) in xs.iter().zip(ys) {
        let _ = write!(points, "{:.2},{:.2} ", px(x), py(y));
    }
    let _ = writeln!(
        s,
        r#"<polyline fill="none" stroke="steelblue" stroke-width="1.5" points="{}"/>"#,
        points.trim_end()
    );
    s.push_str("</svg>\n");
    s
}

fn tick(v: f64) -> String {
    if v != 0.0 && (v.abs() >= 1e4 || v.abs() < 1e-2) {
        format!("{v:.2e}")
    } else {
        format!("{v:.3}")
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

pub fn regret_svg(rows: &[RunRow]) -> String {
    let xs: Vec<f64> = rows.iter().map(|r| r.k as f64).collect();
    let ys: Vec<f64> = rows.iter().map(|r| r.regret_cum).collect();
    line_chart_svg("Cumulative regret", "regret", &xs, &ys)
}

pub fn cv_svg(rows: &[RunRow]) -> String {
    let xs: Vec<f64> = rows.iter().map(|r| r.k as f64).collect();
    let ys: Vec<f64> = rows.iter().map(|r| r.cv_cum).collect();
    line_chart_svg("Cumulative constraint violation", "violation", &xs, &ys)
}

/// Writes `run.csv`, `summary.json` and, if `plots`, `regret.svg` and
/// `cv.svg` into `out_dir` (created if missing). Returns the written paths.
pub fn emit_report(
    record: &RunRecord,
    summary: &Summary,
    out_dir: impl AsRef<Path>,
    plots: bool,
) -> Result<Vec<PathBuf>, ReportError> {
    let dir = out_dir.as_ref();
    fs::create_dir_all(dir)?;
    let mut written = Vec::new();
    let mut put = |name: &str, body: String| -> io::Result<()> {
        let p = dir.join(name);
        fs::write(&p, body)?;
        written.push(p);
        Ok(())
    };
    put("run.csv", csv_string(record))?;
    put("summary.json", serde_json::to_string_pretty(summary)? + "\n")?;
    if plots {
        put("regret.svg", regret_svg(&record.rows))?;
        put("cv.svg", cv_svg(&record.rows))?;
    }
    Ok(written)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyComponent {
    pub weight: f64,
    /// `rule[h][s][a]`.
    pub rule: Vec<Vec<Vec<f64>>>,
}

/// Serialized mixture policy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyFile {
    #[serde(rename = "S")]
    pub states: usize,
    #[serde(rename = "A")]
    pub actions: usize,
    #[serde(rename = "H")]
    pub horizon: usize,
    pub components: Vec<PolicyComponent>,
}

impl PolicyFile {
    pub fn from_mixture(mix: &MixturePolicy) -> Self {
        let d = mix.dims();
        let components = mix
            .components()
            .iter()
            .map(|(w, p)| PolicyComponent {
                weight: *w,
                rule: p
                    .as_array()
                    .outer_iter()
                    .map(|hs| hs.outer_iter().map(|row| row.to_vec()).collect())
                    .collect(),
            })
            .collect();
        Self {
            states: d.states,
            actions: d.actions,
            horizon: d.horizon,
            components,
        }
    }

    pub fn into_mixture(self) -> Result<MixturePolicy, ModelError> {
        let shape = (self.horizon, self.states, self.actions);
        let mut comps = Vec::with_capacity(self.components.len());
        for c in self.components {
            let flat: Vec<f64> = c.rule.into_iter().flatten().flatten().collect();
            let rule = Array3::from_shape_vec(shape, flat)
                .map_err(|e| ModelError::Format(format!("policy rule: {e}")))?;
            comps.push((c.weight, Arc::new(Policy::new(rule)?)));
        }
        MixturePolicy::new(comps)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), ReportError> {
        fs::write(path, serde_json::to_string_pretty(self)? + "\n")?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ReportError> {
        Ok(serde_json::from_str(&fs::read_to_string(path)?)?)
    }
}
