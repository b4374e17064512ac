//! Dataset ingestion/export, run configuration, and result emission.
//!
//! CSV files use UTF-8, LF line endings, and a period decimal separator;
//! floats are written with 17 significant digits so a round trip through
//! text reproduces them bit-for-bit.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{build_dataset, BoxSupport, DataError, LoggedDataset};
use crate::experiments::{ComparisonReport, CoverageReport};
use crate::posterior::GridPosterior;

#[derive(Debug, Error)]
pub enum IoError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("line {line}, column {col}: {msg}")]
    Parse { line: usize, col: usize, msg: String },
    #[error("configuration mismatch: {0}")]
    ConfigMismatch(String),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

fn default_quantile() -> f64 {
    0.9999
}
fn default_grid_1d() -> usize {
    10_000
}
fn default_grid_2d() -> usize {
    1000
}
fn default_alphas() -> Vec<f64> {
    vec![0.05, 0.10]
}
fn default_margins() -> Vec<f64> {
    vec![0.0, 0.05, 0.10]
}

/// Prior selection as it appears in config files and flags.
#[derive(Debug, Clone, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, rename_all = "snake_case")]
pub enum PriorConfig {
    #[default]
    Flat,
    Beta {
        a: f64,
        b: f64,
    },
    Table {
        path: String,
    },
}

/// Full run configuration; unknown keys are rejected.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    #[serde(rename = "grid_1d")]
    pub grid_1d: usize,
    #[serde(rename = "grid_2d")]
    pub grid_2d: usize,
    pub alphas: Vec<f64>,
    pub sub_support_quantile: f64,
    pub margins: Vec<f64>,
    pub threads: Option<usize>,
    pub out_dir: Option<String>,
    pub prior: PriorConfig,
    /// Support bounds for ingested weighted data, one (lo, hi) per policy.
    pub bounds: Option<Vec<(f64, f64)>>,
    pub env_k: usize,
    pub env_d: usize,
    pub env_beta0: f64,
    pub env_beta1: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            grid_1d: default_grid_1d(),
            grid_2d: default_grid_2d(),
            alphas: default_alphas(),
            sub_support_quantile: default_quantile(),
            margins: default_margins(),
            threads: None,
            out_dir: None,
            prior: PriorConfig::Flat,
            bounds: None,
            env_k: 10,
            env_d: 12,
            env_beta0: 0.0,
            env_beta1: 3.0,
        }
    }
}

impl RunConfig {
    pub fn from_json_file(path: &Path) -> Result<Self, IoError> {
        let text = fs::read_to_string(path)?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn validate(&self) -> Result<(), IoError> {
        if self.grid_1d < 100 || self.grid_2d < 100 {
            return Err(IoError::ConfigMismatch("grids need at least 100 points".into()));
        }
        if !(0.0 < self.sub_support_quantile && self.sub_support_quantile < 1.0) {
            return Err(IoError::ConfigMismatch("sub_support_quantile must be in (0,1)".into()));
        }
        if self.alphas.iter().any(|&a| !(0.0 < a && a < 1.0)) {
            return Err(IoError::ConfigMismatch("alphas must be in (0,1)".into()));
        }
        if self.env_k < 2 || self.env_d < 1 {
            return Err(IoError::ConfigMismatch("environment needs K >= 2, d >= 1".into()));
        }
        Ok(())
    }
}

fn parse_field(tok: &str, line: usize, col: usize) -> Result<f64, IoError> {
    tok.trim().parse::<f64>().map_err(|_| IoError::Parse {
        line,
        col,
        msg: format!("malformed number {tok:?}"),
    })
}

/// Reads `reward,w_1,...,w_l` rows; support bounds come from configuration.
pub fn ingest_weighted_csv(path: &Path, support: BoxSupport) -> Result<LoggedDataset, IoError> {
    let text = fs::read_to_string(path)?;
    let mut lines = text.lines().enumerate();
    let (_, header) = lines.next().ok_or(IoError::Parse {
        line: 1,
        col: 1,
        msg: "empty file".into(),
    })?;
    let cols: Vec<&str> = header.split(',').collect();
    if cols.first().map(|c| c.trim()) != Some("reward") {
        return Err(IoError::Parse {
            line: 1,
            col: 1,
            msg: "header must start with 'reward'".into(),
        });
    }
    let l = cols.len() - 1;
    if l != support.policy_count() {
        return Err(IoError::ConfigMismatch(format!(
            "file has {l} weight columns but {} bound pairs are configured",
            support.policy_count()
        )));
    }
    let mut rows = Vec::new();
    let mut rewards = Vec::new();
    for (i, raw) in lines {
        if raw.trim().is_empty() {
            continue;
        }
        let line = i + 1;
        let toks: Vec<&str> = raw.split(',').collect();
        if toks.len() != l + 1 {
            return Err(IoError::Parse {
                line,
                col: toks.len(),
                msg: format!("expected {} fields, found {}", l + 1, toks.len()),
            });
        }
        rewards.push(parse_field(toks[0], line, 1)?);
        let mut w = Vec::with_capacity(l);
        for (c, tok) in toks[1..].iter().enumerate() {
            w.push(parse_field(tok, line, c + 2)?);
        }
        rows.push(w);
    }
    Ok(build_dataset(&rows, &rewards, support)?)
}

/// Reads `action,reward,behavior_prob,target_prob_1,...,target_prob_l` rows
/// and forms importance weights at ingest. Bounds default to
/// [0, 1/min behavior probability] per policy when not configured.
pub fn ingest_raw_csv(
    path: &Path,
    bounds: Option<Vec<(f64, f64)>>,
) -> Result<LoggedDataset, IoError> {
    let text = fs::read_to_string(path)?;
    let mut lines = text.lines().enumerate();
    let (_, header) = lines.next().ok_or(IoError::Parse {
        line: 1,
        col: 1,
        msg: "empty file".into(),
    })?;
    let cols: Vec<&str> = header.split(',').collect();
    if cols.len() < 4 || cols[0].trim() != "action" {
        return Err(IoError::Parse {
            line: 1,
            col: 1,
            msg: "header must be action,reward,behavior_prob,target_prob_...".into(),
        });
    }
    let l = cols.len() - 3;
    if let Some(b) = &bounds {
        if b.len() != l {
            return Err(IoError::ConfigMismatch(format!(
                "file has {l} target policies but {} bound pairs are configured",
                b.len()
            )));
        }
    }
    let mut rows = Vec::new();
    let mut rewards = Vec::new();
    let mut min_behavior = f64::INFINITY;
    for (i, raw) in lines {
        if raw.trim().is_empty() {
            continue;
        }
        let line = i + 1;
        let toks: Vec<&str> = raw.split(',').collect();
        if toks.len() != l + 3 {
            return Err(IoError::Parse {
                line,
                col: toks.len(),
                msg: format!("expected {} fields, found {}", l + 3, toks.len()),
            });
        }
        rewards.push(parse_field(toks[1], line, 2)?);
        let behavior = parse_field(toks[2], line, 3)?;
        if !(behavior > 0.0 && behavior <= 1.0) {
            return Err(IoError::Parse {
                line,
                col: 3,
                msg: format!("behavior probability {behavior} outside (0, 1]"),
            });
        }
        min_behavior = min_behavior.min(behavior);
        let mut w = Vec::with_capacity(l);
        for (c, tok) in toks[3..].iter().enumerate() {
            let target = parse_field(tok, line, c + 4)?;
            if !(0.0..=1.0).contains(&target) {
                return Err(IoError::Parse {
                    line,
                    col: c + 4,
                    msg: format!("target probability {target} outside [0, 1]"),
                });
            }
            w.push(target / behavior);
        }
        rows.push(w);
    }
    let bounds = bounds.unwrap_or_else(|| vec![(0.0, 1.0 / min_behavior); l]);
    Ok(build_dataset(&rows, &rewards, BoxSupport::new(bounds)?)?)
}

/// 17 significant digits: enough to reproduce any f64 exactly.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

pub fn export_weighted_csv(ds: &LoggedDataset, path: &Path) -> Result<(), IoError> {
    let l = ds.policy_count();
    let mut out = String::from("reward");
    for j in 1..=l {
        let _ = write!(out, ",w_{j}");
    }
    out.push('\n');
    for s in ds.samples() {
        out.push_str(&fmt_f64(s.reward));
        for w in &s.weights {
            out.push(',');
            out.push_str(&fmt_f64(*w));
        }
        out.push('\n');
    }
    fs::write(path, out)?;
    Ok(())
}

/// Everything a single-dataset evaluation produces, in one JSON document.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalSummary {
    pub mele_lo: f64,
    pub mele_hi: f64,
    pub is: f64,
    pub snis: f64,
    pub hpd_90: (f64, f64),
    pub hpd_95: (f64, f64),
    pub wilks_90: (f64, f64),
    pub wilks_95: (f64, f64),
    pub sub_support: Vec<(f64, f64)>,
    pub probabilities: Option<serde_json::Value>,
    pub seed: u64,
    pub config: RunConfig,
    pub solver_diagnostics: SolverDiagnostics,
    pub timestamp: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SolverDiagnostics {
    pub max_loglik: f64,
    pub residual_mass: f64,
    pub mele_unique: bool,
}

pub fn emit_summary(summary: &EvalSummary, outdir: &Path) -> Result<(), IoError> {
    fs::create_dir_all(outdir)?;
    let text = serde_json::to_string_pretty(summary)?;
    fs::write(outdir.join("summary.json"), text + "\n")?;
    Ok(())
}

pub fn posterior_csv(post: &GridPosterior, path: &Path) -> Result<(), IoError> {
    let mut out = String::new();
    match post.dims() {
        1 => {
            out.push_str("center,mass\n");
            for i in 0..post.axes[0].cells {
                let _ = writeln!(out, "{},{}", fmt_f64(post.axes[0].center(i)), fmt_f64(post.cell_mass[i]));
            }
        }
        _ => {
            out.push_str("v1,v2,mass\n");
            let n0 = post.axes[0].cells;
            for (idx, &m) in post.cell_mass.iter().enumerate() {
                let _ = writeln!(
                    out,
                    "{},{},{}",
                    fmt_f64(post.axes[0].center(idx % n0)),
                    fmt_f64(post.axes[1].center(idx / n0)),
                    fmt_f64(m)
                );
            }
        }
    }
    fs::write(path, out)?;
    Ok(())
}

pub fn coverage_csv(report: &CoverageReport, path: &Path) -> Result<(), IoError> {
    let mut out = String::from(
        "method,level,n,coverage,mean_width,width_q05,width_q25,width_q50,width_q75,width_q95,replicates,failures,mc_se\n",
    );
    for c in &report.cells {
        let _ = writeln!(
            out,
            "{:?},{},{},{},{},{},{},{},{},{},{},{},{}",
            c.method,
            fmt_f64(c.level),
            c.n,
            fmt_f64(c.coverage),
            fmt_f64(c.mean_width),
            fmt_f64(c.width_quantiles[0]),
            fmt_f64(c.width_quantiles[1]),
            fmt_f64(c.width_quantiles[2]),
            fmt_f64(c.width_quantiles[3]),
            fmt_f64(c.width_quantiles[4]),
            c.replicates,
            c.failures,
            fmt_f64(c.mc_se),
        );
    }
    fs::write(path, out)?;
    Ok(())
}

pub fn comparison_csv(report: &ComparisonReport, path: &Path) -> Result<(), IoError> {
    let mut out = String::from("mode,margin,n,mean_prob,band_lo,band_hi,replicates,failures\n");
    for c in &report.cells {
        let _ = writeln!(
            out,
            "{:?},{},{},{},{},{},{},{}",
            c.mode,
            fmt_f64(c.margin),
            c.n,
            fmt_f64(c.mean_prob),
            fmt_f64(c.band.0),
            fmt_f64(c.band.1),
            c.replicates,
            c.failures,
        );
    }
    fs::write(path, out)?;
    Ok(())
}

/// Minimal SVG polyline chart; one line per series.
pub fn svg_line_chart(
    series: &[(&str, Vec<(f64, f64)>)],
    title: &str,
    path: &Path,
) -> Result<(), IoError> {
    const W: f64 = 640.0;
    const H: f64 = 400.0;
    const PAD: f64 = 50.0;
    let all: Vec<(f64, f64)> = series.iter().flat_map(|(_, pts)| pts.iter().copied()).collect();
    if all.is_empty() {
        return Ok(());
    }
    let (mut x0, mut x1, mut y0, mut y1) = (f64::MAX, f64::MIN, f64::MAX, f64::MIN);
    for &(x, y) in &all {
        x0 = x0.min(x);
        x1 = x1.max(x);
        y0 = y0.min(y);
        y1 = y1.max(y);
    }
    let (xs, ys) = ((x1 - x0).max(1e-12), (y1 - y0).max(1e-12));
    let colors = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e"];
    let mut svg = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{W}\" height=\"{H}\" viewBox=\"0 0 {W} {H}\">\n<rect width=\"{W}\" height=\"{H}\" fill=\"white\"/>\n<text x=\"{}\" y=\"24\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"16\">{title}</text>\n",
        W / 2.0
    );
    for (si, (name, pts)) in series.iter().enumerate() {
        let color = colors[si % colors.len()];
        let mut d = String::new();
        for &(x, y) in pts {
            let px = PAD + (x - x0) / xs * (W - 2.0 * PAD);
            let py = H - PAD - (y - y0) / ys * (H - 2.0 * PAD);
            let _ = write!(d, "{px:.2},{py:.2} ");
        }
        let _ = writeln!(
            svg,
            "<polyline fill=\"none\" stroke=\"{color}\" stroke-width=\"1.5\" points=\"{}\"/>",
            d.trim_end()
        );
        let _ = writeln!(
            svg,
            "<text x=\"{}\" y=\"{}\" font-family=\"sans-serif\" font-size=\"12\" fill=\"{color}\">{name}</text>",
            PAD,
            40.0 + 14.0 * si as f64
        );
    }
    svg.push_str("</svg>\n");
    fs::write(path, svg)?;
    Ok(())
}
