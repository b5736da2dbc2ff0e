//! Per-step pre-training record and its CSV form.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};

pub const METRICS_SCHEMA: &str = "dipgnn-metrics v1";

const COLUMNS: [&str; 14] = [
    "step",
    "loss_gen_edge",
    "loss_gen_feat",
    "loss_disc_edge",
    "loss_disc_feat",
    "total",
    "gen_acc",
    "disc_acc",
    "mask_ratio",
    "cov_gen",
    "cov_dis",
    "sub_nodes",
    "sub_edges",
    "isolated_after_mask",
];

#[derive(Clone, Debug, PartialEq)]
pub struct StepMetrics {
    pub step: usize,
    pub loss_gen_edge: f64,
    pub loss_gen_feat: f64,
    pub loss_disc_edge: f64,
    pub loss_disc_feat: f64,
    pub total: f64,
    pub gen_acc: f64,
    pub disc_acc: f64,
    /// Masked share of the sampled subgraph's edges.
    pub mask_ratio: f64,
    pub cov_gen: f64,
    /// Recounted share of true edges in the discriminator's input.
    pub cov_dis: f64,
    pub sub_nodes: usize,
    pub sub_edges: usize,
    pub isolated_after_mask: usize,
}

impl StepMetrics {
    fn fields(&self) -> [String; 14] {
        [
            self.step.to_string(),
            self.loss_gen_edge.to_string(),
            self.loss_gen_feat.to_string(),
            self.loss_disc_edge.to_string(),
            self.loss_disc_feat.to_string(),
            self.total.to_string(),
            self.gen_acc.to_string(),
            self.disc_acc.to_string(),
            self.mask_ratio.to_string(),
            self.cov_gen.to_string(),
            self.cov_dis.to_string(),
            self.sub_nodes.to_string(),
            self.sub_edges.to_string(),
            self.isolated_after_mask.to_string(),
        ]
    }
}

/// CSV text: a `#` schema line carrying the config digest, the header, then
/// one row per step. Floats use the shortest exact representation.
pub fn metrics_to_csv(digest: &str, rows: &[StepMetrics]) -> String {
    let mut out = format!("# {METRICS_SCHEMA} config={digest} seed_policy=uniform\n");
    out.push_str(&COLUMNS.join(","));
    out.push('\n');
    for r in rows {
        let _ = writeln!(out, "{}", r.fields().join(","));
    }
    out
}

/// Parses [`metrics_to_csv`] output; returns the config digest and the rows.
pub fn metrics_from_csv(text: &str) -> Result<(String, Vec<StepMetrics>)> {
    let bad = |line: usize, message: String| Error::Parse {
        path: "<metrics>".into(),
        line,
        message,
    };
    let mut lines = text.lines().enumerate();
    let (_, first) = lines.next().ok_or_else(|| bad(1, "empty metrics file".into()))?;
    let rest = first
        .strip_prefix("# ")
        .and_then(|s| s.strip_prefix(METRICS_SCHEMA))
        .ok_or_else(|| bad(1, format!("expected schema line \"# {METRICS_SCHEMA} ...\"")))?;
    let digest = rest
        .split_whitespace()
        .find_map(|kv| kv.strip_prefix("config="))
        .unwrap_or_default()
        .to_string();
    let (_, header) = lines.next().ok_or_else(|| bad(2, "missing header".into()))?;
    if header != COLUMNS.join(",") {
        return Err(bad(2, format!("unexpected header {header:?}")));
    }
    let mut rows = Vec::new();
    for (i, line) in lines {
        if line.is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != COLUMNS.len() {
            return Err(bad(i + 1, format!("{} fields, expected {}", f.len(), COLUMNS.len())));
        }
        let int = |k: usize| f[k].parse::<usize>().map_err(|e| bad(i + 1, format!("{}: {e}", COLUMNS[k])));
        let real = |k: usize| f[k].parse::<f64>().map_err(|e| bad(i + 1, format!("{}: {e}", COLUMNS[k])));
        rows.push(StepMetrics {
            step: int(0)?,
            loss_gen_edge: real(1)?,
            loss_gen_feat: real(2)?,
            loss_disc_edge: real(3)?,
            loss_disc_feat: real(4)?,
            total: real(5)?,
            gen_acc: real(6)?,
            disc_acc: real(7)?,
            mask_ratio: real(8)?,
            cov_gen: real(9)?,
            cov_dis: real(10)?,
            sub_nodes: int(11)?,
            sub_edges: int(12)?,
            isolated_after_mask: int(13)?,
        });
    }
    Ok((digest, rows))
}

pub fn write_metrics(path: &Path, digest: &str, rows: &[StepMetrics]) -> Result<()> {
    std::fs::write(path, metrics_to_csv(digest, rows)).map_err(|e| Error::io(path, e))
}

pub fn read_metrics(path: &Path) -> Result<(String, Vec<StepMetrics>)> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    metrics_from_csv(&text).map_err(|e| match e {
        Error::Parse { line, message, .. } => Error::Parse {
            path: path.to_path_buf(),
            line,
            message,
        },
        other => other,
    })
}
