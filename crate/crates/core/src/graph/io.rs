//! Text formats: a `src<TAB>dst` edge list, a CSV feature matrix and a
//! one-id-per-line label file. `save_graph` writes exactly what
//! `load_graph` reads.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use super::{Edge, Features, Graph, GraphOptions};
use crate::error::{Error, Result};

/// Paths of the files making up one graph on disk.
#[derive(Clone, Debug, Default)]
pub struct GraphFiles {
    pub edges: PathBuf,
    pub features: Option<PathBuf>,
    pub labels: Option<PathBuf>,
}

pub fn load_graph(files: &GraphFiles, options: GraphOptions) -> Result<Graph> {
    let edges = read_edges(&files.edges)?;
    let max_id = edges.iter().map(|&(a, b)| a.max(b) + 1).max().unwrap_or(0);

    let features = files.features.as_deref().map(read_features).transpose()?;
    // Trailing isolated nodes only exist if the feature file says so.
    let num_nodes = match &features {
        Some(f) if f.rows() < max_id => {
            return Err(Error::FeatureRowMismatch {
                rows: f.rows(),
                num_nodes: max_id,
            })
        }
        Some(f) => f.rows(),
        None => max_id,
    };

    let labels = files.labels.as_deref().map(read_labels).transpose()?;
    Graph::new(num_nodes, edges, features, labels, options)
}

pub fn save_graph(graph: &Graph, files: &GraphFiles) -> Result<()> {
    let mut out = String::with_capacity(graph.num_edges() * 12);
    for &(a, b) in graph.edges() {
        writeln!(out, "{a}\t{b}").unwrap();
    }
    write(&files.edges, &out)?;

    if let Some(path) = &files.features {
        let f = graph.features();
        let mut out = String::new();
        for i in 0..f.rows() {
            for (j, v) in f.row(i).iter().enumerate() {
                if j > 0 {
                    out.push(',');
                }
                write!(out, "{v}").unwrap();
            }
            out.push('\n');
        }
        write(path, &out)?;
    }

    if let (Some(path), Some(labels)) = (&files.labels, graph.labels()) {
        let mut out = String::new();
        for l in labels {
            writeln!(out, "{l}").unwrap();
        }
        write(path, &out)?;
    }
    Ok(())
}

fn write(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn parse_err(path: &Path, line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        message: message.into(),
    }
}

fn read_edges(path: &Path) -> Result<Vec<Edge>> {
    let text = read(path)?;
    let mut edges = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let mut parts = line.split('\t');
        let (Some(a), Some(b), None) = (parts.next(), parts.next(), parts.next()) else {
            return Err(parse_err(path, i + 1, "expected `src<TAB>dst`"));
        };
        let parse = |s: &str| {
            s.trim()
                .parse::<usize>()
                .map_err(|e| parse_err(path, i + 1, format!("bad node id {s:?}: {e}")))
        };
        edges.push((parse(a)?, parse(b)?));
    }
    Ok(edges)
}

fn read_features(path: &Path) -> Result<Features> {
    let text = read(path)?;
    let mut rows = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let row = line
            .split(',')
            .map(|s| {
                s.trim()
                    .parse::<f64>()
                    .map_err(|e| parse_err(path, i + 1, format!("bad real {s:?}: {e}")))
            })
            .collect::<Result<Vec<_>>>()?;
        rows.push(row);
    }
    Features::from_rows(&rows)
}

fn read_labels(path: &Path) -> Result<Vec<usize>> {
    let text = read(path)?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            l.trim()
                .parse::<usize>()
                .map_err(|e| parse_err(path, i + 1, format!("bad class id {l:?}: {e}")))
        })
        .collect()
}
