//! Plain-text dataset format.
//!
//! * edges: one `u v` pair per line, whitespace separated; `#` starts a comment
//! * features: CSV without header, row `i` belongs to node `i`
//! * labels (optional): one integer class id per line

use std::fs;
use std::io::Write;
use std::path::Path;

use super::{Graph, GraphError};
use crate::tensor::Tensor;

pub const EDGES_FILE: &str = "edges.txt";
pub const FEATURES_FILE: &str = "features.csv";
pub const LABELS_FILE: &str = "labels.txt";

fn read(path: &Path) -> Result<String, GraphError> {
    fs::read_to_string(path).map_err(|source| GraphError::Io {
        path: path.display().to_string(),
        source,
    })
}

fn parse_err(path: &Path, line: usize, reason: impl Into<String>) -> GraphError {
    GraphError::Parse {
        path: path.display().to_string(),
        line,
        reason: reason.into(),
    }
}

fn parse_features(path: &Path) -> Result<Tensor, GraphError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .comment(Some(b'#'))
        .from_path(path)
        .map_err(|e| parse_err(path, 0, e.to_string()))?;
    let mut data = Vec::new();
    let mut cols = None;
    let mut rows = 0;
    for record in reader.records() {
        let record = record.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line() as usize);
            parse_err(path, line, e.to_string())
        })?;
        let line = record.position().map_or(0, |p| p.line() as usize);
        let width = *cols.get_or_insert(record.len());
        if record.len() != width {
            return Err(parse_err(
                path,
                line,
                format!("expected {width} columns, found {}", record.len()),
            ));
        }
        for field in &record {
            let v: f64 = field
                .parse()
                .map_err(|_| parse_err(path, line, format!("`{field}` is not a number")))?;
            data.push(v);
        }
        rows += 1;
    }
    Ok(Tensor::from_vec(rows, cols.unwrap_or(0), data))
}

fn parse_edges(path: &Path, n: usize) -> Result<Vec<(usize, usize)>, GraphError> {
    let text = read(path)?;
    let mut edges = Vec::new();
    for (k, raw) in text.lines().enumerate() {
        let line = k + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let mut fields = content.split_whitespace();
        let mut endpoint = || -> Result<usize, GraphError> {
            let tok = fields
                .next()
                .ok_or_else(|| parse_err(path, line, "expected two node ids"))?;
            let id: usize = tok
                .parse()
                .map_err(|_| parse_err(path, line, format!("`{tok}` is not a node id")))?;
            if id >= n {
                return Err(parse_err(
                    path,
                    line,
                    format!("node {id} out of range for {n} nodes"),
                ));
            }
            Ok(id)
        };
        let (u, v) = (endpoint()?, endpoint()?);
        if fields.next().is_some() {
            return Err(parse_err(path, line, "trailing fields after the edge"));
        }
        if u == v {
            log::warn!("{}:{line}: dropping self-loop at node {u}", path.display());
            continue;
        }
        edges.push((u, v));
    }
    Ok(edges)
}

fn parse_labels(path: &Path, n: usize) -> Result<Vec<usize>, GraphError> {
    let text = read(path)?;
    let mut labels = Vec::with_capacity(n);
    for (k, raw) in text.lines().enumerate() {
        let content = raw.trim();
        if content.is_empty() {
            continue;
        }
        let label = content
            .parse()
            .map_err(|_| parse_err(path, k + 1, format!("`{content}` is not a class id")))?;
        labels.push(label);
    }
    if labels.len() != n {
        return Err(parse_err(
            path,
            text.lines().count(),
            format!("{} labels for {n} feature rows", labels.len()),
        ));
    }
    Ok(labels)
}

/// Loads a graph; directed edge lines are symmetrized and duplicates merged.
pub fn load_dataset(
    edge_path: &Path,
    feature_path: &Path,
    label_path: Option<&Path>,
) -> Result<Graph, GraphError> {
    let features = parse_features(feature_path)?;
    let n = features.rows();
    let edges = parse_edges(edge_path, n)?;
    let labels = label_path.map(|p| parse_labels(p, n)).transpose()?;
    Graph::new(features, edges, labels)
}

/// Loads `edges.txt`, `features.csv` and, if present, `labels.txt` from `dir`.
pub fn load_dataset_dir(dir: &Path) -> Result<Graph, GraphError> {
    let labels = dir.join(LABELS_FILE);
    load_dataset(
        &dir.join(EDGES_FILE),
        &dir.join(FEATURES_FILE),
        labels.exists().then_some(labels.as_path()),
    )
}

fn write(path: &Path, body: &str) -> Result<(), GraphError> {
    let io = |source| GraphError::Io {
        path: path.display().to_string(),
        source,
    };
    let mut f = fs::File::create(path).map_err(io)?;
    f.write_all(body.as_bytes()).map_err(io)
}

/// Writes the graph in the format read by [`load_dataset_dir`]. Floats use
/// the shortest representation that round-trips.
pub fn save_dataset(graph: &Graph, dir: &Path) -> Result<(), GraphError> {
    fs::create_dir_all(dir).map_err(|source| GraphError::Io {
        path: dir.display().to_string(),
        source,
    })?;
    let edges: String = graph
        .edges()
        .iter()
        .map(|(u, v)| format!("{u} {v}\n"))
        .collect();
    write(&dir.join(EDGES_FILE), &edges)?;
    let mut features = String::new();
    for r in 0..graph.num_nodes() {
        let row: Vec<String> = graph
            .features()
            .row(r)
            .iter()
            .map(|v| v.to_string())
            .collect();
        features.push_str(&row.join(","));
        features.push('\n');
    }
    write(&dir.join(FEATURES_FILE), &features)?;
    if let Some(labels) = graph.labels() {
        let body: String = labels.iter().map(|l| format!("{l}\n")).collect();
        write(&dir.join(LABELS_FILE), &body)?;
    }
    Ok(())
}
