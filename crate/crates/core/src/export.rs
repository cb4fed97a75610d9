//! Text and image formats for graphs, curves and surface images, each with
//! a matching reader.
//!
//! * `graph.json`: `{"nodes":[{id,size,mean_step,cover_element,members?}],
//!   "edges":[{a,b,weight}],"triangles":[[a,b,c]]}`, keys in that order.
//! * `graph.dot`: undirected Graphviz, one node per vertex labeled with its
//!   size, edge `penwidth` = 5 × weight / max weight.
//! * CSV files with a header row; floats in Rust's shortest round-trip form.
//! * Binary PGM (`P5`, maxval 255).

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::mapper::{Edge, LearningGraph, Vertex};
use crate::nn::{Evaluation, LogEntry, TrainingLog};

#[derive(Debug, Error)]
pub enum FormatError {
    #[error("{format}: line {line}: {reason}")]
    Parse {
        format: &'static str,
        line: usize,
        reason: String,
    },
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

fn parse_err(format: &'static str, line: usize, reason: impl Into<String>) -> FormatError {
    FormatError::Parse {
        format,
        line,
        reason: reason.into(),
    }
}

#[derive(Serialize, Deserialize)]
struct JsonNode {
    id: usize,
    size: usize,
    mean_step: Option<f64>,
    cover_element: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    members: Option<Vec<usize>>,
}

#[derive(Serialize, Deserialize)]
struct JsonEdge {
    a: usize,
    b: usize,
    weight: usize,
}

#[derive(Serialize, Deserialize)]
struct JsonGraph {
    nodes: Vec<JsonNode>,
    edges: Vec<JsonEdge>,
    triangles: Vec<[usize; 3]>,
}

pub fn graph_to_json(graph: &LearningGraph, include_members: bool) -> String {
    let doc = JsonGraph {
        nodes: graph
            .vertices
            .iter()
            .map(|v| JsonNode {
                id: v.id,
                size: v.size,
                mean_step: v.mean_step,
                cover_element: v.cover_element,
                members: include_members.then(|| v.members.clone()),
            })
            .collect(),
        edges: graph
            .edges
            .iter()
            .map(|e| JsonEdge {
                a: e.a,
                b: e.b,
                weight: e.weight,
            })
            .collect(),
        triangles: graph.triangles.clone(),
    };
    let mut s = serde_json::to_string_pretty(&doc).expect("graph serializes");
    s.push('\n');
    s
}

/// Parses `graph.json`. Without a `members` array, vertices come back with
/// empty member lists.
pub fn graph_from_json(text: &str) -> Result<LearningGraph, FormatError> {
    let doc: JsonGraph = serde_json::from_str(text)?;
    Ok(LearningGraph {
        vertices: doc
            .nodes
            .into_iter()
            .map(|n| Vertex {
                id: n.id,
                cover_element: n.cover_element,
                size: n.size,
                members: n.members.unwrap_or_default(),
                mean_step: n.mean_step,
                dominant_neurons: Vec::new(),
            })
            .collect(),
        edges: doc
            .edges
            .into_iter()
            .map(|e| Edge {
                a: e.a,
                b: e.b,
                weight: e.weight,
            })
            .collect(),
        triangles: doc.triangles,
    })
}

const DOT_MAX_PENWIDTH: f64 = 5.0;

pub fn graph_to_dot(graph: &LearningGraph) -> String {
    let max_w = graph.edges.iter().map(|e| e.weight).max().unwrap_or(1).max(1) as f64;
    let mut s = String::from("graph learning {\n");
    for v in &graph.vertices {
        let _ = writeln!(s, "  {} [label=\"{}\"];", v.id, v.size);
    }
    for e in &graph.edges {
        let pw = DOT_MAX_PENWIDTH * e.weight as f64 / max_w;
        let _ = writeln!(s, "  {} -- {} [penwidth={:.3}];", e.a, e.b, pw);
    }
    s.push_str("}\n");
    s
}

/// Structure of a `graph.dot` written by [`graph_to_dot`]: vertex sizes and
/// edges with their pen widths.
#[derive(Debug, Clone, PartialEq)]
pub struct DotGraph {
    pub sizes: Vec<(usize, usize)>,
    pub edges: Vec<(usize, usize, f64)>,
}

pub fn graph_from_dot(text: &str) -> Result<DotGraph, FormatError> {
    const F: &str = "graph.dot";
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, "graph learning {")) => {}
        _ => return Err(parse_err(F, 1, "expected `graph learning {`")),
    }
    let mut out = DotGraph {
        sizes: Vec::new(),
        edges: Vec::new(),
    };
    for (i, line) in lines {
        let line = line.trim();
        if line == "}" {
            return Ok(out);
        }
        let body = line
            .strip_suffix("];")
            .ok_or_else(|| parse_err(F, i + 1, "missing `];`"))?;
        let (head, attr) = body
            .split_once(" [")
            .ok_or_else(|| parse_err(F, i + 1, "missing attribute list"))?;
        let num = |s: &str| {
            s.trim()
                .parse::<usize>()
                .map_err(|e| parse_err(F, i + 1, e.to_string()))
        };
        if let Some((a, b)) = head.split_once(" -- ") {
            let pw = attr
                .strip_prefix("penwidth=")
                .ok_or_else(|| parse_err(F, i + 1, "missing penwidth"))?
                .parse::<f64>()
                .map_err(|e| parse_err(F, i + 1, e.to_string()))?;
            out.edges.push((num(a)?, num(b)?, pw));
        } else {
            let size = attr
                .strip_prefix("label=\"")
                .and_then(|s| s.strip_suffix('"'))
                .ok_or_else(|| parse_err(F, i + 1, "missing label"))?;
            out.sizes.push((num(head)?, num(size)?));
        }
    }
    Err(parse_err(F, text.lines().count(), "missing closing brace"))
}

/// Binary PGM of a row-major `height x width` image with values in [0, 1].
pub fn pgm_bytes(pixels: &[f64], height: usize, width: usize) -> Vec<u8> {
    assert_eq!(pixels.len(), height * width);
    let mut out = format!("P5\n{width} {height}\n255\n").into_bytes();
    out.extend(
        pixels
            .iter()
            .map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8),
    );
    out
}

/// Parses a binary PGM with maxval 255, returning `(height, width, bytes)`.
pub fn parse_pgm(bytes: &[u8]) -> Result<(usize, usize, Vec<u8>), FormatError> {
    const F: &str = "pgm";
    let mut fields = Vec::new();
    let mut pos = 0;
    while fields.len() < 4 {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(parse_err(F, 1, "truncated header"));
        }
        fields.push(String::from_utf8_lossy(&bytes[start..pos]).into_owned());
    }
    // exactly one whitespace byte separates the header from the raster
    pos += 1;
    if fields[0] != "P5" {
        return Err(parse_err(F, 1, format!("magic {}", fields[0])));
    }
    let n = |s: &str| s.parse::<usize>().map_err(|e| parse_err(F, 1, e.to_string()));
    let (width, height, maxval) = (n(&fields[1])?, n(&fields[2])?, n(&fields[3])?);
    if maxval != 255 {
        return Err(parse_err(F, 1, format!("maxval {maxval}")));
    }
    let raster = bytes.get(pos..).unwrap_or_default();
    if raster.len() != width * height {
        return Err(parse_err(
            F,
            1,
            format!("raster has {} bytes, expected {}", raster.len(), width * height),
        ));
    }
    Ok((height, width, raster.to_vec()))
}

pub const LOG_HEADER: &str = "step,minibatch,loss,accuracy";
pub const CONFUSION_HEADER: &str = "step,true,predicted,count";
pub const NORMS_HEADER: &str = "step,layer,neuron,norm";

pub fn log_csv(log: &TrainingLog) -> String {
    let mut s = format!("{LOG_HEADER}\n");
    for e in &log.entries {
        let _ = writeln!(s, "{},{},{},{}", e.step, e.minibatch, e.train_loss, e.test_accuracy);
    }
    s
}

/// Confusion counts of every evaluated snapshot, the untrained state
/// (step 0) included when it was recorded.
pub fn confusion_csv(log: &TrainingLog) -> String {
    let mut s = format!("{CONFUSION_HEADER}\n");
    let initial = log.initial.as_ref().map(|e| (0, &e.confusion));
    let rest = log.entries.iter().map(|e| (e.step, &e.confusion));
    for (step, confusion) in initial.into_iter().chain(rest) {
        for (t, row) in confusion.iter().enumerate() {
            for (p, count) in row.iter().enumerate() {
                let _ = writeln!(s, "{step},{t},{p},{count}");
            }
        }
    }
    s
}

fn csv_rows<'a>(
    format: &'static str,
    text: &'a str,
    header: &str,
) -> Result<impl Iterator<Item = (usize, Vec<&'a str>)>, FormatError> {
    let mut lines = text.lines();
    match lines.next() {
        Some(h) if h == header => {}
        other => {
            return Err(parse_err(
                format,
                1,
                format!("expected header `{header}`, found {other:?}"),
            ))
        }
    }
    Ok(lines
        .enumerate()
        .filter(|(_, l)| !l.is_empty())
        .map(|(i, l)| (i + 2, l.split(',').collect())))
}

fn field<T: std::str::FromStr>(
    format: &'static str,
    line: usize,
    cols: &[&str],
    i: usize,
) -> Result<T, FormatError>
where
    T::Err: std::fmt::Display,
{
    cols.get(i)
        .ok_or_else(|| parse_err(format, line, format!("missing column {i}")))?
        .parse::<T>()
        .map_err(|e| parse_err(format, line, e.to_string()))
}

/// Rebuilds a [`TrainingLog`] from `log.csv` and `confusion.csv`. Step-0
/// confusion rows without a log row become the initial evaluation.
pub fn training_log_from_csv(log_text: &str, confusion_text: &str) -> Result<TrainingLog, FormatError> {
    let mut confusion: std::collections::BTreeMap<usize, Vec<Vec<u64>>> = Default::default();
    let mut classes = 0;
    for (line, cols) in csv_rows("confusion.csv", confusion_text, CONFUSION_HEADER)? {
        let step: usize = field("confusion.csv", line, &cols, 0)?;
        let t: usize = field("confusion.csv", line, &cols, 1)?;
        let p: usize = field("confusion.csv", line, &cols, 2)?;
        let count: u64 = field("confusion.csv", line, &cols, 3)?;
        classes = classes.max(t + 1).max(p + 1);
        let m = confusion.entry(step).or_default();
        if m.len() <= t {
            m.resize(t + 1, Vec::new());
        }
        if m[t].len() <= p {
            m[t].resize(p + 1, 0);
        }
        m[t][p] = count;
    }
    for m in confusion.values_mut() {
        m.resize(classes, Vec::new());
        for row in m.iter_mut() {
            row.resize(classes, 0);
        }
    }

    let mut entries = Vec::new();
    for (line, cols) in csv_rows("log.csv", log_text, LOG_HEADER)? {
        let step: usize = field("log.csv", line, &cols, 0)?;
        entries.push(LogEntry {
            step,
            minibatch: field("log.csv", line, &cols, 1)?,
            train_loss: field("log.csv", line, &cols, 2)?,
            test_accuracy: field("log.csv", line, &cols, 3)?,
            confusion: confusion.remove(&step).unwrap_or_default(),
            clamped: 0,
        });
    }
    let initial = confusion.remove(&0).map(|c| {
        let total: u64 = c.iter().flatten().sum();
        let correct: u64 = (0..c.len()).map(|i| c[i][i]).sum();
        Evaluation {
            accuracy: if total == 0 { 0.0 } else { correct as f64 / total as f64 },
            loss: f64::NAN,
            confusion: c,
        }
    });
    let class_counts = initial
        .as_ref()
        .map(|e| &e.confusion)
        .or_else(|| entries.first().map(|e| &e.confusion))
        .map(|c| c.iter().map(|row| row.iter().sum::<u64>() as usize).collect())
        .unwrap_or_else(|| vec![0; classes]);
    Ok(TrainingLog {
        num_classes: classes,
        class_counts,
        initial,
        entries,
    })
}
