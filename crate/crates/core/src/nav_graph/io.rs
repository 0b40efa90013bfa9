// Graph and instance file formats.
//
// Graph: one JSON document
//   {"nodes": ["id", ...], "edges": [{"from": "a", "to": "b", "heading_deg": 0.0}, ...]}
// Instances: JSON-lines, one `NavInstance` per line.

use std::fs;
use std::path::Path;

use log::warn;
use serde::{Deserialize, Serialize};

use super::{GraphError, NavGraph, NavInstance};
use crate::environment::signed_delta;

/// Reverse edges may deviate this much from `heading + 180` before the
/// loader complains.
const REVERSE_TOLERANCE_DEG: f64 = 15.0;

#[derive(Debug, Serialize, Deserialize)]
struct GraphDoc {
    nodes: Vec<String>,
    edges: Vec<EdgeDoc>,
}

#[derive(Debug, Serialize, Deserialize)]
struct EdgeDoc {
    from: String,
    to: String,
    heading_deg: f64,
}

/// Non-fatal observation about a loaded graph.
#[derive(Debug, Clone, PartialEq)]
pub enum GraphLint {
    /// No edge `to -> from` within ±15° of `heading + 180`.
    MissingReverse {
        from: String,
        to: String,
        heading_deg: f64,
    },
}

impl std::fmt::Display for GraphLint {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            GraphLint::MissingReverse {
                from,
                to,
                heading_deg,
            } => write!(
                f,
                "edge {from} -> {to} @ {heading_deg} has no reverse edge near {}",
                (heading_deg + 180.0).rem_euclid(360.0)
            ),
        }
    }
}

fn parse_error(e: serde_json::Error) -> GraphError {
    GraphError::Parse {
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    }
}

pub fn graph_from_json(text: &str) -> Result<(NavGraph, Vec<GraphLint>), GraphError> {
    let doc: GraphDoc = serde_json::from_str(text).map_err(parse_error)?;
    let mut b = NavGraph::builder();
    for n in doc.nodes {
        b.node(n);
    }
    for e in doc.edges {
        b.edge(e.from, e.to, e.heading_deg);
    }
    let graph = b.build()?;
    let lints = lint(&graph);
    Ok((graph, lints))
}

pub fn graph_to_json(graph: &NavGraph) -> String {
    let doc = GraphDoc {
        nodes: graph.nodes().map(|n| graph.id(n).to_string()).collect(),
        edges: graph
            .edges()
            .map(|(f, e)| EdgeDoc {
                from: graph.id(f).to_string(),
                to: graph.id(e.to).to_string(),
                heading_deg: e.heading_deg,
            })
            .collect(),
    };
    serde_json::to_string_pretty(&doc).expect("graph document serializes")
}

fn lint(graph: &NavGraph) -> Vec<GraphLint> {
    graph
        .edges()
        .filter(|(from, e)| {
            let want = e.heading_deg + 180.0;
            !graph.out_edges(e.to).iter().any(|r| {
                r.to == *from && signed_delta(want, r.heading_deg).abs() <= REVERSE_TOLERANCE_DEG
            })
        })
        .map(|(from, e)| GraphLint::MissingReverse {
            from: graph.id(from).to_string(),
            to: graph.id(e.to).to_string(),
            heading_deg: e.heading_deg,
        })
        .collect()
}

fn read(path: &Path) -> Result<String, GraphError> {
    fs::read_to_string(path).map_err(|source| GraphError::Io {
        path: path.display().to_string(),
        source,
    })
}

fn write(path: &Path, text: &str) -> Result<(), GraphError> {
    fs::write(path, text).map_err(|source| GraphError::Io {
        path: path.display().to_string(),
        source,
    })
}

/// Loads a graph and logs a warning for every lint finding.
pub fn load_graph(path: impl AsRef<Path>) -> Result<NavGraph, GraphError> {
    let (graph, lints) = load_graph_with_lints(path)?;
    for l in &lints {
        warn!("{l}");
    }
    Ok(graph)
}

pub fn load_graph_with_lints(
    path: impl AsRef<Path>,
) -> Result<(NavGraph, Vec<GraphLint>), GraphError> {
    graph_from_json(&read(path.as_ref())?)
}

pub fn store_graph(graph: &NavGraph, path: impl AsRef<Path>) -> Result<(), GraphError> {
    write(path.as_ref(), &graph_to_json(graph))
}

pub fn instances_from_jsonl(text: &str) -> Result<Vec<NavInstance>, GraphError> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| GraphError::Parse {
                line: i + 1,
                column: e.column(),
                message: e.to_string(),
            })
        })
        .collect()
}

pub fn instances_to_jsonl(instances: &[NavInstance]) -> String {
    let mut out = String::new();
    for inst in instances {
        out.push_str(&serde_json::to_string(inst).expect("instance serializes"));
        out.push('\n');
    }
    out
}

pub fn load_instances(path: impl AsRef<Path>) -> Result<Vec<NavInstance>, GraphError> {
    instances_from_jsonl(&read(path.as_ref())?)
}

pub fn store_instances(instances: &[NavInstance], path: impl AsRef<Path>) -> Result<(), GraphError> {
    write(path.as_ref(), &instances_to_jsonl(instances))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_minimal_document() {
        let (g, lints) = graph_from_json(
            r#"{"nodes": ["A", "B"], "edges": [
                {"from": "A", "to": "B", "heading_deg": 90.0},
                {"from": "B", "to": "A", "heading_deg": 270.0}]}"#,
        )
        .unwrap();
        assert_eq!(g.node_count(), 2);
        assert!(lints.is_empty());
    }

    #[test]
    fn parse_error_reports_line() {
        let err = graph_from_json("{\"nodes\": [\"A\"],\n \"edges\": [oops]}").unwrap_err();
        match err {
            GraphError::Parse { line, .. } => assert_eq!(line, 2),
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn one_way_edge_is_linted_not_rejected() {
        let (_, lints) = graph_from_json(
            r#"{"nodes": ["A", "B"], "edges": [
                {"from": "A", "to": "B", "heading_deg": 90.0},
                {"from": "B", "to": "A", "heading_deg": 200.0}]}"#,
        )
        .unwrap();
        assert_eq!(lints.len(), 2);
        // 262° is within 15° of 270°.
        let (_, lints) = graph_from_json(
            r#"{"nodes": ["A", "B"], "edges": [
                {"from": "A", "to": "B", "heading_deg": 90.0},
                {"from": "B", "to": "A", "heading_deg": 262.0}]}"#,
        )
        .unwrap();
        assert!(lints.is_empty());
    }

    #[test]
    fn instances_accept_missing_landmarks() {
        let text = r#"{"id":"1","start_node":"A","start_heading_deg":90.0,"target_node":"B","gold_path":["A","B"],"instructions":"go"}"#;
        let insts = instances_from_jsonl(text).unwrap();
        assert_eq!(insts[0].landmarks, None);
        let back = instances_to_jsonl(&insts);
        assert_eq!(back.trim_end(), text);
    }

    #[test]
    fn instance_parse_error_names_line() {
        let err = instances_from_jsonl("\n{\"id\": 3}\n").unwrap_err();
        assert!(matches!(err, GraphError::Parse { line: 2, .. }));
    }
}
