//! Navigation graph: panorama nodes joined by directed edges that carry the
//! compass heading of travel (0° = north, clockwise).
//!
//! A [`NavGraph`] is immutable once built. Node ids are opaque strings in
//! files; in memory every node is addressed by a dense [`NodeIdx`].

mod io;
mod synthetic;

use std::collections::{HashMap, VecDeque};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::environment::{Action, AgentState, EnvConfig, StepNote};

pub use io::{
    graph_from_json, graph_to_json, instances_from_jsonl, instances_to_jsonl, load_graph,
    load_graph_with_lints, load_instances, store_graph, store_instances, GraphLint,
};
pub use synthetic::{generate_synthetic, generate_world, SyntheticConfig, SyntheticWorld};

/// Headings closer than this are treated as equal.
pub const HEADING_EPS: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct NodeIdx(pub usize);

impl fmt::Display for NodeIdx {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "#{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Edge {
    pub to: NodeIdx,
    pub heading_deg: f64,
}

#[derive(Debug, Error)]
pub enum GraphError {
    #[error("graph has no nodes")]
    Empty,
    #[error("duplicate node id {0:?}")]
    DuplicateNode(String),
    #[error("edge {from:?} -> {to:?} references unknown node {missing:?}")]
    UnknownNode {
        from: String,
        to: String,
        missing: String,
    },
    #[error("edge {from:?} -> {to:?} has heading {heading} outside [0, 360)")]
    HeadingOutOfRange { from: String, to: String, heading: f64 },
    #[error("duplicate edge {from:?} -> {to:?} at heading {heading}")]
    DuplicateEdge { from: String, to: String, heading: f64 },
    #[error("graph is not weakly connected: node {0:?} is unreachable from {1:?}")]
    Disconnected(String, String),
    #[error("no path between {0:?} and {1:?}")]
    Unreachable(String, String),
    #[error("unknown node {0:?}")]
    NoSuchNode(String),
    #[error("parse error at line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("{path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
}

/// Directed street graph with per-edge headings.
#[derive(Debug, Clone)]
pub struct NavGraph {
    ids: Vec<String>,
    index: HashMap<String, NodeIdx>,
    out: Vec<Vec<Edge>>,
    // Sorted, deduplicated neighbors ignoring edge direction.
    undirected: Vec<Vec<NodeIdx>>,
}

/// Collects nodes and edges, then validates everything in [`build`](Self::build).
#[derive(Debug, Default, Clone)]
pub struct NavGraphBuilder {
    ids: Vec<String>,
    edges: Vec<(String, String, f64)>,
}

impl NavGraphBuilder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn node(&mut self, id: impl Into<String>) -> &mut Self {
        self.ids.push(id.into());
        self
    }

    pub fn edge(&mut self, from: impl Into<String>, to: impl Into<String>, heading_deg: f64) -> &mut Self {
        self.edges.push((from.into(), to.into(), heading_deg));
        self
    }

    pub fn build(&self) -> Result<NavGraph, GraphError> {
        if self.ids.is_empty() {
            return Err(GraphError::Empty);
        }
        let mut index = HashMap::with_capacity(self.ids.len());
        for (i, id) in self.ids.iter().enumerate() {
            if index.insert(id.clone(), NodeIdx(i)).is_some() {
                return Err(GraphError::DuplicateNode(id.clone()));
            }
        }
        let mut out: Vec<Vec<Edge>> = vec![Vec::new(); self.ids.len()];
        for (from, to, heading) in &self.edges {
            let unknown = |missing: &String| GraphError::UnknownNode {
                from: from.clone(),
                to: to.clone(),
                missing: missing.clone(),
            };
            let &f = index.get(from).ok_or_else(|| unknown(from))?;
            let &t = index.get(to).ok_or_else(|| unknown(to))?;
            if !heading.is_finite() || *heading < 0.0 || *heading >= 360.0 {
                return Err(GraphError::HeadingOutOfRange {
                    from: from.clone(),
                    to: to.clone(),
                    heading: *heading,
                });
            }
            if out[f.0]
                .iter()
                .any(|e| e.to == t && (e.heading_deg - heading).abs() < 1e-9)
            {
                return Err(GraphError::DuplicateEdge {
                    from: from.clone(),
                    to: to.clone(),
                    heading: *heading,
                });
            }
            out[f.0].push(Edge {
                to: t,
                heading_deg: *heading,
            });
        }

        let mut undirected: Vec<Vec<NodeIdx>> = vec![Vec::new(); self.ids.len()];
        for (f, edges) in out.iter().enumerate() {
            for e in edges {
                undirected[f].push(e.to);
                undirected[e.to.0].push(NodeIdx(f));
            }
        }
        for n in &mut undirected {
            n.sort_unstable();
            n.dedup();
        }

        let graph = NavGraph {
            ids: self.ids.clone(),
            index,
            out,
            undirected,
        };
        let dist = graph.distances_from(NodeIdx(0));
        if let Some(i) = dist.iter().position(Option::is_none) {
            return Err(GraphError::Disconnected(
                graph.ids[i].clone(),
                graph.ids[0].clone(),
            ));
        }
        Ok(graph)
    }
}

impl NavGraph {
    pub fn builder() -> NavGraphBuilder {
        NavGraphBuilder::new()
    }

    pub fn node_count(&self) -> usize {
        self.ids.len()
    }

    pub fn edge_count(&self) -> usize {
        self.out.iter().map(Vec::len).sum()
    }

    pub fn nodes(&self) -> impl Iterator<Item = NodeIdx> + '_ {
        (0..self.ids.len()).map(NodeIdx)
    }

    /// All edges as `(from, edge)` in node order, then insertion order.
    pub fn edges(&self) -> impl Iterator<Item = (NodeIdx, &Edge)> + '_ {
        self.out
            .iter()
            .enumerate()
            .flat_map(|(i, es)| es.iter().map(move |e| (NodeIdx(i), e)))
    }

    pub fn id(&self, node: NodeIdx) -> &str {
        &self.ids[node.0]
    }

    pub fn index_of(&self, id: &str) -> Option<NodeIdx> {
        self.index.get(id).copied()
    }

    pub fn require(&self, id: &str) -> Result<NodeIdx, GraphError> {
        self.index_of(id)
            .ok_or_else(|| GraphError::NoSuchNode(id.to_string()))
    }

    pub fn out_edges(&self, node: NodeIdx) -> &[Edge] {
        &self.out[node.0]
    }

    pub fn out_degree(&self, node: NodeIdx) -> usize {
        self.out[node.0].len()
    }

    pub fn has_edge(&self, from: NodeIdx, to: NodeIdx) -> bool {
        self.out[from.0].iter().any(|e| e.to == to)
    }

    /// Neighbors ignoring edge direction, sorted.
    pub fn neighbors(&self, node: NodeIdx) -> &[NodeIdx] {
        &self.undirected[node.0]
    }

    /// Undirected BFS hop counts from `source`; `None` marks unreachable nodes.
    pub fn distances_from(&self, source: NodeIdx) -> Vec<Option<usize>> {
        let mut dist = vec![None; self.ids.len()];
        dist[source.0] = Some(0);
        let mut queue = VecDeque::from([source]);
        while let Some(v) = queue.pop_front() {
            let d = dist[v.0].unwrap_or_default();
            for &n in &self.undirected[v.0] {
                if dist[n.0].is_none() {
                    dist[n.0] = Some(d + 1);
                    queue.push_back(n);
                }
            }
        }
        dist
    }

    /// Number of edges on a shortest path between `a` and `b`, ignoring
    /// edge direction.
    pub fn shortest_path_len(&self, a: NodeIdx, b: NodeIdx) -> Result<usize, GraphError> {
        if a == b {
            return Ok(0);
        }
        self.distances_from(a)[b.0]
            .ok_or_else(|| GraphError::Unreachable(self.id(a).to_string(), self.id(b).to_string()))
    }
}

/// One navigation task as stored in an instances file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NavInstance {
    pub id: String,
    pub start_node: String,
    pub start_heading_deg: f64,
    pub target_node: String,
    pub gold_path: Vec<String>,
    pub instructions: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub landmarks: Option<Vec<String>>,
}

/// An instance whose node ids have been resolved against a graph.
#[derive(Debug, Clone, PartialEq)]
pub struct ResolvedInstance {
    pub start: AgentState,
    pub target: NodeIdx,
    pub path: Vec<NodeIdx>,
}

#[derive(Debug, Error)]
pub enum InstanceError {
    #[error("instance {id}: {source}")]
    Graph { id: String, source: GraphError },
    #[error("instance {id}: gold path is empty")]
    EmptyPath { id: String },
    #[error("instance {id}: gold path starts at {first:?} but start node is {start:?}")]
    PathStart { id: String, first: String, start: String },
    #[error("instance {id}: gold path ends at {last:?} but target node is {target:?}")]
    PathEnd { id: String, last: String, target: String },
    #[error("instance {id}: no edge {from:?} -> {to:?} on gold path")]
    NotAdjacent { id: String, from: String, to: String },
    #[error("instance {id}: start heading {heading} is not a finite angle")]
    BadHeading { id: String, heading: f64 },
}

impl NavInstance {
    /// Checks the instance against `graph` and resolves its node ids.
    pub fn resolve(&self, graph: &NavGraph) -> Result<ResolvedInstance, InstanceError> {
        let id = || self.id.clone();
        let lookup = |n: &str| {
            graph
                .require(n)
                .map_err(|source| InstanceError::Graph { id: id(), source })
        };
        if !self.start_heading_deg.is_finite() {
            return Err(InstanceError::BadHeading {
                id: id(),
                heading: self.start_heading_deg,
            });
        }
        let start = lookup(&self.start_node)?;
        let target = lookup(&self.target_node)?;
        let (first, last) = match (self.gold_path.first(), self.gold_path.last()) {
            (Some(f), Some(l)) => (f, l),
            _ => return Err(InstanceError::EmptyPath { id: id() }),
        };
        if *first != self.start_node {
            return Err(InstanceError::PathStart {
                id: id(),
                first: first.clone(),
                start: self.start_node.clone(),
            });
        }
        if *last != self.target_node {
            return Err(InstanceError::PathEnd {
                id: id(),
                last: last.clone(),
                target: self.target_node.clone(),
            });
        }
        let path = self
            .gold_path
            .iter()
            .map(|n| lookup(n))
            .collect::<Result<Vec<_>, _>>()?;
        for w in path.windows(2) {
            if !graph.has_edge(w[0], w[1]) {
                return Err(InstanceError::NotAdjacent {
                    id: id(),
                    from: graph.id(w[0]).to_string(),
                    to: graph.id(w[1]).to_string(),
                });
            }
        }
        Ok(ResolvedInstance {
            start: AgentState::new(start, self.start_heading_deg),
            target,
            path,
        })
    }
}

/// Action sequence that walks the gold path and ends in `Stop`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GoldActionSequence {
    pub actions: Vec<Action>,
}

#[derive(Debug, Error)]
pub enum GoldError {
    #[error(transparent)]
    Instance(#[from] InstanceError),
    #[error("no action sequence leaves node {node:?} towards {next:?}")]
    Blocked { node: String, next: String },
}

/// Derives the gold actions for `inst` under the modified transition function.
pub fn derive_gold_actions(
    graph: &NavGraph,
    inst: &NavInstance,
) -> Result<GoldActionSequence, GoldError> {
    derive_gold_actions_with(graph, inst, &EnvConfig::default())
}

pub fn derive_gold_actions_with(
    graph: &NavGraph,
    inst: &NavInstance,
    env: &EnvConfig,
) -> Result<GoldActionSequence, GoldError> {
    let resolved = inst.resolve(graph)?;
    let start = env.reset(graph, resolved.start);
    let mut actions = actions_for_path(graph, start, &resolved.path, env)?;
    actions.push(Action::Stop);
    Ok(GoldActionSequence { actions })
}

/// Shortest action sequence (without the final `Stop`) that walks `path`
/// from `start`.
///
/// Each hop is solved independently: a breadth-first search over the
/// headings reachable at the current node by turn actions, until `Forward`
/// moves onto the next path node. Expansion order is forward, left, right,
/// turn-around, so among equally short sequences the lexicographically
/// smallest one wins.
pub fn actions_for_path(
    graph: &NavGraph,
    start: AgentState,
    path: &[NodeIdx],
    env: &EnvConfig,
) -> Result<Vec<Action>, GoldError> {
    const TURNS: [Action; 3] = [Action::Left, Action::Right, Action::TurnAround];
    let mut state = start;
    let mut actions = Vec::new();
    for hop in path.windows(2) {
        let (here, next) = (hop[0], hop[1]);
        let blocked = || GoldError::Blocked {
            node: graph.id(here).to_string(),
            next: graph.id(next).to_string(),
        };
        let mut queue = VecDeque::from([(state, Vec::<Action>::new())]);
        let mut seen = vec![heading_key(state.heading_deg)];
        let mut found = None;
        while let Some((s, seq)) = queue.pop_front() {
            if let Ok(out) = env.step(graph, s, Action::Forward) {
                if out.note == StepNote::Ok && out.next_state.node == next {
                    found = Some((out.next_state, seq));
                    break;
                }
            }
            for turn in TURNS {
                let Ok(out) = env.step(graph, s, turn) else { continue };
                if out.note != StepNote::Ok {
                    continue;
                }
                let key = heading_key(out.next_state.heading_deg);
                if seen.contains(&key) {
                    continue;
                }
                seen.push(key);
                let mut longer = seq.clone();
                longer.push(turn);
                queue.push_back((out.next_state, longer));
            }
        }
        let (arrived, turns) = found.ok_or_else(blocked)?;
        actions.extend(turns);
        actions.push(Action::Forward);
        state = arrived;
    }
    Ok(actions)
}

/// Integer key for a heading, stable under float noise below 1e-6 degrees.
pub(crate) fn heading_key(heading_deg: f64) -> i64 {
    let micro = (heading_deg.rem_euclid(360.0) * 1e6).round() as i64;
    micro.rem_euclid(360_000_000)
}
