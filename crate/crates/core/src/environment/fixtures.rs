//! Canonical 3-, 4- and 5-way intersection fixtures and the table of action
//! sequences needed to clear each of them under both semantics.
//!
//! Every fixture is a chain `v1 -> v2 -> v3` that approaches the
//! intersection at `v3`, one exit node per street, and a tail node behind
//! the left-most and right-most exits. All edges have a reverse edge at
//! `heading + 180`. Agents start at `v2` facing `v3`.
//!
//! | fixture | approach | exits at v3                        |
//! |---------|----------|------------------------------------|
//! | 3-way   | 0°       | v4 315°, v5 40°                    |
//! | 4-way   | 20°      | v4 315°, v5 345°, v6 50°           |
//! | 5-way   | 20°      | v4 285°, v5 345°, v6 50°, v7 115°  |

use std::fmt;
use std::fs;
use std::path::Path;

use serde::Deserialize;
use thiserror::Error;

use super::{Action, AgentState, EnvConfig, Semantics};
use crate::nav_graph::{actions_for_path, graph_from_json, GraphError, NavGraph, NodeIdx};

const THREE_WAY: &str = include_str!("../../data/fixtures/three_way.json");
const FOUR_WAY: &str = include_str!("../../data/fixtures/four_way.json");
const FIVE_WAY: &str = include_str!("../../data/fixtures/five_way.json");
const TABLE: &str = include_str!("../../data/fixtures/intersection_table.json");

pub const FIXTURE_NAMES: [&str; 3] = ["three_way", "four_way", "five_way"];

#[derive(Debug, Clone)]
pub struct Fixture {
    pub name: String,
    pub graph: NavGraph,
}

impl Fixture {
    /// Start state for every table row: at `v2`, facing along `v2 -> v3`.
    pub fn start(&self) -> AgentState {
        let v2 = self.graph.require("v2").expect("fixture has v2");
        let v3 = self.graph.require("v3").expect("fixture has v3");
        let edge = self
            .graph
            .out_edges(v2)
            .iter()
            .find(|e| e.to == v3)
            .expect("fixture has edge v2 -> v3");
        AgentState::new(v2, edge.heading_deg)
    }
}

#[derive(Debug, Clone, Deserialize)]
pub struct TableRow {
    pub fixture: String,
    pub path: Vec<String>,
    pub original: Vec<Action>,
    pub modified: Vec<Action>,
}

impl TableRow {
    pub fn expected(&self, semantics: Semantics) -> &[Action] {
        match semantics {
            Semantics::Original => &self.original,
            Semantics::Modified => &self.modified,
        }
    }

    pub fn path_label(&self) -> String {
        self.path
            .iter()
            .map(|p| p.trim_start_matches('v'))
            .collect::<Vec<_>>()
            .join("->")
    }
}

#[derive(Debug, Error)]
pub enum FixtureError {
    #[error("fixture {name}: {source}")]
    Graph { name: String, source: GraphError },
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("intersection table: {0}")]
    Table(serde_json::Error),
    #[error("table row references unknown fixture {0:?}")]
    UnknownFixture(String),
}

fn parse_fixture(name: &str, text: &str) -> Result<Fixture, FixtureError> {
    let (graph, _) = graph_from_json(text).map_err(|source| FixtureError::Graph {
        name: name.to_string(),
        source,
    })?;
    Ok(Fixture {
        name: name.to_string(),
        graph,
    })
}

pub fn three_way() -> Fixture {
    parse_fixture("three_way", THREE_WAY).expect("bundled fixture parses")
}

pub fn four_way() -> Fixture {
    parse_fixture("four_way", FOUR_WAY).expect("bundled fixture parses")
}

pub fn five_way() -> Fixture {
    parse_fixture("five_way", FIVE_WAY).expect("bundled fixture parses")
}

/// Fixtures and table compiled into the crate.
pub fn bundled() -> FixtureSet {
    FixtureSet {
        fixtures: vec![three_way(), four_way(), five_way()],
        rows: serde_json::from_str(TABLE).expect("bundled table parses"),
    }
}

/// Loads `three_way.json`, `four_way.json`, `five_way.json` and
/// `intersection_table.json` from `dir`.
pub fn load_dir(dir: impl AsRef<Path>) -> Result<FixtureSet, FixtureError> {
    let dir = dir.as_ref();
    let read = |file: &str| {
        let p = dir.join(file);
        fs::read_to_string(&p).map_err(|source| FixtureError::Io {
            path: p.display().to_string(),
            source,
        })
    };
    let fixtures = FIXTURE_NAMES
        .iter()
        .map(|n| parse_fixture(n, &read(&format!("{n}.json"))?))
        .collect::<Result<Vec<_>, _>>()?;
    let rows = serde_json::from_str(&read("intersection_table.json")?).map_err(FixtureError::Table)?;
    Ok(FixtureSet { fixtures, rows })
}

#[derive(Debug, Clone)]
pub struct FixtureSet {
    pub fixtures: Vec<Fixture>,
    pub rows: Vec<TableRow>,
}

/// Outcome of checking one table row under one semantics.
#[derive(Debug, Clone)]
pub struct RowCheck {
    pub fixture: String,
    pub path: String,
    pub semantics: Semantics,
    pub expected: Vec<Action>,
    /// Shortest sequence found by search, if any.
    pub derived: Option<Vec<Action>>,
    /// Node reached by replaying `expected` (`None` if the replay failed).
    pub reached: Option<String>,
    pub destination: String,
}

impl RowCheck {
    /// The listed sequence replays to the listed destination.
    pub fn passed(&self) -> bool {
        self.reached.as_deref() == Some(self.destination.as_str())
    }

    /// The listed sequence is also the one found by shortest search.
    pub fn is_shortest(&self) -> bool {
        self.derived.as_deref() == Some(self.expected.as_slice())
    }
}

impl fmt::Display for RowCheck {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let list = |s: &[Action]| {
            format!(
                "[{}]",
                s.iter().map(|a| a.literal()).collect::<Vec<_>>().join(", ")
            )
        };
        write!(
            f,
            "{} {} {} expected {} derived {} reached {}",
            self.fixture,
            self.path,
            self.semantics,
            list(&self.expected),
            self.derived.as_deref().map_or("none".to_string(), list),
            self.reached.as_deref().unwrap_or("none"),
        )
    }
}

/// Replays `actions` from `start`, returning the final node unless a step
/// errors, no-ops or stops early.
pub fn replay(
    graph: &NavGraph,
    env: &EnvConfig,
    start: AgentState,
    actions: &[Action],
) -> Option<NodeIdx> {
    let mut s = env.reset(graph, start);
    for &a in actions {
        let out = env.step(graph, s, a).ok()?;
        if out.note.is_noop() || out.done {
            return None;
        }
        s = out.next_state;
    }
    Some(s.node)
}

impl FixtureSet {
    pub fn fixture(&self, name: &str) -> Option<&Fixture> {
        self.fixtures.iter().find(|f| f.name == name)
    }

    /// Checks every row under both semantics: the listed sequence must reach
    /// the destination and must be what the shortest-sequence search finds.
    pub fn check(&self) -> Result<Vec<RowCheck>, FixtureError> {
        let mut out = Vec::with_capacity(self.rows.len() * 2);
        for row in &self.rows {
            let fx = self
                .fixture(&row.fixture)
                .ok_or_else(|| FixtureError::UnknownFixture(row.fixture.clone()))?;
            let path = row
                .path
                .iter()
                .map(|p| fx.graph.require(p))
                .collect::<Result<Vec<_>, _>>()
                .map_err(|source| FixtureError::Graph {
                    name: fx.name.clone(),
                    source,
                })?;
            for semantics in [Semantics::Original, Semantics::Modified] {
                let env = EnvConfig::new(semantics);
                let expected = row.expected(semantics).to_vec();
                let start = env.reset(&fx.graph, fx.start());
                let derived = actions_for_path(&fx.graph, start, &path, &env).ok();
                let reached =
                    replay(&fx.graph, &env, start, &expected).map(|n| fx.graph.id(n).to_string());
                out.push(RowCheck {
                    fixture: fx.name.clone(),
                    path: row.path_label(),
                    semantics,
                    expected,
                    derived,
                    reached,
                    destination: row.path.last().cloned().unwrap_or_default(),
                });
            }
        }
        Ok(out)
    }
}
