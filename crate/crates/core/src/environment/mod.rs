//! Agent state machine over a [`NavGraph`].
//!
//! Two transition functions are provided:
//!
//! * [`step_original`] keeps the heading locked to an outgoing edge. Turning
//!   snaps to the next edge clockwise or counter-clockwise, and moving
//!   forward auto-rotates the agent towards the outgoing edge closest to its
//!   previous heading.
//! * [`step_modified`] leaves the heading untouched on arrival and resolves
//!   `forward`, `left` and `right` against the set of outgoing edges in front
//!   of the agent (within ±90° by default): the middle, left-most and
//!   right-most edge respectively. `turn_around` reverses the heading in
//!   place.
//!
//! Headings are compass degrees in `[0, 360)`, increasing clockwise, so a
//! positive [`signed_delta`] is a turn to the right.

mod episode;
pub mod fixtures;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::nav_graph::{Edge, NavGraph, NodeIdx, HEADING_EPS};

pub use episode::{
    run_episode, EpisodeLog, EpisodeRunner, EpisodeSummary, EpisodeTrace, Perception, StepRecord,
    DEFAULT_MAX_STEPS,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Action {
    Forward,
    Left,
    Right,
    TurnAround,
    Stop,
}

impl Action {
    /// All actions in tie-breaking order.
    pub const ALL: [Action; 5] = [
        Action::Forward,
        Action::Left,
        Action::Right,
        Action::TurnAround,
        Action::Stop,
    ];

    pub fn literal(self) -> &'static str {
        match self {
            Action::Forward => "forward",
            Action::Left => "left",
            Action::Right => "right",
            Action::TurnAround => "turn_around",
            Action::Stop => "stop",
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn is_turn(self) -> bool {
        matches!(self, Action::Left | Action::Right | Action::TurnAround)
    }
}

impl fmt::Display for Action {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.literal())
    }
}

#[derive(Debug, Error)]
#[error("unknown action literal {0:?}")]
pub struct UnknownAction(pub String);

impl FromStr for Action {
    type Err = UnknownAction;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim();
        Action::ALL
            .into_iter()
            .find(|a| a.literal().eq_ignore_ascii_case(s))
            .ok_or_else(|| UnknownAction(s.to_string()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AgentState {
    pub node: NodeIdx,
    pub heading_deg: f64,
}

impl AgentState {
    pub fn new(node: NodeIdx, heading_deg: f64) -> Self {
        Self {
            node,
            heading_deg: normalize_heading(heading_deg),
        }
    }

    pub fn same_as(&self, other: &AgentState) -> bool {
        self.node == other.node && signed_delta(self.heading_deg, other.heading_deg).abs() < HEADING_EPS
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StepNote {
    #[default]
    Ok,
    NoopNoTurnTarget,
    NoopDeadEnd,
}

impl StepNote {
    pub fn is_noop(self) -> bool {
        self != StepNote::Ok
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepOutcome {
    pub next_state: AgentState,
    pub done: bool,
    pub note: StepNote,
}

impl StepOutcome {
    fn moved(next_state: AgentState) -> Self {
        Self {
            next_state,
            done: false,
            note: StepNote::Ok,
        }
    }

    fn noop(state: AgentState, note: StepNote) -> Self {
        Self {
            next_state: state,
            done: false,
            note,
        }
    }

    fn stop(state: AgentState) -> Self {
        Self {
            next_state: state,
            done: true,
            note: StepNote::Ok,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Semantics {
    Original,
    #[default]
    Modified,
}

impl FromStr for Semantics {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "original" => Ok(Semantics::Original),
            "modified" => Ok(Semantics::Modified),
            other => Err(format!("unknown semantics {other:?} (expected original|modified)")),
        }
    }
}

impl fmt::Display for Semantics {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Semantics::Original => "original",
            Semantics::Modified => "modified",
        })
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EnvError {
    #[error("no outgoing edge of node {node} matches heading {heading_deg}")]
    NoEdgeAlongHeading { node: NodeIdx, heading_deg: f64 },
}

/// Default half-angle of the in-front window used by the modified semantics.
pub const FRONT_HALF_ANGLE_DEG: f64 = 90.0;

/// Smallest change of travel direction that counts as a turn in a route.
pub const TURN_THRESHOLD_DEG: f64 = 45.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnvConfig {
    pub semantics: Semantics,
    pub front_half_angle_deg: f64,
}

impl Default for EnvConfig {
    fn default() -> Self {
        Self {
            semantics: Semantics::Modified,
            front_half_angle_deg: FRONT_HALF_ANGLE_DEG,
        }
    }
}

impl EnvConfig {
    pub fn new(semantics: Semantics) -> Self {
        Self {
            semantics,
            ..Self::default()
        }
    }

    pub fn step(&self, graph: &NavGraph, state: AgentState, action: Action) -> Result<StepOutcome, EnvError> {
        match self.semantics {
            Semantics::Original => step_original(graph, state, action),
            Semantics::Modified => Ok(step_modified_with(
                graph,
                state,
                action,
                self.front_half_angle_deg,
            )),
        }
    }

    /// Initial state for an episode. The original semantics require the
    /// heading to sit on an outgoing edge, so it is snapped there.
    pub fn reset(&self, graph: &NavGraph, state: AgentState) -> AgentState {
        match self.semantics {
            Semantics::Modified => state,
            Semantics::Original => match nearest_edge(graph.out_edges(state.node), state.heading_deg) {
                Some(e) => AgentState::new(state.node, e.heading_deg),
                None => state,
            },
        }
    }
}

pub fn normalize_heading(heading_deg: f64) -> f64 {
    let h = heading_deg.rem_euclid(360.0);
    if h >= 360.0 {
        0.0
    } else {
        h
    }
}

/// Shortest signed rotation from `from_deg` to `to_deg`, in `[-180, 180)`.
pub fn signed_delta(from_deg: f64, to_deg: f64) -> f64 {
    (to_deg - from_deg + 180.0).rem_euclid(360.0) - 180.0
}

/// Edge whose heading is closest to `heading_deg`; exact ties go to the
/// edge with positive delta.
fn nearest_edge(edges: &[Edge], heading_deg: f64) -> Option<&Edge> {
    let mut best: Option<(&Edge, f64)> = None;
    for e in edges {
        let d = signed_delta(heading_deg, e.heading_deg);
        best = match best {
            None => Some((e, d)),
            Some((b, bd)) => {
                let (abs, babs) = (d.abs(), bd.abs());
                if abs < babs - HEADING_EPS || ((abs - babs).abs() <= HEADING_EPS && d > bd) {
                    Some((e, d))
                } else {
                    Some((b, bd))
                }
            }
        };
    }
    best.map(|(e, _)| e)
}

/// Transition function with auto-rotation; headings always sit on an edge.
pub fn step_original(graph: &NavGraph, s: AgentState, a: Action) -> Result<StepOutcome, EnvError> {
    let edges = graph.out_edges(s.node);
    let rotate_to = |sweep: &dyn Fn(&Edge) -> f64| {
        edges
            .iter()
            .map(|e| (sweep(e), e))
            .filter(|(d, _)| *d > HEADING_EPS && *d < 360.0 - HEADING_EPS)
            .min_by(|x, y| x.0.total_cmp(&y.0))
            .map(|(_, e)| e.heading_deg)
    };
    let out = match a {
        Action::Stop => StepOutcome::stop(s),
        Action::Right => match rotate_to(&|e| (e.heading_deg - s.heading_deg).rem_euclid(360.0)) {
            Some(h) => StepOutcome::moved(AgentState::new(s.node, h)),
            None => StepOutcome::noop(s, StepNote::NoopNoTurnTarget),
        },
        Action::Left => match rotate_to(&|e| (s.heading_deg - e.heading_deg).rem_euclid(360.0)) {
            Some(h) => StepOutcome::moved(AgentState::new(s.node, h)),
            None => StepOutcome::noop(s, StepNote::NoopNoTurnTarget),
        },
        Action::TurnAround => match nearest_edge(edges, s.heading_deg - 180.0) {
            Some(e) if signed_delta(s.heading_deg, e.heading_deg).abs() > HEADING_EPS => {
                StepOutcome::moved(AgentState::new(s.node, e.heading_deg))
            }
            _ => StepOutcome::noop(s, StepNote::NoopNoTurnTarget),
        },
        Action::Forward => {
            let edge = edges
                .iter()
                .find(|e| signed_delta(s.heading_deg, e.heading_deg).abs() < HEADING_EPS)
                .ok_or(EnvError::NoEdgeAlongHeading {
                    node: s.node,
                    heading_deg: s.heading_deg,
                })?;
            let heading = nearest_edge(graph.out_edges(edge.to), s.heading_deg)
                .map_or(s.heading_deg, |e| e.heading_deg);
            StepOutcome::moved(AgentState::new(edge.to, heading))
        }
    };
    Ok(out)
}

/// Outgoing edges within `half_angle` of the heading, sorted by signed
/// delta (left-most first).
pub fn edges_in_front(
    graph: &NavGraph,
    s: AgentState,
    half_angle_deg: f64,
) -> Vec<(f64, Edge)> {
    let mut front: Vec<(f64, Edge)> = graph
        .out_edges(s.node)
        .iter()
        .map(|e| (signed_delta(s.heading_deg, e.heading_deg), *e))
        .filter(|(d, _)| d.abs() <= half_angle_deg + HEADING_EPS)
        .collect();
    front.sort_by(|x, y| x.0.total_cmp(&y.0).then(x.1.to.cmp(&y.1.to)));
    front
}

/// Modified transition function with the default ±90° window.
pub fn step_modified(graph: &NavGraph, s: AgentState, a: Action) -> StepOutcome {
    step_modified_with(graph, s, a, FRONT_HALF_ANGLE_DEG)
}

pub fn step_modified_with(
    graph: &NavGraph,
    s: AgentState,
    a: Action,
    half_angle_deg: f64,
) -> StepOutcome {
    match a {
        Action::Stop => StepOutcome::stop(s),
        Action::TurnAround => StepOutcome::moved(AgentState::new(s.node, s.heading_deg - 180.0)),
        Action::Forward => {
            let front = edges_in_front(graph, s, half_angle_deg);
            match middle(&front) {
                Some(e) => StepOutcome::moved(AgentState::new(e.to, e.heading_deg)),
                None => StepOutcome::noop(s, StepNote::NoopDeadEnd),
            }
        }
        Action::Left | Action::Right => {
            let front = edges_in_front(graph, s, half_angle_deg);
            let pick = if a == Action::Left {
                front.first()
            } else {
                front.last()
            };
            match pick {
                Some((d, e)) if d.abs() > HEADING_EPS => {
                    StepOutcome::moved(AgentState::new(s.node, e.heading_deg))
                }
                _ => StepOutcome::noop(s, StepNote::NoopNoTurnTarget),
            }
        }
    }
}

/// Median of an odd-sized window; for even sizes the central element with
/// the smaller |delta|, ties going to the smaller delta.
fn middle(front: &[(f64, Edge)]) -> Option<&Edge> {
    let n = front.len();
    if n == 0 {
        return None;
    }
    if n % 2 == 1 {
        return Some(&front[n / 2].1);
    }
    let (a, b) = (&front[n / 2 - 1], &front[n / 2]);
    if b.0.abs() < a.0.abs() - HEADING_EPS {
        Some(&b.1)
    } else {
        Some(&a.1)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn at(g: &NavGraph, node: &str, heading: f64) -> AgentState {
        AgentState::new(g.require(node).unwrap(), heading)
    }

    #[test]
    fn signed_delta_examples() {
        assert_eq!(signed_delta(20.0, 50.0), 30.0);
        assert_eq!(signed_delta(20.0, 345.0), -35.0);
        assert_eq!(signed_delta(123.4, 123.4), 0.0);
        assert_eq!(signed_delta(0.0, 180.0), -180.0);
    }

    #[test]
    fn action_literals_round_trip() {
        for a in Action::ALL {
            assert_eq!(a.literal().parse::<Action>().unwrap(), a);
        }
        assert_eq!(
            serde_json::to_string(&Action::TurnAround).unwrap(),
            "\"turn_around\""
        );
        assert!("jump".parse::<Action>().is_err());
    }

    #[test]
    fn right_selects_fifty_degree_edge_at_four_way() {
        let g = fixtures::four_way().graph;
        let out = step_modified(&g, at(&g, "v3", 20.0), Action::Right);
        assert_eq!(out.note, StepNote::Ok);
        assert_eq!(out.next_state.heading_deg, 50.0);
        assert_eq!(out.next_state.node, g.require("v3").unwrap());
    }

    #[test]
    fn original_forward_auto_rotates() {
        let g = fixtures::four_way().graph;
        let out = step_original(&g, at(&g, "v2", 20.0), Action::Forward).unwrap();
        assert_eq!(out.next_state.node, g.require("v3").unwrap());
        assert_eq!(out.next_state.heading_deg, 50.0);
    }

    #[test]
    fn modified_forward_keeps_heading() {
        let g = fixtures::four_way().graph;
        let out = step_modified(&g, at(&g, "v2", 20.0), Action::Forward);
        assert_eq!(out.next_state.node, g.require("v3").unwrap());
        assert_eq!(out.next_state.heading_deg, 20.0);
        // Middle of {315, 345, 50} relative to 20° is 345°.
        let out = step_modified(&g, out.next_state, Action::Forward);
        assert_eq!(out.next_state.node, g.require("v5").unwrap());
    }

    #[test]
    fn turn_around_reverses_heading() {
        let g = fixtures::four_way().graph;
        let s = at(&g, "v3", 20.0);
        let out = step_modified(&g, s, Action::TurnAround);
        assert_eq!(out.next_state.heading_deg, 200.0);
        let back = step_modified(&g, out.next_state, Action::TurnAround);
        assert!(back.next_state.same_as(&s));
    }

    #[test]
    fn stop_is_done_and_static() {
        let g = fixtures::four_way().graph;
        let s = at(&g, "v3", 77.0);
        for out in [
            step_modified(&g, s, Action::Stop),
            step_original(&g, s, Action::Stop).unwrap(),
        ] {
            assert!(out.done);
            assert_eq!(out.next_state, s);
        }
    }

    #[test]
    fn modified_noops() {
        let g = NavGraph::builder()
            .node("a")
            .node("b")
            .edge("a", "b", 90.0)
            .edge("b", "a", 270.0)
            .build()
            .unwrap();
        let s = at(&g, "a", 90.0);
        assert_eq!(step_modified(&g, s, Action::Left).note, StepNote::NoopNoTurnTarget);
        assert_eq!(step_modified(&g, s, Action::Right).note, StepNote::NoopNoTurnTarget);
        let facing_away = at(&g, "a", 270.0);
        let out = step_modified(&g, facing_away, Action::Forward);
        assert_eq!(out.note, StepNote::NoopDeadEnd);
        assert_eq!(out.next_state, facing_away);
    }

    #[test]
    fn even_window_prefers_smaller_delta() {
        // Edges at -40 and +30 relative to heading 0.
        let g = NavGraph::builder()
            .node("c")
            .node("l")
            .node("r")
            .edge("c", "l", 320.0)
            .edge("c", "r", 30.0)
            .edge("l", "c", 140.0)
            .edge("r", "c", 210.0)
            .build()
            .unwrap();
        let out = step_modified(&g, at(&g, "c", 0.0), Action::Forward);
        assert_eq!(out.next_state.node, g.require("r").unwrap());
        // Exact tie: -30 and +30 -> smaller delta (left) wins.
        let g = NavGraph::builder()
            .node("c")
            .node("l")
            .node("r")
            .edge("c", "l", 330.0)
            .edge("c", "r", 30.0)
            .edge("l", "c", 150.0)
            .edge("r", "c", 210.0)
            .build()
            .unwrap();
        let out = step_modified(&g, at(&g, "c", 0.0), Action::Forward);
        assert_eq!(out.next_state.node, g.require("l").unwrap());
    }

    #[test]
    fn original_forward_off_edge_is_error() {
        let g = fixtures::four_way().graph;
        assert!(step_original(&g, at(&g, "v3", 21.0), Action::Forward).is_err());
    }

    #[test]
    fn original_reset_snaps_heading() {
        let g = fixtures::four_way().graph;
        let env = EnvConfig::new(Semantics::Original);
        let s = env.reset(&g, at(&g, "v3", 30.0));
        assert_eq!(s.heading_deg, 50.0);
    }
}
