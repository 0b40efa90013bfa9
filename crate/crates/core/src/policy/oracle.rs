//! Shortest-path oracle over the product space of nodes and headings.
//!
//! Every action costs one step, turns included. The state space holds, for
//! each node, the headings of its incoming and outgoing edges and their
//! reverses; that set is closed under both transition functions. States off
//! that set (an arbitrary start heading) are resolved by looking one or two
//! transitions ahead.

use std::collections::{HashMap, VecDeque};
use std::sync::{Arc, Mutex};

use thiserror::Error;

use super::{LiteralScores, Policy, PolicyError, StepContext};
use crate::environment::{Action, AgentState, EnvConfig};
use crate::nav_graph::{heading_key, NavGraph, NodeIdx};

const MOVES: [Action; 4] = [Action::Forward, Action::Left, Action::Right, Action::TurnAround];
const UNREACHED: u32 = u32::MAX;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OracleError {
    #[error("target {target} cannot be reached from node {node}")]
    Unreachable { node: String, target: String },
}

/// Distances (in actions) from every tabulated state to one target node.
#[derive(Debug, Clone)]
pub struct DistanceTable {
    pub target: NodeIdx,
    dist: Vec<u32>,
}

#[derive(Debug)]
pub struct Oracle {
    graph: Arc<NavGraph>,
    env: EnvConfig,
    index: HashMap<(usize, i64), usize>,
    states: Vec<AgentState>,
    /// Successor per state and move, or `None` for no-ops and errors.
    succ: Vec<[Option<usize>; 4]>,
    pred: Vec<Vec<usize>>,
    tables: Mutex<HashMap<NodeIdx, Arc<DistanceTable>>>,
}

impl Oracle {
    pub fn new(graph: Arc<NavGraph>, env: EnvConfig) -> Self {
        let mut index = HashMap::new();
        let mut states = Vec::new();
        let mut add = |s: AgentState, index: &mut HashMap<(usize, i64), usize>| {
            let key = (s.node.0, heading_key(s.heading_deg));
            if let std::collections::hash_map::Entry::Vacant(slot) = index.entry(key) {
                slot.insert(states.len());
                states.push(s);
            }
        };
        for (from, e) in graph.edges() {
            for h in [e.heading_deg, e.heading_deg + 180.0] {
                add(AgentState::new(from, h), &mut index);
                add(AgentState::new(e.to, h), &mut index);
            }
        }
        let mut succ = Vec::with_capacity(states.len());
        let mut pred = vec![Vec::new(); states.len()];
        for (i, s) in states.iter().enumerate() {
            let mut row = [None; 4];
            for (m, a) in MOVES.iter().enumerate() {
                let Ok(out) = env.step(&graph, *s, *a) else { continue };
                if out.note.is_noop() {
                    continue;
                }
                let key = (out.next_state.node.0, heading_key(out.next_state.heading_deg));
                if let Some(&j) = index.get(&key) {
                    row[m] = Some(j);
                    pred[j].push(i);
                }
            }
            succ.push(row);
        }
        Self {
            graph,
            env,
            index,
            states,
            succ,
            pred,
            tables: Mutex::new(HashMap::new()),
        }
    }

    pub fn from_graph(graph: &NavGraph, env: EnvConfig) -> Self {
        Self::new(Arc::new(graph.clone()), env)
    }

    pub fn graph(&self) -> &NavGraph {
        &self.graph
    }

    pub fn env(&self) -> EnvConfig {
        self.env
    }

    pub fn state_count(&self) -> usize {
        self.states.len()
    }

    pub fn table(&self, target: NodeIdx) -> Arc<DistanceTable> {
        if let Some(t) = self.tables.lock().expect("oracle cache").get(&target) {
            return t.clone();
        }
        let mut dist = vec![UNREACHED; self.states.len()];
        let mut queue = VecDeque::new();
        for (i, s) in self.states.iter().enumerate() {
            if s.node == target {
                dist[i] = 0;
                queue.push_back(i);
            }
        }
        while let Some(j) = queue.pop_front() {
            for &i in &self.pred[j] {
                if dist[i] == UNREACHED {
                    dist[i] = dist[j] + 1;
                    queue.push_back(i);
                }
            }
        }
        let table = Arc::new(DistanceTable { target, dist });
        self.tables
            .lock()
            .expect("oracle cache")
            .insert(target, table.clone());
        table
    }

    fn lookup(&self, s: AgentState) -> Option<usize> {
        self.index.get(&(s.node.0, heading_key(s.heading_deg))).copied()
    }

    fn step(&self, s: AgentState, a: Action) -> Option<AgentState> {
        if let (Some(i), Some(m)) = (self.lookup(s), MOVES.iter().position(|&x| x == a)) {
            return self.succ[i][m].map(|j| self.states[j]);
        }
        let out = self.env.step(&self.graph, s, a).ok()?;
        (!out.note.is_noop()).then_some(out.next_state)
    }

    fn tabulated(&self, table: &DistanceTable, s: AgentState) -> Option<u32> {
        let d = table.dist[self.lookup(s)?];
        (d != UNREACHED).then_some(d)
    }

    /// Number of actions (excluding `Stop`) needed to reach the target.
    pub fn distance(&self, s: AgentState, target: NodeIdx) -> Option<u32> {
        if s.node == target {
            return Some(0);
        }
        let table = self.table(target);
        self.distance_in(&table, s, 2)
    }

    fn distance_in(&self, table: &DistanceTable, s: AgentState, depth: u32) -> Option<u32> {
        if s.node == table.target {
            return Some(0);
        }
        if let Some(d) = self.tabulated(table, s) {
            return Some(d);
        }
        if self.lookup(s).is_some() || depth == 0 {
            return None;
        }
        MOVES
            .iter()
            .filter_map(|&a| self.step(s, a))
            .filter_map(|n| self.distance_in(table, n, depth - 1))
            .min()
            .map(|d| d + 1)
    }

    /// First action, in forward, left, right, turn-around order, that lies
    /// on a shortest route; `Stop` at the target.
    pub fn next_action(&self, s: AgentState, target: NodeIdx) -> Result<Action, OracleError> {
        if s.node == target {
            return Ok(Action::Stop);
        }
        let table = self.table(target);
        let unreachable = || OracleError::Unreachable {
            node: self.graph.id(s.node).to_string(),
            target: self.graph.id(target).to_string(),
        };
        let d = self.distance_in(&table, s, 2).ok_or_else(unreachable)?;
        MOVES
            .iter()
            .copied()
            .find(|&a| {
                self.step(s, a)
                    .and_then(|n| self.distance_in(&table, n, 1))
                    .is_some_and(|dn| dn + 1 == d)
            })
            .ok_or_else(unreachable)
    }

    /// Follows the oracle from `start` until it stops or `max_steps`
    /// actions have been emitted. The result ends in `Stop` on success.
    pub fn rollout(
        &self,
        start: AgentState,
        target: NodeIdx,
        max_steps: usize,
    ) -> Result<Vec<Action>, OracleError> {
        let mut s = self.env.reset(&self.graph, start);
        let mut out = Vec::new();
        while out.len() < max_steps {
            let a = self.next_action(s, target)?;
            out.push(a);
            if a == Action::Stop {
                break;
            }
            s = self.step(s, a).expect("oracle actions are never no-ops");
        }
        Ok(out)
    }
}

/// Oracle action at `s` under the modified transition function.
pub fn oracle_next_action(
    graph: &NavGraph,
    s: AgentState,
    target: NodeIdx,
) -> Result<Action, OracleError> {
    Oracle::from_graph(graph, EnvConfig::default()).next_action(s, target)
}

/// Scores the oracle's action 0 and every other literal −1.
#[derive(Debug, Clone)]
pub struct OraclePolicy {
    oracle: Arc<Oracle>,
}

impl OraclePolicy {
    pub fn new(oracle: Arc<Oracle>) -> Self {
        Self { oracle }
    }

    pub fn from_graph(graph: &NavGraph, env: EnvConfig) -> Self {
        Self::new(Arc::new(Oracle::from_graph(graph, env)))
    }

    pub fn oracle(&self) -> &Arc<Oracle> {
        &self.oracle
    }
}

impl Policy for OraclePolicy {
    fn name(&self) -> &str {
        "oracle"
    }

    fn score(&self, _: &str, ctx: &StepContext) -> Result<LiteralScores, PolicyError> {
        let a = self.oracle.next_action(ctx.state, ctx.target)?;
        Ok(LiteralScores::indicator(a))
    }
}
