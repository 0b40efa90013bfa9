//! Seeded synthetic street grids with planted landmarks.
//!
//! Intersections sit on a rectangular lattice joined by straight streets;
//! the remaining nodes subdivide streets. Headings are exact multiples of
//! 90°. Each instance's gold route is the oracle's route under the modified
//! semantics, and its instructions are templated from that route:
//!
//! - "Go straight through the next {k} intersection(s)."
//! - "Turn {left|right} at the {n}-way intersection with {X} on your
//!   {side}." (or "slightly to your {side}")
//! - "Follow the street to the {left|right}." (turn at a plain corner)
//! - "Pass {Y} on your {left|right}."
//! - "Stop in front of {Z}."
//!
//! Every named landmark gets a standardized score well above the default
//! threshold where it is planted, and background noise around it.

use std::collections::HashMap;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{NavGraph, NavInstance, NodeIdx};
use crate::environment::{signed_delta, Action, AgentState, EnvConfig, TURN_THRESHOLD_DEG};
use crate::landmarks::{ScoreTable, VIEW_OFFSETS};
use crate::policy::Oracle;

const COLORS: [&str; 10] = [
    "red", "blue", "green", "yellow", "orange", "purple", "white", "black", "pink", "gray",
];
const OBJECTS: [&str; 9] = [
    "mailbox", "awning", "bakery", "bench", "fire hydrant", "newsstand", "phone booth", "flower shop",
    "bike rack",
];
const BRANDS: [&str; 10] = [
    "Chase", "Starbucks", "Duane Reade", "McDonald's", "Citibank", "CVS", "Subway", "Dunkin'",
    "Walgreens", "Bank of America",
];

fn landmark_pool() -> Vec<String> {
    let mut pool: Vec<String> = COLORS
        .iter()
        .flat_map(|c| OBJECTS.iter().map(move |o| format!("a {c} {o}")))
        .collect();
    pool.extend(BRANDS.iter().map(|b| b.to_string()));
    pool
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticConfig {
    pub seed: u64,
    pub n_nodes: usize,
    /// Roughly the fraction of nodes that are lattice corners.
    pub intersection_ratio: f64,
    pub n_instances: usize,
    /// Range of hop distances between start and target.
    pub min_route_hops: usize,
    pub max_route_hops: usize,
    /// Longest accepted gold action sequence, `Stop` excluded.
    pub max_gold_actions: usize,
    /// Chance that a street between two corners is left out.
    pub street_drop_prob: f64,
    /// Chance that a turn mentions a landmark.
    pub turn_landmark_prob: f64,
    /// Chance that a straight step past a node mentions a landmark.
    pub distractor_prob: f64,
    /// Chance that the goal landmark is also faintly visible one node early.
    pub goal_preview_prob: f64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            seed: 1,
            n_nodes: 60,
            intersection_ratio: 0.3,
            n_instances: 50,
            min_route_hops: 4,
            max_route_hops: 12,
            max_gold_actions: 54,
            street_drop_prob: 0.15,
            turn_landmark_prob: 0.9,
            distractor_prob: 0.1,
            goal_preview_prob: 0.3,
        }
    }
}

impl SyntheticConfig {
    pub fn new(seed: u64, n_nodes: usize, intersection_ratio: f64) -> Self {
        Self {
            seed,
            n_nodes,
            intersection_ratio,
            ..Self::default()
        }
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticWorld {
    pub graph: NavGraph,
    pub instances: Vec<NavInstance>,
    pub scores: ScoreTable,
}

/// Graph and instances for `(seed, n_nodes, intersection_ratio)` with
/// default settings otherwise.
pub fn generate_synthetic(
    seed: u64,
    n_nodes: usize,
    intersection_ratio: f64,
) -> (NavGraph, Vec<NavInstance>) {
    let w = generate_world(&SyntheticConfig::new(seed, n_nodes, intersection_ratio));
    (w.graph, w.instances)
}

/// Generates a graph, instances and a matching score table.
///
/// # Panics
/// If `n_nodes < 4`.
pub fn generate_world(cfg: &SyntheticConfig) -> SyntheticWorld {
    assert!(cfg.n_nodes >= 4, "synthetic graphs need at least 4 nodes");
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let graph = build_grid(cfg, &mut rng);
    let oracle = Oracle::from_graph(&graph, EnvConfig::default());
    let mut planter = Planter::new(&graph);
    let pool = landmark_pool();
    let mut instances = Vec::with_capacity(cfg.n_instances);
    let nodes: Vec<NodeIdx> = graph.nodes().collect();
    let mut attempts = 0;
    while instances.len() < cfg.n_instances && attempts < cfg.n_instances * 200 {
        attempts += 1;
        let start = *nodes.choose(&mut rng).expect("graph has nodes");
        let from_start = graph.distances_from(start);
        let candidates: Vec<NodeIdx> = nodes
            .iter()
            .copied()
            .filter(|n| {
                from_start[n.0]
                    .is_some_and(|d| (cfg.min_route_hops..=cfg.max_route_hops).contains(&d))
            })
            .collect();
        let Some(&target) = candidates.choose(&mut rng) else { continue };
        let to_target = graph.distances_from(target);
        let Some(first) = graph.out_edges(start).iter().find(|e| {
            matches!((to_target[e.to.0], to_target[start.0]), (Some(a), Some(b)) if a + 1 == b)
        }) else {
            continue;
        };
        let s0 = AgentState::new(start, first.heading_deg);
        let Ok(actions) = oracle.rollout(s0, target, cfg.max_gold_actions + 1) else { continue };
        if actions.last() != Some(&Action::Stop) {
            continue;
        }
        let id = format!("syn-{}-{}", cfg.seed, instances.len());
        instances.push(describe(cfg, &graph, &mut rng, &pool, &mut planter, id, s0, target, &actions));
    }
    let scores = planter.into_table(&graph, &mut rng);
    SyntheticWorld {
        graph,
        instances,
        scores,
    }
}

fn build_grid(cfg: &SyntheticConfig, rng: &mut ChaCha8Rng) -> NavGraph {
    let n = cfg.n_nodes;
    let want = ((cfg.intersection_ratio * n as f64).round() as usize + 4).min(n);
    let rows = ((want as f64).sqrt().floor() as usize).max(2);
    let cols = (want / rows).max(2);
    let corner = |r: usize, c: usize| r * cols + c;
    let n_corners = rows * cols;

    // Streets as (from corner, to corner, heading from -> to).
    let mut streets = Vec::new();
    for r in 0..rows {
        for c in 0..cols {
            if c + 1 < cols {
                streets.push((corner(r, c), corner(r, c + 1), 90.0));
            }
            if r + 1 < rows {
                streets.push((corner(r, c), corner(r + 1, c), 0.0));
            }
        }
    }
    // Drop streets while the corner lattice stays connected.
    let mut kept = vec![true; streets.len()];
    let mut order: Vec<usize> = (0..streets.len()).collect();
    order.shuffle(rng);
    for i in order {
        if rng.random_bool(cfg.street_drop_prob) {
            kept[i] = false;
            if !corners_connected(n_corners, &streets, &kept) {
                kept[i] = true;
            }
        }
    }
    let mut live: Vec<usize> = (0..streets.len()).filter(|&i| kept[i]).collect();
    live.shuffle(rng);
    let mut subdivisions = vec![0usize; streets.len()];
    for k in 0..n - n_corners {
        subdivisions[live[k % live.len()]] += 1;
    }

    let mut b = NavGraph::builder();
    for i in 0..n {
        b.node(format!("p{i}"));
    }
    let mut next = n_corners;
    let link = |b: &mut super::NavGraphBuilder, a: usize, z: usize, h: f64| {
        b.edge(format!("p{a}"), format!("p{z}"), h);
        b.edge(format!("p{z}"), format!("p{a}"), (h + 180.0) % 360.0);
    };
    for &i in &live {
        let (from, to, h) = streets[i];
        let mut prev = from;
        for _ in 0..subdivisions[i] {
            link(&mut b, prev, next, h);
            prev = next;
            next += 1;
        }
        link(&mut b, prev, to, h);
    }
    b.build().expect("synthetic grid is valid")
}

fn corners_connected(n: usize, streets: &[(usize, usize, f64)], kept: &[bool]) -> bool {
    let mut adj = vec![Vec::new(); n];
    for (i, &(a, z, _)) in streets.iter().enumerate() {
        if kept[i] {
            adj[a].push(z);
            adj[z].push(a);
        }
    }
    let mut seen = vec![false; n];
    let mut stack = vec![0];
    seen[0] = true;
    while let Some(v) = stack.pop() {
        for &w in &adj[v] {
            if !seen[w] {
                seen[w] = true;
                stack.push(w);
            }
        }
    }
    seen.into_iter().all(|s| s)
}

/// Collects planted standardized scores, keeping the maximum per cell.
struct Planter {
    cells: HashMap<(String, usize, i32), f64>,
    planted: Vec<(String, usize)>,
}

impl Planter {
    fn new(_graph: &NavGraph) -> Self {
        Self {
            cells: HashMap::new(),
            planted: Vec::new(),
        }
    }

    fn plant(&mut self, landmark: &str, node: NodeIdx, offset: i32, z: f64) {
        let cell = self
            .cells
            .entry((landmark.to_string(), node.0, offset))
            .or_insert(f64::NEG_INFINITY);
        *cell = cell.max(z);
        self.planted.push((landmark.to_string(), node.0));
    }

    fn into_table(mut self, graph: &NavGraph, rng: &mut ChaCha8Rng) -> ScoreTable {
        let normal = Normal::new(0.0, 1.0).expect("unit normal");
        let mut planted = std::mem::take(&mut self.planted);
        planted.sort();
        planted.dedup();
        for (landmark, node) in &planted {
            let dist = graph.distances_from(NodeIdx(*node));
            for n in graph.nodes().filter(|n| dist[n.0].is_some_and(|d| d <= 2)) {
                for off in VIEW_OFFSETS {
                    let z = normal.sample(rng);
                    let cell = self
                        .cells
                        .entry((landmark.clone(), n.0, off))
                        .or_insert(f64::NEG_INFINITY);
                    *cell = cell.max(z);
                }
            }
        }
        let mut names: Vec<&String> = self.cells.keys().map(|k| &k.0).collect();
        names.sort();
        names.dedup();
        let mut table = ScoreTable::new();
        let mut stats = HashMap::new();
        for name in names {
            let mu = rng.random_range(0.15..0.30);
            let sigma = rng.random_range(0.02..0.05);
            table.insert_stats(name, mu, sigma).expect("valid stats");
            stats.insert(name.clone(), (mu, sigma));
        }
        let mut cells: Vec<_> = self.cells.into_iter().collect();
        cells.sort_by(|a, b| a.0.cmp(&b.0));
        for ((landmark, node, off), z) in cells {
            let (mu, sigma) = stats[&landmark];
            table
                .insert_raw(&landmark, graph.id(NodeIdx(node)), off, mu + sigma * z)
                .expect("planted landmark has stats");
        }
        table
    }
}

#[allow(clippy::too_many_arguments)]
fn describe(
    cfg: &SyntheticConfig,
    graph: &NavGraph,
    rng: &mut ChaCha8Rng,
    pool: &[String],
    planter: &mut Planter,
    id: String,
    start: AgentState,
    target: NodeIdx,
    actions: &[Action],
) -> NavInstance {
    let env = EnvConfig::default();
    let mut used: Vec<String> = Vec::new();
    let pick = |rng: &mut ChaCha8Rng, used: &mut Vec<String>| loop {
        let name = pool.choose(rng).expect("pool is not empty").clone();
        if !used.contains(&name) {
            used.push(name.clone());
            return name;
        }
    };

    // Arrival heading at each node and the heading it is left along.
    let mut legs: Vec<(NodeIdx, f64, f64)> = Vec::new();
    let mut s = start;
    let mut arrival = start.heading_deg;
    let mut path = vec![start.node];
    for &a in actions {
        if a == Action::Stop {
            break;
        }
        let out = env.step(graph, s, a).expect("modified steps never fail");
        if a == Action::Forward {
            legs.push((s.node, arrival, out.next_state.heading_deg));
            arrival = out.next_state.heading_deg;
            path.push(out.next_state.node);
        }
        s = out.next_state;
    }

    let mut sentences = Vec::new();
    let mut mentioned = Vec::new();
    let mut straight = 0usize;
    let flush = |straight: &mut usize, sentences: &mut Vec<String>| {
        if *straight > 0 {
            let noun = if *straight == 1 { "intersection" } else { "intersections" };
            sentences.push(format!("Go straight through the next {straight} {noun}."));
            *straight = 0;
        }
    };
    for (i, &(node, h_in, h_out)) in legs.iter().enumerate() {
        let delta = signed_delta(h_in, h_out);
        let arity = graph.out_degree(node);
        if delta.abs() <= TURN_THRESHOLD_DEG {
            if i > 0 && arity >= 3 {
                straight += 1;
            }
            if i > 0 && rng.random_bool(cfg.distractor_prob) {
                flush(&mut straight, &mut sentences);
                let name = pick(rng, &mut used);
                let (side, off) = if rng.random_bool(0.5) { ("left", -90) } else { ("right", 90) };
                planter.plant(&name, node, off, rng.random_range(3.0..6.0));
                sentences.push(format!("Pass {name} on your {side}."));
                mentioned.push(name);
            }
            continue;
        }
        flush(&mut straight, &mut sentences);
        if delta.abs() > 135.0 {
            sentences.push("Turn around.".to_string());
            continue;
        }
        let (side, sign) = if delta > 0.0 { ("right", 1) } else { ("left", -1) };
        if arity < 3 {
            sentences.push(format!("Follow the street to the {side}."));
        } else if rng.random_bool(cfg.turn_landmark_prob) {
            let name = pick(rng, &mut used);
            let off = sign * *[90, 45].choose(rng).expect("non-empty");
            planter.plant(&name, node, off, rng.random_range(3.0..6.0));
            let seen = if off.abs() == 90 { "on your" } else { "slightly to your" };
            sentences.push(format!(
                "Turn {side} at the {arity}-way intersection with {name} {seen} {side}."
            ));
            mentioned.push(name);
        } else {
            sentences.push(format!("Turn {side} at the {arity}-way intersection."));
        }
    }
    flush(&mut straight, &mut sentences);
    let goal = pick(rng, &mut used);
    let off = *[0, -45, 45].choose(rng).expect("non-empty");
    planter.plant(&goal, target, off, rng.random_range(3.0..6.0));
    if path.len() >= 2 && rng.random_bool(cfg.goal_preview_prob) {
        planter.plant(&goal, path[path.len() - 2], 0, rng.random_range(1.5..5.0));
    }
    sentences.push(format!("Stop in front of {goal}."));
    mentioned.push(goal);

    NavInstance {
        id,
        start_node: graph.id(start.node).to_string(),
        start_heading_deg: start.heading_deg,
        target_node: graph.id(target).to_string(),
        gold_path: path.iter().map(|&n| graph.id(n).to_string()).collect(),
        instructions: sentences.join(" "),
        landmarks: Some(mentioned),
    }
}
