#![allow(dead_code)]

use std::collections::hash_map::DefaultHasher;
use std::hash::{Hash, Hasher};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use urbannav::environment::{EnvConfig, EpisodeLog, Perception};
use urbannav::nav_graph::{generate_world, GoldActionSequence, SyntheticConfig, SyntheticWorld};
use urbannav::policy::{PolicyError, StepContext};
use urbannav::{Action, LiteralScores, NavGraph, NavInstance, Policy};

pub fn world(seed: u64, nodes: usize, instances: usize) -> SyntheticWorld {
    generate_world(&SyntheticConfig {
        n_instances: instances,
        ..SyntheticConfig::new(seed, nodes, 0.3)
    })
}

pub fn perception(world: &SyntheticWorld) -> Perception {
    Perception {
        table: world.scores.clone(),
        ..Perception::default()
    }
}

/// Picks actions at random, seeded by the prompt so runs are repeatable.
#[derive(Debug, Clone, Copy)]
pub struct RandomPolicy {
    pub seed: u64,
    pub stop_prob: f64,
}

impl Policy for RandomPolicy {
    fn name(&self) -> &str {
        "random"
    }

    fn score(&self, prompt: &str, ctx: &StepContext) -> Result<LiteralScores, PolicyError> {
        let mut h = DefaultHasher::new();
        (self.seed, prompt, ctx.t).hash(&mut h);
        let mut rng = ChaCha8Rng::seed_from_u64(h.finish());
        let a = if rng.random_bool(self.stop_prob) {
            Action::Stop
        } else {
            Action::ALL[rng.random_range(0..4)]
        };
        Ok(LiteralScores::indicator(a))
    }
}

fn idx(graph: &NavGraph, id: &str) -> usize {
    graph.nodes().find(|&n| graph.id(n) == id).expect("known node").0
}

/// Undirected hop distance by repeated relaxation over the edge list.
pub fn brute_distance(graph: &NavGraph, a: &str, b: &str) -> Option<usize> {
    let n = graph.node_count();
    let mut d = vec![usize::MAX; n];
    d[idx(graph, a)] = 0;
    for _ in 0..n {
        let mut changed = false;
        for (from, e) in graph.edges() {
            let (u, v) = (from.0, e.to.0);
            for (x, y) in [(u, v), (v, u)] {
                if d[x] != usize::MAX && d[x] + 1 < d[y] {
                    d[y] = d[x] + 1;
                    changed = true;
                }
            }
        }
        if !changed {
            break;
        }
    }
    let r = d[idx(graph, b)];
    (r != usize::MAX).then_some(r)
}

pub fn brute_tc(graph: &NavGraph, log: &EpisodeLog, inst: &NavInstance) -> u8 {
    if !log.records.last().is_some_and(|r| r.action == Action::Stop) {
        return 0;
    }
    let end = &log.summary.final_node;
    let adjacent = graph.edges().any(|(from, e)| {
        let (u, v) = (graph.id(from), graph.id(e.to));
        (u == end && v == inst.target_node) || (v == end && u == inst.target_node)
    });
    u8::from(*end == inst.target_node || adjacent)
}

pub fn brute_spd(graph: &NavGraph, log: &EpisodeLog, inst: &NavInstance) -> usize {
    brute_distance(graph, &log.summary.final_node, &inst.target_node).expect("connected")
}

pub fn brute_kpa(
    graph: &NavGraph,
    log: &EpisodeLog,
    inst: &NavInstance,
    gold: &GoldActionSequence,
    env: &EnvConfig,
) -> f64 {
    // Node id at which each gold action is issued.
    let resolved = inst.resolve(graph).expect("valid instance");
    let mut s = env.reset(graph, resolved.start);
    let mut at = Vec::new();
    for &a in &gold.actions {
        at.push(graph.id(s.node).to_string());
        s = env.step(graph, s, a).expect("gold replays").next_state;
    }
    let agent_at = |node: &str| log.records.iter().find(|r| r.node == node).map(|r| r.action);

    let mut points: Vec<(String, Action)> = vec![(inst.start_node.clone(), gold.actions[0])];
    for node in &inst.gold_path {
        let n = graph.index_of(node).expect("known node");
        if graph.out_edges(n).len() < 3
            || *node == inst.start_node
            || *node == inst.target_node
            || points.iter().any(|(p, _)| p == node)
        {
            continue;
        }
        if let Some(i) = at.iter().position(|m| m == node) {
            points.push((node.clone(), gold.actions[i]));
        }
    }
    let mut correct = usize::from(log.records.first().map(|r| r.action) == Some(points[0].1));
    for (node, expected) in &points[1..] {
        correct += usize::from(agent_at(node) == Some(*expected));
    }
    correct += usize::from(agent_at(&inst.target_node) == Some(Action::Stop));
    correct as f64 / (points.len() + 1) as f64
}
