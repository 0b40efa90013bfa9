//! Task completion (TC), shortest-path distance (SPD) and key point
//! accuracy (KPA) of finished episodes.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::environment::{Action, EnvConfig, EpisodeLog};
use crate::nav_graph::{GoldActionSequence, InstanceError, NavGraph, NavInstance, NodeIdx};

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error(transparent)]
    Instance(#[from] InstanceError),
    #[error("episode references unknown node {0:?}")]
    UnknownNode(String),
    #[error("gold actions for instance {0} do not replay")]
    GoldReplay(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KeypointVerdict {
    pub node: String,
    pub expected: Action,
    pub observed: Option<Action>,
    pub correct: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    pub instance_id: String,
    pub tc: u8,
    pub spd: usize,
    pub kpa: f64,
    pub verdicts: Vec<KeypointVerdict>,
}

fn final_node(graph: &NavGraph, log: &EpisodeLog) -> Result<NodeIdx, MetricsError> {
    graph
        .index_of(&log.summary.final_node)
        .ok_or_else(|| MetricsError::UnknownNode(log.summary.final_node.clone()))
}

/// 1 iff the agent stopped at the target or one of its neighbours.
pub fn task_completion(graph: &NavGraph, log: &EpisodeLog, inst: &NavInstance) -> Result<u8, MetricsError> {
    if !log.stopped() {
        return Ok(0);
    }
    let target = inst.resolve(graph)?.target;
    let end = final_node(graph, log)?;
    Ok(u8::from(end == target || graph.neighbors(target).contains(&end)))
}

/// Undirected edge count between the final node and the target.
pub fn spd(graph: &NavGraph, log: &EpisodeLog, inst: &NavInstance) -> Result<usize, MetricsError> {
    let target = inst.resolve(graph)?.target;
    let end = final_node(graph, log)?;
    graph
        .shortest_path_len(end, target)
        .map_err(|_| MetricsError::UnknownNode(log.summary.final_node.clone()))
}

/// Node at which each gold action is taken.
fn gold_nodes(
    graph: &NavGraph,
    inst: &NavInstance,
    gold: &GoldActionSequence,
    env: &EnvConfig,
) -> Result<Vec<NodeIdx>, MetricsError> {
    let resolved = inst.resolve(graph)?;
    let mut s = env.reset(graph, resolved.start);
    let mut nodes = Vec::with_capacity(gold.actions.len());
    for &a in &gold.actions {
        nodes.push(s.node);
        let out = env
            .step(graph, s, a)
            .map_err(|_| MetricsError::GoldReplay(inst.id.clone()))?;
        s = out.next_state;
    }
    Ok(nodes)
}

/// Key point accuracy and the verdict for each key point: the first step,
/// every gold-route node with at least three outgoing edges, and the
/// target, where the expected action is `Stop`.
pub fn kpa(
    graph: &NavGraph,
    log: &EpisodeLog,
    inst: &NavInstance,
    gold: &GoldActionSequence,
    env: &EnvConfig,
) -> Result<(f64, Vec<KeypointVerdict>), MetricsError> {
    let resolved = inst.resolve(graph)?;
    let nodes = gold_nodes(graph, inst, gold, env)?;
    let first_gold = |n: NodeIdx| {
        nodes
            .iter()
            .position(|&m| m == n)
            .map(|i| gold.actions[i])
    };
    let first_agent = |n: NodeIdx| {
        let id = graph.id(n);
        log.records.iter().find(|r| r.node == id).map(|r| r.action)
    };

    let mut verdicts = Vec::new();
    let mut push = |node: NodeIdx, expected: Action, observed: Option<Action>| {
        verdicts.push(KeypointVerdict {
            node: graph.id(node).to_string(),
            expected,
            observed,
            correct: observed == Some(expected),
        });
    };

    let start = resolved.path[0];
    push(
        start,
        gold.actions.first().copied().unwrap_or(Action::Stop),
        log.records.first().map(|r| r.action),
    );
    let mut seen = vec![start, resolved.target];
    for &n in &resolved.path {
        if seen.contains(&n) || graph.out_degree(n) < 3 {
            continue;
        }
        seen.push(n);
        if let Some(expected) = first_gold(n) {
            push(n, expected, first_agent(n));
        }
    }
    push(resolved.target, Action::Stop, first_agent(resolved.target));

    let correct = verdicts.iter().filter(|v| v.correct).count();
    Ok((correct as f64 / verdicts.len() as f64, verdicts))
}

pub fn evaluate(
    graph: &NavGraph,
    log: &EpisodeLog,
    inst: &NavInstance,
    gold: &GoldActionSequence,
    env: &EnvConfig,
) -> Result<EvalResult, MetricsError> {
    let (k, verdicts) = kpa(graph, log, inst, gold, env)?;
    Ok(EvalResult {
        instance_id: inst.id.clone(),
        tc: task_completion(graph, log, inst)?,
        spd: spd(graph, log, inst)?,
        kpa: k,
        verdicts,
    })
}

/// Mean metrics over a set of episodes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub n: usize,
    pub tc: f64,
    pub spd: f64,
    pub kpa: f64,
}

impl EvalReport {
    pub fn from_results(results: &[EvalResult]) -> Self {
        let n = results.len();
        let mean = |f: &dyn Fn(&EvalResult) -> f64| {
            if n == 0 {
                0.0
            } else {
                results.iter().map(f).sum::<f64>() / n as f64
            }
        };
        Self {
            n,
            tc: mean(&|r| f64::from(r.tc)),
            spd: mean(&|r| r.spd as f64),
            kpa: mean(&|r| r.kpa),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::environment::{fixtures, EpisodeRunner, Perception};
    use crate::nav_graph::derive_gold_actions;
    use crate::policy::{ForwardPolicy, ScriptedPolicy};

    fn inst(path: &[&str]) -> NavInstance {
        NavInstance {
            id: "m".into(),
            start_node: path[0].into(),
            start_heading_deg: 20.0,
            target_node: path[path.len() - 1].into(),
            gold_path: path.iter().map(|s| s.to_string()).collect(),
            instructions: "x".into(),
            landmarks: None,
        }
    }

    fn run(script: Vec<Action>, i: &NavInstance) -> (NavGraph, EpisodeLog) {
        let fx = fixtures::four_way();
        let p = Perception::default();
        let log = EpisodeRunner::new(&fx.graph, EnvConfig::default(), &p)
            .run(i, &ScriptedPolicy::new(script))
            .unwrap();
        (fx.graph, log)
    }

    #[test]
    fn gold_replay_scores_perfectly() {
        let i = inst(&["v2", "v3", "v6", "v8"]);
        let fx = fixtures::four_way();
        let gold = derive_gold_actions(&fx.graph, &i).unwrap();
        let (g, log) = run(gold.actions.clone(), &i);
        let r = evaluate(&g, &log, &i, &gold, &EnvConfig::default()).unwrap();
        assert_eq!((r.tc, r.spd, r.kpa), (1, 0, 1.0));
        assert_eq!(r.verdicts.len(), 3);
        assert_eq!(r.verdicts[1].node, "v3");
        assert_eq!(r.verdicts[1].expected, Action::Right);
    }

    #[test]
    fn adjacent_stop_completes_distant_does_not() {
        let i = inst(&["v2", "v3", "v6", "v8"]);
        let (g, log) = run(vec![Action::Forward, Action::Right, Action::Forward, Action::Stop], &i);
        assert_eq!(task_completion(&g, &log, &i).unwrap(), 1);
        assert_eq!(spd(&g, &log, &i).unwrap(), 1);
        let (g, log) = run(vec![Action::Forward, Action::Stop], &i);
        assert_eq!(task_completion(&g, &log, &i).unwrap(), 0);
        assert_eq!(spd(&g, &log, &i).unwrap(), 2);
    }

    #[test]
    fn capped_episode_scores_zero() {
        let i = inst(&["v2", "v3", "v5"]);
        let fx = fixtures::four_way();
        let p = Perception::default();
        let log = EpisodeRunner::new(&fx.graph, EnvConfig::default(), &p)
            .with_max_steps(2)
            .run(&i, &ForwardPolicy)
            .unwrap();
        assert_eq!(log.summary.final_node, "v5");
        assert_eq!(task_completion(&fx.graph, &log, &i).unwrap(), 0);
        assert_eq!(spd(&fx.graph, &log, &i).unwrap(), 0);
    }

    #[test]
    fn wrong_turn_at_keypoint_is_flagged() {
        let i = inst(&["v2", "v3", "v6"]);
        let fx = fixtures::four_way();
        let gold = derive_gold_actions(&fx.graph, &i).unwrap();
        let (g, log) = run(vec![Action::Forward, Action::Forward, Action::Stop], &i);
        let (k, v) = kpa(&g, &log, &i, &gold, &EnvConfig::default()).unwrap();
        assert!(v[0].correct);
        assert!(!v[1].correct);
        assert_eq!(v[1].observed, Some(Action::Forward));
        assert_eq!(v[2].observed, None);
        assert!((k - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn report_means() {
        let r = |tc, spd, kpa| EvalResult {
            instance_id: String::new(),
            tc,
            spd,
            kpa,
            verdicts: vec![],
        };
        let rep = EvalReport::from_results(&[r(1, 0, 1.0), r(0, 3, 0.5)]);
        assert_eq!(rep, EvalReport { n: 2, tc: 0.5, spd: 1.5, kpa: 0.75 });
    }
}
