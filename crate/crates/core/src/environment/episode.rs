//! Episode runner and the JSON-lines episode log.

use std::fs;
use std::io::{BufRead, Write};
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::{Action, AgentState, EnvConfig, StepNote};
use crate::landmarks::{LandmarkSet, ScoreTable, DEFAULT_TAU};
use crate::nav_graph::{InstanceError, NavGraph, NavInstance};
use crate::policy::{Leg, LiteralScores, Policy, PolicyError, StepContext};
use crate::verbalizer::{observe, render_observation, PromptBuilder, PromptParts, Templates};

pub const DEFAULT_MAX_STEPS: usize = 55;

/// Everything needed to turn a state into observation text.
#[derive(Debug, Clone)]
pub struct Perception {
    pub table: ScoreTable,
    pub tau: f64,
    pub templates: Templates,
}

impl Default for Perception {
    fn default() -> Self {
        Self {
            table: ScoreTable::new(),
            tau: DEFAULT_TAU,
            templates: Templates::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub t: usize,
    pub node: String,
    pub heading_deg: f64,
    pub observation: String,
    pub action: Action,
    pub scores: LiteralScores,
    pub note: StepNote,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeSummary {
    pub stopped: bool,
    pub steps: usize,
    pub final_node: String,
    pub final_heading_deg: f64,
    pub instance_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeLog {
    pub records: Vec<StepRecord>,
    pub summary: EpisodeSummary,
}

impl EpisodeLog {
    pub fn stopped(&self) -> bool {
        self.summary.stopped
    }

    pub fn actions(&self) -> impl Iterator<Item = Action> + '_ {
        self.records.iter().map(|r| r.action)
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for r in &self.records {
            out.push_str(&serde_json::to_string(r).expect("record serializes"));
            out.push('\n');
        }
        out.push_str(&serde_json::to_string(&self.summary).expect("summary serializes"));
        out.push('\n');
        out
    }

    /// Parses a log written by [`EpisodeLog::to_jsonl`]: step records
    /// followed by exactly one summary line.
    pub fn from_jsonl(text: &str) -> Result<Self, serde_json::Error> {
        let lines: Vec<&str> = text.lines().filter(|l| !l.trim().is_empty()).collect();
        let (last, steps) = match lines.split_last() {
            Some(x) => x,
            None => {
                return Err(serde::de::Error::custom("episode log is empty"));
            }
        };
        let records = steps
            .iter()
            .map(|l| serde_json::from_str(l))
            .collect::<Result<Vec<StepRecord>, _>>()?;
        Ok(Self {
            records,
            summary: serde_json::from_str(last)?,
        })
    }

    pub fn write_jsonl(&self, path: impl AsRef<Path>) -> std::io::Result<()> {
        let mut f = std::io::BufWriter::new(fs::File::create(path)?);
        f.write_all(self.to_jsonl().as_bytes())?;
        f.flush()
    }

    pub fn read_jsonl(path: impl AsRef<Path>) -> std::io::Result<Self> {
        let f = std::io::BufReader::new(fs::File::open(path)?);
        let mut text = String::new();
        for line in f.lines() {
            text.push_str(&line?);
            text.push('\n');
        }
        Self::from_jsonl(&text).map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, e))
    }
}

/// A log together with the prompt and context seen at every step.
#[derive(Debug, Clone)]
pub struct EpisodeTrace {
    pub log: EpisodeLog,
    pub prompts: Vec<String>,
    pub contexts: Vec<StepContext>,
    pub start: AgentState,
    pub final_state: AgentState,
}

/// One decision: the action to execute and the scores to log for it.
pub type Decision = (Action, LiteralScores);

#[derive(Debug, Clone, Copy)]
pub struct EpisodeRunner<'a> {
    pub graph: &'a NavGraph,
    pub env: EnvConfig,
    pub perception: &'a Perception,
    pub max_steps: usize,
}

impl<'a> EpisodeRunner<'a> {
    pub fn new(graph: &'a NavGraph, env: EnvConfig, perception: &'a Perception) -> Self {
        Self {
            graph,
            env,
            perception,
            max_steps: DEFAULT_MAX_STEPS,
        }
    }

    pub fn with_max_steps(mut self, max_steps: usize) -> Self {
        self.max_steps = max_steps;
        self
    }

    pub fn run(&self, inst: &NavInstance, policy: &dyn Policy) -> Result<EpisodeLog, InstanceError> {
        Ok(self.trace(inst, policy)?.log)
    }

    /// Greedy rollout of `policy`.
    pub fn trace(&self, inst: &NavInstance, policy: &dyn Policy) -> Result<EpisodeTrace, InstanceError> {
        self.drive(inst, |prompt, ctx| {
            let scores = policy.score(prompt, ctx)?;
            Ok((scores.decode(), scores))
        })
    }

    /// Runs an episode whose actions come from `decide`. A failing decision
    /// or environment error ends the episode; the partial log is kept and
    /// the error recorded in the summary.
    pub fn drive(
        &self,
        inst: &NavInstance,
        mut decide: impl FnMut(&str, &StepContext) -> Result<Decision, PolicyError>,
    ) -> Result<EpisodeTrace, InstanceError> {
        let resolved = inst.resolve(self.graph)?;
        let landmarks = inst
            .landmarks
            .clone()
            .and_then(|l| LandmarkSet::new(l).ok())
            .unwrap_or_default();
        let goal_landmark = landmarks.last().map(str::to_string);
        let p = self.perception;
        let templates = &p.templates;
        let start = self.env.reset(self.graph, resolved.start);
        let mut state = start;

        let parts = PromptParts::new(templates, &inst.instructions);
        let mut obs = observe(self.graph, state, &landmarks, &p.table, p.tau);
        let mut obs_text = render_observation(&obs, templates);
        let mut builder = PromptBuilder::new(&parts, &obs_text);

        let mut records = Vec::new();
        let mut prompts = Vec::new();
        let mut contexts: Vec<StepContext> = Vec::new();
        let mut stopped = false;
        let mut error = None;
        let mut since_turn = StepContext::NO_TURN_YET;
        let instructions: Arc<str> = Arc::from(inst.instructions.as_str());
        let mut legs: Vec<Leg> = Vec::new();

        for t in 1..=self.max_steps {
            let ctx = StepContext {
                t,
                state,
                target: resolved.target,
                observation: obs.clone(),
                prev_observation: contexts.last().map(|c| c.observation.clone()),
                goal_landmark: goal_landmark.clone(),
                steps_since_turn: since_turn,
                instructions: instructions.clone(),
                start_heading_deg: start.heading_deg,
                legs: legs.clone(),
            };
            let (action, scores) = match decide(builder.prompt(), &ctx) {
                Ok(d) => d,
                Err(e) => {
                    error = Some(e.to_string());
                    break;
                }
            };
            let outcome = match self.env.step(self.graph, state, action) {
                Ok(o) => o,
                Err(e) => {
                    error = Some(e.to_string());
                    break;
                }
            };
            records.push(StepRecord {
                t,
                node: self.graph.id(state.node).to_string(),
                heading_deg: state.heading_deg,
                observation: obs_text.clone(),
                action,
                scores,
                note: outcome.note,
            });
            prompts.push(builder.prompt().to_string());
            contexts.push(ctx);
            since_turn = if action.is_turn() {
                0
            } else {
                since_turn.saturating_add(1)
            };
            if action == Action::Forward && outcome.next_state.node != state.node {
                let edges = self.graph.out_edges(state.node);
                if let Some(e) = edges.iter().find(|e| e.to == outcome.next_state.node) {
                    legs.push(Leg {
                        from_degree: edges.len(),
                        heading_deg: e.heading_deg,
                    });
                }
            }
            state = outcome.next_state;
            if outcome.done {
                stopped = true;
                break;
            }
            obs = observe(self.graph, state, &landmarks, &p.table, p.tau);
            obs_text = render_observation(&obs, templates);
            builder.advance(action, &obs_text);
        }

        let summary = EpisodeSummary {
            stopped,
            steps: records.len(),
            final_node: self.graph.id(state.node).to_string(),
            final_heading_deg: state.heading_deg,
            instance_id: inst.id.clone(),
            error,
        };
        Ok(EpisodeTrace {
            log: EpisodeLog { records, summary },
            prompts,
            contexts,
            start,
            final_state: state,
        })
    }
}

/// Runs `policy` greedily on `inst` with default perception settings
/// apart from `table`.
pub fn run_episode(
    graph: &NavGraph,
    inst: &NavInstance,
    policy: &dyn Policy,
    env: EnvConfig,
    perception: &Perception,
    max_steps: usize,
) -> Result<EpisodeLog, InstanceError> {
    EpisodeRunner::new(graph, env, perception)
        .with_max_steps(max_steps)
        .run(inst, policy)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::environment::fixtures;
    use crate::policy::{ForwardPolicy, ScriptedPolicy};

    fn instance(path: &[&str]) -> NavInstance {
        NavInstance {
            id: "fx".into(),
            start_node: path[0].into(),
            start_heading_deg: 20.0,
            target_node: path[path.len() - 1].into(),
            gold_path: path.iter().map(|s| s.to_string()).collect(),
            instructions: "Turn right at the intersection.".into(),
            landmarks: None,
        }
    }

    #[test]
    fn forward_policy_is_capped() {
        let fx = fixtures::four_way();
        let inst = instance(&["v2", "v3", "v6"]);
        let p = Perception::default();
        let log = run_episode(&fx.graph, &inst, &ForwardPolicy, EnvConfig::default(), &p, 5).unwrap();
        assert_eq!(log.records.len(), 5);
        assert!(!log.stopped());
        assert_eq!(log.records[0].t, 1);
        assert_eq!(log.records[1].observation, "There is a 4-way intersection.");
    }

    #[test]
    fn scripted_run_and_log_round_trip() {
        let fx = fixtures::four_way();
        let inst = instance(&["v2", "v3", "v6"]);
        let p = Perception::default();
        let script = ScriptedPolicy::new(vec![Action::Forward, Action::Right, Action::Forward, Action::Stop]);
        let runner = EpisodeRunner::new(&fx.graph, EnvConfig::default(), &p);
        let trace = runner.trace(&inst, &script).unwrap();
        assert!(trace.log.stopped());
        assert_eq!(trace.log.summary.final_node, "v6");
        assert_eq!(trace.prompts.len(), 4);
        assert!(trace.prompts[3].starts_with(&trace.prompts[2]));
        assert!(trace.prompts[3].ends_with("3. forward\n4."));
        let back = EpisodeLog::from_jsonl(&trace.log.to_jsonl()).unwrap();
        assert_eq!(back, trace.log);
        let first: serde_json::Value =
            serde_json::from_str(trace.log.to_jsonl().lines().next().unwrap()).unwrap();
        for key in ["t", "node", "heading_deg", "observation", "action", "scores", "note"] {
            assert!(first.get(key).is_some(), "{key}");
        }
        assert_eq!(first["scores"].as_object().unwrap().len(), 5);
    }

    #[test]
    fn policy_failure_keeps_partial_log() {
        let fx = fixtures::four_way();
        let inst = instance(&["v2", "v3", "v6"]);
        let p = Perception::default();
        let runner = EpisodeRunner::new(&fx.graph, EnvConfig::default(), &p);
        let trace = runner
            .drive(&inst, |_, ctx| {
                if ctx.t == 3 {
                    Err(PolicyError::Input("boom".into()))
                } else {
                    Ok((Action::Forward, LiteralScores::indicator(Action::Forward)))
                }
            })
            .unwrap();
        assert_eq!(trace.log.records.len(), 2);
        assert!(trace.log.summary.error.as_deref().unwrap().contains("boom"));
    }

    #[test]
    fn steps_since_turn_tracks_turns() {
        let fx = fixtures::four_way();
        let inst = instance(&["v2", "v3", "v6"]);
        let p = Perception::default();
        let script = ScriptedPolicy::new(vec![Action::Forward, Action::Right, Action::Forward, Action::Stop]);
        let trace = EpisodeRunner::new(&fx.graph, EnvConfig::default(), &p)
            .trace(&inst, &script)
            .unwrap();
        let since: Vec<usize> = trace.contexts.iter().map(|c| c.steps_since_turn).collect();
        assert_eq!(since[2..], [0, 1]);
        assert!(trace.contexts[0].prev_observation.is_none());
    }
}
