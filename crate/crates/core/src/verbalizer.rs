//! Observation templates and step-by-step prompt assembly.
//!
//! A prompt is the task prefix, the instructions and the task suffix on
//! their own lines, followed by one block per step: the rendered
//! observation (omitted when empty) and a numbered line `t. action`. The
//! current step ends at `t.` so that the next action literal, preceded by a
//! space, is its continuation.

use std::fs;
use std::path::Path;

use thiserror::Error;

use crate::environment::{Action, AgentState};
use crate::landmarks::{visible_sightings, Direction, LandmarkSet, ScoreTable, Sighting};
use crate::nav_graph::NavGraph;

const DEFAULT_TEMPLATES: &str = include_str!("../data/templates.conf");

#[derive(Debug, Error)]
pub enum VerbalizerError {
    #[error("template line {line}: expected key=value")]
    Syntax { line: usize },
    #[error("template line {line}: unknown key {key:?}")]
    UnknownKey { line: usize, key: String },
    #[error("{path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
}

/// What the agent perceives at one step.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Observation {
    /// Out-degree of the current node when it is at least 3.
    pub intersection_arity: Option<usize>,
    pub sightings: Vec<Sighting>,
}

impl Observation {
    pub fn is_empty(&self) -> bool {
        self.intersection_arity.is_none() && self.sightings.is_empty()
    }
}

/// Observation at `state`: intersection arity plus landmark sightings.
pub fn observe(
    graph: &NavGraph,
    state: AgentState,
    landmarks: &LandmarkSet,
    table: &ScoreTable,
    tau: f64,
) -> Observation {
    let degree = graph.out_degree(state.node);
    Observation {
        intersection_arity: (degree >= 3).then_some(degree),
        sightings: visible_sightings(table, landmarks, graph.id(state.node), tau),
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Templates {
    pub task_prefix: String,
    pub task_suffix: String,
    /// Placeholder `{n}`.
    pub intersection: String,
    /// Placeholders `{landmark}` and `{direction}`.
    pub landmark_side: String,
    /// Placeholder `{landmark}`.
    pub landmark_ahead: String,
}

impl Default for Templates {
    fn default() -> Self {
        let blank = Templates {
            task_prefix: String::new(),
            task_suffix: String::new(),
            intersection: String::new(),
            landmark_side: String::new(),
            landmark_ahead: String::new(),
        };
        blank
            .overridden_by(DEFAULT_TEMPLATES)
            .expect("bundled templates parse")
    }
}

impl Templates {
    /// Parses `key=value` lines over the defaults. Blank lines and lines
    /// starting with `#` are ignored.
    pub fn parse(text: &str) -> Result<Self, VerbalizerError> {
        Self::default().overridden_by(text)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, VerbalizerError> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|source| VerbalizerError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::parse(&text)
    }

    fn overridden_by(mut self, text: &str) -> Result<Self, VerbalizerError> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or(VerbalizerError::Syntax { line: i + 1 })?;
            let slot = match key.trim() {
                "task_prefix" => &mut self.task_prefix,
                "task_suffix" => &mut self.task_suffix,
                "intersection" => &mut self.intersection,
                "landmark_side" => &mut self.landmark_side,
                "landmark_ahead" => &mut self.landmark_ahead,
                other => {
                    return Err(VerbalizerError::UnknownKey {
                        line: i + 1,
                        key: other.to_string(),
                    })
                }
            };
            *slot = value.trim().to_string();
        }
        Ok(self)
    }

    pub fn render_sighting(&self, s: &Sighting) -> String {
        match s.direction {
            Direction::Ahead => self.landmark_ahead.replace("{landmark}", &s.landmark),
            d => self
                .landmark_side
                .replace("{landmark}", &s.landmark)
                .replace("{direction}", d.literal()),
        }
    }
}

/// Intersection sentence first, then one sentence per sighting, joined by
/// single spaces. Empty when there is nothing to report.
pub fn render_observation(obs: &Observation, templates: &Templates) -> String {
    let mut parts = Vec::with_capacity(obs.sightings.len() + 1);
    if let Some(n) = obs.intersection_arity {
        parts.push(templates.intersection.replace("{n}", &n.to_string()));
    }
    parts.extend(obs.sightings.iter().map(|s| templates.render_sighting(s)));
    parts.join(" ")
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptParts {
    pub task_prefix: String,
    pub task_suffix: String,
    pub instructions: String,
}

impl PromptParts {
    pub fn new(templates: &Templates, instructions: &str) -> Self {
        Self {
            task_prefix: templates.task_prefix.clone(),
            task_suffix: templates.task_suffix.clone(),
            instructions: instructions.trim().to_string(),
        }
    }

    fn header(&self) -> String {
        format!(
            "{}\n{}\n{}\n",
            self.task_prefix, self.instructions, self.task_suffix
        )
    }
}

fn push_step(out: &mut String, t: usize, observation: &str) {
    if !observation.is_empty() {
        out.push_str(observation);
        out.push('\n');
    }
    out.push_str(&t.to_string());
    out.push('.');
}

/// Prompt for step `history.len() + 1`, built from already rendered
/// observation texts.
pub fn assemble_prompt_from_text(
    parts: &PromptParts,
    history: &[(String, Action)],
    current: &str,
) -> String {
    let mut out = parts.header();
    for (i, (obs, action)) in history.iter().enumerate() {
        push_step(&mut out, i + 1, obs);
        out.push(' ');
        out.push_str(action.literal());
        out.push('\n');
    }
    push_step(&mut out, history.len() + 1, current);
    out
}

pub fn assemble_prompt(
    parts: &PromptParts,
    templates: &Templates,
    history: &[(Observation, Action)],
    current: &Observation,
) -> String {
    let rendered: Vec<(String, Action)> = history
        .iter()
        .map(|(o, a)| (render_observation(o, templates), *a))
        .collect();
    assemble_prompt_from_text(parts, &rendered, &render_observation(current, templates))
}

/// Incrementally grown prompt; `prompt()` always equals
/// [`assemble_prompt_from_text`] over the same steps.
#[derive(Debug, Clone)]
pub struct PromptBuilder {
    text: String,
    steps: usize,
}

impl PromptBuilder {
    pub fn new(parts: &PromptParts, first_observation: &str) -> Self {
        let mut text = parts.header();
        push_step(&mut text, 1, first_observation);
        Self { text, steps: 1 }
    }

    pub fn prompt(&self) -> &str {
        &self.text
    }

    /// Commits `action` for the current step and opens the next one.
    pub fn advance(&mut self, action: Action, next_observation: &str) {
        self.text.push(' ');
        self.text.push_str(action.literal());
        self.text.push('\n');
        self.steps += 1;
        push_step(&mut self.text, self.steps, next_observation);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sighting(l: &str, d: Direction) -> Sighting {
        Sighting {
            landmark: l.to_string(),
            direction: d,
            z: 4.0,
        }
    }

    #[test]
    fn renders_templates() {
        let t = Templates::default();
        let obs = Observation {
            intersection_arity: Some(4),
            sightings: vec![],
        };
        assert_eq!(render_observation(&obs, &t), "There is a 4-way intersection.");
        let obs = Observation {
            intersection_arity: None,
            sightings: vec![sighting("Chase", Direction::Ahead)],
        };
        assert_eq!(render_observation(&obs, &t), "There is Chase ahead.");
        let obs = Observation {
            intersection_arity: Some(3),
            sightings: vec![
                sighting("a bank", Direction::SlightlyLeft),
                sighting("a park", Direction::Right),
            ],
        };
        assert_eq!(
            render_observation(&obs, &t),
            "There is a 3-way intersection. There is a bank on your slightly left. There is a park on your right."
        );
        assert_eq!(render_observation(&Observation::default(), &t), "");
    }

    #[test]
    fn base_prompt_ends_with_step_number() {
        let parts = PromptParts::new(&Templates::default(), "Go.");
        let p = assemble_prompt_from_text(&parts, &[], "");
        assert_eq!(
            p,
            "Navigate to the described target location following the provided instructions.\nGo.\nTrajectory:\n1."
        );
    }

    #[test]
    fn template_overrides() {
        let t = Templates::parse("# c\ntask_suffix = Route:\n\nlandmark_ahead={landmark} in front.").unwrap();
        assert_eq!(t.task_suffix, "Route:");
        assert_eq!(t.render_sighting(&sighting("X", Direction::Ahead)), "X in front.");
        assert_eq!(t.intersection, Templates::default().intersection);
        assert!(matches!(
            Templates::parse("nope"),
            Err(VerbalizerError::Syntax { line: 1 })
        ));
        assert!(matches!(
            Templates::parse("\nfoo=bar"),
            Err(VerbalizerError::UnknownKey { line: 2, .. })
        ));
    }

    #[test]
    fn golden_three_steps() {
        let t = Templates::default();
        let parts = PromptParts::new(
            &t,
            "Turn right at the 4-way intersection with a red mailbox on your right. Stop in front of Chase.",
        );
        let history = vec![
            (Observation::default(), Action::Forward),
            (
                Observation {
                    intersection_arity: Some(4),
                    sightings: vec![sighting("a red mailbox", Direction::Right)],
                },
                Action::Right,
            ),
            (
                Observation {
                    intersection_arity: Some(4),
                    sightings: vec![],
                },
                Action::Forward,
            ),
        ];
        let current = Observation {
            intersection_arity: None,
            sightings: vec![sighting("Chase", Direction::Ahead)],
        };
        let p = assemble_prompt(&parts, &t, &history, &current);
        assert_eq!(p, include_str!("../tests/golden/prompt_three_steps.txt"));
    }

    fn arb_obs() -> impl Strategy<Value = Observation> {
        let dir = prop::sample::select(Direction::ALL.to_vec());
        let s = ("[A-Za-z]{1,6}( [A-Za-z]{1,6}){0,2}", dir).prop_map(|(l, d)| sighting(&l, d));
        (prop::option::of(3usize..8), prop::collection::vec(s, 0..3)).prop_map(|(a, s)| {
            Observation {
                intersection_arity: a,
                sightings: s,
            }
        })
    }

    fn arb_action() -> impl Strategy<Value = Action> {
        prop::sample::select(Action::ALL.to_vec())
    }

    proptest! {
        #[test]
        fn prefix_monotone(
            steps in prop::collection::vec((arb_obs(), arb_action()), 0..8),
            last in arb_obs(),
        ) {
            let t = Templates::default();
            let parts = PromptParts::new(&t, "Walk.");
            let mut obs: Vec<&Observation> = steps.iter().map(|(o, _)| o).collect();
            obs.push(&last);
            let mut builder = PromptBuilder::new(&parts, &render_observation(obs[0], &t));
            for k in 0..steps.len() {
                let before = assemble_prompt(&parts, &t, &steps[..k], obs[k]);
                prop_assert_eq!(builder.prompt(), before.as_str());
                let after = assemble_prompt(&parts, &t, &steps[..k + 1], obs[k + 1]);
                let joined = format!("{before} {}\n", steps[k].1.literal());
                prop_assert!(after.starts_with(&joined));
                prop_assert!(after.len() > joined.len());
                builder.advance(steps[k].1, &render_observation(obs[k + 1], &t));
            }
            let expected = assemble_prompt(&parts, &t, &steps, &last);
            prop_assert_eq!(builder.prompt(), expected.as_str());
        }

        #[test]
        fn rendering_is_clean(o in arb_obs()) {
            let text = render_observation(&o, &Templates::default());
            prop_assert!(!text.contains("  "));
            prop_assert!(!text.starts_with(' ') && !text.ends_with(' '));
            prop_assert!(!text.contains(" ."));
            prop_assert!(!text.contains(".."));
            prop_assert_eq!(text.is_empty(), o.is_empty());
        }
    }
}
