//! Action scoring and decoding.
//!
//! A [`Policy`] scores the five action literals given the current prompt and
//! a structured [`StepContext`]; [`decode_action`] picks the highest score.

mod external;
mod mock_server;
mod oracle;
pub mod toy;

use std::collections::HashMap;
use std::io::{BufRead, Write};
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use crate::environment::{Action, AgentState};
use crate::nav_graph::NodeIdx;
use crate::verbalizer::Observation;

pub use external::{
    complete_text, external_lm_score, Cassette, CassetteMode, ExternalLmConfig, ExternalPolicy,
    DEFAULT_ATTEMPTS,
};
pub use mock_server::{MockLmServer, MockReply};
pub use oracle::{oracle_next_action, DistanceTable, Oracle, OracleError, OraclePolicy};
pub use toy::{ToyPolicy, FEATURE_COUNT};

#[derive(Debug, Error)]
pub enum PolicyError {
    #[error("endpoint {url} failed after {attempts} attempts: {message}")]
    Transport {
        url: String,
        attempts: u32,
        message: String,
    },
    #[error("malformed endpoint response: {0}")]
    Malformed(String),
    #[error("cassette has no response for prompt hash {0}")]
    CassetteMiss(String),
    #[error("cassette {path}: {message}")]
    Cassette { path: String, message: String },
    #[error(transparent)]
    Oracle(#[from] OracleError),
    #[error("{0}")]
    Input(String),
    #[error("weights file {path}: {message}")]
    Weights { path: String, message: String },
}

/// One score per action literal, indexed in [`Action::ALL`] order.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LiteralScores([f64; 5]);

impl LiteralScores {
    pub fn new(scores: [f64; 5]) -> Self {
        Self(scores)
    }

    pub fn uniform() -> Self {
        Self([0.0; 5])
    }

    /// 0 for `action`, −1 for every other literal.
    pub fn indicator(action: Action) -> Self {
        let mut s = [-1.0; 5];
        s[action.index()] = 0.0;
        Self(s)
    }

    pub fn get(&self, action: Action) -> f64 {
        self.0[action.index()]
    }

    pub fn as_array(&self) -> [f64; 5] {
        self.0
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|s| s.is_finite())
    }

    pub fn decode(&self) -> Action {
        decode_action(self)
    }

    pub fn log_softmax(&self) -> [f64; 5] {
        let max = self.0.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + self.0.iter().map(|s| (s - max).exp()).sum::<f64>().ln();
        self.0.map(|s| s - lse)
    }

    /// Cross-entropy of the softmax over these scores against `reference`.
    pub fn cross_entropy(&self, reference: Action) -> f64 {
        -self.log_softmax()[reference.index()]
    }
}

impl Serialize for LiteralScores {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        use serde::ser::SerializeMap;
        let mut m = s.serialize_map(Some(5))?;
        for a in Action::ALL {
            m.serialize_entry(a.literal(), &self.get(a))?;
        }
        m.end()
    }
}

impl<'de> Deserialize<'de> for LiteralScores {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let map = HashMap::<String, f64>::deserialize(d)?;
        let mut out = [0.0; 5];
        for a in Action::ALL {
            out[a.index()] = *map
                .get(a.literal())
                .ok_or_else(|| serde::de::Error::custom(format!("missing score for {a}")))?;
        }
        if map.len() != 5 {
            return Err(serde::de::Error::custom("unexpected score keys"));
        }
        Ok(Self(out))
    }
}

/// Highest-scoring action; ties go to the earlier literal in
/// forward, left, right, turn_around, stop order.
pub fn decode_action(scores: &LiteralScores) -> Action {
    let mut best = Action::Forward;
    for a in Action::ALL {
        if scores.get(a) > scores.get(best) {
            best = a;
        }
    }
    best
}

/// Structured view of the step a policy is asked to score.
#[derive(Debug, Clone, PartialEq)]
pub struct StepContext {
    /// 1-based step number.
    pub t: usize,
    pub state: AgentState,
    pub target: NodeIdx,
    pub observation: Observation,
    pub prev_observation: Option<Observation>,
    /// Last landmark of the instance, which names the goal.
    pub goal_landmark: Option<String>,
    /// Actions taken since the most recent turn action.
    pub steps_since_turn: usize,
    pub instructions: Arc<str>,
    pub start_heading_deg: f64,
    /// Edges travelled so far, in order.
    pub legs: Vec<Leg>,
}

/// One edge travelled by `Forward`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Leg {
    /// Out-degree of the node the edge leaves.
    pub from_degree: usize,
    pub heading_deg: f64,
}

impl StepContext {
    /// `steps_since_turn` before any action has been taken.
    pub const NO_TURN_YET: usize = 1_000;
}

/// A step paired with the action the policy should have taken.
#[derive(Debug, Clone)]
pub struct TrainingExample {
    pub prompt: String,
    pub context: StepContext,
    pub reference: Action,
}

pub trait Policy: Send + Sync {
    fn name(&self) -> &str;

    fn score(&self, prompt: &str, ctx: &StepContext) -> Result<LiteralScores, PolicyError>;

    /// Mean cross-entropy of the softmax over scores against the references.
    fn loss(&self, batch: &[TrainingExample]) -> Result<f64, PolicyError> {
        if batch.is_empty() {
            return Ok(0.0);
        }
        let mut total = 0.0;
        for ex in batch {
            total += self.score(&ex.prompt, &ex.context)?.cross_entropy(ex.reference);
        }
        Ok(total / batch.len() as f64)
    }

    /// Learns from a batch. Frozen policies ignore it.
    fn update(&mut self, _batch: &[TrainingExample]) -> Result<(), PolicyError> {
        Ok(())
    }
}

/// Always moves forward.
#[derive(Debug, Clone, Copy, Default)]
pub struct ForwardPolicy;

impl Policy for ForwardPolicy {
    fn name(&self) -> &str {
        "forward"
    }

    fn score(&self, _: &str, _: &StepContext) -> Result<LiteralScores, PolicyError> {
        Ok(LiteralScores::indicator(Action::Forward))
    }
}

/// Replays a fixed action list by step number, then stops.
#[derive(Debug, Clone)]
pub struct ScriptedPolicy {
    actions: Vec<Action>,
}

impl ScriptedPolicy {
    pub fn new(actions: Vec<Action>) -> Self {
        Self { actions }
    }
}

impl Policy for ScriptedPolicy {
    fn name(&self) -> &str {
        "scripted"
    }

    fn score(&self, _: &str, ctx: &StepContext) -> Result<LiteralScores, PolicyError> {
        let a = self.actions.get(ctx.t - 1).copied().unwrap_or(Action::Stop);
        Ok(LiteralScores::indicator(a))
    }
}

/// Shows each prompt and reads an action literal from a line-based input.
pub struct InteractivePolicy {
    io: Mutex<(Box<dyn BufRead + Send>, Box<dyn Write + Send>)>,
}

impl InteractivePolicy {
    pub fn new(input: Box<dyn BufRead + Send>, output: Box<dyn Write + Send>) -> Self {
        Self {
            io: Mutex::new((input, output)),
        }
    }

    pub fn stdio() -> Self {
        Self::new(
            Box::new(std::io::BufReader::new(std::io::stdin())),
            Box::new(std::io::stdout()),
        )
    }
}

impl Policy for InteractivePolicy {
    fn name(&self) -> &str {
        "interactive"
    }

    fn score(&self, prompt: &str, _: &StepContext) -> Result<LiteralScores, PolicyError> {
        let mut guard = self.io.lock().expect("interactive io lock");
        let (input, output) = &mut *guard;
        let io_err = |e: std::io::Error| PolicyError::Input(e.to_string());
        writeln!(output, "{prompt}").map_err(io_err)?;
        loop {
            write!(output, "action [forward|left|right|turn_around|stop]> ").map_err(io_err)?;
            output.flush().map_err(io_err)?;
            let mut line = String::new();
            if input.read_line(&mut line).map_err(io_err)? == 0 {
                return Err(PolicyError::Input("input closed".into()));
            }
            match line.parse::<Action>() {
                Ok(a) => return Ok(LiteralScores::indicator(a)),
                Err(e) => writeln!(output, "{e}").map_err(io_err)?,
            }
        }
    }
}
