//! Linear softmax policy over hand-coded step features.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Leg, LiteralScores, Policy, PolicyError, StepContext, TrainingExample};
use crate::environment::{signed_delta, Action, TURN_THRESHOLD_DEG};
use crate::landmarks::Direction;
use crate::verbalizer::Observation;

pub const FEATURE_COUNT: usize = 30;
const DEFAULT_LEARNING_RATE: f64 = 1.0;

// Feature layout. Left/right pairs are mirrored while travelling backwards.
const BIAS: usize = 0;
const ARITY: usize = 1; // none, 3, 4, 5+
const CUE_NOW: usize = 5; // landmark of the pending turn visible: left, right
const CUE_PASSED: usize = 7; // same landmark seen last step and gone now: left, right
const OTHER_SIGHTING: usize = 9;
const GOAL_NOW: usize = 10;
const GOAL_AHEAD: usize = 11;
const GOAL_SLIGHT: usize = 12;
const GOAL_SIDE: usize = 13;
const GOAL_PASSED: usize = 14;
const SINCE_TURN: usize = 15; // 0, 1, 2-3, 4+
const FIRST_STEP: usize = 19;
const TURNS_PENDING: usize = 20;
const GOAL_AND_DONE: usize = 21;
const NEXT_AT_JUNCTION: usize = 22; // pending turn, at any intersection: left, right
const NEXT_AROUND: usize = 24;
const OVERTURNED: usize = 25;
const TURN_HERE: usize = 26; // pending turn, at the counted intersection: left, right
const OVERSHOT: usize = 28;
const REVERSED: usize = 29;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TurnKind {
    Left,
    Right,
    Around,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TurnCue {
    pub kind: TurnKind,
    pub landmark: Option<String>,
    /// Intersections to go straight through before this turn.
    pub straight_before: usize,
}

/// The turns, passed landmarks and goal named by templated instructions.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct RouteOutline {
    pub turns: Vec<TurnCue>,
    pub passed: Vec<String>,
    pub goal: Option<String>,
    /// Intersections to go straight through after the last turn.
    pub final_straight: usize,
}

impl RouteOutline {
    /// Reads sentences such as "Turn left at the 4-way intersection with X
    /// on your left.", "Follow the street to the right.", "Turn around.",
    /// "Pass Y on your left." and "Stop in front of Z."; anything else is
    /// ignored.
    pub fn parse(instructions: &str) -> Self {
        let mut out = Self::default();
        let mut straight = 0;
        for sentence in instructions.split('.').map(str::trim).filter(|s| !s.is_empty()) {
            let between = |open: &str| {
                let from = sentence.find(open)? + open.len();
                let rest = &sentence[from..];
                let to = [" on your", " slightly to your"]
                    .iter()
                    .filter_map(|m| rest.find(m))
                    .min()
                    .map_or(sentence.len(), |i| from + i);
                Some(sentence[from..to].trim().to_string())
            };
            let side = |rest: &str| {
                if rest.starts_with("left") {
                    Some(TurnKind::Left)
                } else if rest.starts_with("right") {
                    Some(TurnKind::Right)
                } else {
                    None
                }
            };
            let mut turn = |kind, landmark| {
                out.turns.push(TurnCue {
                    kind,
                    landmark,
                    straight_before: std::mem::take(&mut straight),
                })
            };
            if sentence.starts_with("Turn around") {
                turn(TurnKind::Around, None);
            } else if let Some(kind) = sentence.strip_prefix("Turn ").and_then(side) {
                turn(kind, between(" with "));
            } else if let Some(kind) = sentence.strip_prefix("Follow the street to the ").and_then(side) {
                turn(kind, None);
            } else if let Some(rest) = sentence.strip_prefix("Go straight through the next ") {
                straight += rest
                    .split_whitespace()
                    .next()
                    .and_then(|k| k.parse::<usize>().ok())
                    .unwrap_or(0);
            } else if sentence.starts_with("Pass ") {
                out.passed.extend(between("Pass "));
            } else if let Some(goal) = sentence.strip_prefix("Stop in front of ") {
                out.goal = Some(goal.trim().to_string());
            }
        }
        out.final_straight = straight;
        out
    }
}

/// How far along its outline an agent is, judged from the edges it has
/// travelled.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct RouteProgress {
    pub turns: usize,
    /// Intersections gone straight through since the last turn.
    pub junctions: usize,
    /// Travelling against the direction of the last turn.
    pub reversed: bool,
}

impl RouteProgress {
    pub fn track(outline: &RouteOutline, start_heading_deg: f64, legs: &[Leg]) -> Self {
        let mut p = Self::default();
        let mut heading = start_heading_deg;
        for (i, leg) in legs.iter().enumerate() {
            let delta = signed_delta(heading, leg.heading_deg).abs();
            heading = leg.heading_deg;
            let pending = outline.turns.get(p.turns).map(|t| t.kind);
            if delta > 180.0 - TURN_THRESHOLD_DEG {
                if pending == Some(TurnKind::Around) && !p.reversed {
                    p.turns += 1;
                    p.junctions = 0;
                } else {
                    p.reversed = !p.reversed;
                    p.junctions = p.junctions.saturating_sub(1);
                }
            } else if delta > TURN_THRESHOLD_DEG {
                p.turns += 1;
                p.junctions = 0;
                p.reversed = false;
            } else if i > 0 && leg.from_degree >= 3 {
                if p.reversed {
                    p.junctions = p.junctions.saturating_sub(1);
                } else {
                    p.junctions += 1;
                }
            }
        }
        p
    }
}

fn side_slot(kind: TurnKind, reversed: bool) -> Option<usize> {
    match (kind, reversed) {
        (TurnKind::Left, false) | (TurnKind::Right, true) => Some(0),
        (TurnKind::Right, false) | (TurnKind::Left, true) => Some(1),
        (TurnKind::Around, _) => None,
    }
}

/// Feature vector of a step.
pub fn features(ctx: &StepContext) -> [f64; FEATURE_COUNT] {
    let mut f = [0.0; FEATURE_COUNT];
    f[BIAS] = 1.0;
    let outline = RouteOutline::parse(&ctx.instructions);
    let progress = RouteProgress::track(&outline, ctx.start_heading_deg, &ctx.legs);
    let obs = &ctx.observation;
    let at_junction = obs.intersection_arity.is_some();
    f[ARITY
        + match obs.intersection_arity {
            None => 0,
            Some(3) => 1,
            Some(4) => 2,
            Some(_) => 3,
        }] = 1.0;

    let goal = ctx.goal_landmark.as_deref().or(outline.goal.as_deref());
    let pending = outline.turns.get(progress.turns);
    let cue = pending.and_then(|t| t.landmark.as_deref());
    let slot = pending.and_then(|t| side_slot(t.kind, progress.reversed));
    let sees = |o: &Observation, name: &str| o.sightings.iter().any(|s| s.landmark == name);

    for s in &obs.sightings {
        if Some(s.landmark.as_str()) == goal {
            f[GOAL_NOW] = 1.0;
            match s.direction {
                Direction::Ahead => f[GOAL_AHEAD] = 1.0,
                Direction::Left | Direction::Right => f[GOAL_SIDE] = 1.0,
                Direction::SlightlyLeft | Direction::SlightlyRight => f[GOAL_SLIGHT] = 1.0,
            }
        } else if Some(s.landmark.as_str()) == cue {
            if let Some(k) = slot {
                f[CUE_NOW + k] = 1.0;
            }
        } else {
            f[OTHER_SIGHTING] = 1.0;
        }
    }
    if let Some(prev) = &ctx.prev_observation {
        if goal.is_some_and(|g| sees(prev, g) && !sees(obs, g)) {
            f[GOAL_PASSED] = 1.0;
        }
        if let (Some(c), Some(k)) = (cue, slot) {
            if sees(prev, c) && !sees(obs, c) && ctx.steps_since_turn >= 1 {
                f[CUE_PASSED + k] = 1.0;
            }
        }
    }

    f[SINCE_TURN
        + match ctx.steps_since_turn {
            0 => 0,
            1 => 1,
            2 | 3 => 2,
            _ => 3,
        }] = 1.0;
    if ctx.t == 1 {
        f[FIRST_STEP] = 1.0;
    }
    let expected = pending.map_or(outline.final_straight, |t| t.straight_before);
    match pending {
        Some(turn) => {
            f[TURNS_PENDING] = 1.0;
            if turn.kind == TurnKind::Around {
                f[NEXT_AROUND] = 1.0;
            }
            if let (Some(k), true) = (slot, at_junction) {
                f[NEXT_AT_JUNCTION + k] = 1.0;
                if progress.junctions == expected {
                    f[TURN_HERE + k] = 1.0;
                }
            }
        }
        None => {
            if f[GOAL_NOW] == 1.0 {
                f[GOAL_AND_DONE] = 1.0;
            }
        }
    }
    if progress.junctions > expected {
        f[OVERSHOT] = 1.0;
    }
    if progress.reversed {
        f[REVERSED] = 1.0;
    }
    if progress.turns > outline.turns.len() {
        f[OVERTURNED] = 1.0;
    }
    f
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToyPolicy {
    /// One row of `FEATURE_COUNT` weights per action literal.
    weights: Vec<Vec<f64>>,
    pub learning_rate: f64,
}

impl Default for ToyPolicy {
    fn default() -> Self {
        Self::new(DEFAULT_LEARNING_RATE)
    }
}

impl ToyPolicy {
    /// Zero weights.
    pub fn new(learning_rate: f64) -> Self {
        Self {
            weights: vec![vec![0.0; FEATURE_COUNT]; 5],
            learning_rate,
        }
    }

    pub fn weights(&self) -> Vec<f64> {
        self.weights.concat()
    }

    /// Sets weights from a flat, action-major vector of length
    /// `5 * FEATURE_COUNT`.
    pub fn set_weights(&mut self, flat: &[f64]) {
        assert_eq!(flat.len(), 5 * FEATURE_COUNT, "weight vector length");
        self.weights = flat.chunks(FEATURE_COUNT).map(<[f64]>::to_vec).collect();
    }

    fn logits(&self, phi: &[f64; FEATURE_COUNT]) -> [f64; 5] {
        let mut z = [0.0; 5];
        for (a, row) in self.weights.iter().enumerate() {
            z[a] = row.iter().zip(phi).map(|(w, x)| w * x).sum();
        }
        z
    }

    pub fn scores_for(&self, ctx: &StepContext) -> LiteralScores {
        LiteralScores::new(LiteralScores::new(self.logits(&features(ctx))).log_softmax())
    }

    /// Mean cross-entropy over `batch` and its gradient with respect to the
    /// flat weight vector.
    pub fn loss_and_gradient(&self, batch: &[TrainingExample]) -> (f64, Vec<f64>) {
        let mut grad = vec![0.0; 5 * FEATURE_COUNT];
        if batch.is_empty() {
            return (0.0, grad);
        }
        let mut loss = 0.0;
        for ex in batch {
            let phi = features(&ex.context);
            let logp = LiteralScores::new(self.logits(&phi)).log_softmax();
            let r = ex.reference.index();
            loss -= logp[r];
            for (a, lp) in logp.iter().enumerate() {
                let coef = lp.exp() - if a == r { 1.0 } else { 0.0 };
                for (k, x) in phi.iter().enumerate() {
                    grad[a * FEATURE_COUNT + k] += coef * x;
                }
            }
        }
        let n = batch.len() as f64;
        grad.iter_mut().for_each(|g| *g /= n);
        (loss / n, grad)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("weights serialize")
    }

    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        let p: ToyPolicy = serde_json::from_str(text)?;
        if p.weights.len() != 5 || p.weights.iter().any(|r| r.len() != FEATURE_COUNT) {
            return Err(serde::de::Error::custom(format!(
                "expected 5 rows of {FEATURE_COUNT} weights"
            )));
        }
        Ok(p)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, PolicyError> {
        let path = path.as_ref();
        let err = |message: String| PolicyError::Weights {
            path: path.display().to_string(),
            message,
        };
        let text = fs::read_to_string(path).map_err(|e| err(e.to_string()))?;
        Self::from_json(&text).map_err(|e| err(e.to_string()))
    }

    pub fn store(&self, path: impl AsRef<Path>) -> Result<(), PolicyError> {
        let path = path.as_ref();
        fs::write(path, self.to_json()).map_err(|e| PolicyError::Weights {
            path: path.display().to_string(),
            message: e.to_string(),
        })
    }

    /// Most likely action under the current weights.
    pub fn act(&self, ctx: &StepContext) -> Action {
        self.scores_for(ctx).decode()
    }
}

impl Policy for ToyPolicy {
    fn name(&self) -> &str {
        "toy"
    }

    fn score(&self, _: &str, ctx: &StepContext) -> Result<LiteralScores, PolicyError> {
        Ok(self.scores_for(ctx))
    }

    fn loss(&self, batch: &[TrainingExample]) -> Result<f64, PolicyError> {
        Ok(self.loss_and_gradient(batch).0)
    }

    /// One gradient step on the mean cross-entropy.
    fn update(&mut self, batch: &[TrainingExample]) -> Result<(), PolicyError> {
        let (_, grad) = self.loss_and_gradient(batch);
        let mut w = self.weights();
        for (wi, gi) in w.iter_mut().zip(&grad) {
            *wi -= self.learning_rate * gi;
        }
        self.set_weights(&w);
        Ok(())
    }
}
