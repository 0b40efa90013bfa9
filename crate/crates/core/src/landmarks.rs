//! Landmark pipeline: few-shot extraction prompts, response parsing, score
//! tables and the standardized-score visibility classifier.
//!
//! A landmark `l` seen in view `p` is *visible* when its standardized
//! similarity `z = (raw(l, p) - mu_l) / sigma_l` exceeds the threshold
//! `tau`, where `mu_l` and `sigma_l` describe the landmark's score
//! distribution over a reference set of views. Five views are evaluated per
//! step at offsets −90°, −45°, 0°, +45° and +90° from the agent's heading.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Default visibility threshold on the standardized score.
pub const DEFAULT_TAU: f64 = 3.5;

/// View offsets in degrees relative to the agent's heading.
pub const VIEW_OFFSETS: [i32; 5] = [-90, -45, 0, 45, 90];

const MAP2SEQ_PROMPT: &str = include_str!("../data/extraction_map2seq.txt");
const TOUCHDOWN_PROMPT: &str = include_str!("../data/extraction_touchdown.txt");
const INSTRUCTIONS_SLOT: &str = "{instructions}";

#[derive(Debug, Error)]
pub enum LandmarkError {
    #[error("instructions are empty")]
    EmptyInstructions,
    #[error("landmark text is empty")]
    EmptyLandmark,
    #[error("could not parse landmark list from response: {raw:?}")]
    Unparseable { raw: String },
    #[error("no statistics for landmark {0:?}")]
    UnknownLandmark(String),
    #[error("landmark {landmark:?}: sigma must be positive and finite, got {sigma}")]
    BadSigma { landmark: String, sigma: f64 },
    #[error("landmark {landmark:?}: non-finite {what}")]
    NotFinite { landmark: String, what: &'static str },
    #[error("offset {0} is not one of -90, -45, 0, 45, 90")]
    BadOffset(i32),
    #[error("{file} line {line}: {message}")]
    Parse {
        file: String,
        line: usize,
        message: String,
    },
    #[error("{path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
}

/// Ordered, non-empty landmark phrases as extracted from instructions.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct LandmarkSet(Vec<String>);

impl LandmarkSet {
    pub fn new(landmarks: Vec<String>) -> Result<Self, LandmarkError> {
        if landmarks.iter().any(|l| l.trim().is_empty()) {
            return Err(LandmarkError::EmptyLandmark);
        }
        Ok(Self(landmarks))
    }

    pub fn empty() -> Self {
        Self(Vec::new())
    }

    pub fn iter(&self) -> impl Iterator<Item = &str> {
        self.0.iter().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn last(&self) -> Option<&str> {
        self.0.last().map(String::as_str)
    }

    pub fn into_vec(self) -> Vec<String> {
        self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetStyle {
    #[default]
    Touchdown,
    Map2seq,
}

impl FromStr for DatasetStyle {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "touchdown" => Ok(Self::Touchdown),
            "map2seq" => Ok(Self::Map2seq),
            other => Err(format!("unknown dataset style {other:?} (expected touchdown|map2seq)")),
        }
    }
}

/// Five-shot extraction prompt with `instructions` placed before the final
/// `Landmarks:` marker.
pub fn build_extraction_prompt(
    instructions: &str,
    style: DatasetStyle,
) -> Result<String, LandmarkError> {
    let instructions = instructions.trim();
    if instructions.is_empty() {
        return Err(LandmarkError::EmptyInstructions);
    }
    let template = match style {
        DatasetStyle::Touchdown => TOUCHDOWN_PROMPT,
        DatasetStyle::Map2seq => MAP2SEQ_PROMPT,
    };
    Ok(template.trim_end().replace(INSTRUCTIONS_SLOT, instructions))
}

/// Parses a numbered landmark list (`1. a market`). A lone `None` yields an
/// empty set; parsing stops at the first blank line, or any other line,
/// once the list has started.
pub fn parse_extraction_response(resp: &str) -> Result<LandmarkSet, LandmarkError> {
    let mut found = Vec::new();
    for line in resp.lines().map(str::trim) {
        if found.is_empty() {
            if line.is_empty() {
                continue;
            }
            if line.eq_ignore_ascii_case("none") {
                return Ok(LandmarkSet::empty());
            }
        }
        match numbered_item(line) {
            Some(item) => found.push(item.to_string()),
            None if found.is_empty() => continue,
            None => break,
        }
    }
    if found.is_empty() {
        return Err(LandmarkError::Unparseable {
            raw: resp.to_string(),
        });
    }
    LandmarkSet::new(found)
}

fn numbered_item(line: &str) -> Option<&str> {
    let digits = line.find(|c: char| !c.is_ascii_digit())?;
    if digits == 0 {
        return None;
    }
    let rest = line[digits..].strip_prefix('.')?;
    let item = rest.trim();
    (!item.is_empty() && rest.starts_with(char::is_whitespace)).then_some(item)
}

/// Where a landmark appears relative to the agent's heading.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    Left,
    SlightlyLeft,
    Ahead,
    SlightlyRight,
    Right,
}

impl Direction {
    pub const ALL: [Direction; 5] = [
        Direction::Left,
        Direction::SlightlyLeft,
        Direction::Ahead,
        Direction::SlightlyRight,
        Direction::Right,
    ];

    pub fn literal(self) -> &'static str {
        match self {
            Direction::Left => "left",
            Direction::SlightlyLeft => "slightly left",
            Direction::Ahead => "ahead",
            Direction::SlightlyRight => "slightly right",
            Direction::Right => "right",
        }
    }

    pub fn offset_deg(self) -> i32 {
        VIEW_OFFSETS[self.index()]
    }

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_offset(offset_deg: i32) -> Option<Self> {
        VIEW_OFFSETS
            .iter()
            .position(|&o| o == offset_deg)
            .map(|i| Self::ALL[i])
    }
}

impl fmt::Display for Direction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.literal())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LandmarkStats {
    pub mu: f64,
    pub sigma: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatsRow {
    pub landmark: String,
    pub mu: f64,
    pub sigma: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawScoreRow {
    pub landmark: String,
    pub node: String,
    pub offset_deg: i32,
    pub score: f64,
}

/// Per-landmark score distribution plus sparse raw scores keyed by
/// `(landmark, node, offset)`. Absent raw scores mean "not visible".
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ScoreTable {
    stats: BTreeMap<String, LandmarkStats>,
    raw: HashMap<String, HashMap<String, [Option<f64>; 5]>>,
}

fn offset_slot(offset_deg: i32) -> Result<usize, LandmarkError> {
    Direction::from_offset(offset_deg)
        .map(Direction::index)
        .ok_or(LandmarkError::BadOffset(offset_deg))
}

impl ScoreTable {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert_stats(&mut self, landmark: &str, mu: f64, sigma: f64) -> Result<(), LandmarkError> {
        if !mu.is_finite() {
            return Err(LandmarkError::NotFinite {
                landmark: landmark.to_string(),
                what: "mu",
            });
        }
        if !(sigma.is_finite() && sigma > 0.0) {
            return Err(LandmarkError::BadSigma {
                landmark: landmark.to_string(),
                sigma,
            });
        }
        self.stats.insert(landmark.to_string(), LandmarkStats { mu, sigma });
        Ok(())
    }

    /// Stores a raw score. The landmark must already have statistics.
    pub fn insert_raw(
        &mut self,
        landmark: &str,
        node: &str,
        offset_deg: i32,
        score: f64,
    ) -> Result<(), LandmarkError> {
        let slot = offset_slot(offset_deg)?;
        if !self.stats.contains_key(landmark) {
            return Err(LandmarkError::UnknownLandmark(landmark.to_string()));
        }
        if !score.is_finite() {
            return Err(LandmarkError::NotFinite {
                landmark: landmark.to_string(),
                what: "score",
            });
        }
        self.raw
            .entry(landmark.to_string())
            .or_default()
            .entry(node.to_string())
            .or_default()[slot] = Some(score);
        Ok(())
    }

    pub fn stats(&self, landmark: &str) -> Option<LandmarkStats> {
        self.stats.get(landmark).copied()
    }

    pub fn landmarks(&self) -> impl Iterator<Item = &str> {
        self.stats.keys().map(String::as_str)
    }

    pub fn raw_score(&self, landmark: &str, node: &str, offset_deg: i32) -> Option<f64> {
        let slot = offset_slot(offset_deg).ok()?;
        self.raw.get(landmark)?.get(node)?[slot]
    }

    pub fn raw_len(&self) -> usize {
        self.raw
            .values()
            .flat_map(|m| m.values())
            .map(|s| s.iter().flatten().count())
            .sum()
    }

    pub fn stats_rows(&self) -> Vec<StatsRow> {
        self.stats
            .iter()
            .map(|(l, s)| StatsRow {
                landmark: l.clone(),
                mu: s.mu,
                sigma: s.sigma,
            })
            .collect()
    }

    /// Raw rows sorted by landmark, node and offset.
    pub fn raw_rows(&self) -> Vec<RawScoreRow> {
        let mut rows = Vec::with_capacity(self.raw_len());
        for (l, by_node) in &self.raw {
            for (n, slots) in by_node {
                for (i, s) in slots.iter().enumerate() {
                    if let Some(score) = s {
                        rows.push(RawScoreRow {
                            landmark: l.clone(),
                            node: n.clone(),
                            offset_deg: VIEW_OFFSETS[i],
                            score: *score,
                        });
                    }
                }
            }
        }
        rows.sort_by(|a, b| {
            (&a.landmark, &a.node, a.offset_deg).cmp(&(&b.landmark, &b.node, b.offset_deg))
        });
        rows
    }

    pub fn stats_jsonl(&self) -> String {
        to_jsonl(&self.stats_rows())
    }

    pub fn raw_jsonl(&self) -> String {
        to_jsonl(&self.raw_rows())
    }

    pub fn from_jsonl(stats: &str, raw: &str) -> Result<Self, LandmarkError> {
        let mut table = Self::new();
        for (line, row) in parse_jsonl::<StatsRow>("stats", stats)? {
            table.insert_stats(&row.landmark, row.mu, row.sigma).map_err(|e| {
                LandmarkError::Parse {
                    file: "stats".into(),
                    line,
                    message: e.to_string(),
                }
            })?;
        }
        for (line, row) in parse_jsonl::<RawScoreRow>("raw scores", raw)? {
            table
                .insert_raw(&row.landmark, &row.node, row.offset_deg, row.score)
                .map_err(|e| LandmarkError::Parse {
                    file: "raw scores".into(),
                    line,
                    message: e.to_string(),
                })?;
        }
        Ok(table)
    }

    pub fn load(stats_path: impl AsRef<Path>, raw_path: impl AsRef<Path>) -> Result<Self, LandmarkError> {
        Self::from_jsonl(&read(stats_path.as_ref())?, &read(raw_path.as_ref())?)
    }

    pub fn store(&self, stats_path: impl AsRef<Path>, raw_path: impl AsRef<Path>) -> Result<(), LandmarkError> {
        write(stats_path.as_ref(), &self.stats_jsonl())?;
        write(raw_path.as_ref(), &self.raw_jsonl())
    }
}

fn read(path: &Path) -> Result<String, LandmarkError> {
    fs::read_to_string(path).map_err(|source| LandmarkError::Io {
        path: path.display().to_string(),
        source,
    })
}

fn write(path: &Path, text: &str) -> Result<(), LandmarkError> {
    fs::write(path, text).map_err(|source| LandmarkError::Io {
        path: path.display().to_string(),
        source,
    })
}

fn to_jsonl<T: Serialize>(rows: &[T]) -> String {
    let mut out = String::new();
    for r in rows {
        out.push_str(&serde_json::to_string(r).expect("row serializes"));
        out.push('\n');
    }
    out
}

fn parse_jsonl<T: for<'de> Deserialize<'de>>(
    file: &str,
    text: &str,
) -> Result<Vec<(usize, T)>, LandmarkError> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l)
                .map(|row| (i + 1, row))
                .map_err(|e| LandmarkError::Parse {
                    file: file.to_string(),
                    line: i + 1,
                    message: e.to_string(),
                })
        })
        .collect()
}

/// Standardized score of `landmark` at `(node, offset)`, or `None` when the
/// table holds no raw score there.
pub fn z_score(
    table: &ScoreTable,
    landmark: &str,
    node: &str,
    offset_deg: i32,
) -> Result<Option<f64>, LandmarkError> {
    let stats = table
        .stats(landmark)
        .ok_or_else(|| LandmarkError::UnknownLandmark(landmark.to_string()))?;
    offset_slot(offset_deg)?;
    Ok(table
        .raw_score(landmark, node, offset_deg)
        .map(|raw| (raw - stats.mu) / stats.sigma))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sighting {
    pub landmark: String,
    pub direction: Direction,
    pub z: f64,
}

// Scan order: ties on z go to the offset closest to 0, then the negative one.
const TIE_ORDER: [Direction; 5] = [
    Direction::Ahead,
    Direction::SlightlyLeft,
    Direction::SlightlyRight,
    Direction::Left,
    Direction::Right,
];

/// One sighting per landmark whose best view scores `z > tau`, at the
/// offset with the highest z. Landmarks without statistics are never
/// visible.
pub fn visible_sightings(
    table: &ScoreTable,
    landmarks: &LandmarkSet,
    node: &str,
    tau: f64,
) -> Vec<Sighting> {
    let mut out = Vec::new();
    for landmark in landmarks.iter() {
        let mut best: Option<(Direction, f64)> = None;
        for dir in TIE_ORDER {
            let Ok(Some(z)) = z_score(table, landmark, node, dir.offset_deg()) else {
                continue;
            };
            if z > tau && best.is_none_or(|(_, bz)| z > bz) {
                best = Some((dir, z));
            }
        }
        if let Some((direction, z)) = best {
            out.push(Sighting {
                landmark: landmark.to_string(),
                direction,
                z,
            });
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn table() -> ScoreTable {
        let mut t = ScoreTable::new();
        t.insert_stats("x", 10.0, 2.0).unwrap();
        t
    }

    #[test]
    fn extraction_prompt_ends_with_marker() {
        for style in [DatasetStyle::Touchdown, DatasetStyle::Map2seq] {
            let p = build_extraction_prompt("Turn left at the bank.", style).unwrap();
            assert!(p.ends_with("Turn left at the bank.\nLandmarks:"), "{p}");
            assert!(!p.contains(INSTRUCTIONS_SLOT));
        }
        assert!(build_extraction_prompt("  ", DatasetStyle::Touchdown).is_err());
    }

    #[test]
    fn extraction_prompts_differ_only_in_instructions() {
        let a = build_extraction_prompt("AAA", DatasetStyle::Map2seq).unwrap();
        let b = build_extraction_prompt("BBB", DatasetStyle::Map2seq).unwrap();
        assert_eq!(a.replace("AAA", "BBB"), b);
        assert_eq!(a.len(), b.len());
    }

    #[test]
    fn parses_numbered_list() {
        let set =
            parse_extraction_response("1. a market\n2. a cathedral\n3. a Delicatessen\n4. a fire hall")
                .unwrap();
        assert_eq!(
            set.into_vec(),
            vec!["a market", "a cathedral", "a Delicatessen", "a fire hall"]
        );
    }

    #[test]
    fn parses_none_and_stops_at_blank() {
        assert!(parse_extraction_response("None").unwrap().is_empty());
        assert!(parse_extraction_response("\n None \n").unwrap().is_empty());
        let set = parse_extraction_response("1. x\n\n2. y").unwrap();
        assert_eq!(set.into_vec(), vec!["x"]);
        let set = parse_extraction_response(" 1. x\n2. y\nGo straight ahead.\n3. z").unwrap();
        assert_eq!(set.into_vec(), vec!["x", "y"]);
    }

    #[test]
    fn unparseable_response_keeps_raw_text() {
        match parse_extraction_response("I cannot help with that.") {
            Err(LandmarkError::Unparseable { raw }) => assert_eq!(raw, "I cannot help with that."),
            other => panic!("unexpected {other:?}"),
        }
        assert!(parse_extraction_response("").is_err());
        assert!(parse_extraction_response("1.5 km").is_err());
    }

    #[test]
    fn z_score_arithmetic() {
        let mut t = table();
        t.insert_raw("x", "n", 0, 17.0).unwrap();
        t.insert_raw("x", "n", 45, 10.0).unwrap();
        assert_eq!(z_score(&t, "x", "n", 0).unwrap(), Some(3.5));
        assert_eq!(z_score(&t, "x", "n", 45).unwrap(), Some(0.0));
        assert_eq!(z_score(&t, "x", "n", -45).unwrap(), None);
        assert!(matches!(
            z_score(&t, "y", "n", 0),
            Err(LandmarkError::UnknownLandmark(_))
        ));
    }

    #[test]
    fn sigma_must_be_positive() {
        let mut t = ScoreTable::new();
        let err = t.insert_stats("flat", 1.0, 0.0).unwrap_err();
        assert!(err.to_string().contains("flat"));
        assert!(t.insert_raw("flat", "n", 0, 1.0).is_err());
        assert!(table().insert_raw("x", "n", 30, 1.0).is_err());
    }

    #[test]
    fn sighting_picks_max_z() {
        let mut t = table();
        // z = 4.0 at +45 only.
        t.insert_raw("x", "n", 45, 18.0).unwrap();
        let lms = LandmarkSet::new(vec!["x".into()]).unwrap();
        let s = visible_sightings(&t, &lms, "n", 3.5);
        assert_eq!(s.len(), 1);
        assert_eq!(s[0].direction, Direction::SlightlyRight);

        let mut t = table();
        t.insert_raw("x", "n", -45, 17.2).unwrap(); // z 3.6
        t.insert_raw("x", "n", 0, 17.8).unwrap(); // z 3.9
        let s = visible_sightings(&t, &lms, "n", 3.5);
        assert_eq!(s[0].direction, Direction::Ahead);
        assert!(visible_sightings(&t, &lms, "n", 4.0).is_empty());
    }

    #[test]
    fn sighting_ties_prefer_center_then_left() {
        let lms = LandmarkSet::new(vec!["x".into()]).unwrap();
        let mut t = table();
        t.insert_raw("x", "n", 45, 20.0).unwrap();
        t.insert_raw("x", "n", -45, 20.0).unwrap();
        t.insert_raw("x", "n", 90, 20.0).unwrap();
        assert_eq!(
            visible_sightings(&t, &lms, "n", 0.0)[0].direction,
            Direction::SlightlyLeft
        );
        t.insert_raw("x", "n", 0, 20.0).unwrap();
        assert_eq!(
            visible_sightings(&t, &lms, "n", 0.0)[0].direction,
            Direction::Ahead
        );
    }

    #[test]
    fn infinite_thresholds() {
        let mut t = table();
        t.insert_raw("x", "n", -90, -1e6).unwrap();
        let lms = LandmarkSet::new(vec!["x".into(), "unknown".into()]).unwrap();
        assert!(visible_sightings(&t, &lms, "n", f64::INFINITY).is_empty());
        let s = visible_sightings(&t, &lms, "n", f64::NEG_INFINITY);
        assert_eq!(s.len(), 1);
        assert_eq!(s[0].direction, Direction::Left);
    }

    #[test]
    fn jsonl_round_trip() {
        let mut t = table();
        t.insert_raw("x", "n1", -90, 1.25).unwrap();
        t.insert_raw("x", "n0", 0, 12.5).unwrap();
        let back = ScoreTable::from_jsonl(&t.stats_jsonl(), &t.raw_jsonl()).unwrap();
        assert_eq!(back, t);
        let err = ScoreTable::from_jsonl(&t.stats_jsonl(), "{\"landmark\":\"q\",\"node\":\"n\",\"offset_deg\":0,\"score\":1.0}")
            .unwrap_err();
        assert!(matches!(err, LandmarkError::Parse { line: 1, .. }));
    }

    #[test]
    fn empty_landmark_rejected() {
        assert!(LandmarkSet::new(vec!["ok".into(), " ".into()]).is_err());
    }
}
