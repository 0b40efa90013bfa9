//! Client for an external text-completion scoring endpoint, with a
//! record/replay cassette.
//!
//! Scoring request: `POST {"prompt": str, "continuations": [str; 5]}`,
//! answered by `{"logprobs": [f64; 5]}`. Continuations are the action
//! literals preceded by a space, in `forward, left, right, turn_around,
//! stop` order. Completion request: `POST {"prompt": str, "max_tokens": n}`,
//! answered by `{"text": str}`.

use std::collections::HashMap;
use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Mutex;
use std::thread::sleep;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use super::{LiteralScores, Policy, PolicyError, StepContext};
use crate::environment::Action;

pub const DEFAULT_ATTEMPTS: u32 = 3;

#[derive(Debug, Clone, PartialEq)]
pub struct ExternalLmConfig {
    pub url: String,
    pub timeout: Duration,
    pub attempts: u32,
    /// Delay before the second attempt; doubled for each further attempt.
    pub backoff: Duration,
    pub max_tokens: u32,
}

impl ExternalLmConfig {
    pub fn new(url: impl Into<String>) -> Self {
        Self {
            url: url.into(),
            timeout: Duration::from_secs(30),
            attempts: DEFAULT_ATTEMPTS,
            backoff: Duration::from_millis(200),
            max_tokens: 128,
        }
    }

    fn agent(&self) -> ureq::Agent {
        ureq::Agent::config_builder()
            .timeout_global(Some(self.timeout))
            .build()
            .into()
    }
}

fn continuations() -> Vec<String> {
    Action::ALL.iter().map(|a| format!(" {}", a.literal())).collect()
}

/// Posts `body` and parses the JSON answer, retrying transport and HTTP
/// status failures with exponential backoff.
fn post(cfg: &ExternalLmConfig, agent: &ureq::Agent, body: &Value) -> Result<Value, PolicyError> {
    let payload = body.to_string();
    let attempts = cfg.attempts.max(1);
    let mut delay = cfg.backoff;
    let mut last = String::new();
    for attempt in 1..=attempts {
        let sent = agent
            .post(&cfg.url)
            .header("Content-Type", "application/json")
            .send(payload.as_str());
        match sent {
            Ok(resp) => {
                let text = resp
                    .into_body()
                    .read_to_string()
                    .map_err(|e| PolicyError::Malformed(e.to_string()))?;
                return serde_json::from_str(&text)
                    .map_err(|e| PolicyError::Malformed(format!("{e}: {text}")));
            }
            Err(e) => {
                last = e.to_string();
                log::debug!("attempt {attempt}/{attempts} to {} failed: {last}", cfg.url);
                if attempt < attempts {
                    sleep(delay);
                    delay *= 2;
                }
            }
        }
    }
    Err(PolicyError::Transport {
        url: cfg.url.clone(),
        attempts,
        message: last,
    })
}

fn parse_logprobs(v: &Value) -> Result<[f64; 5], PolicyError> {
    let arr = v
        .get("logprobs")
        .and_then(Value::as_array)
        .ok_or_else(|| PolicyError::Malformed(format!("missing logprobs array in {v}")))?;
    if arr.len() != 5 {
        return Err(PolicyError::Malformed(format!(
            "expected 5 logprobs, got {}",
            arr.len()
        )));
    }
    let mut out = [0.0; 5];
    for (o, x) in out.iter_mut().zip(arr) {
        *o = x
            .as_f64()
            .filter(|f| f.is_finite())
            .ok_or_else(|| PolicyError::Malformed(format!("non-finite logprob {x}")))?;
    }
    Ok(out)
}

fn score_with(cfg: &ExternalLmConfig, agent: &ureq::Agent, prompt: &str) -> Result<LiteralScores, PolicyError> {
    let body = json!({"prompt": prompt, "continuations": continuations()});
    Ok(LiteralScores::new(parse_logprobs(&post(cfg, agent, &body)?)?))
}

/// Log-likelihood of every action literal as a continuation of `prompt`.
pub fn external_lm_score(cfg: &ExternalLmConfig, prompt: &str) -> Result<LiteralScores, PolicyError> {
    score_with(cfg, &cfg.agent(), prompt)
}

/// Free-text completion of `prompt`.
pub fn complete_text(cfg: &ExternalLmConfig, prompt: &str) -> Result<String, PolicyError> {
    let body = json!({"prompt": prompt, "max_tokens": cfg.max_tokens});
    let v = post(cfg, &cfg.agent(), &body)?;
    v.get("text")
        .and_then(Value::as_str)
        .map(str::to_string)
        .ok_or_else(|| PolicyError::Malformed(format!("missing text field in {v}")))
}

pub fn prompt_key(prompt: &str) -> String {
    hex::encode(Sha256::digest(prompt.as_bytes()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CassetteMode {
    /// Forward to the endpoint and append every exchange.
    Record,
    /// Answer only from the file; never touch the network.
    Replay,
}

#[derive(Debug, Serialize, Deserialize)]
struct CassetteEntry {
    key: String,
    request: CassetteRequest,
    response: CassetteResponse,
}

#[derive(Debug, Serialize, Deserialize)]
struct CassetteRequest {
    prompt: String,
    continuations: Vec<String>,
}

#[derive(Debug, Serialize, Deserialize)]
struct CassetteResponse {
    logprobs: Vec<f64>,
}

/// JSON-lines file of scoring exchanges keyed by the SHA-256 of the prompt.
#[derive(Debug)]
pub struct Cassette {
    path: PathBuf,
    mode: CassetteMode,
    entries: Mutex<HashMap<String, [f64; 5]>>,
}

impl Cassette {
    /// Opens `path`. Replay requires the file; record creates it.
    pub fn open(path: impl AsRef<Path>, mode: CassetteMode) -> Result<Self, PolicyError> {
        let path = path.as_ref().to_path_buf();
        let err = |message: String| PolicyError::Cassette {
            path: path.display().to_string(),
            message,
        };
        let text = match fs::read_to_string(&path) {
            Ok(t) => t,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound && mode == CassetteMode::Record => {
                String::new()
            }
            Err(e) => return Err(err(e.to_string())),
        };
        let mut entries = HashMap::new();
        for (i, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
            let e: CassetteEntry =
                serde_json::from_str(line).map_err(|e| err(format!("line {}: {e}", i + 1)))?;
            let v = parse_logprobs(&json!({"logprobs": e.response.logprobs}))
                .map_err(|e| err(format!("line {}: {e}", i + 1)))?;
            entries.insert(e.key, v);
        }
        Ok(Self {
            path,
            mode,
            entries: Mutex::new(entries),
        })
    }

    pub fn mode(&self) -> CassetteMode {
        self.mode
    }

    pub fn len(&self) -> usize {
        self.entries.lock().expect("cassette lock").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn get(&self, prompt: &str) -> Option<[f64; 5]> {
        self.entries
            .lock()
            .expect("cassette lock")
            .get(&prompt_key(prompt))
            .copied()
    }

    fn record(&self, prompt: &str, logprobs: [f64; 5]) -> Result<(), PolicyError> {
        let key = prompt_key(prompt);
        let mut entries = self.entries.lock().expect("cassette lock");
        if entries.contains_key(&key) {
            return Ok(());
        }
        let entry = CassetteEntry {
            key: key.clone(),
            request: CassetteRequest {
                prompt: prompt.to_string(),
                continuations: continuations(),
            },
            response: CassetteResponse {
                logprobs: logprobs.to_vec(),
            },
        };
        let line = serde_json::to_string(&entry).expect("cassette entry serializes");
        let mut f = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&self.path)
            .and_then(|mut f| writeln!(f, "{line}").map(|_| f))
            .map_err(|e| PolicyError::Cassette {
                path: self.path.display().to_string(),
                message: e.to_string(),
            })?;
        let _ = f.flush();
        entries.insert(key, logprobs);
        Ok(())
    }
}

/// Scores literals through an external endpoint, optionally through a
/// cassette.
#[derive(Debug)]
pub struct ExternalPolicy {
    config: Option<ExternalLmConfig>,
    agent: Option<ureq::Agent>,
    cassette: Option<Cassette>,
}

impl ExternalPolicy {
    pub fn live(config: ExternalLmConfig) -> Self {
        Self {
            agent: Some(config.agent()),
            config: Some(config),
            cassette: None,
        }
    }

    pub fn recording(config: ExternalLmConfig, cassette: Cassette) -> Self {
        Self {
            cassette: Some(cassette),
            ..Self::live(config)
        }
    }

    pub fn replaying(cassette: Cassette) -> Self {
        Self {
            config: None,
            agent: None,
            cassette: Some(cassette),
        }
    }
}

impl Policy for ExternalPolicy {
    fn name(&self) -> &str {
        "external"
    }

    fn score(&self, prompt: &str, _: &StepContext) -> Result<LiteralScores, PolicyError> {
        if let Some(c) = &self.cassette {
            if let Some(v) = c.get(prompt) {
                return Ok(LiteralScores::new(v));
            }
            if c.mode() == CassetteMode::Replay {
                return Err(PolicyError::CassetteMiss(prompt_key(prompt)));
            }
        }
        let (Some(cfg), Some(agent)) = (&self.config, &self.agent) else {
            return Err(PolicyError::Input("no endpoint configured".into()));
        };
        let scores = score_with(cfg, agent, prompt)?;
        if let Some(c) = &self.cassette {
            c.record(prompt, scores.as_array())?;
        }
        Ok(scores)
    }
}

#[cfg(test)]
mod tests {
    use super::super::{MockLmServer, MockReply};
    use super::*;

    fn fast(url: String) -> ExternalLmConfig {
        ExternalLmConfig {
            backoff: Duration::from_millis(5),
            timeout: Duration::from_secs(5),
            ..ExternalLmConfig::new(url)
        }
    }

    #[test]
    fn mirrors_endpoint_logprobs() {
        let server = MockLmServer::start(MockReply::fixed([-1.0, -2.0, -0.5, -3.0, -4.0])).unwrap();
        let s = external_lm_score(&fast(server.url()), "1.").unwrap();
        assert_eq!(s.as_array(), [-1.0, -2.0, -0.5, -3.0, -4.0]);
        assert_eq!(s.decode(), Action::Right);
    }

    #[test]
    fn retries_then_succeeds() {
        let server =
            MockLmServer::start(MockReply::fixed([-1.0; 5]).failing_first(2)).unwrap();
        assert!(external_lm_score(&fast(server.url()), "p").is_ok());
        assert_eq!(server.request_count(), 3);
    }

    #[test]
    fn down_endpoint_fails_after_three_attempts() {
        let port = std::net::TcpListener::bind("127.0.0.1:0")
            .unwrap()
            .local_addr()
            .unwrap()
            .port();
        let err = external_lm_score(&fast(format!("http://127.0.0.1:{port}/")), "p").unwrap_err();
        assert!(matches!(err, PolicyError::Transport { attempts: 3, .. }), "{err}");
    }

    #[test]
    fn malformed_response_is_not_retried() {
        let server = MockLmServer::start(MockReply::fixed([0.0; 5]).malformed()).unwrap();
        let err = external_lm_score(&fast(server.url()), "p").unwrap_err();
        assert!(matches!(err, PolicyError::Malformed(_)));
        assert_eq!(server.request_count(), 1);
    }

    #[test]
    fn completion_round_trip() {
        let server = MockLmServer::start(MockReply::fixed([0.0; 5]).with_completion("1. a bank")).unwrap();
        assert_eq!(complete_text(&fast(server.url()), "x").unwrap(), "1. a bank");
    }
}
