//! In-process HTTP server speaking the scoring and completion protocols.

use std::net::SocketAddr;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;
use std::thread::JoinHandle;

use serde_json::{json, Value};
use tiny_http::{Header, Response, Server};

type ScoreFn = dyn Fn(&str) -> Vec<f64> + Send + Sync;

/// How the mock answers.
#[derive(Clone)]
pub struct MockReply {
    /// Log-probabilities for a prompt, one per continuation.
    pub logprobs: Arc<ScoreFn>,
    /// Text returned by completion requests.
    pub completion: String,
    /// Number of initial requests answered with HTTP 500.
    pub fail_first: usize,
    /// Answer scoring requests with a body lacking `logprobs`.
    pub malformed: bool,
}

impl MockReply {
    pub fn fixed(logprobs: [f64; 5]) -> Self {
        Self::scored(move |_| logprobs.to_vec())
    }

    pub fn scored(f: impl Fn(&str) -> Vec<f64> + Send + Sync + 'static) -> Self {
        Self {
            logprobs: Arc::new(f),
            completion: "None".into(),
            fail_first: 0,
            malformed: false,
        }
    }

    pub fn with_completion(mut self, text: impl Into<String>) -> Self {
        self.completion = text.into();
        self
    }

    pub fn failing_first(mut self, n: usize) -> Self {
        self.fail_first = n;
        self
    }

    pub fn malformed(mut self) -> Self {
        self.malformed = true;
        self
    }
}

impl std::fmt::Debug for MockReply {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("MockReply")
            .field("completion", &self.completion)
            .field("fail_first", &self.fail_first)
            .field("malformed", &self.malformed)
            .finish_non_exhaustive()
    }
}

/// Serves on an ephemeral localhost port until dropped. Requests carrying
/// `continuations` are scored; any other JSON body gets a completion.
pub struct MockLmServer {
    server: Arc<Server>,
    addr: SocketAddr,
    requests: Arc<AtomicUsize>,
    handle: Option<JoinHandle<()>>,
}

impl MockLmServer {
    pub fn start(reply: MockReply) -> std::io::Result<Self> {
        let server = Server::http("127.0.0.1:0").map_err(std::io::Error::other)?;
        let addr = server
            .server_addr()
            .to_ip()
            .ok_or_else(|| std::io::Error::other("mock server has no IP address"))?;
        let server = Arc::new(server);
        let requests = Arc::new(AtomicUsize::new(0));
        let handle = {
            let server = server.clone();
            let requests = requests.clone();
            std::thread::spawn(move || serve(&server, &reply, &requests))
        };
        Ok(Self {
            server,
            addr,
            requests,
            handle: Some(handle),
        })
    }

    pub fn url(&self) -> String {
        format!("http://{}/", self.addr)
    }

    pub fn request_count(&self) -> usize {
        self.requests.load(Ordering::SeqCst)
    }
}

impl Drop for MockLmServer {
    fn drop(&mut self) {
        self.server.unblock();
        if let Some(h) = self.handle.take() {
            let _ = h.join();
        }
    }
}

fn serve(server: &Server, reply: &MockReply, requests: &AtomicUsize) {
    let json_header =
        Header::from_bytes("Content-Type", "application/json").expect("static header is valid");
    for mut req in server.incoming_requests() {
        let n = requests.fetch_add(1, Ordering::SeqCst);
        let mut body = String::new();
        let _ = req.as_reader().read_to_string(&mut body);
        let (status, payload) = if n < reply.fail_first {
            (500, json!({"error": "unavailable"}))
        } else {
            answer(reply, &body)
        };
        let resp = Response::from_string(payload.to_string())
            .with_status_code(status)
            .with_header(json_header.clone());
        let _ = req.respond(resp);
    }
}

fn answer(reply: &MockReply, body: &str) -> (u16, Value) {
    let Ok(req) = serde_json::from_str::<Value>(body) else {
        return (400, json!({"error": "body is not JSON"}));
    };
    let prompt = req.get("prompt").and_then(Value::as_str).unwrap_or_default();
    if req.get("continuations").is_some() {
        if reply.malformed {
            (200, json!({"scores": "n/a"}))
        } else {
            (200, json!({"logprobs": (reply.logprobs)(prompt)}))
        }
    } else {
        (200, json!({"text": reply.completion}))
    }
}
