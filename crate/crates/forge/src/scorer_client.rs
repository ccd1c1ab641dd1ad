//! Scorer transports and the retrying client.
//!
//! `FORGE_SCORER` picks the backend:
//! - `stub` or `stub:<seed>`: deterministic in-process answers (default)
//! - `cmd:<shell command>`: a subprocess that reads one JSON request per line
//!   on stdin and writes one JSON response per line on stdout. A response of
//!   the form `{"error": {"message": "..", "transient": true}}` reports a
//!   failure. Credentials reach the subprocess through its environment.

use std::io::{BufRead, BufReader, Write};
use std::process::{Child, ChildStdin, ChildStdout, Command, Stdio};
use std::time::Duration;

use forge_core::scorer::{validate_response, ScoreRequest, ScoreResponse, Scorer, ScorerError, StubScorer};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Deserialize;

use crate::error::{ForgeError, Result};

pub const SCORER_ENV: &str = "FORGE_SCORER";

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TransportError {
    /// Worth retrying: timeouts, dropped connections, rate limits.
    Transient(String),
    Fatal(String),
}

/// Moves one request to a model and brings back its answer.
pub trait Transport {
    fn send(&mut self, req: &ScoreRequest) -> std::result::Result<ScoreResponse, TransportError>;
}

pub struct StubTransport(pub StubScorer);

impl Transport for StubTransport {
    fn send(&mut self, req: &ScoreRequest) -> std::result::Result<ScoreResponse, TransportError> {
        Ok(self.0.answer(req))
    }
}

#[derive(Deserialize)]
struct WireError {
    message: String,
    #[serde(default)]
    transient: bool,
}

#[derive(Deserialize)]
#[serde(untagged)]
enum WireReply {
    Error { error: WireError },
    Ok(ScoreResponse),
}

/// Line-delimited JSON over a child process's stdin/stdout.
pub struct CommandTransport {
    command: String,
    child: Option<(Child, ChildStdin, BufReader<ChildStdout>)>,
}

impl CommandTransport {
    pub fn new(command: impl Into<String>) -> Self {
        CommandTransport {
            command: command.into(),
            child: None,
        }
    }

    fn spawn(&mut self) -> std::result::Result<(), TransportError> {
        let mut child = Command::new("sh")
            .arg("-c")
            .arg(&self.command)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()
            .map_err(|e| TransportError::Fatal(format!("cannot start {:?}: {e}", self.command)))?;
        let stdin = child.stdin.take().expect("piped stdin");
        let stdout = BufReader::new(child.stdout.take().expect("piped stdout"));
        self.child = Some((child, stdin, stdout));
        Ok(())
    }

    fn drop_child(&mut self) {
        if let Some((mut child, stdin, _)) = self.child.take() {
            drop(stdin);
            let _ = child.kill();
            let _ = child.wait();
        }
    }
}

impl Drop for CommandTransport {
    fn drop(&mut self) {
        self.drop_child();
    }
}

impl Transport for CommandTransport {
    fn send(&mut self, req: &ScoreRequest) -> std::result::Result<ScoreResponse, TransportError> {
        if self.child.is_none() {
            self.spawn()?;
        }
        let (_, stdin, stdout) = self.child.as_mut().expect("spawned");
        let mut line = serde_json::to_string(req).expect("request serializes");
        line.push('\n');
        let io = stdin.write_all(line.as_bytes()).and_then(|_| stdin.flush());
        let mut reply = String::new();
        let read = io.and_then(|_| stdout.read_line(&mut reply));
        match read {
            Ok(0) | Err(_) => {
                // the peer went away; start a fresh one on the next attempt
                self.drop_child();
                return Err(TransportError::Transient("scorer process closed its output".into()));
            }
            Ok(_) => {}
        }
        match serde_json::from_str::<WireReply>(reply.trim()) {
            Ok(WireReply::Ok(resp)) => Ok(resp),
            Ok(WireReply::Error { error }) if error.transient => Err(TransportError::Transient(error.message)),
            Ok(WireReply::Error { error }) => Err(TransportError::Fatal(error.message)),
            Err(e) => Err(TransportError::Fatal(format!("unreadable reply: {e}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    pub base_delay: Duration,
    /// Relative jitter; delays vary by up to this fraction either way.
    pub jitter: f64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            max_attempts: 3,
            base_delay: Duration::from_secs(1),
            jitter: 0.2,
        }
    }
}

impl RetryPolicy {
    /// Delay after the `failures`-th consecutive failure: base, 2·base, 4·base…
    pub fn delay(&self, failures: u32, unit: f64) -> Duration {
        let nominal = self.base_delay.as_secs_f64() * f64::from(1u32 << (failures.saturating_sub(1)).min(16));
        Duration::from_secs_f64(nominal * (1.0 + self.jitter * (2.0 * unit - 1.0)))
    }
}

pub type Sleeper = Box<dyn FnMut(Duration) + Send>;

/// Retrying, validating front end over a [`Transport`].
pub struct ScorerClient<T> {
    transport: T,
    policy: RetryPolicy,
    sleeper: Sleeper,
    rng: ChaCha8Rng,
}

impl<T: Transport> ScorerClient<T> {
    pub fn new(transport: T, policy: RetryPolicy, seed: u64) -> Self {
        ScorerClient {
            transport,
            policy,
            sleeper: Box::new(std::thread::sleep),
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn with_sleeper(mut self, sleeper: Sleeper) -> Self {
        self.sleeper = sleeper;
        self
    }
}

impl<T: Transport> Scorer for ScorerClient<T> {
    fn score(&mut self, req: &ScoreRequest) -> std::result::Result<ScoreResponse, ScorerError> {
        req.check()?;
        let max = self.policy.max_attempts.max(1);
        let mut last = String::new();
        for attempt in 1..=max {
            match self.transport.send(req) {
                Ok(mut resp) => {
                    resp.attempts = attempt;
                    validate_response(req, &resp)?;
                    return Ok(resp);
                }
                Err(TransportError::Fatal(reason)) => return Err(ScorerError::Unavailable { attempts: attempt, reason }),
                Err(TransportError::Transient(reason)) => {
                    last = reason;
                    if attempt < max {
                        let d = self.policy.delay(attempt, self.rng.random());
                        log::warn!("scorer retry record={} attempt={attempt} wait_ms={}", req.record_id, d.as_millis());
                        (self.sleeper)(d);
                    }
                }
            }
        }
        Err(ScorerError::Unavailable { attempts: max, reason: last })
    }
}

/// Which backend serves score requests.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Backend {
    Stub { seed: Option<u64> },
    Command(String),
}

impl Backend {
    pub fn parse(spec: &str) -> Result<Backend> {
        let spec = spec.trim();
        if spec.is_empty() || spec == "stub" {
            return Ok(Backend::Stub { seed: None });
        }
        if let Some(seed) = spec.strip_prefix("stub:") {
            let seed = seed.parse().map_err(|_| ForgeError::Config(format!("bad stub seed in {spec:?}")))?;
            return Ok(Backend::Stub { seed: Some(seed) });
        }
        if let Some(cmd) = spec.strip_prefix("cmd:") {
            if cmd.trim().is_empty() {
                return Err(ForgeError::Config("empty scorer command".into()));
            }
            return Ok(Backend::Command(cmd.to_string()));
        }
        Err(ForgeError::Config(format!("unknown scorer backend {spec:?}; use stub, stub:<seed> or cmd:<command>")))
    }

    /// The `FORGE_SCORER` environment variable, falling back to `default`.
    pub fn from_env(default: &str) -> Result<Backend> {
        match std::env::var(SCORER_ENV) {
            Ok(v) => Backend::parse(&v),
            Err(_) => Backend::parse(default),
        }
    }

    pub fn is_stub(&self) -> bool {
        matches!(self, Backend::Stub { .. })
    }

    pub fn build(&self, seed: u64, embedding_dim: usize, policy: RetryPolicy) -> Box<dyn Scorer + Send> {
        match self {
            Backend::Stub { seed: s } => {
                let stub = StubScorer {
                    seed: s.unwrap_or(seed),
                    embedding_dim,
                };
                Box::new(ScorerClient::new(StubTransport(stub), policy, seed))
            }
            Backend::Command(cmd) => Box::new(ScorerClient::new(CommandTransport::new(cmd.clone()), policy, seed)),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use forge_core::scorer::{ScoreKind, ScoreValue};
    use std::sync::{Arc, Mutex};

    struct Flaky {
        failures: u32,
        inner: StubTransport,
    }

    impl Transport for Flaky {
        fn send(&mut self, req: &ScoreRequest) -> std::result::Result<ScoreResponse, TransportError> {
            if self.failures > 0 {
                self.failures -= 1;
                return Err(TransportError::Transient("timeout".into()));
            }
            self.inner.send(req)
        }
    }

    fn recording_client(failures: u32) -> (ScorerClient<Flaky>, Arc<Mutex<Vec<Duration>>>) {
        let waits = Arc::new(Mutex::new(Vec::new()));
        let w = waits.clone();
        let client = ScorerClient::new(
            Flaky {
                failures,
                inner: StubTransport(StubScorer::new(1)),
            },
            RetryPolicy::default(),
            5,
        )
        .with_sleeper(Box::new(move |d| w.lock().unwrap().push(d)));
        (client, waits)
    }

    #[test]
    fn transient_then_success_counts_attempts() {
        let (mut c, waits) = recording_client(1);
        let resp = c.score(&ScoreRequest::new(ScoreKind::Safety, "r1")).unwrap();
        assert_eq!(resp.attempts, 2);
        let w = waits.lock().unwrap();
        assert_eq!(w.len(), 1);
        assert!(w[0] >= Duration::from_millis(800) && w[0] <= Duration::from_millis(1200));
    }

    #[test]
    fn gives_up_after_three_attempts_with_doubling_waits() {
        let (mut c, waits) = recording_client(5);
        let err = c.score(&ScoreRequest::new(ScoreKind::Safety, "r1")).unwrap_err();
        assert!(matches!(err, ScorerError::Unavailable { attempts: 3, .. }));
        let w = waits.lock().unwrap();
        assert_eq!(w.len(), 2);
        assert!(w[1] > w[0]);
        let p = RetryPolicy::default();
        assert_eq!(p.delay(3, 0.5), Duration::from_secs(4));
    }

    #[test]
    fn stub_backend_is_deterministic() {
        let b = Backend::parse("stub").unwrap();
        let req = ScoreRequest::new(ScoreKind::Safety, "rec-9");
        let x = b.build(3, 8, RetryPolicy::default()).score(&req).unwrap();
        let y = b.build(3, 8, RetryPolicy::default()).score(&req).unwrap();
        assert_eq!(x, y);
        assert!(matches!(x.value, ScoreValue::Score(_)));
        assert_eq!(Backend::parse("stub:4").unwrap(), Backend::Stub { seed: Some(4) });
        assert!(Backend::parse("http://x").is_err());
    }

    #[test]
    fn command_transport_speaks_json_lines() {
        // echo a fixed safety score back for every request
        let script = r#"while read -r line; do id=$(printf '%s' "$line" | sed 's/.*"record_id":"\([^"]*\)".*/\1/'); printf '{"record_id":"%s","kind":"safety","value":{"score":0.25}}\n' "$id"; done"#;
        let mut c = ScorerClient::new(CommandTransport::new(script), RetryPolicy::default(), 0);
        let resp = c.score(&ScoreRequest::new(ScoreKind::Safety, "abc")).unwrap();
        assert_eq!(resp.score(), Some(0.25));
        assert_eq!(resp.record_id, "abc");
        let mut bad = ScorerClient::new(CommandTransport::new("echo '{\"error\":{\"message\":\"no key\"}}'"), RetryPolicy::default(), 0);
        assert!(matches!(bad.score(&ScoreRequest::new(ScoreKind::Safety, "x")), Err(ScorerError::Unavailable { attempts: 1, .. })));
    }
}
