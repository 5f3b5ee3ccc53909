//! Blocking JSON-over-HTTP plumbing shared by the remote embedding provider
//! and the live chat-completion backend: transport abstraction, retry with
//! jittered exponential backoff, and a token-bucket rate limiter driven by a
//! pluggable clock.

use std::sync::Mutex;
use std::time::{Duration, Instant};

use serde_json::Value;

#[derive(Debug, Clone, thiserror::Error)]
pub enum HttpError {
    /// Retries exhausted on timeouts, connection failures, 429 or 5xx.
    #[error("transport failure after {attempts} attempt(s): {message}")]
    Transport { message: String, attempts: u32 },
    /// 401/403; never retried.
    #[error("credential rejected (HTTP {status}): {message}")]
    Credential { status: u16, message: String },
    /// Non-retryable status other than an auth failure.
    #[error("HTTP {status}: {body}")]
    Status { status: u16, body: String },
    /// 2xx response whose body does not have the expected shape.
    #[error("malformed response: {message}")]
    Protocol { message: String, payload: String },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HttpResponse {
    pub status: u16,
    pub body: String,
}

/// Failure before any HTTP status was received.
#[derive(Debug, Clone)]
pub struct TransportFailure {
    pub message: String,
}

/// Minimal POST-JSON transport. The real implementation wraps `ureq`; tests
/// substitute scripted fakes.
pub trait HttpTransport: Send + Sync {
    fn post_json(
        &self,
        url: &str,
        bearer: Option<&str>,
        body: &Value,
    ) -> Result<HttpResponse, TransportFailure>;
}

pub struct UreqTransport {
    agent: ureq::Agent,
}

impl UreqTransport {
    pub fn new(timeout: Duration) -> Self {
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .http_status_as_error(false)
            .build()
            .into();
        Self { agent }
    }
}

impl HttpTransport for UreqTransport {
    fn post_json(
        &self,
        url: &str,
        bearer: Option<&str>,
        body: &Value,
    ) -> Result<HttpResponse, TransportFailure> {
        let mut req = self
            .agent
            .post(url)
            .header("Content-Type", "application/json");
        if let Some(token) = bearer {
            req = req.header("Authorization", &format!("Bearer {token}"));
        }
        let payload = serde_json::to_vec(body).map_err(|e| TransportFailure {
            message: e.to_string(),
        })?;
        let mut resp = req.send(&payload[..]).map_err(|e| TransportFailure {
            message: e.to_string(),
        })?;
        let status = resp.status().as_u16();
        let body = resp
            .body_mut()
            .read_to_string()
            .map_err(|e| TransportFailure {
                message: e.to_string(),
            })?;
        Ok(HttpResponse { status, body })
    }
}

/// Time source for backoff and rate limiting.
pub trait Clock: Send + Sync {
    /// Monotonic time since an arbitrary fixed origin.
    fn now(&self) -> Duration;
    fn sleep(&self, d: Duration);
}

pub struct SystemClock {
    origin: Instant,
}

impl Default for SystemClock {
    fn default() -> Self {
        Self {
            origin: Instant::now(),
        }
    }
}

impl Clock for SystemClock {
    fn now(&self) -> Duration {
        self.origin.elapsed()
    }

    fn sleep(&self, d: Duration) {
        std::thread::sleep(d);
    }
}

/// A clock that only moves when slept on. Sleeping advances it instantly.
#[derive(Default)]
pub struct ManualClock {
    now: Mutex<Duration>,
}

impl ManualClock {
    pub fn advance(&self, d: Duration) {
        *self.now.lock().unwrap() += d;
    }
}

impl Clock for ManualClock {
    fn now(&self) -> Duration {
        *self.now.lock().unwrap()
    }

    fn sleep(&self, d: Duration) {
        self.advance(d);
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    pub base_delay: Duration,
    pub factor: f64,
    /// Each delay is stretched by a uniform factor in `[1, 1 + jitter)`.
    pub jitter: f64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            max_attempts: 5,
            base_delay: Duration::from_secs(1),
            factor: 2.0,
            jitter: 0.25,
        }
    }
}

impl RetryPolicy {
    /// Delay slept after failed attempt number `attempt` (1-based), before
    /// jitter.
    pub fn base_backoff(&self, attempt: u32) -> Duration {
        self.base_delay
            .mul_f64(self.factor.powi(attempt.saturating_sub(1) as i32))
    }

    fn backoff(&self, attempt: u32) -> Duration {
        let stretch = 1.0 + self.jitter * rand::random::<f64>();
        self.base_backoff(attempt).mul_f64(stretch)
    }
}

/// Token bucket admitting at most `per_minute` requests per minute with a
/// burst of one. Admission is serialized: callers queue on the mutex.
pub struct RateLimiter {
    interval: Duration,
    next_free: Mutex<Option<Duration>>,
}

impl RateLimiter {
    pub fn per_minute(per_minute: u32) -> Self {
        let per_minute = per_minute.max(1);
        Self {
            interval: Duration::from_secs(60).div_f64(per_minute as f64),
            next_free: Mutex::new(None),
        }
    }

    pub fn interval(&self) -> Duration {
        self.interval
    }

    /// Blocks (via `clock`) until a request may be sent.
    pub fn acquire(&self, clock: &dyn Clock) {
        let mut next = self.next_free.lock().unwrap();
        let now = clock.now();
        let slot = match *next {
            Some(t) if t > now => {
                clock.sleep(t - now);
                t
            }
            _ => now,
        };
        *next = Some(slot + self.interval);
    }
}

fn is_transient(status: u16) -> bool {
    status == 408 || status == 429 || (500..600).contains(&status)
}

/// Everything needed to issue retried, rate-limited JSON requests.
pub struct JsonClient {
    pub transport: Box<dyn HttpTransport>,
    pub clock: std::sync::Arc<dyn Clock>,
    pub limiter: Option<std::sync::Arc<RateLimiter>>,
    pub retry: RetryPolicy,
}

impl JsonClient {
    pub fn new(transport: Box<dyn HttpTransport>) -> Self {
        Self {
            transport,
            clock: std::sync::Arc::new(SystemClock::default()),
            limiter: None,
            retry: RetryPolicy::default(),
        }
    }

    /// POSTs `body` and parses the 2xx response as JSON. Returns the parsed
    /// value and the number of attempts it took.
    pub fn post(
        &self,
        url: &str,
        bearer: Option<&str>,
        body: &Value,
    ) -> Result<(Value, u32), HttpError> {
        let max = self.retry.max_attempts.max(1);
        let mut last_failure = String::new();
        for attempt in 1..=max {
            if let Some(limiter) = &self.limiter {
                limiter.acquire(self.clock.as_ref());
            }
            match self.transport.post_json(url, bearer, body) {
                Ok(resp) if (200..300).contains(&resp.status) => {
                    return serde_json::from_str(&resp.body)
                        .map(|v| (v, attempt))
                        .map_err(|e| HttpError::Protocol {
                            message: e.to_string(),
                            payload: resp.body,
                        });
                }
                Ok(resp) if resp.status == 401 || resp.status == 403 => {
                    return Err(HttpError::Credential {
                        status: resp.status,
                        message: resp.body,
                    });
                }
                Ok(resp) if is_transient(resp.status) => {
                    last_failure = format!("HTTP {}: {}", resp.status, resp.body);
                }
                Ok(resp) => {
                    return Err(HttpError::Status {
                        status: resp.status,
                        body: resp.body,
                    });
                }
                Err(fail) => last_failure = fail.message,
            }
            tracing::warn!(attempt, url, failure = %last_failure, "request failed");
            if attempt < max {
                self.clock.sleep(self.retry.backoff(attempt));
            }
        }
        Err(HttpError::Transport {
            message: last_failure,
            attempts: max,
        })
    }
}


#[cfg(test)]
mod tests {
    use super::testing::ScriptedTransport;
    use super::*;
    use std::sync::Arc;

    fn client(script: Arc<ScriptedTransport>, clock: Arc<ManualClock>) -> JsonClient {
        JsonClient {
            transport: Box::new(script),
            clock,
            limiter: None,
            retry: RetryPolicy::default(),
        }
    }

    #[test]
    fn retries_transient_then_succeeds() {
        let script = Arc::new(ScriptedTransport::new(vec![
            ScriptedTransport::ok(503, "busy"),
            Err(TransportFailure {
                message: "timed out".into(),
            }),
            ScriptedTransport::ok(200, r#"{"ok":1}"#),
        ]));
        let clock = Arc::new(ManualClock::default());
        let (v, attempts) = client(script.clone(), clock.clone())
            .post("http://x", None, &serde_json::json!({}))
            .unwrap();
        assert_eq!(v["ok"], 1);
        assert_eq!(attempts, 3);
        // 1s + 2s of base backoff, jitter only stretches.
        assert!(clock.now() >= Duration::from_secs(3));
        assert!(clock.now() < Duration::from_secs_f64(3.0 * 1.25 + 1e-9));
    }

    #[test]
    fn gives_up_after_five_attempts() {
        let script = Arc::new(ScriptedTransport::new(
            (0..10)
                .map(|_| ScriptedTransport::ok(429, "slow down"))
                .collect(),
        ));
        let err = client(script.clone(), Arc::new(ManualClock::default()))
            .post("http://x", None, &serde_json::json!({}))
            .unwrap_err();
        assert!(matches!(err, HttpError::Transport { attempts: 5, .. }));
        assert_eq!(script.seen.lock().unwrap().len(), 5);
    }

    #[test]
    fn auth_failure_is_not_retried() {
        let script = Arc::new(ScriptedTransport::new(vec![
            ScriptedTransport::ok(401, "bad key"),
            ScriptedTransport::ok(200, "{}"),
        ]));
        let err = client(script.clone(), Arc::new(ManualClock::default()))
            .post("http://x", Some("k"), &serde_json::json!({}))
            .unwrap_err();
        assert!(matches!(err, HttpError::Credential { status: 401, .. }));
        assert_eq!(script.seen.lock().unwrap().len(), 1);
    }

    #[test]
    fn malformed_body_keeps_payload() {
        let script = Arc::new(ScriptedTransport::new(vec![ScriptedTransport::ok(
            200, "<html>",
        )]));
        match client(script, Arc::new(ManualClock::default())).post(
            "http://x",
            None,
            &serde_json::json!({}),
        ) {
            Err(HttpError::Protocol { payload, .. }) => assert_eq!(payload, "<html>"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn rate_limiter_spaces_requests() {
        let clock = ManualClock::default();
        let limiter = RateLimiter::per_minute(30);
        let n = 12;
        for _ in 0..n {
            limiter.acquire(&clock);
        }
        let min = limiter.interval() * (n - 1);
        assert!(clock.now() >= min, "{:?} < {:?}", clock.now(), min);
    }

    #[test]
    fn rate_limiter_does_not_wait_when_idle() {
        let clock = ManualClock::default();
        let limiter = RateLimiter::per_minute(60);
        limiter.acquire(&clock);
        clock.advance(Duration::from_secs(10));
        let before = clock.now();
        limiter.acquire(&clock);
        assert_eq!(clock.now(), before);
    }
}
