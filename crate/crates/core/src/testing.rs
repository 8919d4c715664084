//! Test doubles shared by unit, integration and acceptance tests.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::time::Duration;

use async_trait::async_trait;
use http::StatusCode;
use parking_lot::Mutex;

use crate::proxy::{ProxyRequest, ProxyResponse, Upstream, UpstreamError};

#[derive(Clone, Debug, PartialEq)]
pub enum Step {
    Status(u16, String),
    TransportError,
}

impl Step {
    pub fn status(code: u16) -> Step {
        Step::Status(code, format!("status {code}"))
    }
}

/// An upstream that replays a script of responses and counts invocations.
/// Once the script is exhausted the last step repeats.
#[derive(Debug)]
pub struct ScriptedUpstream {
    host: String,
    steps: Vec<Step>,
    delay: Duration,
    calls: AtomicUsize,
    in_flight: AtomicUsize,
    max_in_flight: AtomicUsize,
    seen: Mutex<Vec<ProxyRequest>>,
}

impl ScriptedUpstream {
    pub fn new(steps: Vec<Step>) -> Self {
        assert!(!steps.is_empty(), "script needs at least one step");
        ScriptedUpstream {
            host: "upstream".into(),
            steps,
            delay: Duration::ZERO,
            calls: AtomicUsize::new(0),
            in_flight: AtomicUsize::new(0),
            max_in_flight: AtomicUsize::new(0),
            seen: Mutex::new(Vec::new()),
        }
    }

    pub fn statuses(codes: &[u16]) -> Self {
        Self::new(codes.iter().map(|c| Step::status(*c)).collect())
    }

    pub fn always_ok(body: &str) -> Self {
        Self::new(vec![Step::Status(200, body.to_string())])
    }

    pub fn with_delay(mut self, delay: Duration) -> Self {
        self.delay = delay;
        self
    }

    pub fn with_host(mut self, host: &str) -> Self {
        self.host = host.to_string();
        self
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }

    pub fn max_in_flight(&self) -> usize {
        self.max_in_flight.load(Ordering::SeqCst)
    }

    pub fn requests(&self) -> Vec<ProxyRequest> {
        self.seen.lock().clone()
    }
}

#[async_trait]
impl Upstream for ScriptedUpstream {
    async fn send(&self, request: ProxyRequest) -> Result<ProxyResponse, UpstreamError> {
        let n = self.calls.fetch_add(1, Ordering::SeqCst);
        let now = self.in_flight.fetch_add(1, Ordering::SeqCst) + 1;
        self.max_in_flight.fetch_max(now, Ordering::SeqCst);
        self.seen.lock().push(request);
        if !self.delay.is_zero() {
            tokio::time::sleep(self.delay).await;
        }
        self.in_flight.fetch_sub(1, Ordering::SeqCst);
        let step = &self.steps[n.min(self.steps.len() - 1)];
        match step {
            Step::Status(code, body) => {
                let mut resp = ProxyResponse::new(
                    StatusCode::from_u16(*code).expect("scripted status is valid"),
                    body.clone(),
                );
                resp.headers.insert(
                    http::header::CONTENT_TYPE,
                    http::HeaderValue::from_static("text/plain"),
                );
                Ok(resp)
            }
            Step::TransportError => Err(UpstreamError::Connect("scripted failure".into())),
        }
    }

    fn host(&self) -> &str {
        &self.host
    }
}

/// A load-pool requester that answers 200 after a fixed delay.
pub struct DelayedOk(pub Duration);

#[async_trait]
impl crate::workload::Requester for DelayedOk {
    async fn issue(
        &self,
        _: &url::Url,
        _: &crate::workload::RequestTemplate,
    ) -> Result<crate::workload::Response, String> {
        tokio::time::sleep(self.0).await;
        Ok(crate::workload::Response { status: 200, bytes: 2 })
    }
}

/// Samples the active user count every `every` until `total` has elapsed.
pub async fn trace_pool(
    gauges: std::sync::Arc<crate::workload::PoolGauges>,
    every: Duration,
    total: Duration,
) -> Vec<(Duration, u32)> {
    let start = tokio::time::Instant::now();
    let mut trace = Vec::new();
    while start.elapsed() <= total {
        trace.push((start.elapsed(), gauges.active_users()));
        tokio::time::sleep(every).await;
    }
    trace
}

/// First trace time at which the pool reached `size`.
pub fn first_reaching(trace: &[(Duration, u32)], size: u32) -> Option<Duration> {
    trace.iter().find(|(_, n)| *n >= size).map(|(t, _)| *t)
}
