//! Closed-loop virtual users.
//!
//! The ramp controller is the only task that grows the user pool. Each user
//! issues a request, waits for it, records the outcome and repeats with no
//! think time. Requests still in flight at the deadline are abandoned and
//! not recorded.

use std::fmt;
use std::fs::File;
use std::path::Path;
use std::sync::atomic::{AtomicU32, AtomicU64, Ordering};
use std::sync::Arc;
use std::time::{Duration, SystemTime, UNIX_EPOCH};

use async_trait::async_trait;
use parking_lot::Mutex;
use serde::{Deserialize, Serialize};
use thiserror::Error;
use tokio::sync::watch;
use tokio::task::JoinSet;
use tokio::time::Instant;
use url::Url;

use super::profile::{concurrency_at, RequestTemplate, WorkloadProfile};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum OutcomeStatus {
    Http(u16),
    TransportError,
}

pub const TRANSPORT_ERROR_MARKER: &str = "transport-error";

impl OutcomeStatus {
    pub fn is_error(self) -> bool {
        match self {
            OutcomeStatus::Http(code) => code >= 400,
            OutcomeStatus::TransportError => true,
        }
    }
}

impl fmt::Display for OutcomeStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            OutcomeStatus::Http(code) => write!(f, "{code}"),
            OutcomeStatus::TransportError => f.write_str(TRANSPORT_ERROR_MARKER),
        }
    }
}

impl std::str::FromStr for OutcomeStatus {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s == TRANSPORT_ERROR_MARKER {
            return Ok(OutcomeStatus::TransportError);
        }
        s.parse::<u16>()
            .map(OutcomeStatus::Http)
            .map_err(|_| format!("bad status `{s}`"))
    }
}

impl Serialize for OutcomeStatus {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for OutcomeStatus {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let raw = String::deserialize(d)?;
        raw.parse().map_err(serde::de::Error::custom)
    }
}

/// One completed request. Field order matches the CSV columns.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RequestOutcome {
    #[serde(rename = "started_at_unix_ms")]
    pub started_at_unix_ms: u64,
    pub target: String,
    pub status: OutcomeStatus,
    pub latency_ms: f64,
    #[serde(rename = "bytes")]
    pub bytes_received: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Response {
    pub status: u16,
    pub bytes: u64,
}

#[async_trait]
pub trait Requester: Send + Sync + 'static {
    async fn issue(&self, target: &Url, request: &RequestTemplate) -> Result<Response, String>;
}

/// Plain HTTP requests via reqwest.
#[derive(Debug, Clone)]
pub struct HttpRequester {
    client: reqwest::Client,
}

impl HttpRequester {
    pub fn new(timeout: Duration) -> Self {
        HttpRequester {
            client: reqwest::Client::builder()
                .timeout(timeout)
                .build()
                .expect("client builds"),
        }
    }
}

impl Default for HttpRequester {
    fn default() -> Self {
        Self::new(Duration::from_secs(30))
    }
}

pub fn request_url(target: &Url, request: &RequestTemplate) -> Result<Url, String> {
    if request.path.is_empty() {
        Ok(target.clone())
    } else {
        target.join(&request.path).map_err(|e| e.to_string())
    }
}

#[async_trait]
impl Requester for HttpRequester {
    async fn issue(&self, target: &Url, request: &RequestTemplate) -> Result<Response, String> {
        let method = reqwest::Method::from_bytes(request.method.as_bytes()).map_err(|e| e.to_string())?;
        let mut builder = self.client.request(method, request_url(target, request)?);
        for (k, v) in &request.headers {
            builder = builder.header(k, v);
        }
        if let Some(body) = &request.body {
            builder = builder.body(body.clone());
        }
        let resp = builder.send().await.map_err(|e| e.to_string())?;
        let status = resp.status().as_u16();
        let body = resp.bytes().await.map_err(|e| e.to_string())?;
        Ok(Response {
            status,
            bytes: body.len() as u64,
        })
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
#[error("outcome sink: {0}")]
pub struct SinkError(pub String);

/// Append-only destination for outcomes; called concurrently.
pub trait OutcomeSink: Send + Sync + 'static {
    fn record(&self, outcome: &RequestOutcome) -> Result<(), SinkError>;
    fn flush(&self) -> Result<(), SinkError> {
        Ok(())
    }
}

#[derive(Debug, Default)]
pub struct VecSink {
    outcomes: Mutex<Vec<RequestOutcome>>,
}

impl VecSink {
    pub fn new() -> Arc<Self> {
        Arc::new(Self::default())
    }

    pub fn outcomes(&self) -> Vec<RequestOutcome> {
        self.outcomes.lock().clone()
    }

    pub fn len(&self) -> usize {
        self.outcomes.lock().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl OutcomeSink for VecSink {
    fn record(&self, outcome: &RequestOutcome) -> Result<(), SinkError> {
        self.outcomes.lock().push(outcome.clone());
        Ok(())
    }
}

/// Writes `started_at_unix_ms,target,status,latency_ms,bytes` rows.
pub struct CsvSink {
    writer: Mutex<csv::Writer<File>>,
}

impl CsvSink {
    pub fn create(path: &Path) -> Result<Self, SinkError> {
        let writer = csv::Writer::from_path(path).map_err(|e| SinkError(e.to_string()))?;
        Ok(CsvSink {
            writer: Mutex::new(writer),
        })
    }
}

impl OutcomeSink for CsvSink {
    fn record(&self, outcome: &RequestOutcome) -> Result<(), SinkError> {
        self.writer
            .lock()
            .serialize(outcome)
            .map_err(|e| SinkError(e.to_string()))
    }

    fn flush(&self) -> Result<(), SinkError> {
        self.writer.lock().flush().map_err(|e| SinkError(e.to_string()))
    }
}

pub fn read_outcomes_csv(path: &Path) -> Result<Vec<RequestOutcome>, csv::Error> {
    csv::Reader::from_path(path)?.deserialize().collect()
}

/// Live pool instrumentation.
#[derive(Debug, Default)]
pub struct PoolGauges {
    active_users: AtomicU32,
    in_flight: AtomicU32,
    completed: AtomicU64,
}

impl PoolGauges {
    pub fn active_users(&self) -> u32 {
        self.active_users.load(Ordering::SeqCst)
    }

    pub fn in_flight(&self) -> u32 {
        self.in_flight.load(Ordering::SeqCst)
    }

    pub fn completed(&self) -> u64 {
        self.completed.load(Ordering::SeqCst)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunStats {
    pub started_at_unix_ms: u64,
    pub duration_s: u64,
    pub recorded: u64,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LoadError {
    #[error("run aborted after {recorded} outcomes: {source}")]
    Sink { source: SinkError, recorded: u64 },
    #[error("load task failed: {0}")]
    Task(String),
}

pub struct RunHandle {
    gauges: Arc<PoolGauges>,
    started_at_unix_ms: u64,
    task: tokio::task::JoinHandle<Result<RunStats, LoadError>>,
}

impl RunHandle {
    pub fn gauges(&self) -> Arc<PoolGauges> {
        self.gauges.clone()
    }

    pub fn started_at_unix_ms(&self) -> u64 {
        self.started_at_unix_ms
    }

    pub async fn wait(self) -> Result<RunStats, LoadError> {
        self.task.await.map_err(|e| LoadError::Task(e.to_string()))?
    }
}

pub fn unix_ms_now() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_millis() as u64)
        .unwrap_or(0)
}

struct Shared {
    profile: WorkloadProfile,
    requester: Arc<dyn Requester>,
    sink: Arc<dyn OutcomeSink>,
    gauges: Arc<PoolGauges>,
    start: Instant,
    start_unix_ms: u64,
    deadline: Instant,
    abort: watch::Sender<bool>,
    failure: Mutex<Option<SinkError>>,
}

/// Starts a run on the current runtime and returns immediately.
pub fn run_load(
    profile: WorkloadProfile,
    requester: Arc<dyn Requester>,
    sink: Arc<dyn OutcomeSink>,
) -> RunHandle {
    let gauges = Arc::new(PoolGauges::default());
    let start = Instant::now();
    let start_unix_ms = unix_ms_now();
    let (abort, _) = watch::channel(false);
    let shared = Arc::new(Shared {
        deadline: start + Duration::from_secs(profile.duration_s),
        profile,
        requester,
        sink,
        gauges: gauges.clone(),
        start,
        start_unix_ms,
        abort,
        failure: Mutex::new(None),
    });
    let task = tokio::spawn(controller(shared));
    RunHandle {
        gauges,
        started_at_unix_ms: start_unix_ms,
        task,
    }
}

async fn controller(shared: Arc<Shared>) -> Result<RunStats, LoadError> {
    let mut users = JoinSet::new();
    let mut spawned = 0u32;
    let mut abort = shared.abort.subscribe();
    let steps: Vec<u64> = shared.profile.step_starts().collect();
    for step_start in steps {
        let at = shared.start + Duration::from_secs(step_start);
        tokio::select! {
            _ = tokio::time::sleep_until(at) => {}
            _ = abort.wait_for(|a| *a) => break,
        }
        let want = concurrency_at(&shared.profile, step_start as f64);
        while spawned < want {
            shared.gauges.active_users.fetch_add(1, Ordering::SeqCst);
            users.spawn(user(shared.clone(), spawned as usize));
            spawned += 1;
        }
    }
    while users.join_next().await.is_some() {}
    let flushed = shared.sink.flush();
    let recorded = shared.gauges.completed();
    if let Some(source) = shared.failure.lock().take() {
        return Err(LoadError::Sink { source, recorded });
    }
    flushed.map_err(|source| LoadError::Sink { source, recorded })?;
    Ok(RunStats {
        started_at_unix_ms: shared.start_unix_ms,
        duration_s: shared.profile.duration_s,
        recorded,
    })
}

async fn user(shared: Arc<Shared>, index: usize) {
    let targets = &shared.profile.targets;
    let target = &targets[index % targets.len()];
    let mut abort = shared.abort.subscribe();
    loop {
        let t0 = Instant::now();
        if t0 >= shared.deadline || *abort.borrow() {
            break;
        }
        shared.gauges.in_flight.fetch_add(1, Ordering::SeqCst);
        let result = tokio::select! {
            r = shared.requester.issue(target, &shared.profile.request) => Some(r),
            _ = tokio::time::sleep_until(shared.deadline) => None,
            _ = abort.wait_for(|a| *a) => None,
        };
        shared.gauges.in_flight.fetch_sub(1, Ordering::SeqCst);
        let Some(result) = result else { break };
        let latency = t0.elapsed();
        let (status, bytes) = match result {
            Ok(r) => (OutcomeStatus::Http(r.status), r.bytes),
            Err(_) => (OutcomeStatus::TransportError, 0),
        };
        let outcome = RequestOutcome {
            started_at_unix_ms: shared.start_unix_ms + t0.duration_since(shared.start).as_millis() as u64,
            target: target.to_string(),
            status,
            latency_ms: latency.as_secs_f64() * 1000.0,
            bytes_received: bytes,
        };
        if let Err(e) = shared.sink.record(&outcome) {
            shared.failure.lock().get_or_insert(e);
            shared.abort.send_replace(true);
            break;
        }
        shared.gauges.completed.fetch_add(1, Ordering::SeqCst);
    }
    shared.gauges.active_users.fetch_sub(1, Ordering::SeqCst);
}
