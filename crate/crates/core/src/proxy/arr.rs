//! Asynchronous request-reply.
//!
//! Requests under a wrapped path prefix are queued and answered at once with
//! `202 Accepted` and a `location` to poll. A fixed pool of workers drains
//! the queue against the upstream and records results in the job store.

use std::collections::HashMap;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::time::Duration;

use bytes::Bytes;
use http::{HeaderMap, HeaderValue, StatusCode};
use parking_lot::Mutex;
use serde::Serialize;
use serde_json::json;
use thiserror::Error;
use tokio::sync::mpsc;

use super::policy::AsyncReplyPolicy;
use super::upstream::Upstream;
use super::{ProxyRequest, ProxyResponse, X_UPSTREAM_STATUS};
use crate::clock::{SharedClock, Timestamp};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum JobStatus {
    Pending,
    Running,
    Done,
    Failed,
}

#[derive(Clone, Debug, PartialEq)]
pub struct JobResult {
    pub status: StatusCode,
    pub headers: HeaderMap,
    pub body: Bytes,
}

#[derive(Clone, Debug, PartialEq)]
pub struct JobRecord {
    pub job_id: String,
    pub status: JobStatus,
    pub submitted_at: Timestamp,
    pub completed_at: Option<Timestamp>,
    pub result: Option<JobResult>,
    pub error: Option<String>,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum JobError {
    #[error("unknown job {0}")]
    Unknown(String),
    #[error("job {id}: illegal transition {from:?} -> {to:?}")]
    IllegalTransition {
        id: String,
        from: JobStatus,
        to: JobStatus,
    },
}

/// In-memory result store. Status only moves pending → running → done|failed.
#[derive(Debug, Default)]
pub struct JobStore {
    jobs: Mutex<HashMap<String, JobRecord>>,
}

impl JobStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn create(&self, job_id: &str, now: Timestamp) {
        self.jobs.lock().insert(
            job_id.to_string(),
            JobRecord {
                job_id: job_id.to_string(),
                status: JobStatus::Pending,
                submitted_at: now,
                completed_at: None,
                result: None,
                error: None,
            },
        );
    }

    pub fn get(&self, job_id: &str) -> Option<JobRecord> {
        self.jobs.lock().get(job_id).cloned()
    }

    pub fn remove(&self, job_id: &str) -> Option<JobRecord> {
        self.jobs.lock().remove(job_id)
    }

    pub fn len(&self) -> usize {
        self.jobs.lock().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn mark_running(&self, job_id: &str) -> Result<(), JobError> {
        self.transition(job_id, JobStatus::Running, |_| {})
    }

    pub fn complete(&self, job_id: &str, result: JobResult, now: Timestamp) -> Result<(), JobError> {
        self.transition(job_id, JobStatus::Done, |job| {
            job.result = Some(result);
            job.completed_at = Some(now);
        })
    }

    pub fn fail(&self, job_id: &str, error: String, now: Timestamp) -> Result<(), JobError> {
        self.transition(job_id, JobStatus::Failed, |job| {
            job.error = Some(error);
            job.completed_at = Some(now);
        })
    }

    fn transition(
        &self,
        job_id: &str,
        to: JobStatus,
        update: impl FnOnce(&mut JobRecord),
    ) -> Result<(), JobError> {
        let mut jobs = self.jobs.lock();
        let job = jobs
            .get_mut(job_id)
            .ok_or_else(|| JobError::Unknown(job_id.to_string()))?;
        let legal = matches!(
            (job.status, to),
            (JobStatus::Pending, JobStatus::Running)
                | (JobStatus::Running, JobStatus::Done)
                | (JobStatus::Running, JobStatus::Failed)
        );
        if !legal {
            return Err(JobError::IllegalTransition {
                id: job_id.to_string(),
                from: job.status,
                to,
            });
        }
        job.status = to;
        update(job);
        Ok(())
    }

    /// Drops jobs submitted at least `ttl` ago.
    pub fn purge_expired(&self, now: Timestamp, ttl: Duration) -> usize {
        let mut jobs = self.jobs.lock();
        let before = jobs.len();
        jobs.retain(|_, job| now.since(job.submitted_at) < ttl);
        before - jobs.len()
    }
}

pub type JobIdGenerator = Arc<dyn Fn() -> String + Send + Sync>;

/// Random 128-bit identifiers rendered as 32 hex characters.
pub fn random_job_ids() -> JobIdGenerator {
    Arc::new(|| format!("{:032x}", rand::random::<u128>()))
}

/// `<prefix>-0001`, `<prefix>-0002`, ...
pub fn sequential_job_ids(prefix: &str) -> JobIdGenerator {
    let prefix = prefix.to_string();
    let counter = AtomicU64::new(0);
    Arc::new(move || format!("{prefix}-{:04}", counter.fetch_add(1, Ordering::Relaxed) + 1))
}

struct Job {
    id: String,
    request: ProxyRequest,
}

pub struct AsyncReply {
    policy: AsyncReplyPolicy,
    store: Arc<JobStore>,
    queue: mpsc::Sender<Job>,
    ids: JobIdGenerator,
    clock: SharedClock,
    workers: Vec<tokio::task::JoinHandle<()>>,
}

impl std::fmt::Debug for AsyncReply {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("AsyncReply")
            .field("policy", &self.policy)
            .field("jobs", &self.store.len())
            .finish()
    }
}

impl Drop for AsyncReply {
    fn drop(&mut self) {
        for worker in &self.workers {
            worker.abort();
        }
    }
}

impl AsyncReply {
    /// Starts `worker_concurrency` workers on the current tokio runtime.
    pub fn start(
        policy: AsyncReplyPolicy,
        upstream: Arc<dyn Upstream>,
        clock: SharedClock,
        ids: JobIdGenerator,
    ) -> Self {
        let (tx, rx) = mpsc::channel::<Job>(policy.queue_capacity.max(1));
        let rx = Arc::new(tokio::sync::Mutex::new(rx));
        let store = Arc::new(JobStore::new());
        let workers = (0..policy.worker_concurrency.max(1))
            .map(|_| {
                let rx = rx.clone();
                let store = store.clone();
                let upstream = upstream.clone();
                let clock = clock.clone();
                tokio::spawn(async move {
                    loop {
                        let next = rx.lock().await.recv().await;
                        let Some(job) = next else { break };
                        run_job(job, &store, upstream.as_ref(), &clock).await;
                    }
                })
            })
            .collect();
        AsyncReply {
            policy,
            store,
            queue: tx,
            ids,
            clock,
            workers,
        }
    }

    pub fn store(&self) -> &JobStore {
        &self.store
    }

    pub fn policy(&self) -> &AsyncReplyPolicy {
        &self.policy
    }

    pub fn is_wrapped(&self, path: &str) -> bool {
        self.policy
            .wrapped_path_prefixes
            .iter()
            .any(|prefix| path_under(path, prefix))
    }

    /// Returns the job id when `path` addresses a job under the poll prefix.
    pub fn poll_target<'a>(&self, path: &'a str) -> Option<&'a str> {
        let prefix = self.policy.poll_path_prefix.trim_end_matches('/');
        let rest = path.strip_prefix(prefix)?.strip_prefix('/')?;
        (!rest.is_empty() && !rest.contains('/')).then_some(rest)
    }

    pub async fn handle(&self, request: ProxyRequest, upstream: &dyn Upstream) -> ProxyResponse {
        if request.method == http::Method::GET {
            if let Some(id) = self.poll_target(request.path()) {
                return self.arr_poll(id);
            }
        }
        if self.is_wrapped(request.path()) {
            return self.arr_submit(request);
        }
        match upstream.send(request).await {
            Ok(resp) => resp,
            Err(err) => ProxyResponse::bad_gateway(&err.to_string()),
        }
    }

    pub fn arr_submit(&self, request: ProxyRequest) -> ProxyResponse {
        let now = self.clock.now();
        self.store.purge_expired(now, self.job_ttl());
        let id = (self.ids)();
        self.store.create(&id, now);
        if let Err(err) = self.queue.try_send(Job {
            id: id.clone(),
            request,
        }) {
            self.store.remove(&id);
            let reason = match err {
                mpsc::error::TrySendError::Full(_) => "job queue is full",
                mpsc::error::TrySendError::Closed(_) => "job workers stopped",
            };
            return ProxyResponse::json(
                StatusCode::SERVICE_UNAVAILABLE,
                &json!({ "error": "queue_unavailable", "message": reason }),
            );
        }
        let location = format!("{}/{}", self.policy.poll_path_prefix.trim_end_matches('/'), id);
        ProxyResponse::json(
            StatusCode::ACCEPTED,
            &json!({ "job_id": id, "status": JobStatus::Pending }),
        )
        .with_header(
            http::header::LOCATION,
            HeaderValue::from_str(&location).expect("job ids are header-safe"),
        )
    }

    pub fn arr_poll(&self, job_id: &str) -> ProxyResponse {
        let now = self.clock.now();
        let not_found = || {
            ProxyResponse::json(
                StatusCode::NOT_FOUND,
                &json!({ "error": "job_not_found", "job_id": job_id }),
            )
        };
        let Some(job) = self.store.get(job_id) else {
            return not_found();
        };
        if now.since(job.submitted_at) >= self.job_ttl() {
            self.store.remove(job_id);
            return not_found();
        }
        match job.status {
            JobStatus::Done => {
                let result = job.result.expect("done jobs carry a result");
                let mut headers = result.headers;
                headers.insert(X_UPSTREAM_STATUS, HeaderValue::from(result.status.as_u16()));
                ProxyResponse {
                    status: StatusCode::OK,
                    headers,
                    body: result.body,
                }
            }
            JobStatus::Pending | JobStatus::Running => ProxyResponse::json(
                StatusCode::ACCEPTED,
                &json!({ "job_id": job.job_id, "status": job.status }),
            ),
            JobStatus::Failed => ProxyResponse::json(
                StatusCode::BAD_GATEWAY,
                &json!({ "job_id": job.job_id, "status": job.status, "error": job.error }),
            ),
        }
    }

    fn job_ttl(&self) -> Duration {
        Duration::from_secs(self.policy.job_ttl_seconds)
    }
}

async fn run_job(job: Job, store: &JobStore, upstream: &dyn Upstream, clock: &SharedClock) {
    if store.mark_running(&job.id).is_err() {
        // purged before a worker picked it up
        return;
    }
    let outcome = upstream.send(job.request).await;
    let recorded = match outcome {
        Ok(resp) => store.complete(
            &job.id,
            JobResult {
                status: resp.status,
                headers: resp.headers,
                body: resp.body,
            },
            clock.now(),
        ),
        Err(err) => store.fail(&job.id, err.to_string(), clock.now()),
    };
    if let Err(err) = recorded {
        tracing::debug!(%err, "job result dropped");
    }
}

fn path_under(path: &str, prefix: &str) -> bool {
    let prefix = prefix.trim_end_matches('/');
    prefix.is_empty()
        || path == prefix
        || path
            .strip_prefix(prefix)
            .is_some_and(|rest| rest.starts_with('/'))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sequential_ids_are_zero_padded() {
        let ids = sequential_job_ids("j");
        assert_eq!(ids(), "j-0001");
        assert_eq!(ids(), "j-0002");
    }

    #[test]
    fn random_ids_are_128_bit_hex() {
        let ids = random_job_ids();
        let a = ids();
        assert_eq!(a.len(), 32);
        assert!(a.chars().all(|c| c.is_ascii_hexdigit()));
        assert_ne!(a, ids());
    }

    #[test]
    fn job_status_only_moves_forward() {
        let store = JobStore::new();
        store.create("a", Timestamp::ZERO);
        assert!(store.complete("a", dummy(), Timestamp::ZERO).is_err());
        store.mark_running("a").unwrap();
        assert!(store.mark_running("a").is_err());
        store.fail("a", "boom".into(), Timestamp::ZERO).unwrap();
        assert!(store.complete("a", dummy(), Timestamp::ZERO).is_err());
        let job = store.get("a").unwrap();
        assert_eq!(job.status, JobStatus::Failed);
        assert!(job.result.is_none());
    }

    #[test]
    fn result_present_iff_done() {
        let store = JobStore::new();
        store.create("a", Timestamp::ZERO);
        store.mark_running("a").unwrap();
        store.complete("a", dummy(), Timestamp::from_millis(5)).unwrap();
        let job = store.get("a").unwrap();
        assert_eq!(job.status, JobStatus::Done);
        assert!(job.result.is_some());
        assert_eq!(job.completed_at, Some(Timestamp::from_millis(5)));
    }

    #[test]
    fn prefix_matching_respects_segments() {
        assert!(path_under("/format", "/format"));
        assert!(path_under("/format/csv", "/format"));
        assert!(!path_under("/formatter", "/format"));
    }

    fn dummy() -> JobResult {
        JobResult {
            status: StatusCode::OK,
            headers: HeaderMap::new(),
            body: Bytes::new(),
        }
    }
}
