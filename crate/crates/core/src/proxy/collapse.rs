//! Request collapsing (single-flight).
//!
//! The first request for a key registers itself as leader and performs the
//! upstream call; later requests for the same key subscribe to the leader's
//! completion signal. The table lock only guards registration and removal,
//! never the upstream call itself.

use std::collections::HashMap;
use std::future::Future;
use std::sync::atomic::{AtomicU64, Ordering};
use std::time::Duration;

use parking_lot::Mutex;
use tokio::sync::watch;

use super::cache::request_key;
use super::policy::CollapsePolicy;
use super::upstream::{Upstream, UpstreamError};
use super::{ProxyRequest, ProxyResponse, X_PATTERN};

pub type SharedResult = Result<ProxyResponse, UpstreamError>;

/// How a caller ended up with its result.
#[derive(Debug)]
pub enum Participation {
    /// This caller performed the upstream call.
    Led(SharedResult),
    /// This caller received a copy of a leader's result.
    Followed(SharedResult),
    /// Waiter budget exhausted, wait timed out or leader vanished; this
    /// caller performed its own upstream call.
    Independent(SharedResult),
}

impl Participation {
    pub fn into_result(self) -> SharedResult {
        match self {
            Participation::Led(r) | Participation::Followed(r) | Participation::Independent(r) => r,
        }
    }

    pub fn role(&self) -> &'static str {
        match self {
            Participation::Led(_) => "leader",
            Participation::Followed(_) => "follower",
            Participation::Independent(_) => "independent",
        }
    }
}

#[derive(Debug)]
struct Flight {
    id: u64,
    waiters: usize,
    done: watch::Receiver<Option<SharedResult>>,
}

#[derive(Debug, Default)]
pub struct InflightTable {
    flights: Mutex<HashMap<String, Flight>>,
    next_id: AtomicU64,
}

enum Role {
    Leader(u64, watch::Sender<Option<SharedResult>>),
    Follower(u64, watch::Receiver<Option<SharedResult>>),
    Independent,
}

/// Removes the leader's registration even if the leader future is dropped.
struct LeaderGuard<'a> {
    table: &'a InflightTable,
    key: &'a str,
    id: u64,
}

impl Drop for LeaderGuard<'_> {
    fn drop(&mut self) {
        let mut flights = self.table.flights.lock();
        if flights.get(self.key).map(|f| f.id) == Some(self.id) {
            flights.remove(self.key);
        }
    }
}

impl InflightTable {
    pub fn new() -> Self {
        Self::default()
    }

    /// Number of keys with an upstream call in flight.
    pub fn len(&self) -> usize {
        self.flights.lock().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub async fn run<F, Fut>(
        &self,
        key: &str,
        max_waiters: usize,
        wait_timeout: Duration,
        fetch: F,
    ) -> Participation
    where
        F: FnOnce() -> Fut,
        Fut: Future<Output = SharedResult>,
    {
        let role = {
            let mut flights = self.flights.lock();
            match flights.get_mut(key) {
                Some(flight) if flight.waiters < max_waiters => {
                    flight.waiters += 1;
                    Role::Follower(flight.id, flight.done.clone())
                }
                Some(_) => Role::Independent,
                None => {
                    let id = self.next_id.fetch_add(1, Ordering::Relaxed);
                    let (tx, rx) = watch::channel(None);
                    flights.insert(
                        key.to_string(),
                        Flight {
                            id,
                            waiters: 0,
                            done: rx,
                        },
                    );
                    Role::Leader(id, tx)
                }
            }
        };

        match role {
            Role::Leader(id, tx) => {
                let guard = LeaderGuard {
                    table: self,
                    key,
                    id,
                };
                let result = fetch().await;
                drop(guard);
                tx.send_replace(Some(result.clone()));
                Participation::Led(result)
            }
            Role::Follower(id, mut rx) => {
                let waited = tokio::time::timeout(wait_timeout, async {
                    rx.wait_for(Option::is_some).await.map(|r| r.clone())
                })
                .await;
                match waited {
                    Ok(Ok(Some(result))) => Participation::Followed(result),
                    Ok(_) => Participation::Independent(fetch().await),
                    Err(_) => {
                        self.release_waiter(key, id);
                        Participation::Independent(fetch().await)
                    }
                }
            }
            Role::Independent => Participation::Independent(fetch().await),
        }
    }

    fn release_waiter(&self, key: &str, id: u64) {
        let mut flights = self.flights.lock();
        if let Some(flight) = flights.get_mut(key) {
            if flight.id == id {
                flight.waiters = flight.waiters.saturating_sub(1);
            }
        }
    }
}

/// Request collapsing pattern state.
#[derive(Debug)]
pub struct RequestCollapser {
    policy: CollapsePolicy,
    table: InflightTable,
}

impl RequestCollapser {
    pub fn new(policy: CollapsePolicy) -> Self {
        RequestCollapser {
            policy,
            table: InflightTable::new(),
        }
    }

    pub fn table(&self) -> &InflightTable {
        &self.table
    }

    pub async fn handle(&self, request: ProxyRequest, upstream: &dyn Upstream) -> ProxyResponse {
        if request.method != http::Method::GET {
            return forward(request, upstream).await;
        }
        let key = request_key(&request, upstream.host(), &self.policy.vary_headers);
        let participation = collapse_execute(&key, request, &self.policy, &self.table, upstream).await;
        let role = participation.role();
        let mut resp = match participation.into_result() {
            Ok(resp) => resp,
            Err(err) => ProxyResponse::bad_gateway(&err.to_string()),
        };
        if role == "follower" {
            resp.headers
                .insert(X_PATTERN, http::HeaderValue::from_static("collapsed"));
        }
        resp
    }
}

pub async fn collapse_execute(
    key: &str,
    request: ProxyRequest,
    policy: &CollapsePolicy,
    table: &InflightTable,
    upstream: &dyn Upstream,
) -> Participation {
    table
        .run(key, policy.max_waiters, policy.wait_timeout(), || upstream.send(request))
        .await
}

async fn forward(request: ProxyRequest, upstream: &dyn Upstream) -> ProxyResponse {
    match upstream.send(request).await {
        Ok(resp) => resp,
        Err(err) => ProxyResponse::bad_gateway(&err.to_string()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testing::ScriptedUpstream;
    use std::sync::Arc;

    #[tokio::test]
    async fn leader_registration_is_cleared() {
        let table = InflightTable::new();
        let out = table
            .run("k", 4, Duration::from_secs(1), || async {
                Ok(ProxyResponse::new(http::StatusCode::OK, "x"))
            })
            .await;
        assert_eq!(out.role(), "leader");
        assert!(table.is_empty());
    }

    #[tokio::test]
    async fn different_keys_do_not_collapse() {
        let upstream = Arc::new(ScriptedUpstream::always_ok("body").with_delay(Duration::from_millis(100)));
        let collapser = Arc::new(RequestCollapser::new(CollapsePolicy::default()));
        let a = {
            let (c, u) = (collapser.clone(), upstream.clone());
            tokio::spawn(async move { c.handle(ProxyRequest::get("/data?a=1"), u.as_ref()).await })
        };
        let b = {
            let (c, u) = (collapser.clone(), upstream.clone());
            tokio::spawn(async move { c.handle(ProxyRequest::get("/data?a=2"), u.as_ref()).await })
        };
        a.await.unwrap();
        b.await.unwrap();
        assert_eq!(upstream.calls(), 2);
    }

    #[tokio::test]
    async fn post_bypasses_collapsing() {
        let upstream = ScriptedUpstream::always_ok("ok");
        let collapser = RequestCollapser::new(CollapsePolicy::default());
        let resp = collapser
            .handle(ProxyRequest::new(http::Method::POST, "/data"), &upstream)
            .await;
        assert_eq!(resp.status, http::StatusCode::OK);
        assert!(collapser.table().is_empty());
    }

    #[tokio::test]
    async fn waiter_budget_overflow_runs_independently() {
        let upstream = Arc::new(ScriptedUpstream::always_ok("body").with_delay(Duration::from_millis(150)));
        let policy = CollapsePolicy {
            max_waiters: 1,
            ..Default::default()
        };
        let collapser = Arc::new(RequestCollapser::new(policy));
        let mut handles = Vec::new();
        for _ in 0..3 {
            let (c, u) = (collapser.clone(), upstream.clone());
            handles.push(tokio::spawn(async move {
                c.handle(ProxyRequest::get("/data"), u.as_ref()).await
            }));
            tokio::time::sleep(Duration::from_millis(10)).await;
        }
        for h in handles {
            assert_eq!(h.await.unwrap().body, "body");
        }
        // leader + one follower share a call; the third goes alone
        assert_eq!(upstream.calls(), 2);
    }
}
