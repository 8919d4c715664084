use std::net::SocketAddr;
use std::sync::Arc;
use std::time::Duration;

use http::{HeaderValue, StatusCode};
use serde_json::json;

use super::arr::{random_job_ids, AsyncReply, JobIdGenerator};
use super::breaker::{Admission, CircuitBreaker, Outcome};
use super::cache::CacheAside;
use super::collapse::RequestCollapser;
use super::policy::{ClientKey, GatewayOffloadPolicy, PatternPolicy, ProxyRuntimeConfig};
use super::ratelimit::{KeyedLimiter, RateDecision};
use super::retry::execute_with_retry;
use super::upstream::{HttpUpstream, Upstream};
use super::{ProxyRequest, ProxyResponse, X_PATTERN};
use crate::clock::{MonotonicClock, SharedClock};

/// Upper bound on buffered request bodies for patterns without their own
/// body limit.
pub const DEFAULT_MAX_BUFFERED_BODY: u64 = 64 * 1024 * 1024;

#[derive(Clone, Copy, Debug, Default)]
pub struct ClientInfo {
    pub addr: Option<SocketAddr>,
}

#[derive(Debug)]
struct GatewayOffload {
    policy: GatewayOffloadPolicy,
    limiter: KeyedLimiter,
}

#[derive(Debug)]
enum ActivePattern {
    CircuitBreaker(CircuitBreaker),
    CacheAside(CacheAside),
    Collapse(RequestCollapser),
    Gateway(GatewayOffload),
    AsyncReply(AsyncReply),
}

/// Applies the configured pattern to each request before (or instead of)
/// forwarding it upstream.
pub struct PatternEngine {
    upstream: Arc<dyn Upstream>,
    clock: SharedClock,
    pattern: ActivePattern,
}

impl std::fmt::Debug for PatternEngine {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("PatternEngine")
            .field("upstream", &self.upstream.host())
            .field("pattern", &self.pattern)
            .finish()
    }
}

impl PatternEngine {
    /// Must be called inside a tokio runtime (the async reply pattern starts
    /// its workers immediately).
    pub fn new(
        policy: PatternPolicy,
        upstream: Arc<dyn Upstream>,
        clock: SharedClock,
        job_ids: JobIdGenerator,
    ) -> Self {
        let pattern = match policy {
            PatternPolicy::CircuitBreaker(p) => ActivePattern::CircuitBreaker(CircuitBreaker::new(p)),
            PatternPolicy::CacheAside(p) => ActivePattern::CacheAside(CacheAside::new(p)),
            PatternPolicy::RequestCollapsing(p) => ActivePattern::Collapse(RequestCollapser::new(p)),
            PatternPolicy::GatewayOffloading(p) => ActivePattern::Gateway(GatewayOffload {
                limiter: KeyedLimiter::new(&p),
                policy: p,
            }),
            PatternPolicy::AsyncRequestReply(p) => ActivePattern::AsyncReply(AsyncReply::start(
                p,
                upstream.clone(),
                clock.clone(),
                job_ids,
            )),
        };
        PatternEngine {
            upstream,
            clock,
            pattern,
        }
    }

    pub fn from_config(config: &ProxyRuntimeConfig) -> Self {
        let upstream = HttpUpstream::new(
            config.upstream_base.clone(),
            Duration::from_millis(config.upstream_connect_timeout_ms),
            Duration::from_millis(config.upstream_request_timeout_ms),
        );
        PatternEngine::new(
            config.policy.clone(),
            Arc::new(upstream),
            MonotonicClock::shared(),
            random_job_ids(),
        )
    }

    pub fn breaker(&self) -> Option<&CircuitBreaker> {
        match &self.pattern {
            ActivePattern::CircuitBreaker(b) => Some(b),
            _ => None,
        }
    }

    pub fn cache(&self) -> Option<&CacheAside> {
        match &self.pattern {
            ActivePattern::CacheAside(c) => Some(c),
            _ => None,
        }
    }

    pub fn collapser(&self) -> Option<&RequestCollapser> {
        match &self.pattern {
            ActivePattern::Collapse(c) => Some(c),
            _ => None,
        }
    }

    pub fn async_reply(&self) -> Option<&AsyncReply> {
        match &self.pattern {
            ActivePattern::AsyncReply(a) => Some(a),
            _ => None,
        }
    }

    pub fn max_body_bytes(&self) -> u64 {
        match &self.pattern {
            ActivePattern::Gateway(g) => g.policy.max_body_bytes,
            _ => DEFAULT_MAX_BUFFERED_BODY,
        }
    }

    pub async fn handle(&self, request: ProxyRequest, client: ClientInfo) -> ProxyResponse {
        let upstream = self.upstream.as_ref();
        match &self.pattern {
            ActivePattern::CircuitBreaker(breaker) => self.handle_breaker(breaker, request).await,
            ActivePattern::CacheAside(cache) => cache.handle(request, upstream, self.clock.as_ref()).await,
            ActivePattern::Collapse(collapser) => collapser.handle(request, upstream).await,
            ActivePattern::Gateway(gateway) => self.handle_gateway(gateway, request, client).await,
            ActivePattern::AsyncReply(arr) => arr.handle(request, upstream).await,
        }
    }

    async fn handle_breaker(&self, breaker: &CircuitBreaker, request: ProxyRequest) -> ProxyResponse {
        if breaker.admit(self.clock.now()) == Admission::Reject {
            return ProxyResponse::json(
                StatusCode::SERVICE_UNAVAILABLE,
                &json!({ "error": "circuit_open" }),
            )
            .with_header(X_PATTERN, HeaderValue::from_static("circuit-open"));
        }
        let policy = breaker.policy();
        let result = execute_with_retry(&request, &policy.retry, self.upstream.as_ref(), self.clock.as_ref()).await;
        let outcome = match &result.outcome {
            Ok(resp) if !policy.failure_statuses.contains(&resp.status.as_u16()) => Outcome::Success,
            _ => Outcome::Failure,
        };
        let state = breaker.record(outcome, self.clock.now());
        tracing::trace!(attempts = result.attempts, state = state.name(), "breaker outcome");
        result.into_response()
    }

    async fn handle_gateway(
        &self,
        gateway: &GatewayOffload,
        request: ProxyRequest,
        client: ClientInfo,
    ) -> ProxyResponse {
        if request.body.len() as u64 > gateway.policy.max_body_bytes {
            return payload_too_large(gateway.policy.max_body_bytes);
        }
        let key = match &gateway.policy.client_key {
            ClientKey::SourceAddress => client.addr.map(|a| a.ip().to_string()).unwrap_or_default(),
            ClientKey::Header(name) => request
                .headers
                .get(name.as_str())
                .and_then(|v| v.to_str().ok())
                .unwrap_or_default()
                .to_string(),
        };
        match gateway.limiter.admit(&key, self.clock.now()) {
            RateDecision::Admitted => match self.upstream.send(request).await {
                Ok(resp) => resp,
                Err(err) => ProxyResponse::bad_gateway(&err.to_string()),
            },
            RateDecision::Rejected { retry_after_s } => ProxyResponse::json(
                StatusCode::TOO_MANY_REQUESTS,
                &json!({ "error": "rate_limited", "retry_after_s": retry_after_s }),
            )
            .with_header(http::header::RETRY_AFTER, HeaderValue::from(retry_after_s)),
        }
    }
}

pub fn payload_too_large(limit: u64) -> ProxyResponse {
    ProxyResponse::json(
        StatusCode::PAYLOAD_TOO_LARGE,
        &json!({ "error": "payload_too_large", "limit_bytes": limit }),
    )
}
