//! Pattern policies and the proxy configuration document.
//!
//! A policy document names the active pattern and carries its parameter
//! block:
//!
//! ```yaml
//! pattern: circuit_breaker
//! upstream: http://filter-service-original.pipeline.svc.cluster.local:8080
//! circuit_breaker:
//!   failure_threshold: 3
//!   retry:
//!     max_retries: 2
//! ```
//!
//! Any parameter of the active block (including nested `retry` parameters)
//! and the top-level runtime keys can be overridden through environment
//! variables named `SNAP_<UPPERCASE_PARAM>`, e.g. `SNAP_FAILURE_THRESHOLD=3`.

use std::collections::BTreeSet;
use std::fmt;
use std::net::SocketAddr;
use std::str::FromStr;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use thiserror::Error;
use url::Url;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PatternKind {
    CircuitBreaker,
    CacheAside,
    RequestCollapsing,
    GatewayOffloading,
    AsyncRequestReply,
}

impl PatternKind {
    pub const ALL: [PatternKind; 5] = [
        PatternKind::CircuitBreaker,
        PatternKind::CacheAside,
        PatternKind::RequestCollapsing,
        PatternKind::GatewayOffloading,
        PatternKind::AsyncRequestReply,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            PatternKind::CircuitBreaker => "circuit_breaker",
            PatternKind::CacheAside => "cache_aside",
            PatternKind::RequestCollapsing => "request_collapsing",
            PatternKind::GatewayOffloading => "gateway_offloading",
            PatternKind::AsyncRequestReply => "async_request_reply",
        }
    }

    /// Short form used in resource names.
    pub fn abbreviation(self) -> &'static str {
        match self {
            PatternKind::CircuitBreaker => "cb",
            PatternKind::CacheAside => "ca",
            PatternKind::RequestCollapsing => "rc",
            PatternKind::GatewayOffloading => "go",
            PatternKind::AsyncRequestReply => "arr",
        }
    }
}

impl fmt::Display for PatternKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for PatternKind {
    type Err = PolicyError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let normalized = s.trim().to_ascii_lowercase().replace('-', "_");
        match normalized.as_str() {
            "circuit_breaker" | "cb" => Ok(PatternKind::CircuitBreaker),
            "cache_aside" | "ca" => Ok(PatternKind::CacheAside),
            "request_collapsing" | "rc" => Ok(PatternKind::RequestCollapsing),
            "gateway_offloading" | "go" => Ok(PatternKind::GatewayOffloading),
            "async_request_reply" | "arr" => Ok(PatternKind::AsyncRequestReply),
            _ => Err(PolicyError::UnknownPattern(s.to_string())),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RetryPolicy {
    pub max_retries: u32,
    pub backoff_base_ms: u64,
    pub backoff_multiplier: f64,
    pub retryable_statuses: BTreeSet<u16>,
    pub retry_on_transport_error: bool,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            max_retries: 2,
            backoff_base_ms: 100,
            backoff_multiplier: 2.0,
            retryable_statuses: [502, 503, 504].into_iter().collect(),
            retry_on_transport_error: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CircuitBreakerPolicy {
    pub failure_threshold: u32,
    pub open_duration_ms: u64,
    pub half_open_max_probes: u32,
    pub failure_statuses: BTreeSet<u16>,
    pub retry: RetryPolicy,
}

impl CircuitBreakerPolicy {
    pub fn open_duration(&self) -> Duration {
        Duration::from_millis(self.open_duration_ms)
    }
}

impl Default for CircuitBreakerPolicy {
    fn default() -> Self {
        CircuitBreakerPolicy {
            failure_threshold: 5,
            open_duration_ms: 10_000,
            half_open_max_probes: 1,
            failure_statuses: [500, 502, 503, 504].into_iter().collect(),
            retry: RetryPolicy::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CacheAsidePolicy {
    pub ttl_seconds: u64,
    pub max_entries: usize,
    pub cacheable_methods: BTreeSet<String>,
    pub vary_headers: Vec<String>,
    pub max_cacheable_body_bytes: usize,
}

impl CacheAsidePolicy {
    pub fn ttl(&self) -> Duration {
        Duration::from_secs(self.ttl_seconds)
    }
}

impl Default for CacheAsidePolicy {
    fn default() -> Self {
        CacheAsidePolicy {
            ttl_seconds: 30,
            max_entries: 1024,
            cacheable_methods: ["GET".to_string()].into_iter().collect(),
            vary_headers: Vec::new(),
            max_cacheable_body_bytes: 1024 * 1024,
        }
    }
}

/// Request collapsing keys requests exactly like the cache does, so it
/// carries the same `vary_headers` knob.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CollapsePolicy {
    pub vary_headers: Vec<String>,
    pub max_waiters: usize,
    pub wait_timeout_ms: u64,
}

impl CollapsePolicy {
    pub fn wait_timeout(&self) -> Duration {
        Duration::from_millis(self.wait_timeout_ms)
    }
}

impl Default for CollapsePolicy {
    fn default() -> Self {
        CollapsePolicy {
            vary_headers: Vec::new(),
            max_waiters: 256,
            wait_timeout_ms: 5_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AsyncReplyPolicy {
    pub wrapped_path_prefixes: Vec<String>,
    pub job_ttl_seconds: u64,
    pub worker_concurrency: usize,
    pub poll_path_prefix: String,
    pub queue_capacity: usize,
}

impl Default for AsyncReplyPolicy {
    fn default() -> Self {
        AsyncReplyPolicy {
            wrapped_path_prefixes: Vec::new(),
            job_ttl_seconds: 300,
            worker_concurrency: 4,
            poll_path_prefix: "/jobs".to_string(),
            queue_capacity: 1024,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ClientKey {
    SourceAddress,
    Header(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GatewayOffloadPolicy {
    pub rate_per_second: f64,
    pub burst: u32,
    pub max_body_bytes: u64,
    pub client_key: ClientKey,
}

impl Default for GatewayOffloadPolicy {
    fn default() -> Self {
        GatewayOffloadPolicy {
            rate_per_second: 50.0,
            burst: 100,
            max_body_bytes: 1024 * 1024,
            client_key: ClientKey::SourceAddress,
        }
    }
}

/// Exactly one pattern with its parameters.
#[derive(Debug, Clone, PartialEq)]
pub enum PatternPolicy {
    CircuitBreaker(CircuitBreakerPolicy),
    CacheAside(CacheAsidePolicy),
    RequestCollapsing(CollapsePolicy),
    GatewayOffloading(GatewayOffloadPolicy),
    AsyncRequestReply(AsyncReplyPolicy),
}

impl PatternPolicy {
    pub fn default_for(kind: PatternKind) -> Self {
        match kind {
            PatternKind::CircuitBreaker => PatternPolicy::CircuitBreaker(Default::default()),
            PatternKind::CacheAside => PatternPolicy::CacheAside(Default::default()),
            PatternKind::RequestCollapsing => PatternPolicy::RequestCollapsing(Default::default()),
            PatternKind::GatewayOffloading => PatternPolicy::GatewayOffloading(Default::default()),
            PatternKind::AsyncRequestReply => PatternPolicy::AsyncRequestReply(Default::default()),
        }
    }

    pub fn kind(&self) -> PatternKind {
        match self {
            PatternPolicy::CircuitBreaker(_) => PatternKind::CircuitBreaker,
            PatternPolicy::CacheAside(_) => PatternKind::CacheAside,
            PatternPolicy::RequestCollapsing(_) => PatternKind::RequestCollapsing,
            PatternPolicy::GatewayOffloading(_) => PatternKind::GatewayOffloading,
            PatternPolicy::AsyncRequestReply(_) => PatternKind::AsyncRequestReply,
        }
    }

    /// Builds a policy from a parameter block; missing keys take defaults.
    pub fn from_block(kind: PatternKind, block: Value) -> Result<Self, PolicyError> {
        let block = match block {
            Value::Null => Value::Object(Map::new()),
            other => other,
        };
        fn parse<T: serde::de::DeserializeOwned>(v: Value) -> Result<T, PolicyError> {
            serde_path_to_error::deserialize(v).map_err(|e| PolicyError::Parameter {
                param: e.path().to_string(),
                message: e.inner().to_string(),
            })
        }
        Ok(match kind {
            PatternKind::CircuitBreaker => PatternPolicy::CircuitBreaker(parse(block)?),
            PatternKind::CacheAside => PatternPolicy::CacheAside(parse(block)?),
            PatternKind::RequestCollapsing => PatternPolicy::RequestCollapsing(parse(block)?),
            PatternKind::GatewayOffloading => PatternPolicy::GatewayOffloading(parse(block)?),
            PatternKind::AsyncRequestReply => PatternPolicy::AsyncRequestReply(parse(block)?),
        })
    }

    pub fn block(&self) -> Value {
        let v = match self {
            PatternPolicy::CircuitBreaker(p) => serde_json::to_value(p),
            PatternPolicy::CacheAside(p) => serde_json::to_value(p),
            PatternPolicy::RequestCollapsing(p) => serde_json::to_value(p),
            PatternPolicy::GatewayOffloading(p) => serde_json::to_value(p),
            PatternPolicy::AsyncRequestReply(p) => serde_json::to_value(p),
        };
        v.expect("policy structs serialize to JSON")
    }

    /// Checks every parameter range; returns all violations at once.
    pub fn validate(&self) -> Result<(), Vec<ParamViolation>> {
        let mut errs = Vec::new();
        let mut check = |ok: bool, param: &str, message: &str| {
            if !ok {
                errs.push(ParamViolation {
                    param: param.to_string(),
                    message: message.to_string(),
                });
            }
        };
        match self {
            PatternPolicy::CircuitBreaker(p) => {
                check(p.failure_threshold >= 1, "failure_threshold", "must be >= 1");
                check(p.open_duration_ms >= 1, "open_duration_ms", "must be positive");
                check(p.half_open_max_probes >= 1, "half_open_max_probes", "must be >= 1");
                check(
                    p.failure_statuses.iter().all(|s| (400..=599).contains(s)),
                    "failure_statuses",
                    "statuses must lie in 400..=599",
                );
                check(p.retry.backoff_base_ms >= 1, "retry.backoff_base_ms", "must be positive");
                check(
                    p.retry.backoff_multiplier.is_finite() && p.retry.backoff_multiplier >= 1.0,
                    "retry.backoff_multiplier",
                    "must be >= 1",
                );
                check(
                    p.retry.retryable_statuses.iter().all(|s| (100..=599).contains(s)),
                    "retry.retryable_statuses",
                    "not an HTTP status",
                );
            }
            PatternPolicy::CacheAside(p) => {
                check(p.ttl_seconds >= 1, "ttl_seconds", "must be positive");
                check(p.max_entries >= 1, "max_entries", "must be positive");
                check(
                    p.max_cacheable_body_bytes >= 1,
                    "max_cacheable_body_bytes",
                    "must be positive",
                );
                check(
                    !p.cacheable_methods.is_empty()
                        && p.cacheable_methods
                            .iter()
                            .all(|m| http::Method::from_bytes(m.as_bytes()).is_ok()),
                    "cacheable_methods",
                    "must be a non-empty set of HTTP methods",
                );
                check(
                    p.vary_headers.iter().all(|h| http::HeaderName::from_bytes(h.as_bytes()).is_ok()),
                    "vary_headers",
                    "invalid header name",
                );
            }
            PatternPolicy::RequestCollapsing(p) => {
                check(p.max_waiters >= 1, "max_waiters", "must be positive");
                check(p.wait_timeout_ms >= 1, "wait_timeout_ms", "must be positive");
                check(
                    p.vary_headers.iter().all(|h| http::HeaderName::from_bytes(h.as_bytes()).is_ok()),
                    "vary_headers",
                    "invalid header name",
                );
            }
            PatternPolicy::GatewayOffloading(p) => {
                check(
                    p.rate_per_second.is_finite() && p.rate_per_second > 0.0,
                    "rate_per_second",
                    "must be positive",
                );
                check(p.burst >= 1, "burst", "must be positive");
                check(p.max_body_bytes >= 1, "max_body_bytes", "must be positive");
                if let ClientKey::Header(name) = &p.client_key {
                    check(
                        http::HeaderName::from_bytes(name.as_bytes()).is_ok(),
                        "client_key",
                        "invalid header name",
                    );
                }
            }
            PatternPolicy::AsyncRequestReply(p) => {
                check(
                    !p.wrapped_path_prefixes.is_empty(),
                    "wrapped_path_prefixes",
                    "at least one path prefix is required",
                );
                check(
                    p.wrapped_path_prefixes.iter().all(|x| x.starts_with('/')),
                    "wrapped_path_prefixes",
                    "prefixes must start with '/'",
                );
                check(p.poll_path_prefix.starts_with('/'), "poll_path_prefix", "must start with '/'");
                check(
                    p.wrapped_path_prefixes
                        .iter()
                        .all(|w| !paths_overlap(w, &p.poll_path_prefix)),
                    "poll_path_prefix",
                    "must be disjoint from wrapped_path_prefixes",
                );
                check(p.job_ttl_seconds >= 1, "job_ttl_seconds", "must be positive");
                check(p.worker_concurrency >= 1, "worker_concurrency", "must be positive");
                check(p.queue_capacity >= 1, "queue_capacity", "must be positive");
            }
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(errs)
        }
    }
}

/// True when one prefix covers paths the other would also match.
fn paths_overlap(a: &str, b: &str) -> bool {
    let a = a.trim_end_matches('/');
    let b = b.trim_end_matches('/');
    let covers = |outer: &str, inner: &str| {
        outer.is_empty()
            || inner == outer
            || (inner.starts_with(outer) && inner.as_bytes()[outer.len()] == b'/')
    };
    covers(a, b) || covers(b, a)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamViolation {
    pub param: String,
    pub message: String,
}

impl fmt::Display for ParamViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.param, self.message)
    }
}

#[derive(Debug, Error)]
pub enum PolicyError {
    #[error("unknown pattern `{0}`")]
    UnknownPattern(String),
    #[error("policy document: {0}")]
    Syntax(String),
    #[error("parameter `{param}`: {message}")]
    Parameter { param: String, message: String },
    #[error("policy document has blocks for more than one pattern: {0:?}")]
    MultiplePatterns(Vec<String>),
    #[error("invalid policy: {}", .0.iter().map(|v| v.to_string()).collect::<Vec<_>>().join("; "))]
    Invalid(Vec<ParamViolation>),
    #[error("missing required setting `{0}`")]
    Missing(&'static str),
    #[error("environment override {var}: {message}")]
    Env { var: String, message: String },
}

const BLOCK_KEYS: [&str; 5] = [
    "circuit_breaker",
    "cache_aside",
    "request_collapsing",
    "gateway_offloading",
    "async_request_reply",
];

const RUNTIME_KEYS: [&str; 5] = [
    "upstream",
    "listen",
    "service_name",
    "upstream_connect_timeout_ms",
    "upstream_request_timeout_ms",
];

/// The parsed configuration file: one pattern plus optional runtime settings.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyDocument {
    pub policy: PatternPolicy,
    pub upstream: Option<String>,
    pub listen: Option<String>,
    pub service_name: Option<String>,
    pub upstream_connect_timeout_ms: Option<u64>,
    pub upstream_request_timeout_ms: Option<u64>,
}

impl PolicyDocument {
    pub fn new(policy: PatternPolicy) -> Self {
        PolicyDocument {
            policy,
            upstream: None,
            listen: None,
            service_name: None,
            upstream_connect_timeout_ms: None,
            upstream_request_timeout_ms: None,
        }
    }

    /// Parses YAML or JSON text (JSON is a YAML subset).
    pub fn parse(text: &str) -> Result<Self, PolicyError> {
        Self::parse_with_env(text, |_| None)
    }

    /// Parses and then applies `SNAP_*` overrides from the process environment.
    pub fn parse_with_process_env(text: &str) -> Result<Self, PolicyError> {
        Self::parse_with_env(text, |k| std::env::var(k).ok())
    }

    pub fn parse_with_env(
        text: &str,
        env: impl Fn(&str) -> Option<String>,
    ) -> Result<Self, PolicyError> {
        let raw: Value =
            serde_yaml::from_str(text).map_err(|e| PolicyError::Syntax(e.to_string()))?;
        let Value::Object(mut doc) = raw else {
            return Err(PolicyError::Syntax("top level must be a mapping".into()));
        };
        let kind: PatternKind = doc
            .get("pattern")
            .and_then(Value::as_str)
            .ok_or(PolicyError::Missing("pattern"))?
            .parse()?;

        let present: Vec<String> = BLOCK_KEYS
            .iter()
            .filter(|k| doc.contains_key(**k) && **k != kind.as_str())
            .map(|k| k.to_string())
            .collect();
        if !present.is_empty() {
            return Err(PolicyError::MultiplePatterns(present));
        }
        for key in doc.keys() {
            if key != "pattern" && !BLOCK_KEYS.contains(&key.as_str()) && !RUNTIME_KEYS.contains(&key.as_str()) {
                return Err(PolicyError::Parameter {
                    param: key.clone(),
                    message: "unknown top-level key".into(),
                });
            }
        }

        // Fill defaults first so every parameter is visible to env overrides.
        let block = doc.remove(kind.as_str()).unwrap_or(Value::Null);
        let mut block = PatternPolicy::from_block(kind, block)?.block();
        apply_env_overrides(&mut block, &env)?;
        for key in RUNTIME_KEYS {
            let var = env_name(key);
            if let Some(raw) = env(&var) {
                let value = if key.ends_with("_ms") {
                    Value::from(raw.trim().parse::<u64>().map_err(|e| PolicyError::Env {
                        var: var.clone(),
                        message: e.to_string(),
                    })?)
                } else {
                    Value::String(raw)
                };
                doc.insert(key.to_string(), value);
            }
        }

        let policy = PatternPolicy::from_block(kind, block)?;
        policy.validate().map_err(PolicyError::Invalid)?;

        let string = |k: &str| doc.get(k).and_then(Value::as_str).map(str::to_string);
        let number = |k: &'static str| -> Result<Option<u64>, PolicyError> {
            match doc.get(k) {
                None | Some(Value::Null) => Ok(None),
                Some(v) => v.as_u64().map(Some).ok_or(PolicyError::Parameter {
                    param: k.to_string(),
                    message: "expected a non-negative integer".into(),
                }),
            }
        };
        Ok(PolicyDocument {
            policy,
            upstream: string("upstream"),
            listen: string("listen"),
            service_name: string("service_name"),
            upstream_connect_timeout_ms: number("upstream_connect_timeout_ms")?,
            upstream_request_timeout_ms: number("upstream_request_timeout_ms")?,
        })
    }

    /// Serializes as a JSON value with a stable key order: `pattern`,
    /// runtime keys, then the parameter block.
    pub fn to_value(&self) -> Value {
        let mut doc = Map::new();
        doc.insert("pattern".into(), Value::from(self.policy.kind().as_str()));
        if let Some(u) = &self.upstream {
            doc.insert("upstream".into(), Value::from(u.as_str()));
        }
        if let Some(l) = &self.listen {
            doc.insert("listen".into(), Value::from(l.as_str()));
        }
        if let Some(s) = &self.service_name {
            doc.insert("service_name".into(), Value::from(s.as_str()));
        }
        if let Some(ms) = self.upstream_connect_timeout_ms {
            doc.insert("upstream_connect_timeout_ms".into(), Value::from(ms));
        }
        if let Some(ms) = self.upstream_request_timeout_ms {
            doc.insert("upstream_request_timeout_ms".into(), Value::from(ms));
        }
        doc.insert(self.policy.kind().as_str().into(), self.policy.block());
        Value::Object(doc)
    }
}

fn env_name(param: &str) -> String {
    format!("SNAP_{}", param.to_ascii_uppercase())
}

/// Walks the block (one level of nesting) and replaces every value whose
/// `SNAP_<PARAM>` variable is set.
fn apply_env_overrides(
    block: &mut Value,
    env: &impl Fn(&str) -> Option<String>,
) -> Result<(), PolicyError> {
    let Value::Object(map) = block else {
        return Ok(());
    };
    for (key, value) in map.iter_mut() {
        if let Value::Object(_) = value {
            apply_env_overrides(value, env)?;
            continue;
        }
        let var = env_name(key);
        if let Some(raw) = env(&var) {
            *value = coerce_env_value(&raw, value).map_err(|message| PolicyError::Env {
                var: var.clone(),
                message,
            })?;
        }
    }
    Ok(())
}

/// Interprets an env string using the current value's JSON type as a hint.
/// Lists accept either JSON arrays or comma-separated items.
fn coerce_env_value(raw: &str, current: &Value) -> Result<Value, String> {
    let raw = raw.trim();
    match current {
        Value::Array(_) => {
            if raw.starts_with('[') {
                return serde_json::from_str(raw).map_err(|e| e.to_string());
            }
            Ok(Value::Array(
                raw.split(',')
                    .map(str::trim)
                    .filter(|s| !s.is_empty())
                    .map(|item| serde_json::from_str(item).unwrap_or_else(|_| Value::from(item)))
                    .collect(),
            ))
        }
        Value::String(_) => Ok(Value::from(raw)),
        Value::Bool(_) => raw
            .parse::<bool>()
            .map(Value::from)
            .map_err(|e| e.to_string()),
        _ => serde_json::from_str(raw).or_else(|_| Ok(Value::from(raw))),
    }
}

/// Everything a proxy process needs to start.
#[derive(Debug, Clone, PartialEq)]
pub struct ProxyRuntimeConfig {
    pub listen_address: SocketAddr,
    pub upstream_base: Url,
    pub policy: PatternPolicy,
    pub upstream_connect_timeout_ms: u64,
    pub upstream_request_timeout_ms: u64,
}

pub const DEFAULT_LISTEN: &str = "0.0.0.0:8080";
pub const DEFAULT_CONNECT_TIMEOUT_MS: u64 = 2_000;
pub const DEFAULT_REQUEST_TIMEOUT_MS: u64 = 30_000;

impl ProxyRuntimeConfig {
    /// Resolves the runtime config; explicit arguments win over the document.
    pub fn resolve(
        doc: PolicyDocument,
        listen: Option<&str>,
        upstream: Option<&str>,
    ) -> Result<Self, PolicyError> {
        let listen = listen
            .map(str::to_string)
            .or(doc.listen)
            .unwrap_or_else(|| DEFAULT_LISTEN.to_string());
        let listen_address: SocketAddr = listen.parse().map_err(|e| PolicyError::Parameter {
            param: "listen".into(),
            message: format!("{listen}: {e}"),
        })?;
        let upstream = upstream
            .map(str::to_string)
            .or(doc.upstream)
            .ok_or(PolicyError::Missing("upstream"))?;
        let upstream_base = Url::parse(&upstream).map_err(|e| PolicyError::Parameter {
            param: "upstream".into(),
            message: format!("{upstream}: {e}"),
        })?;
        if !upstream_base.has_host() || !matches!(upstream_base.scheme(), "http" | "https") {
            return Err(PolicyError::Parameter {
                param: "upstream".into(),
                message: "must be an absolute http(s) URL".into(),
            });
        }
        if let Some(own) = &doc.service_name {
            if upstream_base.host_str().map(|h| h.split('.').next() == Some(own.as_str())) == Some(true) {
                return Err(PolicyError::Parameter {
                    param: "upstream".into(),
                    message: format!("upstream host must differ from the proxy's own service `{own}`"),
                });
            }
        }
        let connect = doc.upstream_connect_timeout_ms.unwrap_or(DEFAULT_CONNECT_TIMEOUT_MS);
        let request = doc.upstream_request_timeout_ms.unwrap_or(DEFAULT_REQUEST_TIMEOUT_MS);
        if connect == 0 || request == 0 {
            return Err(PolicyError::Parameter {
                param: "upstream_*_timeout_ms".into(),
                message: "timeouts must be positive".into(),
            });
        }
        Ok(ProxyRuntimeConfig {
            listen_address,
            upstream_base,
            policy: doc.policy,
            upstream_connect_timeout_ms: connect,
            upstream_request_timeout_ms: request,
        })
    }
}
