//! Pattern proxy runtime.
//!
//! One proxy instance sits in front of one upstream service and applies
//! exactly one [`PatternPolicy`] to the traffic passing through it.

pub mod arr;
pub mod body_limit;
pub mod breaker;
pub mod cache;
pub mod collapse;
pub mod engine;
pub mod policy;
pub mod ratelimit;
pub mod retry;
pub mod server;
pub mod upstream;

use bytes::Bytes;
use http::{HeaderMap, HeaderName, HeaderValue, Method, StatusCode};

pub use engine::PatternEngine;
pub use policy::{
    AsyncReplyPolicy, CacheAsidePolicy, CircuitBreakerPolicy, ClientKey, CollapsePolicy,
    GatewayOffloadPolicy, PatternKind, PatternPolicy, PolicyDocument, PolicyError,
    ProxyRuntimeConfig, RetryPolicy,
};
pub use upstream::{HttpUpstream, Upstream, UpstreamError};

pub const X_CACHE: HeaderName = HeaderName::from_static("x-cache");
pub const X_PATTERN: HeaderName = HeaderName::from_static("x-pattern");
pub const X_UPSTREAM_STATUS: HeaderName = HeaderName::from_static("x-upstream-status");

/// A fully buffered request as seen by the pattern engine.
#[derive(Clone, Debug)]
pub struct ProxyRequest {
    pub method: Method,
    /// Path plus optional `?query`, never an absolute URL.
    pub path_and_query: String,
    pub headers: HeaderMap,
    pub body: Bytes,
}

impl ProxyRequest {
    pub fn new(method: Method, path_and_query: impl Into<String>) -> Self {
        ProxyRequest {
            method,
            path_and_query: path_and_query.into(),
            headers: HeaderMap::new(),
            body: Bytes::new(),
        }
    }

    pub fn get(path_and_query: impl Into<String>) -> Self {
        Self::new(Method::GET, path_and_query)
    }

    pub fn with_header(mut self, name: &'static str, value: &str) -> Self {
        self.headers.insert(
            HeaderName::from_static(name),
            HeaderValue::from_str(value).expect("valid header value"),
        );
        self
    }

    pub fn with_body(mut self, body: impl Into<Bytes>) -> Self {
        self.body = body.into();
        self
    }

    pub fn path(&self) -> &str {
        match self.path_and_query.split_once('?') {
            Some((path, _)) => path,
            None => &self.path_and_query,
        }
    }

    pub fn query(&self) -> Option<&str> {
        self.path_and_query.split_once('?').map(|(_, q)| q)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ProxyResponse {
    pub status: StatusCode,
    pub headers: HeaderMap,
    pub body: Bytes,
}

impl ProxyResponse {
    pub fn new(status: StatusCode, body: impl Into<Bytes>) -> Self {
        ProxyResponse {
            status,
            headers: HeaderMap::new(),
            body: body.into(),
        }
    }

    pub fn json(status: StatusCode, value: &serde_json::Value) -> Self {
        let mut resp = ProxyResponse::new(status, value.to_string());
        resp.headers.insert(
            http::header::CONTENT_TYPE,
            HeaderValue::from_static("application/json"),
        );
        resp
    }

    pub fn with_header(mut self, name: HeaderName, value: HeaderValue) -> Self {
        self.headers.insert(name, value);
        self
    }

    /// 502 returned when the upstream could not be reached.
    pub fn bad_gateway(reason: &str) -> Self {
        ProxyResponse::json(
            StatusCode::BAD_GATEWAY,
            &serde_json::json!({ "error": "upstream_unavailable", "message": reason }),
        )
    }
}

const HOP_BY_HOP: [&str; 9] = [
    "connection",
    "keep-alive",
    "proxy-authenticate",
    "proxy-authorization",
    "te",
    "trailer",
    "transfer-encoding",
    "upgrade",
    "host",
];

/// Drops hop-by-hop headers (and `host`) so the rest can be forwarded.
pub fn end_to_end_headers(headers: &HeaderMap) -> HeaderMap {
    let mut out = HeaderMap::with_capacity(headers.len());
    for (name, value) in headers {
        if HOP_BY_HOP.contains(&name.as_str()) || name == http::header::CONTENT_LENGTH {
            continue;
        }
        out.append(name.clone(), value.clone());
    }
    out
}
